#include <cmath>
#include <cstdlib>
#include <numeric>
#include <sstream>

#include "bplab/network.hpp"
#include "bplab/rng.hpp"

namespace bplab {
namespace {

constexpr std::int64_t kGlyphMin = 12;
constexpr std::int64_t kGlyphMax = 20;
constexpr std::int64_t kStripePeriod = 4;

bool glyph_pixel(int cls, std::int64_t i, std::int64_t j, std::int64_t s) {
  constexpr std::int64_t t = 2;
  switch (cls) {
    case 0: return true;
    case 1: return i < t || i >= s - t || j < t || j >= s - t;
    case 2: return std::abs(2 * i - (s - 1)) <= 2 || std::abs(2 * j - (s - 1)) <= 2;
    case 3: return std::abs(i - j) <= 1;
    case 4: return std::abs(i - j) <= 1 || std::abs(i + j - (s - 1)) <= 1;
    case 5: return std::abs(2 * i - (s - 1)) <= 2;
    default: return false;
  }
}

template <typename T>
void shuffle_in_place(std::vector<T>& v, SplitMix64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

Tensor ToyDataset::image(std::size_t i) const {
  if (i >= size()) throw BoundsError("image index out of range");
  const std::size_t H = images.extent(2), W = images.extent(3);
  const std::size_t plane = images.extent(1) * H * W;
  std::vector<double> px(images.data().begin() + static_cast<std::ptrdiff_t>(i * plane),
                         images.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * plane));
  return Tensor({images.extent(1), H, W}, std::move(px));
}

ToyDataset toy_dataset(std::uint64_t seed, std::size_t n, std::size_t num_classes) {
  if (num_classes < 2 || num_classes > kToyMaxClasses) {
    throw ArgumentError("toy dataset supports 2.." + std::to_string(kToyMaxClasses) + " classes");
  }
  if (n < num_classes) throw ArgumentError("toy dataset needs n >= num_classes");
  ToyDataset d;
  d.num_classes = num_classes;
  d.seed = seed;
  d.images = Tensor({n, 1, kToyCanvas, kToyCanvas});
  d.labels.resize(n);
  SplitMix64 rng(seed);
  const auto canvas = static_cast<std::int64_t>(kToyCanvas);
  for (std::size_t k = 0; k < n; ++k) {
    const int cls = static_cast<int>(k % num_classes);
    d.labels[k] = cls;
    const std::int64_t size = rng.between(kGlyphMin, kGlyphMax);
    const std::int64_t r0 = rng.between(0, canvas - size);
    const std::int64_t c0 = rng.between(0, canvas - size);
    const double intensity = rng.uniform(0.5, 1.0);
    const std::int64_t phase = rng.between(0, kStripePeriod - 1);
    const bool horizontal = rng.below(2) == 1;
    double* img = &d.images.data()[k * kToyCanvas * kToyCanvas];
    for (std::int64_t i = 0; i < size; ++i) {
      for (std::int64_t j = 0; j < size; ++j) {
        const std::int64_t along = (horizontal ? r0 + i : c0 + j) + phase;
        const bool stripe = along % kStripePeriod < kStripePeriod / 2;
        if (stripe && glyph_pixel(cls, i, j, size)) img[(r0 + i) * canvas + (c0 + j)] = intensity;
      }
    }
  }
  return d;
}

TrainResult train(Network net, const ToyDataset& data, const TrainConfig& cfg) {
  if (data.size() == 0) throw ArgumentError("training set is empty");
  if (cfg.batch_size == 0 || cfg.epochs == 0) throw ArgumentError("epochs and batch size must be positive");
  if (!(cfg.learning_rate >= 0.0) || !(cfg.momentum >= 0.0)) throw ArgumentError("bad optimizer settings");
  const std::size_t C = data.images.extent(1), H = data.images.extent(2), W = data.images.extent(3);
  if (cfg.augment && cfg.max_shift >= std::min(H, W)) throw ArgumentError("max_shift exceeds input size");

  SplitMix64 rng(derive_seed(cfg.seed, 0x7472));
  std::vector<std::vector<Tensor>> velocity(net.num_layers());
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    for (const auto& p : net.layer(i).params()) velocity[i].emplace_back(p.shape());
  }

  const std::size_t plane = C * H * W;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<EpochLog> log;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_in_place(order, rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t B = std::min(cfg.batch_size, order.size() - start);
      Tensor x({B, C, H, W});
      std::vector<int> labels(B);
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t idx = order[start + b];
        labels[b] = data.labels[idx];
        Tensor img = data.image(idx);
        if (cfg.augment && cfg.max_shift > 0) {
          const auto m = static_cast<std::int64_t>(cfg.max_shift);
          const ShiftOffset off{rng.between(-m, m), rng.between(-m, m)};
          img = shift_circular(img, off);
        }
        std::copy(img.data().begin(), img.data().end(), x.data().begin() + static_cast<std::ptrdiff_t>(b * plane));
      }
      LossAndGrads lg = loss_and_gradients(net, x, labels);
      if (!std::isfinite(lg.loss)) {
        throw TrainingDiverged("loss became non-finite at epoch " + std::to_string(epoch));
      }
      loss_sum += lg.loss * static_cast<double>(B);
      const std::size_t K = lg.probabilities.extent(1);
      for (std::size_t b = 0; b < B; ++b) {
        if (argmax_row(lg.probabilities.data().subspan(b * K, K)) == labels[b]) ++correct;
      }
      for (std::size_t i = 0; i < net.num_layers(); ++i) {
        if (lg.grads[i].empty()) continue;
        auto& params = net.mutable_layer(i).mutable_params();
        for (std::size_t p = 0; p < params.size(); ++p) {
          auto v = velocity[i][p].data();
          auto w = params[p].data();
          const auto g = lg.grads[i][p].data();
          for (std::size_t e = 0; e < w.size(); ++e) {
            v[e] = cfg.momentum * v[e] - cfg.learning_rate * g[e];
            w[e] += v[e];
          }
        }
      }
    }
    const auto n = static_cast<double>(data.size());
    log.push_back({epoch, loss_sum / n, static_cast<double>(correct) / n});
  }
  return {std::move(net), std::move(log)};
}

std::string log_to_csv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,loss,acc\n";
  for (const auto& e : log) os << e.epoch << ',' << e.loss << ',' << e.accuracy << '\n';
  return os.str();
}

double accuracy(const Network& net, const ToyDataset& data) {
  const std::vector<int> pred = predict(net, data.images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

double nearest_centroid_accuracy(const ToyDataset& train_set, const ToyDataset& test_set) {
  if (train_set.images.rank() != 4 || test_set.size() == 0) throw ArgumentError("empty or malformed dataset");
  const std::size_t plane = train_set.images.size() / train_set.size();
  if (test_set.images.size() != plane * test_set.size()) throw ShapeError("train and test images differ in shape");
  const std::size_t K = train_set.num_classes;
  std::vector<double> centroids(K * plane, 0.0);
  std::vector<std::size_t> counts(K, 0);
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    const auto c = static_cast<std::size_t>(train_set.labels[i]);
    ++counts[c];
    for (std::size_t p = 0; p < plane; ++p) centroids[c * plane + p] += train_set.images[i * plane + p];
  }
  for (std::size_t c = 0; c < K; ++c)
    for (std::size_t p = 0; p < plane; ++p) centroids[c * plane + p] /= static_cast<double>(std::max<std::size_t>(counts[c], 1));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t c = 0; c < K; ++c) {
      double d = 0.0;
      for (std::size_t p = 0; p < plane; ++p) {
        const double diff = test_set.images[i * plane + p] - centroids[c * plane + p];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    correct += static_cast<int>(best) == test_set.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(test_set.size());
}

}  // namespace bplab
