#include "bplab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bplab/parallel.hpp"
#include "bplab/rng.hpp"

namespace bplab {
namespace {

constexpr std::size_t kExhaustiveLimit = 32 * 32;
constexpr std::size_t kShiftChunk = 64;

Tensor strip_batch(const Tensor& t) {
  if (t.rank() == 4) {
    if (t.extent(0) != 1) throw ShapeError("expected a single sample, got " + shape_to_string(t.shape()));
    return t.reshaped({t.extent(1), t.extent(2), t.extent(3)});
  }
  return t;
}

// Stacks shifted copies of one [C,H,W] image into [M,C,H,W].
Tensor stack_shifts(const Tensor& img, std::span<const ShiftOffset> shifts) {
  const std::size_t n = img.size();
  Tensor batch({shifts.size(), img.extent(0), img.extent(1), img.extent(2)});
  for (std::size_t i = 0; i < shifts.size(); ++i) {
    const Tensor s = shift_circular(img, shifts[i]);
    std::copy(s.data().begin(), s.data().end(), batch.data().begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return batch;
}

// Logits of every shifted copy of `img`, evaluated in fixed-size chunks.
std::vector<double> shifted_logits(const Network& net, const Tensor& img, const std::vector<ShiftOffset>& shifts,
                                   std::size_t& num_classes) {
  std::vector<double> out;
  for (std::size_t start = 0; start < shifts.size(); start += kShiftChunk) {
    const std::size_t m = std::min(kShiftChunk, shifts.size() - start);
    const Tensor logits = net.infer(stack_shifts(img, std::span(shifts).subspan(start, m)));
    num_classes = logits.extent(1);
    out.insert(out.end(), logits.data().begin(), logits.data().end());
  }
  return out;
}

std::size_t wrap(std::int64_t v, std::size_t n) {
  const auto m = static_cast<std::int64_t>(n);
  return static_cast<std::size_t>(((v % m) + m) % m);
}

}  // namespace

double feature_distance(const Tensor& a_in, const Tensor& b_in) {
  const Tensor a = strip_batch(a_in);
  const Tensor b = strip_batch(b_in);
  if (a.shape() != b.shape()) {
    throw ShapeError("feature_distance shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  if (a.rank() != 3) throw ShapeError("feature_distance expects [C,H,W]");
  const std::size_t C = a.extent(0);
  const std::size_t sites = a.extent(1) * a.extent(2);
  double total = 0.0;
  for (std::size_t s = 0; s < sites; ++s) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double u = a[c * sites + s];
      const double v = b[c * sites + s];
      dot += u * v;
      na += u * u;
      nb += v * v;
    }
    if (na == 0.0 && nb == 0.0) continue;
    if (na == 0.0 || nb == 0.0) {
      total += 1.0;
      continue;
    }
    const double cosine = std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
    total += 1.0 - cosine;
  }
  return total / static_cast<double>(sites);
}

EquivarianceMap equivariance_heatmap(const Network& net, const Tensor& x_in, std::size_t layer_index, double tol) {
  if (layer_index >= net.num_layers()) {
    throw BoundsError("layer index " + std::to_string(layer_index) + " out of range (network has " +
                      std::to_string(net.num_layers()) + " layers)");
  }
  const std::size_t stride = net.cumulative_stride(layer_index);
  if (stride == 0) {
    throw ArgumentError("layer " + std::to_string(layer_index) + " (" + net.layer(layer_index).kind() +
                        ") has no spatial map aligned with the input");
  }
  const Tensor x = strip_batch(x_in);
  const std::size_t H = x.extent(1), W = x.extent(2);
  auto features_up = [&](const Tensor& img) {
    return upsample_nearest(strip_batch(net.infer(img, layer_index + 1)), stride);
  };
  const Tensor base = features_up(x);

  EquivarianceMap map;
  map.layer_index = layer_index;
  map.layer_name = std::to_string(layer_index) + ":" + net.layer(layer_index).kind();
  map.cumulative_stride = stride;
  map.tolerance = tol;
  map.grid = Tensor({H, W});
  parallel_for(H * W, [&](std::size_t i) {
    const ShiftOffset off{static_cast<std::int64_t>(i / W), static_cast<std::int64_t>(i % W)};
    if (i == 0) return;  // identical arguments
    map.grid[i] = feature_distance(shift_circular(base, off), features_up(shift_circular(x, off)));
  });
  map.period = detect_period(map.grid, tol);
  return map;
}

std::size_t detect_period(const Tensor& grid, double tol) {
  if (!(tol > 0.0)) throw ArgumentError("period tolerance must be positive");
  if (grid.rank() != 2) throw ShapeError("detect_period expects an [H,W] grid");
  const std::size_t H = grid.extent(0), W = grid.extent(1);
  for (std::size_t n = 1; n <= std::min(H, W); ++n) {
    if (H % n != 0 || W % n != 0) continue;
    bool ok = true;
    for (std::size_t h = 0; h < H && ok; h += n)
      for (std::size_t w = 0; w < W && ok; w += n) ok = grid[h * W + w] <= tol;
    if (ok) return n;
  }
  return H;
}

std::vector<ShiftOffset> shift_set(const ShiftMode& mode, std::size_t height, std::size_t width) {
  std::vector<ShiftOffset> out;
  if (!mode.max_shift) {
    for (std::size_t h = 0; h < height; ++h)
      for (std::size_t w = 0; w < width; ++w) out.push_back({static_cast<std::int64_t>(h), static_cast<std::int64_t>(w)});
    return out;
  }
  const auto m = static_cast<std::int64_t>(*mode.max_shift);
  std::vector<char> seen(height * width, 0);
  for (std::int64_t dh = -m; dh <= m; ++dh) {
    for (std::int64_t dw = -m; dw <= m; ++dw) {
      const std::size_t key = wrap(dh, height) * width + wrap(dw, width);
      if (seen[key]) continue;
      seen[key] = 1;
      out.push_back({dh, dw});
    }
  }
  return out;
}

ShiftPredictions shift_predictions(const Network& net, const ToyDataset& data, const std::vector<ShiftOffset>& shifts) {
  ShiftPredictions out;
  out.shifts = shifts;
  out.classes.assign(data.size() * shifts.size(), 0);
  parallel_for(data.size(), [&](std::size_t i) {
    std::size_t K = 0;
    const auto logits = shifted_logits(net, data.image(i), shifts, K);
    for (std::size_t s = 0; s < shifts.size(); ++s) {
      out.classes[i * shifts.size() + s] = argmax_row(std::span(logits).subspan(s * K, K));
    }
  });
  return out;
}

double consistency_from_predictions(const ShiftPredictions& table, std::size_t num_images) {
  if (num_images == 0 || table.shifts.empty()) throw ArgumentError("consistency needs images and shifts");
  const std::size_t M = table.shifts.size();
  double total = 0.0;
  for (std::size_t i = 0; i < num_images; ++i) {
    std::vector<double> counts;
    for (std::size_t s = 0; s < M; ++s) {
      const auto c = static_cast<std::size_t>(table.at(i, s));
      if (c >= counts.size()) counts.resize(c + 1, 0.0);
      counts[c] += 1.0;
    }
    // Ordered pairs (a, b) with equal labels, self-pairs included.
    double agree = 0.0;
    for (double c : counts) agree += c * c;
    total += agree / (static_cast<double>(M) * static_cast<double>(M));
  }
  return total / static_cast<double>(num_images);
}

double classification_consistency(const Network& net, const ToyDataset& data, const ShiftMode& mode,
                                  std::size_t num_pairs, std::uint64_t seed) {
  if (data.size() == 0) throw ArgumentError("consistency needs a nonempty dataset");
  const std::size_t H = data.images.extent(2), W = data.images.extent(3);
  const auto shifts = shift_set(mode, H, W);
  if (shifts.size() <= kExhaustiveLimit) return consistency_from_predictions(shift_predictions(net, data, shifts), data.size());
  if (num_pairs == 0) throw ArgumentError("Monte Carlo consistency needs num_pairs > 0");
  SplitMix64 rng(seed);
  struct Pair {
    std::size_t image;
    ShiftOffset a, b;
  };
  std::vector<Pair> pairs(num_pairs);
  for (auto& p : pairs) {
    p.image = rng.below(data.size());
    p.a = shifts[rng.below(shifts.size())];
    p.b = shifts[rng.below(shifts.size())];
  }
  std::vector<char> same(num_pairs, 0);
  parallel_for(num_pairs, [&](std::size_t i) {
    const Tensor img = data.image(pairs[i].image);
    std::size_t K = 0;
    const auto logits = shifted_logits(net, img, {pairs[i].a, pairs[i].b}, K);
    same[i] = argmax_row(std::span(logits).subspan(0, K)) == argmax_row(std::span(logits).subspan(K, K));
  });
  return static_cast<double>(std::count(same.begin(), same.end(), 1)) / static_cast<double>(num_pairs);
}

double classification_variation(const Network& net, const Tensor& x_in, int true_class) {
  if (!net.has_head()) throw ArgumentError("classification_variation needs a classifier network");
  if (true_class < 0 || static_cast<std::size_t>(true_class) >= net.spec().num_classes) {
    throw ArgumentError("true_class out of range");
  }
  const Tensor x = strip_batch(x_in);
  const auto shifts = shift_set({}, x.extent(1), x.extent(2));
  std::size_t K = 0;
  const auto logits = shifted_logits(net, x, shifts, K);
  const Tensor probs = softmax(Tensor({shifts.size(), K}, logits));
  double mean = 0.0;
  for (std::size_t s = 0; s < shifts.size(); ++s) mean += probs[s * K + static_cast<std::size_t>(true_class)];
  mean /= static_cast<double>(shifts.size());
  double var = 0.0;
  for (std::size_t s = 0; s < shifts.size(); ++s) {
    const double d = probs[s * K + static_cast<std::size_t>(true_class)] - mean;
    var += d * d;
  }
  return std::sqrt(var / static_cast<double>(shifts.size()));
}

std::vector<AdversarialResult> adversarial_curve_from_predictions(const ShiftPredictions& table,
                                                                  std::span<const int> labels, std::size_t height,
                                                                  std::size_t width, std::size_t max_shift) {
  if (labels.empty()) throw ArgumentError("adversarial accuracy needs a nonempty dataset");
  std::vector<std::ptrdiff_t> slot(height * width, -1);
  for (std::size_t s = 0; s < table.shifts.size(); ++s)
    slot[wrap(table.shifts[s].dh, height) * width + wrap(table.shifts[s].dw, width)] = static_cast<std::ptrdiff_t>(s);

  std::vector<AdversarialResult> curve;
  for (std::size_t m = 0; m <= max_shift; ++m) {
    const auto window = shift_set(ShiftMode{m}, height, width);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      bool ok = true;
      for (const auto& off : window) {
        const std::ptrdiff_t s = slot[wrap(off.dh, height) * width + wrap(off.dw, width)];
        if (s < 0) throw ArgumentError("prediction table does not cover a max_shift window");
        if (table.at(i, static_cast<std::size_t>(s)) != labels[i]) {
          ok = false;
          break;
        }
      }
      correct += ok;
    }
    curve.push_back({static_cast<double>(correct) / static_cast<double>(labels.size()), window.size()});
  }
  return curve;
}

std::vector<AdversarialResult> adversarial_shift_curve(const Network& net, const ToyDataset& data,
                                                       std::size_t max_shift) {
  if (data.size() == 0) throw ArgumentError("adversarial accuracy needs a nonempty dataset");
  const std::size_t H = data.images.extent(2), W = data.images.extent(3);
  const ShiftPredictions table = shift_predictions(net, data, shift_set(ShiftMode{max_shift}, H, W));
  return adversarial_curve_from_predictions(table, data.labels, H, W, max_shift);
}

AdversarialResult adversarial_shift_accuracy(const Network& net, const ToyDataset& data, std::size_t max_shift) {
  return adversarial_shift_curve(net, data, max_shift).back();
}

double psnr(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("psnr shape mismatch");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double psnr_stability(const ImageMap& f, const Tensor& x, const std::vector<std::int64_t>& shifts) {
  if (shifts.empty()) throw ArgumentError("psnr_stability needs at least one shift");
  const Tensor fx = f(x);
  double total = 0.0;
  for (std::int64_t dw : shifts) {
    const ShiftOffset off{0, dw};
    total += psnr(shift_circular(fx, off), f(shift_circular(x, off)));
  }
  return total / static_cast<double>(shifts.size());
}

double image_tv(const Tensor& x_in) {
  const Tensor x = strip_batch(x_in);
  const PlaneLayout L = plane_layout(x.shape());
  double total = 0.0;
  for (std::size_t p = 0; p < L.planes; ++p) {
    const double* img = &x.data()[p * L.height * L.width];
    double tv = 0.0;
    for (std::size_t i = 0; i < L.height; ++i) {
      for (std::size_t j = 0; j < L.width; ++j) {
        const double v = img[i * L.width + j];
        if (j + 1 < L.width) tv += std::abs(img[i * L.width + j + 1] - v);
        if (i + 1 < L.height) tv += std::abs(img[(i + 1) * L.width + j] - v);
      }
    }
    total += tv / static_cast<double>(L.height * L.width);
  }
  return 100.0 * total / static_cast<double>(L.planes);
}

std::string heatmap_csv(const EquivarianceMap& map) {
  std::ostringstream os;
  os.precision(17);
  const std::size_t H = map.grid.extent(0), W = map.grid.extent(1);
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t w = 0; w < W; ++w) os << (w ? "," : "") << map.grid[h * W + w];
    os << '\n';
  }
  return os.str();
}

std::string heatmap_pgm(const EquivarianceMap& map) {
  const std::size_t H = map.grid.extent(0), W = map.grid.extent(1);
  const auto [lo, hi] = std::minmax_element(map.grid.data().begin(), map.grid.data().end());
  const double range = *hi - *lo;
  std::string out = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  for (double v : map.grid.data()) {
    const double scaled = range > 0.0 ? std::round(255.0 * (v - *lo) / range) : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(scaled)));
  }
  return out;
}

nlohmann::json heatmap_sidecar(const EquivarianceMap& map) {
  const auto [lo, hi] = std::minmax_element(map.grid.data().begin(), map.grid.data().end());
  return {
      {"layer", map.layer_name},
      {"layer_index", map.layer_index},
      {"height", map.grid.extent(0)},
      {"width", map.grid.extent(1)},
      {"cumulative_stride", map.cumulative_stride},
      {"period", map.period},
      {"tolerance", map.tolerance},
      {"pgm_scaling", {{"min", *lo}, {"max", *hi}, {"formula", "round(255*(v-min)/(max-min)), 0 if max==min"}}},
  };
}

}  // namespace bplab
