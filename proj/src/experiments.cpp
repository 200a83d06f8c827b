#include "bplab/experiments.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "bplab/layers.hpp"
#include "bplab/rng.hpp"

namespace bplab {
namespace {

constexpr std::uint64_t kTrainTag = 1;
constexpr std::uint64_t kTestTag = 2;
constexpr std::uint64_t kEvalTag = 3;

std::vector<double> flat(const Tensor& t) { return t.values(); }

std::string format_value(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

LayerSpec conv(std::size_t out_channels) {
  LayerSpec l;
  l.type = "conv";
  l.out_channels = out_channels;
  l.kernel = 3;
  return l;
}

LayerSpec simple(const std::string& type) {
  LayerSpec l;
  l.type = type;
  return l;
}

}  // namespace

Toy1dResult toy1d(const BlurKernel& kernel, PaddingMode pad) {
  const Tensor x = Tensor::from_vector({0, 0, 1, 1, 0, 0, 1, 1});
  const Tensor shifted = shift_circular(x.reshaped({1, 8}), {0, -1}).reshaped({8});
  Toy1dResult r;
  r.filter = kernel.name;
  r.signal = flat(x);
  r.shifted = flat(shifted);
  r.maxpool = flat(max_pool(x, 2, 2, pad));
  r.maxpool_shifted = flat(max_pool(shifted, 2, 2, pad));
  r.blurred = flat(max_blur_pool(x, 2, kernel, 2, pad));
  r.blurred_shifted = flat(max_blur_pool(shifted, 2, kernel, 2, pad));
  return r;
}

std::string kernels_csv(const std::vector<BlurKernel>& kernels) {
  std::ostringstream os;
  os << "kernel,form,row,col,value\n";
  for (const auto& k : kernels) {
    for (std::size_t i = 0; i < k.size(); ++i) os << k.id << ",taps,0," << i << ',' << format_value(k.taps[i]) << '\n';
    for (std::size_t i = 0; i < k.size(); ++i)
      os << k.id << ",normalized,0," << i << ',' << format_value(k.norm_taps[i]) << '\n';
    const Tensor k2 = kernel_2d(k);
    for (std::size_t i = 0; i < k.size(); ++i)
      for (std::size_t j = 0; j < k.size(); ++j)
        os << k.id << ",2d," << i << ',' << j << ',' << format_value(k2.at({i, j})) << '\n';
  }
  return os.str();
}

ToySplits toy_splits(std::uint64_t seed, const ToyProtocol& protocol) {
  return {toy_dataset(derive_seed(seed, kTrainTag), protocol.train_size, protocol.num_classes),
          toy_dataset(derive_seed(seed, kTestTag), protocol.test_size, protocol.num_classes),
          toy_dataset(derive_seed(seed, kEvalTag), protocol.eval_size, protocol.num_classes)};
}

nlohmann::json derived_seeds(std::uint64_t seed) {
  return {{"run", seed},
          {"init", seed},
          {"shuffle", seed},
          {"train_data", derive_seed(seed, kTrainTag)},
          {"test_data", derive_seed(seed, kTestTag)},
          {"eval_data", derive_seed(seed, kEvalTag)}};
}

TrainedNet train_toy(const NetworkSpec& spec, std::uint64_t seed, const ToyProtocol& protocol,
                     const ToySplits& splits) {
  TrainConfig cfg = protocol.train;
  cfg.seed = seed;
  TrainedNet out{train(init_params(build(spec), seed), splits.train, cfg), 0.0, 0.0};
  out.train_accuracy = accuracy(out.result.net, splits.train);
  out.test_accuracy = accuracy(out.result.net, splits.test);
  return out;
}

ShiftStats shift_stats(const Network& net, const ToyDataset& data, std::size_t max_shift) {
  const std::size_t H = data.images.extent(2), W = data.images.extent(3);
  const ShiftPredictions table = shift_predictions(net, data, shift_set({}, H, W));
  ShiftStats s;
  s.consistency = consistency_from_predictions(table, data.size());
  s.adversarial = adversarial_curve_from_predictions(table, data.labels, H, W, max_shift);
  return s;
}

Tensor generic_input(std::uint64_t seed, const Shape& chw) {
  SplitMix64 rng(seed);
  Tensor x(chw);
  for (double& v : x.data()) v = rng.uniform();
  return x;
}

HeatmapSummary summarize_heatmap(const EquivarianceMap& map) {
  const std::size_t H = map.grid.extent(0), W = map.grid.extent(1);
  const std::size_t n = map.cumulative_stride == 0 ? 1 : map.cumulative_stride;
  HeatmapSummary s;
  double odd_sum = 0.0;
  std::size_t odd_count = 0;
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t w = 0; w < W; ++w) {
      const double v = map.grid.at({h, w});
      s.mean += v;
      if (h % n == 0 && w % n == 0) s.periodic_max = std::max(s.periodic_max, v);
      if (h % 2 == 0 && w % 2 == 0) {
        s.even_max = std::max(s.even_max, v);
      } else {
        odd_sum += v;
        ++odd_count;
      }
    }
  }
  s.mean /= static_cast<double>(H * W);
  if (odd_count > 0) s.odd_mean = odd_sum / static_cast<double>(odd_count);
  return s;
}

NetworkSpec encoder_decoder_spec(const std::string& filter) {
  const BlurKernel k = make_kernel(filter);
  const bool blur = k.size() > 1;
  NetworkSpec spec;
  spec.name = "encoder-decoder-" + k.id;
  spec.input_shape = {1, 32, 32};
  spec.loss = "none";
  for (int stage = 0; stage < 2; ++stage) {
    LayerSpec down = conv(8);
    if (blur) {
      down.type = "convblurpool";
      down.filter = k.id;
    }
    down.stride = 2;
    spec.layers.push_back(down);
    if (!blur) spec.layers.push_back(simple("relu"));
  }
  LayerSpec up = simple("blur_upsample");
  up.filter = blur ? k.id : "rect2";
  up.factor = 2;
  spec.layers.push_back(up);
  spec.layers.push_back(conv(8));
  spec.layers.push_back(simple("relu"));
  spec.layers.push_back(up);
  spec.layers.push_back(conv(1));
  spec.layers.push_back(simple("sigmoid"));
  return spec;
}

StabilityResult encoder_decoder_stability(const Network& net, const std::vector<Tensor>& inputs) {
  if (inputs.empty()) throw ArgumentError("stability needs at least one input");
  const ImageMap f = [&net](const Tensor& x) { return net.infer(x).reshaped(x.shape()); };
  StabilityResult r;
  for (const Tensor& x : inputs) {
    std::vector<std::int64_t> shifts(x.extent(x.rank() - 1));
    std::iota(shifts.begin(), shifts.end(), std::int64_t{0});
    r.psnr_stability += psnr_stability(f, x, shifts);
    r.image_tv += image_tv(f(x));
  }
  r.psnr_stability /= static_cast<double>(inputs.size());
  r.image_tv /= static_cast<double>(inputs.size());
  return r;
}

std::vector<Tensor> stability_inputs(std::uint64_t seed, std::size_t n) {
  const ToyDataset d = toy_dataset(seed, std::max<std::size_t>(n, 2), 2);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(d.image(i));
  return out;
}

}  // namespace bplab
