#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bplab/filters.hpp"
#include "bplab/metrics.hpp"
#include "bplab/network.hpp"

namespace bplab {

// ---------------------------------------------------------------------------
// 1-D worked example
// ---------------------------------------------------------------------------

struct Toy1dResult {
  std::string filter;
  std::vector<double> signal;           // [0,0,1,1,0,0,1,1]
  std::vector<double> shifted;          // signal advanced by one sample
  std::vector<double> maxpool;          // MaxPool k=2 s=2
  std::vector<double> maxpool_shifted;
  std::vector<double> blurred;          // MaxBlurPool k=2 s=2 with `filter`
  std::vector<double> blurred_shifted;
};

Toy1dResult toy1d(const BlurKernel& kernel, PaddingMode pad = PaddingMode::Circular);

/// Long-format CSV (kernel,form,row,col,value) of taps, normalized taps and
/// the 2-D outer product of every kernel in `kernels`.
std::string kernels_csv(const std::vector<BlurKernel>& kernels);

// ---------------------------------------------------------------------------
// Toy classification protocol
// ---------------------------------------------------------------------------

/// Data sizes and optimizer settings shared by train, consistency and
/// adversarial runs. Every dataset seed is derived from the run seed.
struct ToyProtocol {
  std::size_t num_classes = 4;
  std::size_t train_size = 400;
  std::size_t test_size = 200;
  std::size_t eval_size = 24;  // images scored under every circular shift
  TrainConfig train = default_toy_training();

  static TrainConfig default_toy_training() {
    TrainConfig c;
    c.epochs = 30;
    c.learning_rate = 0.03;
    return c;
  }
};

struct ToySplits {
  ToyDataset train;
  ToyDataset test;
  ToyDataset eval;
};

ToySplits toy_splits(std::uint64_t seed, const ToyProtocol& protocol);

/// Named seeds derived from one run seed, for manifests.
nlohmann::json derived_seeds(std::uint64_t seed);

struct TrainedNet {
  TrainResult result;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

/// init_params(build(spec), seed) trained on the seed's training split.
TrainedNet train_toy(const NetworkSpec& spec, std::uint64_t seed, const ToyProtocol& protocol,
                     const ToySplits& splits);

struct ShiftStats {
  double consistency = 0.0;
  std::vector<AdversarialResult> adversarial;  // m = 0..max_shift
};

/// Exhaustive consistency and the adversarial curve from one prediction
/// table over every circular shift of `data`.
ShiftStats shift_stats(const Network& net, const ToyDataset& data, std::size_t max_shift);

// ---------------------------------------------------------------------------
// Heatmaps
// ---------------------------------------------------------------------------

/// Uniform [0,1] image of shape [C,H,W] from `seed`.
Tensor generic_input(std::uint64_t seed, const Shape& chw);

struct HeatmapSummary {
  double periodic_max = 0.0;  // max over shifts that are multiples of the cumulative stride
  double even_max = 0.0;      // max over shifts with both components even
  double odd_mean = 0.0;      // mean over shifts with an odd component
  double mean = 0.0;
};

HeatmapSummary summarize_heatmap(const EquivarianceMap& map);

// ---------------------------------------------------------------------------
// Encoder-decoder stability
// ---------------------------------------------------------------------------

/// Two stride-2 stages down and two factor-2 stages up on [1,32,32] with a
/// sigmoid output. With a blur filter the encoder uses ConvBlurPool and the
/// decoder blur_upsample with the same filter; with "delta1" the encoder uses
/// strided convolution and the decoder nearest-neighbour upsampling. Layers
/// with parameters have identical shapes across variants, so one seed gives
/// shared weights.
NetworkSpec encoder_decoder_spec(const std::string& filter);

struct StabilityResult {
  double psnr_stability = 0.0;  // mean over inputs and every horizontal shift
  double image_tv = 0.0;        // mean over inputs of image_tv(f(x))
};

StabilityResult encoder_decoder_stability(const Network& net, const std::vector<Tensor>& inputs);

/// Toy glyph images used as encoder-decoder inputs.
std::vector<Tensor> stability_inputs(std::uint64_t seed, std::size_t n);

}  // namespace bplab
