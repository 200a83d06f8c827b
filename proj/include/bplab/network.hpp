#pragma once

#include <cstdint>
#include <memory>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "bplab/layers.hpp"
#include "bplab/tensor.hpp"

namespace bplab {

class BuildError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

/// One entry of a network description. Which fields matter depends on `type`:
///
///   conv          out_channels, kernel, stride, pad
///   relu, sigmoid, flatten, global_avg_pool
///   max_dense     kernel, pad
///   subsample     stride, pad (pad only governs the divisibility check)
///   maxpool       kernel, stride, pad
///   avgpool       kernel, stride, pad
///   blurpool      filter, stride, pad
///   maxblurpool   kernel, filter, stride, pad, blur_first
///   convblurpool  out_channels, kernel, filter, stride, pad
///   blur_upsample filter, factor, pad
///   linear        out_features
struct LayerSpec {
  std::string type;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t factor = 1;
  std::size_t out_features = 0;
  std::string filter = "delta1";
  PaddingMode pad = PaddingMode::Circular;
  bool blur_first = false;
};

/// Declarative feed-forward network. When `num_classes` > 0 a linear head of
/// that width is appended after the listed layers (which must then end in a
/// rank-2 [N,F] output) and the loss is softmax cross-entropy.
struct NetworkSpec {
  std::string name;
  Shape input_shape;  // [C,H,W]
  std::vector<LayerSpec> layers;
  std::size_t num_classes = 0;
  std::string loss = "softmax_xent";
};

NetworkSpec spec_from_json(const nlohmann::json& j);
nlohmann::json spec_to_json(const NetworkSpec& spec);
NetworkSpec load_spec(const std::string& path);
/// SHA-256 of the canonical JSON form.
std::string spec_hash(const NetworkSpec& spec);

class Network {
 public:
  /// Validates the shape chain; parameters start at zero.
  static Network build(const NetworkSpec& spec);

  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const NetworkSpec& spec() const { return spec_; }
  std::size_t num_layers() const { return layers_.size(); }
  /// Layers from the network spec, excluding the classifier head.
  std::size_t num_feature_layers() const { return spec_.layers.size(); }
  bool has_head() const { return spec_.num_classes > 0; }

  const Layer& layer(std::size_t i) const { return *layers_.at(i); }
  Layer& mutable_layer(std::size_t i) { return *layers_.at(i); }

  /// Output shape of layer i for a batch of one.
  const Shape& output_shape(std::size_t i) const { return shapes_.at(i); }
  /// Input height / feature height at layer i; 0 for non-spatial outputs or
  /// non-integral ratios.
  std::size_t cumulative_stride(std::size_t i) const;

  std::size_t parameter_count() const;
  /// SHA-256 over every parameter tensor in binary form.
  std::string checksum() const;

  /// Accepts [C,H,W] or [N,C,H,W]; runs layers [0, upto).
  Tensor infer(const Tensor& x, std::size_t upto) const;
  Tensor infer(const Tensor& x) const { return infer(x, num_layers()); }

 private:
  Network() = default;

  NetworkSpec spec_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<Shape> shapes_;
};

Network build(const NetworkSpec& spec);

/// Kaiming-uniform fan-in init from SplitMix64(seed); biases zero.
/// Conv bounds are sqrt(6 / fan_in), the head uses sqrt(3 / fan_in).
Network init_params(Network net, std::uint64_t seed);

/// Adds a leading batch axis to [C,H,W] inputs.
Tensor as_batch(const Tensor& x);

struct ForwardAll {
  std::vector<Tensor> features;  // output of every spec layer
  Tensor logits;                 // head output (or last feature when headless)
  Tensor probabilities;          // softmax of logits, empty when headless
};

ForwardAll forward_all(const Network& net, const Tensor& x);

/// Class with the highest probability; ties go to the lowest id.
int argmax_row(std::span<const double> row);
std::vector<int> predict(const Network& net, const Tensor& x);

struct LossAndGrads {
  double loss = 0.0;
  Tensor probabilities;
  std::vector<std::vector<Tensor>> grads;  // per layer, parallel to params()
};

/// Softmax cross-entropy of a classifier network and its exact gradients.
LossAndGrads loss_and_gradients(const Network& net, const Tensor& x, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Toy data and training
// ---------------------------------------------------------------------------

struct ToyDataset {
  Tensor images;  // [N,1,32,32] in [0,1]
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::uint64_t seed = 0;

  std::size_t size() const { return labels.size(); }
  /// Single image as [1,32,32].
  Tensor image(std::size_t i) const;
};

inline constexpr std::size_t kToyCanvas = 32;
inline constexpr std::size_t kToyMaxClasses = 6;

/// Procedural glyphs: 0 filled square, 1 hollow square, 2 plus, 3 diagonal
/// bar, 4 X, 5 horizontal bar, 12 to 20 pixels across. Glyphs are drawn in
/// stripes of period 4 (2 on, 2 off) with random phase and orientation, so
/// they carry energy near the Nyquist rate of a stride-2 layer. Sizes,
/// intensities and positions are random; every glyph lies fully inside the
/// canvas. Labels cycle 0..K-1.
ToyDataset toy_dataset(std::uint64_t seed, std::size_t n, std::size_t num_classes);

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double learning_rate = 0.05;
  double momentum = 0.9;
  bool augment = false;
  std::size_t max_shift = 0;  // circular shifts drawn from [-max_shift, max_shift]
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  Network net;
  std::vector<EpochLog> log;
};

/// Thrown when a batch loss becomes NaN or infinite.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

TrainResult train(Network net, const ToyDataset& data, const TrainConfig& cfg);

/// "epoch,loss,acc" CSV.
std::string log_to_csv(const std::vector<EpochLog>& log);

double accuracy(const Network& net, const ToyDataset& data);

/// Nearest class-mean classifier on raw pixels, fit on `train_set`.
double nearest_centroid_accuracy(const ToyDataset& train_set, const ToyDataset& test_set);

// ---------------------------------------------------------------------------
// Checkpoints: `path` holds the parameter tensors back to back in the binary
// tensor format; `path + ".json"` holds the network spec, its hash and a payload hash.
// ---------------------------------------------------------------------------

void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);
/// Also verifies the checkpoint was written for `expected`.
Network load_checkpoint(const std::string& path, const NetworkSpec& expected);

}  // namespace bplab
