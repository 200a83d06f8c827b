#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bplab/filters.hpp"
#include "bplab/tensor.hpp"

namespace bplab {

// ---------------------------------------------------------------------------
// Stateless kernels. Spatial ops act on the last two axes (or the only axis of
// a rank-1 signal). Windows of size k read inputs [i - (k-1)/2, i + k/2], so
// even windows lean right and odd windows are centred. Strided outputs keep
// phase-0 positions and have ceil(n / s) samples.
// ---------------------------------------------------------------------------

Tensor relu(const Tensor& x);

/// Stride-1 sliding max ("Max_k").
Tensor max_dense(const Tensor& x, std::size_t k, PaddingMode pad);

/// Keeps indices congruent to 0 mod s on each spatial axis.
Tensor subsample(const Tensor& x, std::size_t s);

Tensor max_pool(const Tensor& x, std::size_t k, std::size_t s, PaddingMode pad);

/// Fused blur + subsample; only the kept outputs are evaluated.
Tensor blur_pool(const Tensor& x, const BlurKernel& kernel, std::size_t s, PaddingMode pad);

Tensor max_blur_pool(const Tensor& x, std::size_t k, const BlurKernel& kernel, std::size_t s, PaddingMode pad);

/// Window mean then stride. Zero padding contributes zeros to the mean.
Tensor avg_pool(const Tensor& x, std::size_t k, std::size_t s, PaddingMode pad);

/// Cross-correlation. x is [C_in,H,W] or [N,C_in,H,W]; weights [C_out,C_in,k,k];
/// bias [C_out].
Tensor conv2d(const Tensor& x, const Tensor& weights, const Tensor& bias, std::size_t s, PaddingMode pad);

/// blur_pool(relu(conv2d(x, stride 1)), kernel, s).
Tensor conv_blur_pool(const Tensor& x, const Tensor& weights, const Tensor& bias, const BlurKernel& kernel,
                      std::size_t s, PaddingMode pad);

/// Zero-stuffs by `factor` and filters with the kernel scaled to unit DC gain
/// (the transpose of blur_pool times factor^d). Rect-2 with factor 2 gives
/// nearest-neighbour upsampling, Tri-3 gives linear interpolation.
Tensor blur_upsample(const Tensor& x, const BlurKernel& kernel, std::size_t factor, PaddingMode pad);

// ---------------------------------------------------------------------------
// Layers with forward/backward.
// ---------------------------------------------------------------------------

class CacheError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Byproducts of one forward call, consumed by the matching backward call.
struct LayerCache {
  std::uint64_t layer_id = 0;
  std::uint64_t version = 0;
  Shape input_shape;
  std::vector<Tensor> tensors;
  std::vector<std::size_t> routes;  // argmax map for max ops
};

struct ForwardResult {
  Tensor output;
  LayerCache cache;
};

struct BackwardResult {
  Tensor input_grad;
  std::vector<Tensor> param_grads;  // parallel to params()
};

class Layer {
 public:
  Layer();
  Layer(const Layer& other);
  Layer& operator=(const Layer&) = delete;
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  /// Throws ShapeError when the layer cannot consume `input`.
  virtual Shape output_shape(const Shape& input) const = 0;

  virtual ForwardResult forward(const Tensor& x) const = 0;
  virtual BackwardResult backward(const LayerCache& cache, const Tensor& dy) const = 0;

  /// Forward without building a cache.
  virtual Tensor infer(const Tensor& x) const { return forward(x).output; }

  std::span<const Tensor> params() const { return params_; }
  /// Invalidates caches produced before the call.
  std::vector<Tensor>& mutable_params();

  std::uint64_t id() const { return id_; }

 protected:
  LayerCache start_cache(const Tensor& x) const;
  void check_cache(const LayerCache& cache, const Tensor& dy, const Shape& expected_dy) const;

  std::vector<Tensor> params_;

 private:
  std::uint64_t id_;
  std::uint64_t version_ = 0;
};

class Conv2dLayer : public Layer {
 public:
  Conv2dLayer(std::size_t in_channels, std::size_t out_channels, std::size_t k, std::size_t stride, PaddingMode pad);
  std::string kind() const override { return "conv"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2dLayer>(*this); }
  Shape output_shape(const Shape& input) const override;
  ForwardResult forward(const Tensor& x) const override;
  BackwardResult backward(const LayerCache& cache, const Tensor& dy) const override;
  Tensor infer(const Tensor& x) const override;

  const Tensor& weights() const { return params_[0]; }
  const Tensor& bias() const { return params_[1]; }

 private:
  std::size_t in_channels_, out_channels_, k_, stride_;
  PaddingMode pad_;
};

class ReluLayer : public Layer {
 public:
  std::string kind() const override { return "relu"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReluLayer>(*this); }
  Shape output_shape(const Shape& input) const override { return input; }
  ForwardResult forward(const Tensor& x) const override;
  BackwardResult backward(const LayerCache& cache, const Tensor& dy) const override;
  Tensor infer(const Tensor& x) const override { return relu(x); }
};

class SigmoidLayer : public Layer {
 public:
  std::string kind() const override { return "sigmoid"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<SigmoidLayer>(*this); }
  Shape output_shape(const Shape& input) const override { return input; }
  ForwardResult forward(const Tensor& x) const override;
  BackwardResult backward(const LayerCache& cache, const Tensor& dy) const override;
};

class MaxDenseLayer : public Layer {
 public:
  MaxDenseLayer(std::size_t k, PaddingMode pad) : k_(k), pad_(pad) {}
  std::string kind() const override { return "max_dense"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxDenseLayer>(*this); }
  Shape output_shape(const Shape& input) const override;
  ForwardResult forward(const Tensor& x) const override;
  BackwardResult backward(const LayerCache& cache, const Tensor& dy) const override;
  Tensor infer(const Tensor& x) const override { return max_dense(x, k_, pad_); }

 private:
  std::size_t k_;
  PaddingMode pad_;
};

class SubsampleLayer : public Layer {
 public:
  /// `pad` only decides whether non-divisible extents are allowed.
  SubsampleLayer(std::size_t s, PaddingMode pad) : s_(s), pad_(pad) {}
  std::string kind() const override { return "subsample"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<SubsampleLayer>(*this); }
  Shape output_shape(const Shape& input) const override;
  ForwardResult forward(const Tensor& x) const override;
  BackwardResult backward(const LayerCache& cache, const Tensor& dy) const override;

 private:
  std::size_t s_;
  PaddingMode pad_;
};

class MaxPoolLayer : public Layer {
 public:
  MaxPoolLayer(std::size_t k, std::size_t s, PaddingMode pad) : k_(k), s_(s), pad_(pad) {}
  std::string kind() const override { return "maxpool"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPoolLayer>(*this); }
  Shape output_shape(const Shape& input) const override;
  ForwardResult forward(const Tensor& x) const override;
  BackwardResult backward(const LayerCache& cache, const Tensor& dy) const override;
  Tensor infer(const Tensor& x) const override { return max_pool(x, k_, s_, pad_); }

 private:
  std::size_t k_, s_;
  PaddingMode pad_;
};

class AvgPoolLayer : public Layer {
 public:
  AvgPoolLayer(std::size_t k, std::size_t s, PaddingMode pad) : k_(k), s_(s), pad_(pad) {}
  std::string kind() const override { return "avgpool"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<AvgPoolLayer>(*this); }
  Shape output_shape(const Shape& input) const override;
  ForwardResult forward(const Tensor& x) const override;
  BackwardResult backward(const LayerCache& cache, const Tensor& dy) const override;

 private:
  std::size_t k_, s_;
  PaddingMode pad_;
};

class BlurPoolLayer : public Layer {
 public:
  BlurPoolLayer(BlurKernel kernel, std::size_t s, PaddingMode pad) : kernel_(std::move(kernel)), s_(s), pad_(pad) {}
  std::string kind() const override { return "blurpool"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BlurPoolLayer>(*this); }
  Shape output_shape(const Shape& input) const override;
  ForwardResult forward(const Tensor& x) const override;
  BackwardResult backward(const LayerCache& cache, const Tensor& dy) const override;

 private:
  BlurKernel kernel_;
  std::size_t s_;
  PaddingMode pad_;
};

/// Max_k then BlurPool. With `blur_first` the order is swapped (blur, then
/// strided max); that variant exists only for ablations.
class MaxBlurPoolLayer : public Layer {
 public:
  MaxBlurPoolLayer(std::size_t k, BlurKernel kernel, std::size_t s, PaddingMode pad, bool blur_first = false)
      : k_(k), kernel_(std::move(kernel)), s_(s), pad_(pad), blur_first_(blur_first) {}
  std::string kind() const override { return "maxblurpool"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxBlurPoolLayer>(*this); }
  Shape output_shape(const Shape& input) const override;
  ForwardResult forward(const Tensor& x) const override;
  BackwardResult backward(const LayerCache& cache, const Tensor& dy) const override;
  Tensor infer(const Tensor& x) const override;

 private:
  std::size_t k_;
  BlurKernel kernel_;
  std::size_t s_;
  PaddingMode pad_;
  bool blur_first_;
};

/// Stride-1 conv, ReLU, then BlurPool.
class ConvBlurPoolLayer : public Layer {
 public:
  ConvBlurPoolLayer(std::size_t in_channels, std::size_t out_channels, std::size_t k, BlurKernel kernel,
                    std::size_t s, PaddingMode pad);
  std::string kind() const override { return "convblurpool"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ConvBlurPoolLayer>(*this); }
  Shape output_shape(const Shape& input) const override;
  ForwardResult forward(const Tensor& x) const override;
  BackwardResult backward(const LayerCache& cache, const Tensor& dy) const override;
  Tensor infer(const Tensor& x) const override;

 private:
  std::size_t in_channels_, out_channels_, k_;
  BlurKernel kernel_;
  std::size_t s_;
  PaddingMode pad_;
};

class BlurUpsampleLayer : public Layer {
 public:
  BlurUpsampleLayer(BlurKernel kernel, std::size_t factor, PaddingMode pad)
      : kernel_(std::move(kernel)), factor_(factor), pad_(pad) {}
  std::string kind() const override { return "blur_upsample"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BlurUpsampleLayer>(*this); }
  Shape output_shape(const Shape& input) const override;
  ForwardResult forward(const Tensor& x) const override;
  BackwardResult backward(const LayerCache& cache, const Tensor& dy) const override;

 private:
  BlurKernel kernel_;
  std::size_t factor_;
  PaddingMode pad_;
};

/// [N,C,H,W] -> [N,C*H*W]
class FlattenLayer : public Layer {
 public:
  std::string kind() const override { return "flatten"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<FlattenLayer>(*this); }
  Shape output_shape(const Shape& input) const override;
  ForwardResult forward(const Tensor& x) const override;
  BackwardResult backward(const LayerCache& cache, const Tensor& dy) const override;
};

/// [N,C,H,W] -> [N,C], spatial mean per channel.
class GlobalAvgPoolLayer : public Layer {
 public:
  std::string kind() const override { return "global_avg_pool"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPoolLayer>(*this); }
  Shape output_shape(const Shape& input) const override;
  ForwardResult forward(const Tensor& x) const override;
  BackwardResult backward(const LayerCache& cache, const Tensor& dy) const override;
};

/// [N,F] -> [N,O], y = W x + b with W [O,F].
class LinearLayer : public Layer {
 public:
  LinearLayer(std::size_t in_features, std::size_t out_features);
  std::string kind() const override { return "linear"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<LinearLayer>(*this); }
  Shape output_shape(const Shape& input) const override;
  ForwardResult forward(const Tensor& x) const override;
  BackwardResult backward(const LayerCache& cache, const Tensor& dy) const override;
  Tensor infer(const Tensor& x) const override;

 private:
  std::size_t in_features_, out_features_;
};

// Loss head.

/// Row-wise softmax of [N,K] logits.
Tensor softmax(const Tensor& logits);

struct XentResult {
  double loss = 0.0;       // mean over the batch
  Tensor probabilities;    // [N,K]
  Tensor logits_grad;      // d loss / d logits
};

XentResult softmax_xent(const Tensor& logits, std::span<const int> labels);

}  // namespace bplab
