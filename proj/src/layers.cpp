#include "bplab/layers.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "conv.hpp"
#include "window.hpp"

namespace bplab {
namespace {

std::uint64_t next_layer_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

void check_window(std::size_t k, std::size_t s) {
  if (k < 1) throw ArgumentError("window size must be >= 1");
  if (s < 1) throw ArgumentError("stride must be >= 1");
}

// Output extents of a strided spatial op, enforcing divisibility under
// circular padding.
Shape strided_shape(const Shape& input, std::size_t s, PaddingMode pad, const char* what) {
  const PlaneLayout L = plane_layout(input);
  if (pad == PaddingMode::Circular && (L.width % s != 0 || (L.two_dimensional && L.height % s != 0))) {
    throw ShapeError(std::string(what) + ": stride " + std::to_string(s) + " does not divide spatial extent of " +
                     shape_to_string(input) + " under circular padding");
  }
  const std::size_t h = L.two_dimensional ? detail::strided_extent(L.height, s) : 1;
  return with_spatial(input, h, detail::strided_extent(L.width, s));
}

Shape require_spatial4(const Shape& input, const char* what) {
  if (input.size() != 4) throw ShapeError(std::string(what) + " expects [N,C,H,W], got " + shape_to_string(input));
  return input;
}

// Kaiming-free placeholder shapes; Network::init_params fills the values.
Tensor zeros(Shape s) { return Tensor(std::move(s)); }

}  // namespace

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor max_dense(const Tensor& x, std::size_t k, PaddingMode pad) {
  check_window(k, 1);
  return detail::window_max(x, k, 1, pad, nullptr);
}

Tensor subsample(const Tensor& x, std::size_t s) {
  check_window(1, s);
  const PlaneLayout L = plane_layout(x.shape());
  const std::size_t H2 = L.two_dimensional ? detail::strided_extent(L.height, s) : 1;
  const std::size_t W2 = detail::strided_extent(L.width, s);
  const std::size_t sh = L.two_dimensional ? s : 1;
  Tensor out(with_spatial(x.shape(), H2, W2));
  const auto src = x.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < L.planes; ++p) {
    for (std::size_t y = 0; y < H2; ++y) {
      const double* row = &src[(p * L.height + y * sh) * L.width];
      double* out_row = &dst[(p * H2 + y) * W2];
      for (std::size_t x2 = 0; x2 < W2; ++x2) out_row[x2] = row[x2 * s];
    }
  }
  return out;
}

Tensor max_pool(const Tensor& x, std::size_t k, std::size_t s, PaddingMode pad) {
  check_window(k, s);
  return detail::window_max(x, k, s, pad, nullptr);
}

Tensor blur_pool(const Tensor& x, const BlurKernel& kernel, std::size_t s, PaddingMode pad) {
  check_window(1, s);
  return detail::separable_correlate(x, kernel.norm_taps, s, pad);
}

Tensor max_blur_pool(const Tensor& x, std::size_t k, const BlurKernel& kernel, std::size_t s, PaddingMode pad) {
  return blur_pool(max_dense(x, k, pad), kernel, s, pad);
}

Tensor avg_pool(const Tensor& x, std::size_t k, std::size_t s, PaddingMode pad) {
  check_window(k, s);
  return detail::window_mean(x, k, s, pad);
}

Tensor conv2d(const Tensor& x, const Tensor& weights, const Tensor& bias, std::size_t s, PaddingMode pad) {
  const auto g = detail::conv_geometry(x.shape(), weights.shape(), s, pad);
  if (bias.rank() != 1 || bias.size() != g.out_channels) throw ShapeError("conv2d bias must be [C_out]");
  return detail::conv_padded(detail::pad_input(x, g), weights, bias, g);
}

Tensor conv_blur_pool(const Tensor& x, const Tensor& weights, const Tensor& bias, const BlurKernel& kernel,
                      std::size_t s, PaddingMode pad) {
  return blur_pool(relu(conv2d(x, weights, bias, 1, pad)), kernel, s, pad);
}

Tensor blur_upsample(const Tensor& x, const BlurKernel& kernel, std::size_t factor, PaddingMode pad) {
  if (factor < 1) throw ArgumentError("upsample factor must be >= 1");
  const PlaneLayout L = plane_layout(x.shape());
  const std::size_t H = L.two_dimensional ? L.height * factor : 1;
  const Shape out_shape = with_spatial(x.shape(), H, L.width * factor);
  // Separable: each 1-D pass carries a gain of `factor`.
  std::vector<double> taps = kernel.norm_taps;
  for (double& t : taps) t *= static_cast<double>(factor);
  return detail::separable_correlate_adjoint(x, out_shape, taps, factor, pad);
}

// ---------------------------------------------------------------------------
// Layer base
// ---------------------------------------------------------------------------

Layer::Layer() : id_(next_layer_id()) {}

Layer::Layer(const Layer& other) : params_(other.params_), id_(next_layer_id()) {}

std::vector<Tensor>& Layer::mutable_params() {
  ++version_;
  return params_;
}

LayerCache Layer::start_cache(const Tensor& x) const {
  LayerCache c;
  c.layer_id = id_;
  c.version = version_;
  c.input_shape = x.shape();
  return c;
}

void Layer::check_cache(const LayerCache& cache, const Tensor& dy, const Shape& expected_dy) const {
  if (cache.layer_id != id_) throw CacheError(kind() + ": cache was produced by a different layer");
  if (cache.version != version_) throw CacheError(kind() + ": cache is stale (parameters changed since forward)");
  if (dy.shape() != expected_dy) {
    throw CacheError(kind() + ": gradient shape " + shape_to_string(dy.shape()) + " does not match forward output " +
                     shape_to_string(expected_dy));
  }
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

Conv2dLayer::Conv2dLayer(std::size_t in_channels, std::size_t out_channels, std::size_t k, std::size_t stride,
                         PaddingMode pad)
    : in_channels_(in_channels), out_channels_(out_channels), k_(k), stride_(stride), pad_(pad) {
  check_window(k, stride);
  params_ = {zeros({out_channels, in_channels, k, k}), zeros({out_channels})};
}

Shape Conv2dLayer::output_shape(const Shape& input) const {
  require_spatial4(input, "conv");
  if (input[1] != in_channels_) {
    throw ShapeError("conv: expected " + std::to_string(in_channels_) + " input channels, got " +
                     std::to_string(input[1]));
  }
  Shape out = strided_shape(input, stride_, pad_, "conv");
  out[1] = out_channels_;
  return out;
}

ForwardResult Conv2dLayer::forward(const Tensor& x) const {
  const auto g = detail::conv_geometry(x.shape(), weights().shape(), stride_, pad_);
  ForwardResult r{Tensor(), start_cache(x)};
  r.cache.tensors.push_back(detail::pad_input(x, g));
  r.output = detail::conv_padded(r.cache.tensors[0], weights(), bias(), g);
  return r;
}

Tensor Conv2dLayer::infer(const Tensor& x) const { return conv2d(x, weights(), bias(), stride_, pad_); }

BackwardResult Conv2dLayer::backward(const LayerCache& cache, const Tensor& dy) const {
  const auto g = detail::conv_geometry(cache.input_shape, weights().shape(), stride_, pad_);
  check_cache(cache, dy, g.output_shape);
  auto grads = detail::conv_padded_backward(cache.tensors.at(0), weights(), dy, g, cache.input_shape);
  return {std::move(grads.input), {std::move(grads.weights), std::move(grads.bias)}};
}

// ---------------------------------------------------------------------------
// Pointwise
// ---------------------------------------------------------------------------

ForwardResult ReluLayer::forward(const Tensor& x) const {
  ForwardResult r{relu(x), start_cache(x)};
  r.cache.tensors.push_back(x);
  return r;
}

BackwardResult ReluLayer::backward(const LayerCache& cache, const Tensor& dy) const {
  check_cache(cache, dy, cache.input_shape);
  const Tensor& x = cache.tensors.at(0);
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(x[i] > 0.0)) dx[i] = 0.0;
  }
  return {std::move(dx), {}};
}

ForwardResult SigmoidLayer::forward(const Tensor& x) const {
  Tensor y = x;
  for (double& v : y.data()) v = 1.0 / (1.0 + std::exp(-v));
  ForwardResult r{y, start_cache(x)};
  r.cache.tensors.push_back(std::move(y));
  return r;
}

BackwardResult SigmoidLayer::backward(const LayerCache& cache, const Tensor& dy) const {
  check_cache(cache, dy, cache.input_shape);
  const Tensor& y = cache.tensors.at(0);
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= y[i] * (1.0 - y[i]);
  return {std::move(dx), {}};
}

// ---------------------------------------------------------------------------
// Pooling family
// ---------------------------------------------------------------------------

Shape MaxDenseLayer::output_shape(const Shape& input) const {
  plane_layout(input);
  return input;
}

ForwardResult MaxDenseLayer::forward(const Tensor& x) const {
  ForwardResult r{Tensor(), start_cache(x)};
  r.output = detail::window_max(x, k_, 1, pad_, &r.cache.routes);
  return r;
}

BackwardResult MaxDenseLayer::backward(const LayerCache& cache, const Tensor& dy) const {
  check_cache(cache, dy, cache.input_shape);
  return {detail::window_max_adjoint(dy, cache.input_shape, cache.routes), {}};
}

Shape SubsampleLayer::output_shape(const Shape& input) const { return strided_shape(input, s_, pad_, "subsample"); }

ForwardResult SubsampleLayer::forward(const Tensor& x) const { return {subsample(x, s_), start_cache(x)}; }

BackwardResult SubsampleLayer::backward(const LayerCache& cache, const Tensor& dy) const {
  const PlaneLayout L = plane_layout(cache.input_shape);
  const std::size_t H2 = L.two_dimensional ? detail::strided_extent(L.height, s_) : 1;
  const std::size_t W2 = detail::strided_extent(L.width, s_);
  check_cache(cache, dy, with_spatial(cache.input_shape, H2, W2));
  const std::size_t sh = L.two_dimensional ? s_ : 1;
  Tensor dx(cache.input_shape);
  for (std::size_t p = 0; p < L.planes; ++p) {
    for (std::size_t y = 0; y < H2; ++y) {
      for (std::size_t x = 0; x < W2; ++x) {
        dx[(p * L.height + y * sh) * L.width + x * s_] = dy[(p * H2 + y) * W2 + x];
      }
    }
  }
  return {std::move(dx), {}};
}

Shape MaxPoolLayer::output_shape(const Shape& input) const { return strided_shape(input, s_, pad_, "maxpool"); }

ForwardResult MaxPoolLayer::forward(const Tensor& x) const {
  ForwardResult r{Tensor(), start_cache(x)};
  r.output = detail::window_max(x, k_, s_, pad_, &r.cache.routes);
  return r;
}

BackwardResult MaxPoolLayer::backward(const LayerCache& cache, const Tensor& dy) const {
  check_cache(cache, dy, output_shape(cache.input_shape));
  return {detail::window_max_adjoint(dy, cache.input_shape, cache.routes), {}};
}

Shape AvgPoolLayer::output_shape(const Shape& input) const { return strided_shape(input, s_, pad_, "avgpool"); }

ForwardResult AvgPoolLayer::forward(const Tensor& x) const { return {avg_pool(x, k_, s_, pad_), start_cache(x)}; }

BackwardResult AvgPoolLayer::backward(const LayerCache& cache, const Tensor& dy) const {
  check_cache(cache, dy, output_shape(cache.input_shape));
  return {detail::window_mean_adjoint(dy, cache.input_shape, k_, s_, pad_), {}};
}

Shape BlurPoolLayer::output_shape(const Shape& input) const { return strided_shape(input, s_, pad_, "blurpool"); }

ForwardResult BlurPoolLayer::forward(const Tensor& x) const {
  return {blur_pool(x, kernel_, s_, pad_), start_cache(x)};
}

BackwardResult BlurPoolLayer::backward(const LayerCache& cache, const Tensor& dy) const {
  check_cache(cache, dy, output_shape(cache.input_shape));
  return {detail::separable_correlate_adjoint(dy, cache.input_shape, kernel_.norm_taps, s_, pad_), {}};
}

Shape MaxBlurPoolLayer::output_shape(const Shape& input) const {
  return strided_shape(input, s_, pad_, "maxblurpool");
}

Tensor MaxBlurPoolLayer::infer(const Tensor& x) const {
  if (blur_first_) return max_pool(apply_blur(x, kernel_, pad_), k_, s_, pad_);
  return max_blur_pool(x, k_, kernel_, s_, pad_);
}

ForwardResult MaxBlurPoolLayer::forward(const Tensor& x) const {
  ForwardResult r{Tensor(), start_cache(x)};
  if (blur_first_) {
    r.output = detail::window_max(apply_blur(x, kernel_, pad_), k_, s_, pad_, &r.cache.routes);
  } else {
    Tensor dense = detail::window_max(x, k_, 1, pad_, &r.cache.routes);
    r.output = blur_pool(dense, kernel_, s_, pad_);
  }
  return r;
}

BackwardResult MaxBlurPoolLayer::backward(const LayerCache& cache, const Tensor& dy) const {
  check_cache(cache, dy, output_shape(cache.input_shape));
  const Shape& in = cache.input_shape;
  if (blur_first_) {
    Tensor d_blurred = detail::window_max_adjoint(dy, in, cache.routes);
    return {detail::separable_correlate_adjoint(d_blurred, in, kernel_.norm_taps, 1, pad_), {}};
  }
  Tensor d_dense = detail::separable_correlate_adjoint(dy, in, kernel_.norm_taps, s_, pad_);
  return {detail::window_max_adjoint(d_dense, in, cache.routes), {}};
}

ConvBlurPoolLayer::ConvBlurPoolLayer(std::size_t in_channels, std::size_t out_channels, std::size_t k,
                                     BlurKernel kernel, std::size_t s, PaddingMode pad)
    : in_channels_(in_channels), out_channels_(out_channels), k_(k), kernel_(std::move(kernel)), s_(s), pad_(pad) {
  check_window(k, s);
  params_ = {zeros({out_channels, in_channels, k, k}), zeros({out_channels})};
}

Shape ConvBlurPoolLayer::output_shape(const Shape& input) const {
  require_spatial4(input, "convblurpool");
  if (input[1] != in_channels_) throw ShapeError("convblurpool: input channel mismatch");
  Shape out = strided_shape(input, s_, pad_, "convblurpool");
  out[1] = out_channels_;
  return out;
}

Tensor ConvBlurPoolLayer::infer(const Tensor& x) const {
  return conv_blur_pool(x, params_[0], params_[1], kernel_, s_, pad_);
}

ForwardResult ConvBlurPoolLayer::forward(const Tensor& x) const {
  const auto g = detail::conv_geometry(x.shape(), params_[0].shape(), 1, pad_);
  ForwardResult r{Tensor(), start_cache(x)};
  r.cache.tensors.push_back(detail::pad_input(x, g));
  Tensor pre = detail::conv_padded(r.cache.tensors[0], params_[0], params_[1], g);
  r.output = blur_pool(relu(pre), kernel_, s_, pad_);
  r.cache.tensors.push_back(std::move(pre));
  return r;
}

BackwardResult ConvBlurPoolLayer::backward(const LayerCache& cache, const Tensor& dy) const {
  check_cache(cache, dy, output_shape(cache.input_shape));
  const auto g = detail::conv_geometry(cache.input_shape, params_[0].shape(), 1, pad_);
  const Tensor& pre = cache.tensors.at(1);
  Tensor d_act = detail::separable_correlate_adjoint(dy, pre.shape(), kernel_.norm_taps, s_, pad_);
  for (std::size_t i = 0; i < d_act.size(); ++i) {
    if (!(pre[i] > 0.0)) d_act[i] = 0.0;
  }
  auto grads = detail::conv_padded_backward(cache.tensors.at(0), params_[0], d_act, g, cache.input_shape);
  return {std::move(grads.input), {std::move(grads.weights), std::move(grads.bias)}};
}

Shape BlurUpsampleLayer::output_shape(const Shape& input) const {
  if (factor_ < 1) throw ArgumentError("upsample factor must be >= 1");
  const PlaneLayout L = plane_layout(input);
  return with_spatial(input, L.two_dimensional ? L.height * factor_ : 1, L.width * factor_);
}

ForwardResult BlurUpsampleLayer::forward(const Tensor& x) const {
  return {blur_upsample(x, kernel_, factor_, pad_), start_cache(x)};
}

BackwardResult BlurUpsampleLayer::backward(const LayerCache& cache, const Tensor& dy) const {
  const Shape out = output_shape(cache.input_shape);
  check_cache(cache, dy, out);
  std::vector<double> taps = kernel_.norm_taps;
  for (double& t : taps) t *= static_cast<double>(factor_);
  return {detail::separable_correlate(dy, taps, factor_, pad_), {}};
}

// ---------------------------------------------------------------------------
// Head
// ---------------------------------------------------------------------------

Shape FlattenLayer::output_shape(const Shape& input) const {
  if (input.size() < 2) throw ShapeError("flatten expects a batch axis");
  std::size_t f = 1;
  for (std::size_t i = 1; i < input.size(); ++i) f *= input[i];
  return {input[0], f};
}

ForwardResult FlattenLayer::forward(const Tensor& x) const {
  return {x.reshaped(output_shape(x.shape())), start_cache(x)};
}

BackwardResult FlattenLayer::backward(const LayerCache& cache, const Tensor& dy) const {
  check_cache(cache, dy, output_shape(cache.input_shape));
  return {dy.reshaped(cache.input_shape), {}};
}

Shape GlobalAvgPoolLayer::output_shape(const Shape& input) const {
  require_spatial4(input, "global_avg_pool");
  return {input[0], input[1]};
}

ForwardResult GlobalAvgPoolLayer::forward(const Tensor& x) const {
  const Shape out_shape = output_shape(x.shape());
  const std::size_t plane = x.extent(2) * x.extent(3);
  Tensor y(out_shape);
  const auto src = x.data();
  for (std::size_t q = 0; q < y.size(); ++q) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += src[q * plane + i];
    y[q] = acc / static_cast<double>(plane);
  }
  return {std::move(y), start_cache(x)};
}

BackwardResult GlobalAvgPoolLayer::backward(const LayerCache& cache, const Tensor& dy) const {
  check_cache(cache, dy, output_shape(cache.input_shape));
  const std::size_t plane = cache.input_shape[2] * cache.input_shape[3];
  Tensor dx(cache.input_shape);
  for (std::size_t q = 0; q < dy.size(); ++q) {
    const double g = dy[q] / static_cast<double>(plane);
    for (std::size_t i = 0; i < plane; ++i) dx[q * plane + i] = g;
  }
  return {std::move(dx), {}};
}

LinearLayer::LinearLayer(std::size_t in_features, std::size_t out_features)
    : in_features_(in_features), out_features_(out_features) {
  params_ = {zeros({out_features, in_features}), zeros({out_features})};
}

Shape LinearLayer::output_shape(const Shape& input) const {
  if (input.size() != 2 || input[1] != in_features_) {
    throw ShapeError("linear expects [N," + std::to_string(in_features_) + "], got " + shape_to_string(input));
  }
  return {input[0], out_features_};
}

Tensor LinearLayer::infer(const Tensor& x) const {
  Tensor y(output_shape(x.shape()));
  const auto W = params_[0].data();
  const auto b = params_[1].data();
  for (std::size_t n = 0; n < x.extent(0); ++n) {
    const double* xi = &x.data()[n * in_features_];
    for (std::size_t o = 0; o < out_features_; ++o) {
      const double* w = &W[o * in_features_];
      double acc = 0.0;
      for (std::size_t f = 0; f < in_features_; ++f) acc += w[f] * xi[f];
      y[n * out_features_ + o] = acc + b[o];
    }
  }
  return y;
}

ForwardResult LinearLayer::forward(const Tensor& x) const {
  ForwardResult r{infer(x), start_cache(x)};
  r.cache.tensors.push_back(x);
  return r;
}

BackwardResult LinearLayer::backward(const LayerCache& cache, const Tensor& dy) const {
  check_cache(cache, dy, output_shape(cache.input_shape));
  const Tensor& x = cache.tensors.at(0);
  const std::size_t N = x.extent(0);
  Tensor dx(x.shape());
  Tensor dW(params_[0].shape());
  Tensor db(params_[1].shape());
  const auto W = params_[0].data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t o = 0; o < out_features_; ++o) {
      const double g = dy[n * out_features_ + o];
      db[o] += g;
      for (std::size_t f = 0; f < in_features_; ++f) {
        dW[o * in_features_ + f] += g * x[n * in_features_ + f];
        dx[n * in_features_ + f] += g * W[o * in_features_ + f];
      }
    }
  }
  return {std::move(dx), {std::move(dW), std::move(db)}};
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax expects [N,K] logits");
  const std::size_t N = logits.extent(0), K = logits.extent(1);
  Tensor p(logits.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const double* z = &logits.data()[n * K];
    const double zmax = *std::max_element(z, z + K);
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      p[n * K + k] = std::exp(z[k] - zmax);
      total += p[n * K + k];
    }
    for (std::size_t k = 0; k < K; ++k) p[n * K + k] /= total;
  }
  return p;
}

XentResult softmax_xent(const Tensor& logits, std::span<const int> labels) {
  XentResult r;
  r.probabilities = softmax(logits);
  const std::size_t N = logits.extent(0), K = logits.extent(1);
  if (labels.size() != N) throw ShapeError("label count does not match batch");
  r.logits_grad = r.probabilities;
  const double inv_n = 1.0 / static_cast<double>(N);
  for (std::size_t n = 0; n < N; ++n) {
    const int y = labels[n];
    if (y < 0 || static_cast<std::size_t>(y) >= K) throw ArgumentError("label out of range");
    r.loss -= std::log(std::max(r.probabilities[n * K + y], 1e-300));
    r.logits_grad[n * K + y] -= 1.0;
  }
  r.loss *= inv_n;
  for (double& g : r.logits_grad.data()) g *= inv_n;
  return r;
}

}  // namespace bplab
