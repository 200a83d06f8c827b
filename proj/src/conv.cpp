#include "conv.hpp"

#include "window.hpp"

namespace bplab::detail {

ConvGeometry conv_geometry(const Shape& x, const Shape& weights, std::size_t stride, PaddingMode pad) {
  if (x.size() != 3 && x.size() != 4) {
    throw ShapeError("conv2d input must be [C,H,W] or [N,C,H,W], got " + shape_to_string(x));
  }
  if (weights.size() != 4 || weights[2] != weights[3]) {
    throw ShapeError("conv2d weights must be [C_out,C_in,k,k], got " + shape_to_string(weights));
  }
  if (stride < 1) throw ArgumentError("conv2d stride must be >= 1");
  ConvGeometry g;
  const std::size_t off = x.size() - 3;
  g.batch = off ? x[0] : 1;
  g.in_channels = x[off];
  g.height = x[off + 1];
  g.width = x[off + 2];
  if (weights[1] != g.in_channels) {
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(g.in_channels) + ", weights expect " +
                     std::to_string(weights[1]));
  }
  g.out_channels = weights[0];
  g.k = weights[2];
  g.stride = stride;
  g.out_h = strided_extent(g.height, stride);
  g.out_w = strided_extent(g.width, stride);
  g.padded_h = (g.out_h - 1) * stride + g.k;
  g.padded_w = (g.out_w - 1) * stride + g.k;
  const auto anchor = static_cast<std::ptrdiff_t>((g.k - 1) / 2);
  g.row_src.resize(g.padded_h);
  g.col_src.resize(g.padded_w);
  for (std::size_t j = 0; j < g.padded_h; ++j)
    g.row_src[j] = resolve_index(static_cast<std::ptrdiff_t>(j) - anchor, g.height, pad);
  for (std::size_t j = 0; j < g.padded_w; ++j)
    g.col_src[j] = resolve_index(static_cast<std::ptrdiff_t>(j) - anchor, g.width, pad);
  g.output_shape = off ? Shape{g.batch, g.out_channels, g.out_h, g.out_w} : Shape{g.out_channels, g.out_h, g.out_w};
  return g;
}

Tensor pad_input(const Tensor& x, const ConvGeometry& g) {
  Tensor padded({g.batch, g.in_channels, g.padded_h, g.padded_w});
  const auto src = x.data();
  auto dst = padded.data();
  for (std::size_t p = 0; p < g.batch * g.in_channels; ++p) {
    const double* in = &src[p * g.height * g.width];
    double* out = &dst[p * g.padded_h * g.padded_w];
    for (std::size_t j = 0; j < g.padded_h; ++j) {
      const std::ptrdiff_t r = g.row_src[j];
      if (r < 0) continue;
      const double* in_row = in + static_cast<std::size_t>(r) * g.width;
      double* out_row = out + j * g.padded_w;
      for (std::size_t i = 0; i < g.padded_w; ++i) {
        const std::ptrdiff_t c = g.col_src[i];
        out_row[i] = c < 0 ? 0.0 : in_row[c];
      }
    }
  }
  return padded;
}

Tensor conv_padded(const Tensor& padded, const Tensor& weights, const Tensor& bias, const ConvGeometry& g) {
  Tensor out(g.output_shape);
  const auto P = padded.data();
  const auto Wt = weights.data();
  const auto B = bias.data();
  auto O = out.data();
  const std::size_t k = g.k, s = g.stride;
  const std::size_t plane_out = g.out_h * g.out_w;
  const std::size_t plane_in = g.padded_h * g.padded_w;
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      double* o = &O[(n * g.out_channels + co) * plane_out];
      for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
        const double* p = &P[(n * g.in_channels + ci) * plane_in];
        const double* w = &Wt[(co * g.in_channels + ci) * k * k];
        for (std::size_t kh = 0; kh < k; ++kh) {
          for (std::size_t kw = 0; kw < k; ++kw) {
            const double wv = w[kh * k + kw];
            for (std::size_t y = 0; y < g.out_h; ++y) {
              const double* prow = p + (y * s + kh) * g.padded_w + kw;
              double* orow = o + y * g.out_w;
              if (s == 1) {
                for (std::size_t x = 0; x < g.out_w; ++x) orow[x] += wv * prow[x];
              } else {
                for (std::size_t x = 0; x < g.out_w; ++x) orow[x] += wv * prow[x * s];
              }
            }
          }
        }
      }
      const double b = B[co];
      for (std::size_t i = 0; i < plane_out; ++i) o[i] += b;
    }
  }
  return out;
}

ConvGrads conv_padded_backward(const Tensor& padded, const Tensor& weights, const Tensor& dy, const ConvGeometry& g,
                               const Shape& x_shape) {
  if (dy.shape() != g.output_shape) throw ShapeError("conv2d backward: gradient shape mismatch");
  ConvGrads grads{Tensor(x_shape), Tensor(weights.shape()), Tensor({g.out_channels})};
  Tensor dpadded(padded.shape());
  const auto P = padded.data();
  const auto Wt = weights.data();
  const auto G = dy.data();
  auto dP = dpadded.data();
  auto dW = grads.weights.data();
  auto dB = grads.bias.data();
  const std::size_t k = g.k, s = g.stride;
  const std::size_t plane_out = g.out_h * g.out_w;
  const std::size_t plane_in = g.padded_h * g.padded_w;
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      const double* gy = &G[(n * g.out_channels + co) * plane_out];
      double bsum = 0.0;
      for (std::size_t i = 0; i < plane_out; ++i) bsum += gy[i];
      dB[co] += bsum;
      for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
        const double* p = &P[(n * g.in_channels + ci) * plane_in];
        double* dp = &dP[(n * g.in_channels + ci) * plane_in];
        const double* w = &Wt[(co * g.in_channels + ci) * k * k];
        double* dw = &dW[(co * g.in_channels + ci) * k * k];
        for (std::size_t kh = 0; kh < k; ++kh) {
          for (std::size_t kw = 0; kw < k; ++kw) {
            const double wv = w[kh * k + kw];
            double acc = 0.0;
            for (std::size_t y = 0; y < g.out_h; ++y) {
              const std::size_t row = (y * s + kh) * g.padded_w + kw;
              const double* grow = gy + y * g.out_w;
              for (std::size_t x = 0; x < g.out_w; ++x) {
                acc += grow[x] * p[row + x * s];
                dp[row + x * s] += wv * grow[x];
              }
            }
            dw[kh * k + kw] += acc;
          }
        }
      }
    }
  }
  // Fold the padded gradient back onto the input.
  auto dX = grads.input.data();
  for (std::size_t q = 0; q < g.batch * g.in_channels; ++q) {
    const double* dp = &dP[q * plane_in];
    double* dx = &dX[q * g.height * g.width];
    for (std::size_t j = 0; j < g.padded_h; ++j) {
      const std::ptrdiff_t r = g.row_src[j];
      if (r < 0) continue;
      for (std::size_t i = 0; i < g.padded_w; ++i) {
        const std::ptrdiff_t c = g.col_src[i];
        if (c >= 0) dx[static_cast<std::size_t>(r) * g.width + static_cast<std::size_t>(c)] += dp[j * g.padded_w + i];
      }
    }
  }
  return grads;
}

}  // namespace bplab::detail
