#pragma once

// Direct convolution over an explicitly padded copy of the input, so the
// inner loop is contiguous for stride 1.

#include <vector>

#include "bplab/tensor.hpp"

namespace bplab::detail {

struct ConvGeometry {
  std::size_t batch = 1, in_channels = 0, height = 0, width = 0;
  std::size_t out_channels = 0, k = 0, stride = 1;
  std::size_t out_h = 0, out_w = 0;
  std::size_t padded_h = 0, padded_w = 0;
  std::vector<std::ptrdiff_t> row_src, col_src;  // padded index -> input index or -1
  Shape output_shape;
};

ConvGeometry conv_geometry(const Shape& x, const Shape& weights, std::size_t stride, PaddingMode pad);

/// [N, C_in, padded_h, padded_w]
Tensor pad_input(const Tensor& x, const ConvGeometry& g);

Tensor conv_padded(const Tensor& padded, const Tensor& weights, const Tensor& bias, const ConvGeometry& g);

struct ConvGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

ConvGrads conv_padded_backward(const Tensor& padded, const Tensor& weights, const Tensor& dy, const ConvGeometry& g,
                               const Shape& x_shape);

}  // namespace bplab::detail
