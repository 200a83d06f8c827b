#pragma once

// Internal windowing machinery shared by the filter and layer kernels.

#include <cstddef>
#include <span>
#include <vector>

#include "bplab/tensor.hpp"

namespace bplab::detail {

inline std::size_t strided_extent(std::size_t n, std::size_t stride) { return (n + stride - 1) / stride; }

/// Per-output source indices along one axis: src[o * taps + t] is the input
/// index read by tap t of output o, or -1 for zero padding.
struct AxisWindow {
  std::size_t in_extent = 0;
  std::size_t out_extent = 0;
  std::size_t taps = 0;
  std::vector<std::ptrdiff_t> src;

  std::ptrdiff_t at(std::size_t o, std::size_t t) const { return src[o * taps + t]; }
};

/// Window of `taps` samples anchored at -(taps - 1) / 2, evaluated every
/// `stride` inputs.
AxisWindow make_axis_window(std::size_t n, std::size_t taps, std::size_t stride, PaddingMode pad);

/// Separable correlation with `taps` along W then H, keeping every
/// `stride`-th output. Rank-1 inputs are filtered along W only.
Tensor separable_correlate(const Tensor& x, std::span<const double> taps, std::size_t stride, PaddingMode pad);

/// Exact adjoint of separable_correlate for an input of shape `in_shape`.
Tensor separable_correlate_adjoint(const Tensor& dy, const Shape& in_shape, std::span<const double> taps,
                                   std::size_t stride, PaddingMode pad);

/// k x k sliding max with stride. `argmax` receives, per output element, the
/// flat index into x of the winning input (first in row-major window scan).
/// Zero-padded positions never win.
Tensor window_max(const Tensor& x, std::size_t k, std::size_t stride, PaddingMode pad,
                  std::vector<std::size_t>* argmax);

/// Routes dy back through a cached argmax map.
Tensor window_max_adjoint(const Tensor& dy, const Shape& in_shape, const std::vector<std::size_t>& argmax);

/// k x k window mean (zero padding counts as zeros) with stride.
Tensor window_mean(const Tensor& x, std::size_t k, std::size_t stride, PaddingMode pad);
Tensor window_mean_adjoint(const Tensor& dy, const Shape& in_shape, std::size_t k, std::size_t stride,
                           PaddingMode pad);

}  // namespace bplab::detail
