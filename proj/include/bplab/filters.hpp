#pragma once

#include <string>
#include <vector>

#include "bplab/tensor.hpp"

namespace bplab {

/// Named binomial low-pass kernel. `taps` keeps the integer Pascal-row
/// pattern; `norm_taps` sums to one. The 2-D kernel is the outer product of
/// `norm_taps` with itself.
struct BlurKernel {
  std::string name;  // display name, e.g. "Tri-3"
  std::string id;    // flag value, e.g. "tri3"
  std::vector<double> taps;
  std::vector<double> norm_taps;

  std::size_t size() const { return taps.size(); }
  /// Left extent of the window: output i reads inputs [i - anchor, i - anchor + m).
  std::size_t anchor() const { return (taps.size() - 1) / 2; }
};

/// Accepts either display names ("Bin-5") or flag ids ("bin5").
BlurKernel make_kernel(const std::string& name);

/// Every supported kernel, smallest first.
std::vector<BlurKernel> all_kernels();

/// Normalized m x m outer-product form.
Tensor kernel_2d(const BlurKernel& k);

/// Depthwise separable low-pass filter on every plane (stride 1).
Tensor apply_blur(const Tensor& x, const BlurKernel& k, PaddingMode pad);

/// Mean over the 2-D slices of `weights` [C_out, C_in, kh, kw] (or a single
/// [kh, kw] slice) of the normalized variation
///   (sum of squared horizontal and vertical neighbour differences) / sum of squares.
/// All-zero slices count as 0. Lower means smoother.
double filter_tv(const Tensor& weights);

}  // namespace bplab
