#include "bplab/filters.hpp"

#include <array>
#include <cmath>

#include "window.hpp"

namespace bplab {
namespace {

struct KernelEntry {
  const char* name;
  const char* id;
  std::size_t size;
};

constexpr std::array<KernelEntry, 7> kKernels = {{
    {"Delta-1", "delta1", 1},
    {"Rect-2", "rect2", 2},
    {"Tri-3", "tri3", 3},
    {"Bin-4", "bin4", 4},
    {"Bin-5", "bin5", 5},
    {"Bin-6", "bin6", 6},
    {"Bin-7", "bin7", 7},
}};

// Row m-1 of Pascal's triangle.
std::vector<double> pascal_row(std::size_t m) {
  std::vector<double> row{1.0};
  for (std::size_t i = 1; i < m; ++i) {
    std::vector<double> next(row.size() + 1, 0.0);
    for (std::size_t j = 0; j < row.size(); ++j) {
      next[j] += row[j];
      next[j + 1] += row[j];
    }
    row = std::move(next);
  }
  return row;
}

BlurKernel build(const KernelEntry& e) {
  BlurKernel k;
  k.name = e.name;
  k.id = e.id;
  k.taps = pascal_row(e.size);
  const double total = std::ldexp(1.0, static_cast<int>(e.size) - 1);
  for (double t : k.taps) k.norm_taps.push_back(t / total);
  return k;
}

}  // namespace

BlurKernel make_kernel(const std::string& name) {
  for (const auto& e : kKernels) {
    if (name == e.name || name == e.id) return build(e);
  }
  throw ArgumentError("unknown blur kernel: " + name);
}

std::vector<BlurKernel> all_kernels() {
  std::vector<BlurKernel> out;
  for (const auto& e : kKernels) out.push_back(build(e));
  return out;
}

Tensor kernel_2d(const BlurKernel& k) {
  const std::size_t m = k.size();
  Tensor out({m, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) out.at({i, j}) = k.norm_taps[i] * k.norm_taps[j];
  }
  return out;
}

Tensor apply_blur(const Tensor& x, const BlurKernel& k, PaddingMode pad) {
  return detail::separable_correlate(x, k.norm_taps, 1, pad);
}

double filter_tv(const Tensor& weights) {
  if (weights.rank() < 2) throw ShapeError("filter_tv needs at least a 2-D slice");
  const PlaneLayout L = plane_layout(weights.shape());
  const auto w = weights.data();
  double total = 0.0;
  for (std::size_t p = 0; p < L.planes; ++p) {
    const double* s = &w[p * L.height * L.width];
    double variation = 0.0;
    double energy = 0.0;
    for (std::size_t i = 0; i < L.height; ++i) {
      for (std::size_t j = 0; j < L.width; ++j) {
        const double v = s[i * L.width + j];
        energy += v * v;
        if (j + 1 < L.width) {
          const double d = s[i * L.width + j + 1] - v;
          variation += d * d;
        }
        if (i + 1 < L.height) {
          const double d = s[(i + 1) * L.width + j] - v;
          variation += d * d;
        }
      }
    }
    if (energy > 0.0) total += variation / energy;
  }
  return total / static_cast<double>(L.planes);
}

}  // namespace bplab
