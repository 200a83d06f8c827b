#include "window.hpp"

#include <limits>

namespace bplab::detail {
namespace {

// Vertical window for a rank-1 signal: one row, one tap, no padding.
AxisWindow trivial_window() {
  AxisWindow w;
  w.in_extent = 1;
  w.out_extent = 1;
  w.taps = 1;
  w.src = {0};
  return w;
}

struct PlaneWindows {
  PlaneLayout in;
  AxisWindow rows;
  AxisWindow cols;
};

PlaneWindows plane_windows(const Shape& shape, std::size_t taps, std::size_t stride, PaddingMode pad) {
  PlaneWindows pw;
  pw.in = plane_layout(shape);
  pw.cols = make_axis_window(pw.in.width, taps, stride, pad);
  pw.rows = pw.in.two_dimensional ? make_axis_window(pw.in.height, taps, stride, pad) : trivial_window();
  return pw;
}

}  // namespace

AxisWindow make_axis_window(std::size_t n, std::size_t taps, std::size_t stride, PaddingMode pad) {
  if (taps < 1) throw ArgumentError("window size must be >= 1");
  if (stride < 1) throw ArgumentError("stride must be >= 1");
  AxisWindow w;
  w.in_extent = n;
  w.out_extent = strided_extent(n, stride);
  w.taps = taps;
  w.src.resize(w.out_extent * taps);
  const auto anchor = static_cast<std::ptrdiff_t>((taps - 1) / 2);
  for (std::size_t o = 0; o < w.out_extent; ++o) {
    for (std::size_t t = 0; t < taps; ++t) {
      const auto i = static_cast<std::ptrdiff_t>(o * stride + t) - anchor;
      w.src[o * taps + t] = resolve_index(i, n, pad);
    }
  }
  return w;
}

Tensor separable_correlate(const Tensor& x, std::span<const double> taps, std::size_t stride, PaddingMode pad) {
  const PlaneLayout L = plane_layout(x.shape());
  const std::size_t m = taps.size();
  const AxisWindow cols = make_axis_window(L.width, m, stride, pad);
  const std::size_t W2 = cols.out_extent;

  // Horizontal pass on every input row.
  std::vector<double> tmp(L.planes * L.height * W2, 0.0);
  const auto src = x.data();
  for (std::size_t r = 0; r < L.planes * L.height; ++r) {
    const double* row = &src[r * L.width];
    double* out = &tmp[r * W2];
    for (std::size_t o = 0; o < W2; ++o) {
      double acc = 0.0;
      for (std::size_t t = 0; t < m; ++t) {
        const std::ptrdiff_t c = cols.at(o, t);
        if (c >= 0) acc += taps[t] * row[c];
      }
      out[o] = acc;
    }
  }
  if (!L.two_dimensional) return Tensor(with_spatial(x.shape(), 1, W2), std::move(tmp));

  const AxisWindow rows = make_axis_window(L.height, m, stride, pad);
  const std::size_t H2 = rows.out_extent;
  Tensor out(with_spatial(x.shape(), H2, W2));
  auto dst = out.data();
  for (std::size_t p = 0; p < L.planes; ++p) {
    const double* plane = &tmp[p * L.height * W2];
    for (std::size_t o = 0; o < H2; ++o) {
      double* out_row = &dst[(p * H2 + o) * W2];
      for (std::size_t t = 0; t < m; ++t) {
        const std::ptrdiff_t r = rows.at(o, t);
        if (r < 0) continue;
        const double* in_row = &plane[r * W2];
        for (std::size_t c = 0; c < W2; ++c) out_row[c] += taps[t] * in_row[c];
      }
    }
  }
  return out;
}

Tensor separable_correlate_adjoint(const Tensor& dy, const Shape& in_shape, std::span<const double> taps,
                                   std::size_t stride, PaddingMode pad) {
  const PlaneLayout L = plane_layout(in_shape);
  const std::size_t m = taps.size();
  const AxisWindow cols = make_axis_window(L.width, m, stride, pad);
  const std::size_t W2 = cols.out_extent;
  const std::size_t H2 = L.two_dimensional ? strided_extent(L.height, stride) : 1;
  if (dy.shape() != with_spatial(in_shape, H2, W2)) {
    throw ShapeError("adjoint: gradient shape " + shape_to_string(dy.shape()) + " does not match input " +
                     shape_to_string(in_shape));
  }

  std::vector<double> dtmp;
  if (L.two_dimensional) {
    const AxisWindow rows = make_axis_window(L.height, m, stride, pad);
    dtmp.assign(L.planes * L.height * W2, 0.0);
    const auto g = dy.data();
    for (std::size_t p = 0; p < L.planes; ++p) {
      double* plane = &dtmp[p * L.height * W2];
      for (std::size_t o = 0; o < H2; ++o) {
        const double* g_row = &g[(p * H2 + o) * W2];
        for (std::size_t t = 0; t < m; ++t) {
          const std::ptrdiff_t r = rows.at(o, t);
          if (r < 0) continue;
          double* d_row = &plane[r * W2];
          for (std::size_t c = 0; c < W2; ++c) d_row[c] += taps[t] * g_row[c];
        }
      }
    }
  } else {
    dtmp.assign(dy.data().begin(), dy.data().end());
  }

  Tensor dx(in_shape);
  auto d = dx.data();
  for (std::size_t r = 0; r < L.planes * L.height; ++r) {
    const double* g_row = &dtmp[r * W2];
    double* d_row = &d[r * L.width];
    for (std::size_t o = 0; o < W2; ++o) {
      for (std::size_t t = 0; t < m; ++t) {
        const std::ptrdiff_t c = cols.at(o, t);
        if (c >= 0) d_row[c] += taps[t] * g_row[o];
      }
    }
  }
  return dx;
}

Tensor window_max(const Tensor& x, std::size_t k, std::size_t stride, PaddingMode pad,
                  std::vector<std::size_t>* argmax) {
  const PlaneWindows pw = plane_windows(x.shape(), k, stride, pad);
  const std::size_t H2 = pw.rows.out_extent;
  const std::size_t W2 = pw.cols.out_extent;
  Tensor out(with_spatial(x.shape(), H2, W2));
  if (argmax) argmax->assign(out.size(), 0);
  const auto src = x.data();
  auto dst = out.data();
  const std::size_t plane_size = pw.in.height * pw.in.width;
  for (std::size_t p = 0; p < pw.in.planes; ++p) {
    const std::size_t base = p * plane_size;
    for (std::size_t oy = 0; oy < H2; ++oy) {
      for (std::size_t ox = 0; ox < W2; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        bool found = false;
        for (std::size_t th = 0; th < pw.rows.taps; ++th) {
          const std::ptrdiff_t r = pw.rows.at(oy, th);
          if (r < 0) continue;
          for (std::size_t tw = 0; tw < pw.cols.taps; ++tw) {
            const std::ptrdiff_t c = pw.cols.at(ox, tw);
            if (c < 0) continue;
            const std::size_t idx = base + static_cast<std::size_t>(r) * pw.in.width + static_cast<std::size_t>(c);
            if (!found || src[idx] > best) {
              best = src[idx];
              best_idx = idx;
              found = true;
            }
          }
        }
        const std::size_t o = (p * H2 + oy) * W2 + ox;
        dst[o] = best;
        if (argmax) (*argmax)[o] = best_idx;
      }
    }
  }
  return out;
}

Tensor window_max_adjoint(const Tensor& dy, const Shape& in_shape, const std::vector<std::size_t>& argmax) {
  if (argmax.size() != dy.size()) throw ShapeError("argmax map does not match gradient");
  Tensor dx(in_shape);
  auto d = dx.data();
  for (std::size_t o = 0; o < dy.size(); ++o) d[argmax[o]] += dy[o];
  return dx;
}

Tensor window_mean(const Tensor& x, std::size_t k, std::size_t stride, PaddingMode pad) {
  const PlaneWindows pw = plane_windows(x.shape(), k, stride, pad);
  const std::size_t H2 = pw.rows.out_extent;
  const std::size_t W2 = pw.cols.out_extent;
  const double scale = 1.0 / static_cast<double>(pw.rows.taps * pw.cols.taps);
  Tensor out(with_spatial(x.shape(), H2, W2));
  const auto src = x.data();
  auto dst = out.data();
  const std::size_t plane_size = pw.in.height * pw.in.width;
  for (std::size_t p = 0; p < pw.in.planes; ++p) {
    const double* plane = &src[p * plane_size];
    for (std::size_t oy = 0; oy < H2; ++oy) {
      for (std::size_t ox = 0; ox < W2; ++ox) {
        double acc = 0.0;
        for (std::size_t th = 0; th < pw.rows.taps; ++th) {
          const std::ptrdiff_t r = pw.rows.at(oy, th);
          if (r < 0) continue;
          for (std::size_t tw = 0; tw < pw.cols.taps; ++tw) {
            const std::ptrdiff_t c = pw.cols.at(ox, tw);
            if (c >= 0) acc += plane[static_cast<std::size_t>(r) * pw.in.width + static_cast<std::size_t>(c)];
          }
        }
        dst[(p * H2 + oy) * W2 + ox] = acc * scale;
      }
    }
  }
  return out;
}

Tensor window_mean_adjoint(const Tensor& dy, const Shape& in_shape, std::size_t k, std::size_t stride,
                           PaddingMode pad) {
  const PlaneWindows pw = plane_windows(in_shape, k, stride, pad);
  const std::size_t H2 = pw.rows.out_extent;
  const std::size_t W2 = pw.cols.out_extent;
  if (dy.shape() != with_spatial(in_shape, H2, W2)) throw ShapeError("avg pool adjoint: gradient shape mismatch");
  const double scale = 1.0 / static_cast<double>(pw.rows.taps * pw.cols.taps);
  Tensor dx(in_shape);
  auto d = dx.data();
  const std::size_t plane_size = pw.in.height * pw.in.width;
  for (std::size_t p = 0; p < pw.in.planes; ++p) {
    double* plane = &d[p * plane_size];
    for (std::size_t oy = 0; oy < H2; ++oy) {
      for (std::size_t ox = 0; ox < W2; ++ox) {
        const double g = dy[(p * H2 + oy) * W2 + ox] * scale;
        for (std::size_t th = 0; th < pw.rows.taps; ++th) {
          const std::ptrdiff_t r = pw.rows.at(oy, th);
          if (r < 0) continue;
          for (std::size_t tw = 0; tw < pw.cols.taps; ++tw) {
            const std::ptrdiff_t c = pw.cols.at(ox, tw);
            if (c >= 0) plane[static_cast<std::size_t>(r) * pw.in.width + static_cast<std::size_t>(c)] += g;
          }
        }
      }
    }
  }
  return dx;
}

}  // namespace bplab::detail
