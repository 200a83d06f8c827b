#include "bplab/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>

#include "bplab/io.hpp"

namespace bplab {
namespace {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 4) {
    throw ShapeError("tensor rank must be 1..4, got " + std::to_string(shape.size()));
  }
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be >= 1: " + shape_to_string(shape));
  }
}

std::int64_t floor_mod(std::int64_t a, std::int64_t n) {
  const std::int64_t r = a % n;
  return r < 0 ? r + n : r;
}

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw FormatError("tensor record truncated");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  }
  pos += sizeof(T);
  return value;
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(element_count(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (element_count(shape_) != data_.size()) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_to_string(shape_));
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw ShapeError("from_rows needs at least one row");
  const std::size_t w = rows.begin()->size();
  std::vector<double> data;
  for (const auto& row : rows) {
    if (row.size() != w) throw ShapeError("ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), w}, std::move(data));
}

Tensor Tensor::from_vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw ShapeError("index rank mismatch");
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) throw BoundsError("tensor index out of range");
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }
double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }

Tensor Tensor::reshaped(Shape shape) const {
  validate_shape(shape);
  if (element_count(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

PaddingMode padding_from_string(const std::string& name) {
  if (name == "circular") return PaddingMode::Circular;
  if (name == "zero") return PaddingMode::Zero;
  if (name == "reflect") return PaddingMode::Reflect;
  throw ArgumentError("unknown padding mode: " + name);
}

std::string to_string(PaddingMode mode) {
  switch (mode) {
    case PaddingMode::Circular: return "circular";
    case PaddingMode::Zero: return "zero";
    case PaddingMode::Reflect: return "reflect";
  }
  return "?";
}

std::ptrdiff_t resolve_index(std::ptrdiff_t i, std::size_t n, PaddingMode mode) {
  const auto len = static_cast<std::ptrdiff_t>(n);
  if (i >= 0 && i < len) return i;
  switch (mode) {
    case PaddingMode::Circular:
      return floor_mod(i, len);
    case PaddingMode::Zero:
      return -1;
    case PaddingMode::Reflect: {
      if (len == 1) return 0;
      const std::ptrdiff_t period = 2 * (len - 1);
      const std::ptrdiff_t r = floor_mod(i, period);
      return r < len ? r : period - r;
    }
  }
  return -1;
}

PlaneLayout plane_layout(const Shape& shape) {
  PlaneLayout layout;
  if (shape.empty()) throw ShapeError("empty shape");
  if (shape.size() == 1) {
    layout.width = shape[0];
    return layout;
  }
  layout.two_dimensional = true;
  layout.height = shape[shape.size() - 2];
  layout.width = shape.back();
  layout.planes = element_count(shape) / (layout.height * layout.width);
  return layout;
}

Shape with_spatial(const Shape& shape, std::size_t height, std::size_t width) {
  Shape out = shape;
  if (out.size() == 1) {
    out[0] = width;
  } else {
    out[out.size() - 2] = height;
    out.back() = width;
  }
  return out;
}

Tensor shift_circular(const Tensor& x, ShiftOffset offset) {
  if (x.rank() < 2) throw ShapeError("shift_circular needs rank >= 2, got " + shape_to_string(x.shape()));
  const PlaneLayout L = plane_layout(x.shape());
  const auto H = static_cast<std::int64_t>(L.height);
  const auto W = static_cast<std::int64_t>(L.width);
  const std::int64_t dh = floor_mod(offset.dh, H);
  const std::int64_t dw = floor_mod(offset.dw, W);
  Tensor out(x.shape());
  const auto src = x.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < L.planes; ++p) {
    const std::size_t base = p * L.height * L.width;
    for (std::int64_t h = 0; h < H; ++h) {
      const std::int64_t sh = floor_mod(h - dh, H);
      const double* row = &src[base + static_cast<std::size_t>(sh * W)];
      double* out_row = &dst[base + static_cast<std::size_t>(h * W)];
      // out[w] = row[(w - dw) mod W]: two contiguous runs
      std::copy(row + (W - dw), row + W, out_row);
      std::copy(row, row + (W - dw), out_row + dw);
    }
  }
  return out;
}

Tensor crop_shift(const Tensor& x, std::size_t win_h, std::size_t win_w, ShiftOffset offset) {
  if (x.rank() < 2) throw ShapeError("crop_shift needs rank >= 2");
  const PlaneLayout L = plane_layout(x.shape());
  if (win_h == 0 || win_w == 0) throw BoundsError("crop window must be non-empty");
  if (offset.dh < 0 || offset.dw < 0 || static_cast<std::size_t>(offset.dh) + win_h > L.height ||
      static_cast<std::size_t>(offset.dw) + win_w > L.width) {
    throw BoundsError("crop window exceeds input bounds");
  }
  Tensor out(with_spatial(x.shape(), win_h, win_w));
  const auto src = x.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < L.planes; ++p) {
    for (std::size_t h = 0; h < win_h; ++h) {
      const double* row = &src[p * L.height * L.width + (h + offset.dh) * L.width + offset.dw];
      std::copy(row, row + win_w, &dst[(p * win_h + h) * win_w]);
    }
  }
  return out;
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  if (factor < 1) throw ArgumentError("upsample factor must be >= 1");
  const PlaneLayout L = plane_layout(x.shape());
  const std::size_t fh = L.two_dimensional ? factor : 1;
  const std::size_t H = L.height * fh;
  const std::size_t W = L.width * factor;
  Tensor out(with_spatial(x.shape(), H, W));
  const auto src = x.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < L.planes; ++p) {
    for (std::size_t h = 0; h < H; ++h) {
      const double* row = &src[(p * L.height + h / fh) * L.width];
      double* out_row = &dst[(p * H + h) * W];
      for (std::size_t w = 0; w < W; ++w) out_row[w] = row[w / factor];
    }
  }
  return out;
}

double sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return s;
}

double mean(const Tensor& x) { return sum(x) / static_cast<double>(x.size()); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("shape mismatch " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::string encode_tensor(const Tensor& t) {
  std::string out(kTensorMagic, sizeof(kTensorMagic));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
  out.reserve(out.size() + 8 * t.size());
  for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Tensor decode_tensor(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(kTensorMagic) > bytes.size() ||
      std::memcmp(bytes.data() + pos, kTensorMagic, sizeof(kTensorMagic)) != 0) {
    throw FormatError("bad tensor magic");
  }
  pos += sizeof(kTensorMagic);
  const auto rank = get_le<std::uint32_t>(bytes, pos);
  if (rank < 1 || rank > 4) throw FormatError("bad tensor rank " + std::to_string(rank));
  Shape shape(rank);
  std::size_t count = 1;
  for (auto& e : shape) {
    e = get_le<std::uint32_t>(bytes, pos);
    if (e == 0) throw FormatError("zero tensor extent");
    count *= e;
  }
  if (pos + 8 * count > bytes.size()) throw FormatError("tensor payload truncated");
  std::vector<double> data(count);
  for (auto& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos));
  return Tensor(std::move(shape), std::move(data));
}

Tensor decode_tensor(std::string_view bytes) {
  std::size_t pos = 0;
  Tensor t = decode_tensor(bytes, pos);
  if (pos != bytes.size()) throw FormatError("trailing bytes after tensor record");
  return t;
}

void write_tensor_file(const std::string& path, const Tensor& t) { io::write_file_atomic(path, encode_tensor(t)); }

Tensor read_tensor_file(const std::string& path) { return decode_tensor(io::read_file(path)); }

}  // namespace bplab
