#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bplab {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class BoundsError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

/// Dense row-major tensor of doubles, rank 1 to 4.
///
/// Rank-1 tensors are 1-D signals [W]; for rank >= 2 the last two axes are
/// the spatial (H, W) axes and everything before them is flattened into
/// independent planes. Copies are deep, so a Tensor behaves like a value.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor from_vector(std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  bool empty() const { return data_.empty(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double at(std::initializer_list<std::size_t> index) const;
  double& at(std::initializer_list<std::size_t> index);

  /// Same data, new shape with the same element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<double> data_;
};

/// How out-of-range spatial indices are resolved.
enum class PaddingMode { Circular, Zero, Reflect };

PaddingMode padding_from_string(const std::string& name);
std::string to_string(PaddingMode mode);

/// Maps a possibly out-of-range index onto [0, n). Returns -1 when the index
/// falls into zero padding.
std::ptrdiff_t resolve_index(std::ptrdiff_t i, std::size_t n, PaddingMode mode);

struct ShiftOffset {
  std::int64_t dh = 0;
  std::int64_t dw = 0;
};

/// Spatial decomposition of a tensor: `planes` independent H x W images.
struct PlaneLayout {
  std::size_t planes = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  bool two_dimensional = false;  // false for rank-1 signals
};

PlaneLayout plane_layout(const Shape& shape);

/// Replaces the spatial extents of `shape` (one for rank 1, two otherwise).
Shape with_spatial(const Shape& shape, std::size_t height, std::size_t width);

/// out[h, w] = x[(h - dh) mod H, (w - dw) mod W] on every plane.
Tensor shift_circular(const Tensor& x, ShiftOffset offset);

/// Window of size win_h x win_w starting at (dh, dw). Never pads.
Tensor crop_shift(const Tensor& x, std::size_t win_h, std::size_t win_w, ShiftOffset offset);

/// Replicates every pixel factor x factor times.
Tensor upsample_nearest(const Tensor& x, std::size_t factor);

double sum(const Tensor& x);
double mean(const Tensor& x);
double max_abs_diff(const Tensor& a, const Tensor& b);

// Binary tensor file: 16-byte magic, u32 rank, rank x u32 extents, then
// little-endian f64 payload.
inline constexpr char kTensorMagic[16] = {'B', 'P', 'L', 'A', 'B', '-', 'T', 'E',
                                          'N', 'S', 'O', 'R', '\0', '\0', '\0', '\0'};

std::string encode_tensor(const Tensor& t);
/// Decodes one tensor starting at `pos`; advances `pos` past it.
Tensor decode_tensor(std::string_view bytes, std::size_t& pos);
Tensor decode_tensor(std::string_view bytes);

void write_tensor_file(const std::string& path, const Tensor& t);
Tensor read_tensor_file(const std::string& path);

}  // namespace bplab
