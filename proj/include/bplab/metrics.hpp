#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bplab/network.hpp"
#include "bplab/tensor.hpp"

namespace bplab {

/// Mean over spatial sites of the cosine distance between channel vectors.
/// A site where both vectors are zero contributes 0, one zero vector
/// contributes 1. Accepts [C,H,W] or [1,C,H,W]; result lies in [0, 2].
double feature_distance(const Tensor& a, const Tensor& b);

struct EquivarianceMap {
  std::string layer_name;
  std::size_t layer_index = 0;
  Tensor grid;  // [H,W], grid[dh,dw] = d(Shift(F~(X)), F~(Shift(X)))
  std::size_t cumulative_stride = 1;
  std::size_t period = 1;
  double tolerance = 1e-9;
};

/// Evaluates both sides of the equivariance identity for every circular
/// shift of x at the output of layer `layer_index`, with the feature map
/// nearest-upsampled back to input resolution.
EquivarianceMap equivariance_heatmap(const Network& net, const Tensor& x, std::size_t layer_index,
                                     double tol = 1e-9);

/// Smallest N dividing both grid extents with grid <= tol at every multiple
/// of N; the grid height when none qualifies.
std::size_t detect_period(const Tensor& grid, double tol);

/// Which circular shifts a shift-robustness metric ranges over: the full
/// H x W grid, or the (2m+1)^2 window [-m, m]^2 reduced modulo (H, W).
struct ShiftMode {
  std::optional<std::size_t> max_shift;
};

std::vector<ShiftOffset> shift_set(const ShiftMode& mode, std::size_t height, std::size_t width);

/// Predicted class of every dataset image under every shift of `shifts`.
struct ShiftPredictions {
  std::vector<ShiftOffset> shifts;
  std::vector<int> classes;  // [image * shifts.size() + shift]

  int at(std::size_t image, std::size_t shift) const { return classes[image * shifts.size() + shift]; }
};

ShiftPredictions shift_predictions(const Network& net, const ToyDataset& data, const std::vector<ShiftOffset>& shifts);

/// Fraction of ordered shift pairs (self-pairs included) that agree, averaged
/// over the first `num_images` rows of the table.
double consistency_from_predictions(const ShiftPredictions& table, std::size_t num_images);

/// Probability that two shifts of the same image get the same label.
/// Exhaustive over all ordered shift pairs when the shift set has at most
/// 32*32 entries; otherwise `num_pairs` seeded Monte Carlo draws.
double classification_consistency(const Network& net, const ToyDataset& data, const ShiftMode& mode,
                                  std::size_t num_pairs, std::uint64_t seed);

/// Population standard deviation of P(true_class) over all circular shifts.
double classification_variation(const Network& net, const Tensor& x, int true_class);

struct AdversarialResult {
  double accuracy = 0.0;
  std::size_t positions_per_sample = 0;
};

/// A sample counts only if every shift in the window is classified correctly.
AdversarialResult adversarial_shift_accuracy(const Network& net, const ToyDataset& data, std::size_t max_shift);

/// Curve for m = 0..max_shift from a table that covers the max_shift window.
std::vector<AdversarialResult> adversarial_curve_from_predictions(const ShiftPredictions& table,
                                                                  std::span<const int> labels, std::size_t height,
                                                                  std::size_t width, std::size_t max_shift);

/// adversarial_shift_accuracy for m = 0..max_shift from one prediction table.
std::vector<AdversarialResult> adversarial_shift_curve(const Network& net, const ToyDataset& data,
                                                       std::size_t max_shift);

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) with peak 1, capped at 99 dB.
double psnr(const Tensor& a, const Tensor& b);

using ImageMap = std::function<Tensor(const Tensor&)>;

/// Mean over horizontal shifts dw of PSNR(Shift(f(x)), f(Shift(x))).
double psnr_stability(const ImageMap& f, const Tensor& x, const std::vector<std::int64_t>& shifts);

/// Mean over channels of anisotropic total variation per pixel, times 100.
double image_tv(const Tensor& x);

// Heatmap export.

std::string heatmap_csv(const EquivarianceMap& map);
/// Binary P5; value v maps to round(255 * (v - min) / (max - min)), 0 when flat.
std::string heatmap_pgm(const EquivarianceMap& map);
nlohmann::json heatmap_sidecar(const EquivarianceMap& map);

}  // namespace bplab
