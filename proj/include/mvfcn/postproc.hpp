#pragma once

// Score map -> binary foreground mask: global or Otsu threshold followed by
// removal of small connected regions.

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "mvfcn/tensor.hpp"

namespace mvfcn {

/// Row-major (h, w) grid.
template <typename T>
struct Grid {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(std::size_t height, std::size_t width, T fill = T(0))
      : h(height), w(width), data(height * width, fill) {}

  T& operator()(std::size_t y, std::size_t x) { return data[y * w + x]; }
  const T& operator()(std::size_t y, std::size_t x) const { return data[y * w + x]; }
  std::size_t size() const { return data.size(); }
  bool operator==(const Grid&) const = default;
};

using ScoreMap = Grid<float>;
using BinaryMask = Grid<std::uint8_t>;

/// Plane (n, c) of a tensor as a score map.
ScoreMap to_score_map(const Tensor& t, std::size_t n = 0, std::size_t c = 0);
/// Mask as a (1,1,h,w) tensor of {0,1}.
Tensor to_tensor(const BinaryMask& mask);
/// Tensor plane thresholded at 0.5.
BinaryMask to_mask(const Tensor& t, std::size_t n = 0, std::size_t c = 0);

/// mask = 1 where score >= tau.
BinaryMask threshold_global(const ScoreMap& score, double tau);

/// Score -> one of 256 levels: round(255 * clamp(s, 0, 1)).
std::uint8_t quantize_score(float s);

struct OtsuResult {
  /// Bin edge between the classes: foreground is every level above `level`,
  /// i.e. score >= tau with tau = (level + 0.5) / 255.
  double tau = 0.0;
  int level = 0;
  /// Weighted within-class variance at the chosen split (intensities in [0,1]).
  double sigma_w2 = 0.0;
  std::array<std::uint64_t, 256> histogram{};
};

/// Otsu's threshold over the 256-level histogram of a score map. Picks the
/// split minimizing rho0*var0 + rho1*var1; ties go to the lower threshold.
/// Throws DataError on a constant map (degenerate histogram).
OtsuResult otsu_threshold(const ScoreMap& score);
OtsuResult otsu_threshold(const std::array<std::uint64_t, 256>& histogram);

/// Foreground where the score's level exceeds result.level.
BinaryMask threshold_otsu(const ScoreMap& score, const OtsuResult& result);

/// Clears every foreground component with fewer than `min_area` pixels.
/// connectivity is 4 or 8.
BinaryMask remove_small_regions(const BinaryMask& mask, std::size_t min_area = 50,
                                int connectivity = 8);

enum class ThresholdMethod { Global, Otsu };

struct BinarizeOptions {
  ThresholdMethod method = ThresholdMethod::Otsu;
  double tau = 0.5;
  std::size_t min_area = 50;
  int connectivity = 8;
};

struct BinarizeResult {
  BinaryMask mask;
  /// Threshold applied; for Otsu the chosen bin edge.
  double tau = 0.0;
  /// True when Otsu met a constant map and fell back to the global tau.
  bool fallback = false;
};

/// Full pipeline: threshold then cleanup. A constant map under Otsu falls back
/// to the global threshold.
BinarizeResult binarize(const ScoreMap& score, const BinarizeOptions& opts);

}  // namespace mvfcn
