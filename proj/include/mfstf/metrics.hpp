#pragma once

// Confusion-matrix accounting (rows = truth, columns = prediction, unlabeled
// pixels excluded), OA/AA/kappa, and classification-map rendering.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mfstf/common.hpp"

namespace mfstf {

class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int classes);

  int classes() const { return classes_; }
  int64_t total() const { return total_; }
  int64_t at(int truth, int pred) const;  // 1-based classes

  void add(int truth, int pred, int64_t count = 1);

  /// Counts pixels with truth != 0. Prediction classes must lie in 1..C.
  void accumulate(std::span<const uint16_t> truth, std::span<const uint16_t> pred);

  /// Mergeable monoid: elementwise sum.
  void merge(const ConfusionMatrix& other);

 private:
  int classes_ = 0;
  int64_t total_ = 0;
  std::vector<int64_t> counts_;
};

struct Metrics {
  double oa = 0.0;
  double aa = 0.0;
  double kappa = 0.0;
  std::vector<double> per_class;  // NaN for classes absent from ground truth
};

/// OA = trace/total, per-class = diagonal/row-sum (absent rows excluded from
/// AA), kappa = (OA - p_e) / (1 - p_e).
Metrics compute_metrics(const ConfusionMatrix& cm);

using Color = std::array<uint8_t, 3>;

/// One color per class plus the unlabeled color at index 0.
std::vector<Color> default_palette(int classes);

/// Binary PPM (P6), one pixel per raster cell.
void render_map(std::span<const uint16_t> raster, int height, int width,
                std::span<const Color> palette, const std::string& path);

}  // namespace mfstf
