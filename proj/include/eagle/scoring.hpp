#pragma once

#include <vector>

#include <eagle/coreset.hpp>
#include <eagle/feature_store.hpp>
#include <eagle/types.hpp>

namespace eagle {

// Patch-level nearest-neighbor distances of one image against the bank.
struct ScoreGrid {
  Index height = 0;
  Index width = 0;
  MatrixD scores;            // height x width, >= 0
  RowMatrix<Index> nearest;  // height x width, bank row of the nearest entry
};

struct ImageScore {
  double value = 0.0;
  Index argmax_h = 0;
  Index argmax_w = 0;
};

struct AnomalyMap {
  Index height = 0;
  Index width = 0;
  MatrixD values;
};

// Inclusive pixel coordinates.
struct BoundingBox {
  Index x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double peak_score = 0.0;
};

// Memory bank prepared for exact blocked nearest-neighbor search. Distances
// are computed in double; candidate selection uses the Gram expansion and the
// winning distance is recomputed directly, so scores match a scalar
// brute-force oracle to double rounding.
class BankIndex {
 public:
  explicit BankIndex(const MatrixF& bank);

  Index rows() const { return bank_.rows(); }
  Index channels() const { return bank_.cols(); }

  // Exact NN for each query row; lowest bank row wins ties.
  void nearest(const MatrixF& queries, VectorD& distances, std::vector<Index>& ids) const;

 private:
  MatrixD bank_;
  VectorD sq_norms_;
};

ScoreGrid score_grid(const FeatureGrid& grid, const BankIndex& bank);
ScoreGrid score_grid(const FeatureGrid& grid, const CoresetTrace& trace);

// Max patch score with first-occurrence row-major argmax.
ImageScore image_score(const ScoreGrid& sg);

// Bilinear upsampling with patch centers aligned (align-corners-false).
AnomalyMap upsample_map(const ScoreGrid& sg, Index target_h, Index target_w);

// Optional Gaussian blur of the map (off by default throughout the pipeline;
// radius <= 0 returns the input unchanged).
AnomalyMap blur_map(const AnomalyMap& map, double sigma);

// Tight boxes of the 8-connected components of {value >= threshold} with at
// least `min_area` pixels, sorted by descending peak score (ties by y0, x0).
std::vector<BoundingBox> extract_boxes(const AnomalyMap& map, double threshold,
                                       Index min_area = 1);

}  // namespace eagle
