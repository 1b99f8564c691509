#include <eagle/scoring.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include <eagle/errors.hpp>

namespace eagle {

BankIndex::BankIndex(const MatrixF& bank) {
  if (bank.rows() == 0) throw ArgumentError("empty memory bank");
  bank_ = bank.cast<double>();
  sq_norms_ = bank_.rowwise().squaredNorm();
}

void BankIndex::nearest(const MatrixF& queries, VectorD& distances,
                        std::vector<Index>& ids) const {
  if (queries.cols() != bank_.cols())
    throw ArgumentError("query dimension does not match bank");

  const Index n = queries.rows();
  distances.resize(n);
  ids.assign(static_cast<std::size_t>(n), 0);

  constexpr Index kBlock = 256;
  MatrixD gram;
  for (Index start = 0; start < n; start += kBlock) {
    const Index count = std::min(kBlock, n - start);
    const MatrixD block = queries.middleRows(start, count).cast<double>();
    const VectorD q_norms = block.rowwise().squaredNorm();
    gram.noalias() = block * bank_.transpose();

    for (Index r = 0; r < count; ++r) {
      double best = std::numeric_limits<double>::infinity();
      Index best_id = 0;
      for (Index m = 0; m < bank_.rows(); ++m) {
        const double d2 = q_norms(r) + sq_norms_(m) - 2.0 * gram(r, m);
        if (d2 < best) {
          best = d2;
          best_id = m;
        }
      }
      // Direct recomputation of the winner keeps near-zero distances exact.
      const double d2 = (block.row(r) - bank_.row(best_id)).squaredNorm();
      distances(start + r) = std::sqrt(d2);
      ids[static_cast<std::size_t>(start + r)] = best_id;
    }
  }
}

ScoreGrid score_grid(const FeatureGrid& grid, const BankIndex& bank) {
  grid.validate();
  if (grid.channels != bank.channels())
    throw ArgumentError("grid channel count does not match bank");

  VectorD distances;
  std::vector<Index> ids;
  bank.nearest(grid.patches, distances, ids);

  ScoreGrid sg;
  sg.height = grid.height;
  sg.width = grid.width;
  sg.scores.resize(grid.height, grid.width);
  sg.nearest.resize(grid.height, grid.width);
  for (Index h = 0; h < grid.height; ++h) {
    for (Index w = 0; w < grid.width; ++w) {
      const Index p = grid.patch_index(h, w);
      sg.scores(h, w) = distances(p);
      sg.nearest(h, w) = ids[static_cast<std::size_t>(p)];
    }
  }
  return sg;
}

ScoreGrid score_grid(const FeatureGrid& grid, const CoresetTrace& trace) {
  return score_grid(grid, BankIndex(trace.memory_bank));
}

ImageScore image_score(const ScoreGrid& sg) {
  if (sg.scores.size() == 0) throw ArgumentError("empty score grid");
  ImageScore best;
  best.value = -std::numeric_limits<double>::infinity();
  for (Index h = 0; h < sg.height; ++h) {
    for (Index w = 0; w < sg.width; ++w) {
      if (sg.scores(h, w) > best.value) {
        best.value = sg.scores(h, w);
        best.argmax_h = h;
        best.argmax_w = w;
      }
    }
  }
  return best;
}

AnomalyMap upsample_map(const ScoreGrid& sg, Index target_h, Index target_w) {
  if (target_h < sg.height || target_w < sg.width)
    throw ArgumentError("upsample target smaller than source grid");

  AnomalyMap map;
  map.height = target_h;
  map.width = target_w;
  map.values.resize(target_h, target_w);

  const double scale_h = static_cast<double>(sg.height) / static_cast<double>(target_h);
  const double scale_w = static_cast<double>(sg.width) / static_cast<double>(target_w);

  for (Index y = 0; y < target_h; ++y) {
    const double src_y = (static_cast<double>(y) + 0.5) * scale_h - 0.5;
    const double cy = std::clamp(src_y, 0.0, static_cast<double>(sg.height - 1));
    const Index y0 = static_cast<Index>(std::floor(cy));
    const Index y1 = std::min(y0 + 1, sg.height - 1);
    const double fy = cy - static_cast<double>(y0);
    for (Index x = 0; x < target_w; ++x) {
      const double src_x = (static_cast<double>(x) + 0.5) * scale_w - 0.5;
      const double cx = std::clamp(src_x, 0.0, static_cast<double>(sg.width - 1));
      const Index x0 = static_cast<Index>(std::floor(cx));
      const Index x1 = std::min(x0 + 1, sg.width - 1);
      const double fx = cx - static_cast<double>(x0);
      map.values(y, x) = (1.0 - fy) * ((1.0 - fx) * sg.scores(y0, x0) + fx * sg.scores(y0, x1)) +
                         fy * ((1.0 - fx) * sg.scores(y1, x0) + fx * sg.scores(y1, x1));
    }
  }
  return map;
}

AnomalyMap blur_map(const AnomalyMap& map, double sigma) {
  if (sigma <= 0.0) return map;

  const Index radius = std::max<Index>(1, static_cast<Index>(std::ceil(3.0 * sigma)));
  VectorD kernel(2 * radius + 1);
  for (Index k = -radius; k <= radius; ++k)
    kernel(k + radius) = std::exp(-0.5 * (static_cast<double>(k) / sigma) *
                                  (static_cast<double>(k) / sigma));
  kernel /= kernel.sum();

  // Separable pass with edge clamping.
  AnomalyMap tmp = map;
  for (Index y = 0; y < map.height; ++y)
    for (Index x = 0; x < map.width; ++x) {
      double acc = 0.0;
      for (Index k = -radius; k <= radius; ++k)
        acc += kernel(k + radius) * map.values(y, std::clamp(x + k, Index{0}, map.width - 1));
      tmp.values(y, x) = acc;
    }
  AnomalyMap out = tmp;
  for (Index y = 0; y < map.height; ++y)
    for (Index x = 0; x < map.width; ++x) {
      double acc = 0.0;
      for (Index k = -radius; k <= radius; ++k)
        acc += kernel(k + radius) * tmp.values(std::clamp(y + k, Index{0}, map.height - 1), x);
      out.values(y, x) = acc;
    }
  return out;
}

std::vector<BoundingBox> extract_boxes(const AnomalyMap& map, double threshold, Index min_area) {
  if (!std::isfinite(threshold)) throw ArgumentError("box threshold must be finite");

  RowMatrix<Index> label = RowMatrix<Index>::Constant(map.height, map.width, -1);
  std::vector<BoundingBox> boxes;

  for (Index sy = 0; sy < map.height; ++sy) {
    for (Index sx = 0; sx < map.width; ++sx) {
      if (label(sy, sx) != -1 || map.values(sy, sx) < threshold) continue;

      // Flood fill one 8-connected component.
      const Index id = static_cast<Index>(boxes.size());
      BoundingBox box{sx, sy, sx, sy, map.values(sy, sx)};
      Index area = 0;
      std::deque<std::pair<Index, Index>> queue{{sy, sx}};
      label(sy, sx) = id;
      while (!queue.empty()) {
        const auto [y, x] = queue.front();
        queue.pop_front();
        ++area;
        box.x0 = std::min(box.x0, x);
        box.x1 = std::max(box.x1, x);
        box.y0 = std::min(box.y0, y);
        box.y1 = std::max(box.y1, y);
        box.peak_score = std::max(box.peak_score, map.values(y, x));
        for (Index dy = -1; dy <= 1; ++dy) {
          for (Index dx = -1; dx <= 1; ++dx) {
            if (dy == 0 && dx == 0) continue;
            const Index ny = y + dy;
            const Index nx = x + dx;
            if (ny < 0 || ny >= map.height || nx < 0 || nx >= map.width) continue;
            if (label(ny, nx) != -1 || map.values(ny, nx) < threshold) continue;
            label(ny, nx) = id;
            queue.emplace_back(ny, nx);
          }
        }
      }
      if (area >= min_area) boxes.push_back(box);
    }
  }

  std::stable_sort(boxes.begin(), boxes.end(), [](const BoundingBox& a, const BoundingBox& b) {
    if (a.peak_score != b.peak_score) return a.peak_score > b.peak_score;
    if (a.y0 != b.y0) return a.y0 < b.y0;
    return a.x0 < b.x0;
  });
  return boxes;
}

}  // namespace eagle
