#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <eagle/feature_store.hpp>
#include <eagle/types.hpp>

namespace eagle {

// A single patch feature with its provenance.
struct PatchFeature {
  VectorF vector;
  Index source_image = 0;
  Index source_patch = 0;
};

// Columnar collection of patch features across a dataset. The global patch id
// of a feature is its row index, assigned in insertion order (image by image,
// patches in row-major (h, w) order), matching the id scheme used for
// tie-breaking during selection.
struct FeatureSet {
  MatrixF vectors;                  // n x C
  std::vector<Index> source_image;  // n
  std::vector<Index> source_patch;  // n
  std::map<Index, Index> total_patches_by_image;

  Index size() const { return vectors.rows(); }
  Index channels() const { return vectors.cols(); }

  void add_grid(Index image, const FeatureGrid& grid);
  PatchFeature feature(Index global_id) const;
};

// Seeded Gaussian random projection, entries i.i.d. N(0, 1/rows).
struct ProjectionMatrix {
  MatrixF entries;  // rows x cols
  std::uint64_t seed = 0;

  Index rows() const { return entries.rows(); }
  Index cols() const { return entries.cols(); }

  static ProjectionMatrix gaussian(Index reduced_dim, Index channels, std::uint64_t seed);
};

inline constexpr Index kDefaultProjectionDim = 128;
inline constexpr double kDefaultTargetFraction = 0.10;

enum class StartRule {
  largest_projected_norm,  // default: deterministic and robust to input order
  first_index,
};

// Memory bank plus full sampling provenance.
struct CoresetTrace {
  MatrixF memory_bank;                          // l x C, unprojected features
  std::vector<Index> bank_source_image;         // per bank row
  std::vector<Index> bank_source_patch;         // per bank row
  std::map<Index, std::set<Index>> sampled_by_image;
  std::map<Index, Index> total_patches_by_image;
  std::vector<Index> selection_order;           // global patch ids in pick order

  Index size() const { return memory_bank.rows(); }
};

struct UnsampledIndex {
  std::map<Index, std::vector<Index>> by_image;  // sorted patch indices

  Index total() const;
};

// Greedy k-center selection over all patch features. Each step picks the
// unselected feature maximizing the minimum projected distance to the
// already-selected set; ties go to the lowest global patch id. The start
// element follows `start`. Selection distances use the projection when one is
// supplied; the stored bank rows are always the unprojected features.
CoresetTrace build_coreset(const FeatureSet& features, double target_fraction,
                           const std::optional<ProjectionMatrix>& projection,
                           StartRule start = StartRule::largest_projected_norm);

// Exact per-image complement of the sampled sets.
UnsampledIndex unsampled_of(const CoresetTrace& trace);

// Max over all features of the min unprojected distance to the bank; a
// quality diagnostic for the greedy 2-approximation.
double coreset_cover_radius(const CoresetTrace& trace, const FeatureSet& features);

// ---------------------------------------------------------------------------
// Persistence: bank payload as .eaglfeat (C = channels, H = rows, W = 1) plus
// a JSON sidecar holding provenance, schema version, and the config hash.
// ---------------------------------------------------------------------------

void save_coreset_trace(const CoresetTrace& trace, const std::vector<std::string>& image_ids,
                        const std::filesystem::path& bank_path,
                        const std::filesystem::path& sidecar_path,
                        const std::string& config_hash);

struct LoadedCoreset {
  CoresetTrace trace;
  std::vector<std::string> image_ids;  // index -> id
};

// `expected_config_hash`, when non-empty, must match the sidecar or the load
// is refused.
LoadedCoreset load_coreset_trace(const std::filesystem::path& bank_path,
                                 const std::filesystem::path& sidecar_path,
                                 const std::string& expected_config_hash = "");

}  // namespace eagle
