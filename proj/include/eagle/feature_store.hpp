#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <eagle/types.hpp>

namespace eagle {

// ---------------------------------------------------------------------------
// .eaglfeat binary format
//
//   bytes 0..7   magic "EAGLFEAT"
//   bytes 8..19  little-endian u32 C, H, W
//   then         C*H*W little-endian f32, channel-major (c, then h, then w)
//
// All values must be finite. The format round-trips bit-exactly.
// ---------------------------------------------------------------------------

inline constexpr char kFeatureMagic[8] = {'E', 'A', 'G', 'L', 'F', 'E', 'A', 'T'};

// Patch-feature tensor of one image. On disk the layout is channel-major; in
// memory we keep one patch per row, so row h*W+w is the C-dimensional
// descriptor at grid location (h, w).
struct FeatureGrid {
  Index channels = 0;
  Index height = 0;
  Index width = 0;
  MatrixF patches;  // (height*width) x channels

  FeatureGrid() = default;
  FeatureGrid(Index c, Index h, Index w)
      : channels(c), height(h), width(w), patches(MatrixF::Zero(h * w, c)) {}

  Index patch_count() const { return height * width; }
  Index patch_index(Index h, Index w) const { return h * width + w; }

  // Throws FormatError if dimensions are inconsistent or values non-finite.
  void validate() const;
};

enum class Split { train_normal, test_normal, test_anomalous };
enum class Label { normal, anomalous };

std::string to_string(Split s);
std::string to_string(Label l);
Split split_from_string(const std::string& s);
Label label_from_string(const std::string& s);

struct ManifestEntry {
  std::string image_id;
  std::string feature_path;  // relative to the manifest's directory
  std::string mask_path;     // empty when absent
  Label label = Label::normal;
};

struct DatasetManifest {
  Split split = Split::train_normal;
  std::vector<ManifestEntry> entries;

  // Enforces unique image ids and the train-normal labeling rule.
  void validate() const;
};

// Binary anomaly mask at patch-grid resolution. Persisted as a C=1 .eaglfeat
// payload holding 0.0 / 1.0.
struct GroundTruthMask {
  Index height = 0;
  Index width = 0;
  RowMatrix<std::uint8_t> mask;  // height x width, values 0/1

  bool at(Index h, Index w) const { return mask(h, w) != 0; }
};

FeatureGrid load_feature_grid(const std::filesystem::path& path);
void save_feature_grid(const FeatureGrid& grid, const std::filesystem::path& path);

GroundTruthMask load_mask(const std::filesystem::path& path);
void save_mask(const GroundTruthMask& mask, const std::filesystem::path& path);

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// Channel-wise mean over a patchsize x patchsize neighborhood, zero padded at
// the borders and divided by the full patchsize^2 window, sampled every
// `stride` locations. Output is ceil(H/stride) x ceil(W/stride).
FeatureGrid aggregate_patches(const FeatureGrid& grid, Index patchsize, Index stride);

// ---------------------------------------------------------------------------
// Synthetic dataset generator
// ---------------------------------------------------------------------------

// Structural noise scale of the generator; anomaly_shift is naturally
// expressed in multiples of this. A small isotropic jitter keeps patches
// non-degenerate, and per-image exposure levels span a bounded
// +-kGeneratorExposureSpread band.
inline constexpr double kGeneratorSigma = 0.25;
inline constexpr double kGeneratorJitter = 0.02;
inline constexpr double kGeneratorDirtJitter = 0.7;
inline constexpr double kGeneratorExposureSpread = 0.35;

struct SyntheticSpec {
  std::uint64_t seed = 0;
  int n_train = 16;
  int n_test_normal = 16;
  int n_test_anomalous = 16;
  Index channels = 16;
  Index height = 14;
  Index width = 14;
  Index mixture_components = 0;  // 0: auto, about one component per 9 train patches
  Index latent_rank = 0;         // optional within-component variation
  Index clusters_per_image = 0;  // 0: every image may use the full vocabulary
  double dirt_probability = 0.0;  // rare high-jitter contamination patches
  double anomaly_shift = 10.0 * kGeneratorSigma;
};

struct SyntheticDataset {
  DatasetManifest train;
  DatasetManifest test_normal;
  DatasetManifest test_anomalous;
};

// Writes feature grids, masks, and per-split manifests under `root`
// (<root>/<split>/manifest.json). Normal grids are drawn i.i.d. from a fixed
// per-channel two-component Gaussian mixture keyed by the seed; anomalous
// grids are identical except a contiguous rectangle whose patches are shifted
// by `anomaly_shift` on every channel, with the rectangle recorded as the
// ground-truth mask. Byte-identical outputs for equal seeds.
SyntheticDataset generate_synthetic_dataset(const SyntheticSpec& spec,
                                            const std::filesystem::path& root);

}  // namespace eagle
