#include <eagle/feature_store.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include <eagle/errors.hpp>
#include <eagle/rng.hpp>

namespace eagle {

namespace {

using json = nlohmann::json;

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in, const std::filesystem::path& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw FormatError("truncated header in " + path.string());
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void FeatureGrid::validate() const {
  if (channels <= 0 || height <= 0 || width <= 0)
    throw FormatError("feature grid dimensions must be positive");
  if (patches.rows() != height * width || patches.cols() != channels)
    throw FormatError("feature grid storage does not match declared shape");
  if (!patches.allFinite())
    throw FormatError("feature grid contains non-finite values");
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train_normal: return "train_normal";
    case Split::test_normal: return "test_normal";
    case Split::test_anomalous: return "test_anomalous";
  }
  throw ArgumentError("unknown split");
}

std::string to_string(Label l) {
  return l == Label::normal ? "normal" : "anomalous";
}

Split split_from_string(const std::string& s) {
  if (s == "train_normal") return Split::train_normal;
  if (s == "test_normal") return Split::test_normal;
  if (s == "test_anomalous") return Split::test_anomalous;
  throw FormatError("unknown split: " + s);
}

Label label_from_string(const std::string& s) {
  if (s == "normal") return Label::normal;
  if (s == "anomalous") return Label::anomalous;
  throw FormatError("unknown label: " + s);
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (!ids.insert(e.image_id).second)
      throw FormatError("duplicate image_id in manifest: " + e.image_id);
    if (split == Split::train_normal && e.label != Label::normal)
      throw FormatError("train_normal entry labeled anomalous: " + e.image_id);
  }
}

FeatureGrid load_feature_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());

  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kFeatureMagic, 8) != 0)
    throw FormatError("bad magic in " + path.string());

  const Index c = static_cast<Index>(read_u32(in, path));
  const Index h = static_cast<Index>(read_u32(in, path));
  const Index w = static_cast<Index>(read_u32(in, path));
  if (c <= 0 || h <= 0 || w <= 0)
    throw FormatError("non-positive dimensions in " + path.string());

  // Disk order is channel-major; read one channel plane at a time into the
  // corresponding column of the patch-major matrix.
  FeatureGrid grid(c, h, w);
  const Index plane = h * w;
  std::vector<float> buffer(static_cast<std::size_t>(plane));
  for (Index ci = 0; ci < c; ++ci) {
    in.read(reinterpret_cast<char*>(buffer.data()),
            static_cast<std::streamsize>(plane * sizeof(float)));
    if (!in) throw FormatError("truncated payload in " + path.string());
    for (Index p = 0; p < plane; ++p) grid.patches(p, ci) = buffer[static_cast<std::size_t>(p)];
  }
  grid.validate();
  return grid;
}

void save_feature_grid(const FeatureGrid& grid, const std::filesystem::path& path) {
  grid.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");

  out.write(kFeatureMagic, 8);
  write_u32(out, static_cast<std::uint32_t>(grid.channels));
  write_u32(out, static_cast<std::uint32_t>(grid.height));
  write_u32(out, static_cast<std::uint32_t>(grid.width));

  const Index plane = grid.patch_count();
  std::vector<float> buffer(static_cast<std::size_t>(plane));
  for (Index ci = 0; ci < grid.channels; ++ci) {
    for (Index p = 0; p < plane; ++p) buffer[static_cast<std::size_t>(p)] = grid.patches(p, ci);
    out.write(reinterpret_cast<const char*>(buffer.data()),
              static_cast<std::streamsize>(plane * sizeof(float)));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

GroundTruthMask load_mask(const std::filesystem::path& path) {
  const FeatureGrid grid = load_feature_grid(path);
  if (grid.channels != 1)
    throw FormatError("mask file must have a single channel: " + path.string());
  GroundTruthMask mask;
  mask.height = grid.height;
  mask.width = grid.width;
  mask.mask.resize(grid.height, grid.width);
  for (Index h = 0; h < grid.height; ++h)
    for (Index w = 0; w < grid.width; ++w)
      mask.mask(h, w) = grid.patches(grid.patch_index(h, w), 0) != 0.0f ? 1 : 0;
  return mask;
}

void save_mask(const GroundTruthMask& mask, const std::filesystem::path& path) {
  FeatureGrid grid(1, mask.height, mask.width);
  for (Index h = 0; h < mask.height; ++h)
    for (Index w = 0; w < mask.width; ++w)
      grid.patches(grid.patch_index(h, w), 0) = mask.mask(h, w) != 0 ? 1.0f : 0.0f;
  save_feature_grid(grid, path);
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw FormatError("manifest parse error in " + path.string() + ": " + e.what());
  }

  DatasetManifest manifest;
  manifest.split = split_from_string(doc.at("split").get<std::string>());
  for (const auto& item : doc.at("entries")) {
    ManifestEntry e;
    e.image_id = item.at("image_id").get<std::string>();
    e.feature_path = item.at("feature_path").get<std::string>();
    if (item.contains("mask_path") && !item.at("mask_path").is_null())
      e.mask_path = item.at("mask_path").get<std::string>();
    e.label = label_from_string(item.at("label").get<std::string>());
    manifest.entries.push_back(std::move(e));
  }
  manifest.validate();
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  manifest.validate();
  json doc;
  doc["split"] = to_string(manifest.split);
  doc["entries"] = json::array();
  for (const auto& e : manifest.entries) {
    json item;
    item["image_id"] = e.image_id;
    item["feature_path"] = e.feature_path;
    item["mask_path"] = e.mask_path.empty() ? json(nullptr) : json(e.mask_path);
    item["label"] = to_string(e.label);
    doc["entries"].push_back(std::move(item));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << doc.dump(2) << "\n";
}

FeatureGrid aggregate_patches(const FeatureGrid& grid, Index patchsize, Index stride) {
  grid.validate();
  if (patchsize <= 0 || patchsize % 2 == 0)
    throw ArgumentError("patchsize must be odd and positive");
  if (patchsize > std::min(grid.height, grid.width))
    throw ArgumentError("patchsize exceeds grid dimensions");
  if (stride <= 0) throw ArgumentError("stride must be positive");

  const Index out_h = (grid.height + stride - 1) / stride;
  const Index out_w = (grid.width + stride - 1) / stride;
  const Index half = patchsize / 2;
  const float window = static_cast<float>(patchsize * patchsize);

  FeatureGrid out(grid.channels, out_h, out_w);
  VectorF acc(grid.channels);
  for (Index oh = 0; oh < out_h; ++oh) {
    for (Index ow = 0; ow < out_w; ++ow) {
      const Index ch = oh * stride;
      const Index cw = ow * stride;
      acc.setZero();
      for (Index dh = -half; dh <= half; ++dh) {
        const Index h = ch + dh;
        if (h < 0 || h >= grid.height) continue;  // zero padding
        for (Index dw = -half; dw <= half; ++dw) {
          const Index w = cw + dw;
          if (w < 0 || w >= grid.width) continue;
          acc += grid.patches.row(grid.patch_index(h, w)).transpose();
        }
      }
      out.patches.row(out.patch_index(oh, ow)) = (acc / window).transpose();
    }
  }
  return out;
}

namespace {

// Mixture parameters depend only on (seed, component, channel), so every
// image of one dataset shares the same per-channel law. The component index
// is drawn per patch and shared across channels, and each component varies
// along a low-rank latent basis plus a small isotropic jitter. Both choices
// keep intra-class variation limited, the premise the thresholding statistics
// rely on.
struct Mixture {
  MatrixD means;                // K x C
  std::vector<MatrixD> bases;   // K of C x r, columns scaled by kGeneratorSigma
};

Mixture make_mixture(std::uint64_t seed, Index components, Index rank, Index channels) {
  Rng rng(derive_seed(seed, 0xC0FFEEull));
  Mixture mix;
  mix.means.resize(components, channels);
  for (Index k = 0; k < components; ++k)
    for (Index c = 0; c < channels; ++c) mix.means(k, c) = rng.uniform(-1.5, 1.5);
  for (Index k = 0; k < components && rank > 0; ++k) {
    MatrixD basis(channels, rank);
    for (Index c = 0; c < channels; ++c)
      for (Index r = 0; r < rank; ++r) basis(c, r) = rng.normal();
    // Orthonormalize, then scale so each latent direction injects
    // kGeneratorSigma worth of variation.
    const Eigen::HouseholderQR<MatrixD> qr(basis);
    basis = MatrixD(qr.householderQ()).leftCols(rank) * kGeneratorSigma;
    mix.bases.push_back(std::move(basis));
  }
  return mix;
}

FeatureGrid draw_normal_grid(const SyntheticSpec& spec, const Mixture& mixture, Rng& rng) {
  FeatureGrid grid(spec.channels, spec.height, spec.width);
  const Index rank = mixture.bases.empty() ? 0 : mixture.bases.front().cols();

  // Acquisition variation: one of 7 bounded exposure levels per image scales
  // all of its patch noise. Image scores then spread over a bounded band that
  // mu + kappa*sigma covers with margin, and the per-channel marginal stays a
  // finite Gaussian mixture.
  const Index level = static_cast<Index>(rng.below(7)) - 3;
  const double exposure = 1.0 + kGeneratorExposureSpread * static_cast<double>(level) / 3.0;

  // Optional per-image vocabulary restriction: each image shows only a random
  // subset of the components, like a photo showing a subset of a category's
  // textures. Which rare components an image includes then varies image to
  // image, which skews the image-score distribution to the right.
  const Index total_components = mixture.means.rows();
  std::vector<Index> subset;
  if (spec.clusters_per_image > 0 && spec.clusters_per_image < total_components) {
    std::vector<Index> all(static_cast<std::size_t>(total_components));
    for (Index k = 0; k < total_components; ++k) all[static_cast<std::size_t>(k)] = k;
    for (Index i = 0; i < spec.clusters_per_image; ++i) {
      const Index j =
          i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(total_components - i)));
      std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(j)]);
    }
    subset.assign(all.begin(), all.begin() + spec.clusters_per_image);
  }

  VectorD latent(rank);
  for (Index p = 0; p < grid.patch_count(); ++p) {
    const Index pick =
        subset.empty()
            ? static_cast<Index>(rng.below(static_cast<std::uint64_t>(total_components)))
            : subset[static_cast<std::size_t>(
                  rng.below(static_cast<std::uint64_t>(subset.size())))];
    const Index k = pick;
    VectorD value = mixture.means.row(k).transpose();
    if (rank > 0) {
      for (Index r = 0; r < rank; ++r) latent(r) = exposure * rng.normal();
      value += mixture.bases[static_cast<std::size_t>(k)] * latent;
    }
    // Rare contamination: a dirt patch carries a much larger jitter, giving
    // normal images the occasional high-scoring patch and the score
    // distribution a right tail.
    const bool dirt = spec.dirt_probability > 0.0 && rng.uniform() < spec.dirt_probability;
    const double jitter =
        exposure * (dirt ? kGeneratorDirtJitter : kGeneratorJitter);
    for (Index c = 0; c < spec.channels; ++c)
      grid.patches(p, c) = static_cast<float>(value(c) + jitter * rng.normal());
  }
  return grid;
}

GroundTruthMask inject_anomaly(FeatureGrid& grid, double shift, Rng& rng) {
  const Index max_h = std::max<Index>(1, grid.height / 3);
  const Index max_w = std::max<Index>(1, grid.width / 3);
  const Index rh = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(max_h)));
  const Index rw = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(max_w)));
  const Index y0 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(grid.height - rh + 1)));
  const Index x0 = static_cast<Index>(rng.below(static_cast<std::uint64_t>(grid.width - rw + 1)));

  GroundTruthMask mask;
  mask.height = grid.height;
  mask.width = grid.width;
  mask.mask = RowMatrix<std::uint8_t>::Zero(grid.height, grid.width);
  for (Index h = y0; h < y0 + rh; ++h) {
    for (Index w = x0; w < x0 + rw; ++w) {
      mask.mask(h, w) = 1;
      grid.patches.row(grid.patch_index(h, w)).array() += static_cast<float>(shift);
    }
  }
  return mask;
}

}  // namespace

SyntheticDataset generate_synthetic_dataset(const SyntheticSpec& spec,
                                            const std::filesystem::path& root) {
  if (spec.anomaly_shift < 0) throw ArgumentError("anomaly_shift must be non-negative");
  if (spec.channels <= 0 || spec.height <= 0 || spec.width <= 0)
    throw ArgumentError("grid shape must be positive");

  // Auto vocabulary: slightly larger than the default 10% coreset budget, so
  // the bank ends up holding about one entry per component. This mirrors how
  // a memory bank covers a texture vocabulary on real data, and it makes
  // training and held-out normals face the same score statistics.
  Index components = spec.mixture_components;
  if (components <= 0)
    components = std::max<Index>(
        16, static_cast<Index>(spec.n_train) * spec.height * spec.width / 9);
  const Mixture mixture = make_mixture(spec.seed, components, spec.latent_rank, spec.channels);
  SyntheticDataset dataset;

  struct SplitPlan {
    Split split;
    int count;
    bool anomalous;
    std::uint64_t stream;
    DatasetManifest* manifest;
  };
  SplitPlan plans[] = {
      {Split::train_normal, spec.n_train, false, 1, &dataset.train},
      {Split::test_normal, spec.n_test_normal, false, 2, &dataset.test_normal},
      {Split::test_anomalous, spec.n_test_anomalous, true, 3, &dataset.test_anomalous},
  };

  for (auto& plan : plans) {
    const std::string split_name = to_string(plan.split);
    const auto dir = root / split_name;
    std::filesystem::create_directories(dir);
    plan.manifest->split = plan.split;

    for (int i = 0; i < plan.count; ++i) {
      // One substream per (split, image) so grids do not depend on the counts
      // of other splits.
      Rng rng(derive_seed(spec.seed, plan.stream * 1000003ull + static_cast<std::uint64_t>(i)));
      FeatureGrid grid = draw_normal_grid(spec, mixture, rng);

      char id[64];
      std::snprintf(id, sizeof(id), "%s_%04d", split_name.c_str(), i);
      ManifestEntry entry;
      entry.image_id = id;
      entry.feature_path = split_name + "/" + id + ".eaglfeat";
      entry.label = plan.anomalous ? Label::anomalous : Label::normal;

      if (plan.anomalous) {
        GroundTruthMask mask = inject_anomaly(grid, spec.anomaly_shift, rng);
        entry.mask_path = split_name + "/" + id + ".mask.eaglfeat";
        save_mask(mask, root / entry.mask_path);
      }
      save_feature_grid(grid, root / entry.feature_path);
      plan.manifest->entries.push_back(std::move(entry));
    }
    save_manifest(*plan.manifest, dir / "manifest.json");
  }
  return dataset;
}

}  // namespace eagle
