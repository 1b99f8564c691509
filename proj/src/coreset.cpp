#include <eagle/coreset.hpp>

#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include <eagle/errors.hpp>
#include <eagle/rng.hpp>

namespace eagle {

namespace {
using json = nlohmann::json;
}

void FeatureSet::add_grid(Index image, const FeatureGrid& grid) {
  grid.validate();
  if (vectors.rows() > 0 && vectors.cols() != grid.channels)
    throw ArgumentError("channel count mismatch while collecting patches");
  if (total_patches_by_image.count(image))
    throw ArgumentError("image added twice to feature set");

  const Index offset = vectors.rows();
  const Index n = grid.patch_count();
  vectors.conservativeResize(offset + n, grid.channels);
  vectors.bottomRows(n) = grid.patches;
  source_image.resize(static_cast<std::size_t>(offset + n));
  source_patch.resize(static_cast<std::size_t>(offset + n));
  for (Index p = 0; p < n; ++p) {
    source_image[static_cast<std::size_t>(offset + p)] = image;
    source_patch[static_cast<std::size_t>(offset + p)] = p;
  }
  total_patches_by_image[image] = n;
}

PatchFeature FeatureSet::feature(Index global_id) const {
  PatchFeature f;
  f.vector = vectors.row(global_id).transpose();
  f.source_image = source_image[static_cast<std::size_t>(global_id)];
  f.source_patch = source_patch[static_cast<std::size_t>(global_id)];
  return f;
}

ProjectionMatrix ProjectionMatrix::gaussian(Index reduced_dim, Index channels,
                                            std::uint64_t seed) {
  if (reduced_dim <= 0 || channels <= 0)
    throw ArgumentError("projection dimensions must be positive");
  ProjectionMatrix proj;
  proj.seed = seed;
  proj.entries.resize(reduced_dim, channels);
  Rng rng(derive_seed(seed, 0x50524F4Aull));  // "PROJ"
  const double stddev = 1.0 / std::sqrt(static_cast<double>(reduced_dim));
  for (Index r = 0; r < reduced_dim; ++r)
    for (Index c = 0; c < channels; ++c)
      proj.entries(r, c) = static_cast<float>(rng.normal(0.0, stddev));
  return proj;
}

CoresetTrace build_coreset(const FeatureSet& features, double target_fraction,
                           const std::optional<ProjectionMatrix>& projection, StartRule start) {
  const Index n = features.size();
  if (n == 0) throw ArgumentError("cannot build a coreset from an empty feature set");
  if (!(target_fraction > 0.0 && target_fraction <= 1.0))
    throw ArgumentError("target_fraction must lie in (0, 1]");
  const Index l = static_cast<Index>(std::llround(target_fraction * static_cast<double>(n)));
  if (l < 1) throw ArgumentError("target_fraction rounds to an empty coreset");
  if (projection && projection->cols() != features.channels())
    throw ArgumentError("projection column count does not match feature channels");

  // Selection geometry lives in double: projected features when a projection
  // is given, raw features in exact mode.
  MatrixD points;
  if (projection) {
    points = (features.vectors * projection->entries.transpose()).cast<double>();
  } else {
    points = features.vectors.cast<double>();
  }

  Index first = 0;
  if (start == StartRule::largest_projected_norm) {
    const VectorD norms = points.rowwise().squaredNorm();
    double best = -1.0;
    for (Index i = 0; i < n; ++i) {
      if (norms(i) > best) {
        best = norms(i);
        first = i;
      }
    }
  }

  std::vector<char> selected(static_cast<std::size_t>(n), 0);
  VectorD min_sq_dist = VectorD::Constant(n, std::numeric_limits<double>::infinity());

  CoresetTrace trace;
  trace.total_patches_by_image = features.total_patches_by_image;
  trace.memory_bank.resize(l, features.channels());
  trace.bank_source_image.reserve(static_cast<std::size_t>(l));
  trace.bank_source_patch.reserve(static_cast<std::size_t>(l));
  trace.selection_order.reserve(static_cast<std::size_t>(l));

  Index current = first;
  for (Index step = 0; step < l; ++step) {
    selected[static_cast<std::size_t>(current)] = 1;
    trace.selection_order.push_back(current);
    trace.memory_bank.row(step) = features.vectors.row(current);
    const Index img = features.source_image[static_cast<std::size_t>(current)];
    const Index patch = features.source_patch[static_cast<std::size_t>(current)];
    trace.bank_source_image.push_back(img);
    trace.bank_source_patch.push_back(patch);
    trace.sampled_by_image[img].insert(patch);
    if (step + 1 == l) break;

    // Incremental min-distance sweep against the newly selected point.
    min_sq_dist = min_sq_dist.cwiseMin(
        (points.rowwise() - points.row(current)).rowwise().squaredNorm());

    // Farthest-first pick; lowest global patch id wins ties.
    double best = -1.0;
    Index pick = -1;
    for (Index i = 0; i < n; ++i) {
      if (selected[static_cast<std::size_t>(i)]) continue;
      if (min_sq_dist(i) > best) {
        best = min_sq_dist(i);
        pick = i;
      }
    }
    current = pick;
  }
  return trace;
}

UnsampledIndex unsampled_of(const CoresetTrace& trace) {
  UnsampledIndex unsampled;
  for (const auto& [image, total] : trace.total_patches_by_image) {
    const auto it = trace.sampled_by_image.find(image);
    static const std::set<Index> kEmpty;
    const auto& sampled = it == trace.sampled_by_image.end() ? kEmpty : it->second;
    auto& list = unsampled.by_image[image];
    list.reserve(static_cast<std::size_t>(total - static_cast<Index>(sampled.size())));
    for (Index p = 0; p < total; ++p)
      if (!sampled.count(p)) list.push_back(p);
  }
  return unsampled;
}

Index UnsampledIndex::total() const {
  Index sum = 0;
  for (const auto& [image, list] : by_image) sum += static_cast<Index>(list.size());
  return sum;
}

double coreset_cover_radius(const CoresetTrace& trace, const FeatureSet& features) {
  if (trace.size() == 0) throw ArgumentError("empty coreset trace");
  const MatrixD bank = trace.memory_bank.cast<double>();
  double radius = 0.0;
  for (Index i = 0; i < features.size(); ++i) {
    const VectorD q = features.vectors.row(i).cast<double>().transpose();
    const double d2 = (bank.rowwise() - q.transpose()).rowwise().squaredNorm().minCoeff();
    radius = std::max(radius, std::sqrt(std::max(0.0, d2)));
  }
  return radius;
}

void save_coreset_trace(const CoresetTrace& trace, const std::vector<std::string>& image_ids,
                        const std::filesystem::path& bank_path,
                        const std::filesystem::path& sidecar_path,
                        const std::string& config_hash) {
  if (trace.size() == 0) throw ArgumentError("refusing to persist an empty coreset");

  FeatureGrid bank_grid(trace.memory_bank.cols(), trace.size(), 1);
  bank_grid.patches = trace.memory_bank;
  save_feature_grid(bank_grid, bank_path);

  json doc;
  doc["schema_version"] = 1;
  doc["config_hash"] = config_hash;
  doc["images"] = json::array();
  for (const auto& [image, total] : trace.total_patches_by_image) {
    json item;
    item["image_id"] = image_ids.at(static_cast<std::size_t>(image));
    item["total_patches"] = total;
    doc["images"].push_back(std::move(item));
  }
  doc["rows"] = json::array();
  for (Index r = 0; r < trace.size(); ++r) {
    json row;
    row["image_id"] =
        image_ids.at(static_cast<std::size_t>(trace.bank_source_image[static_cast<std::size_t>(r)]));
    row["patch_index"] = trace.bank_source_patch[static_cast<std::size_t>(r)];
    doc["rows"].push_back(std::move(row));
  }
  doc["selection_order"] = trace.selection_order;

  std::ofstream out(sidecar_path);
  if (!out) throw IoError("cannot open " + sidecar_path.string() + " for writing");
  out << doc.dump(2) << "\n";
}

LoadedCoreset load_coreset_trace(const std::filesystem::path& bank_path,
                                 const std::filesystem::path& sidecar_path,
                                 const std::string& expected_config_hash) {
  std::ifstream in(sidecar_path);
  if (!in) throw IoError("cannot open " + sidecar_path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw FormatError("sidecar parse error: " + std::string(e.what()));
  }
  if (doc.value("schema_version", 0) != 1)
    throw FormatError("unsupported coreset sidecar schema version");
  if (!expected_config_hash.empty() &&
      doc.value("config_hash", "") != expected_config_hash)
    throw FormatError("coreset sidecar config hash mismatch; rebuild required");

  LoadedCoreset loaded;
  std::map<std::string, Index> id_to_index;
  for (const auto& item : doc.at("images")) {
    const auto id = item.at("image_id").get<std::string>();
    const Index idx = static_cast<Index>(loaded.image_ids.size());
    loaded.image_ids.push_back(id);
    id_to_index[id] = idx;
    loaded.trace.total_patches_by_image[idx] = item.at("total_patches").get<Index>();
  }

  const FeatureGrid bank_grid = load_feature_grid(bank_path);
  if (bank_grid.width != 1)
    throw FormatError("bank payload must have width 1");
  loaded.trace.memory_bank = bank_grid.patches;

  const auto& rows = doc.at("rows");
  if (static_cast<Index>(rows.size()) != loaded.trace.memory_bank.rows())
    throw FormatError("sidecar row count does not match bank payload");
  for (const auto& row : rows) {
    const auto id = row.at("image_id").get<std::string>();
    const auto it = id_to_index.find(id);
    if (it == id_to_index.end()) throw FormatError("sidecar row references unknown image " + id);
    const Index patch = row.at("patch_index").get<Index>();
    loaded.trace.bank_source_image.push_back(it->second);
    loaded.trace.bank_source_patch.push_back(patch);
    loaded.trace.sampled_by_image[it->second].insert(patch);
  }
  loaded.trace.selection_order = doc.at("selection_order").get<std::vector<Index>>();
  if (loaded.trace.selection_order.size() != static_cast<std::size_t>(loaded.trace.size()))
    throw FormatError("sidecar selection order does not match bank size");
  return loaded;
}

}  // namespace eagle
