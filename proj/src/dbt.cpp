#include <eagle/dbt.hpp>

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include <eagle/errors.hpp>

namespace eagle {

namespace {
using json = nlohmann::json;
constexpr double kPi = 3.14159265358979323846;

struct Moments {
  double mu = 0.0;
  double sigma = 0.0;
  double max = 0.0;
  Index n = 0;
};

Moments score_moments(const TrainingScoreSet& ts, bool exclude_flagged) {
  Moments m;
  double sum = 0.0;
  m.max = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (exclude_flagged && ts.empty_unsampled[i]) continue;
    sum += ts.scores[i];
    m.max = std::max(m.max, ts.scores[i]);
    ++m.n;
  }
  if (m.n == 0) return m;
  m.mu = sum / static_cast<double>(m.n);
  double ss = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (exclude_flagged && ts.empty_unsampled[i]) continue;
    const double d = ts.scores[i] - m.mu;
    ss += d * d;
  }
  m.sigma = std::sqrt(ss / static_cast<double>(m.n));
  return m;
}

}  // namespace

TrainingScoreSet training_scores(const FeatureSet& features, const CoresetTrace& trace,
                                 const UnsampledIndex& unsampled, const BankIndex& bank) {
  if (features.channels() != bank.channels())
    throw ArgumentError("feature channels do not match bank");

  // Row offset of each image's first patch in the feature set.
  std::map<Index, Index> offsets;
  {
    Index offset = 0;
    for (const auto& [image, total] : features.total_patches_by_image) {
      offsets[image] = offset;
      offset += total;
    }
  }

  TrainingScoreSet ts;
  for (const auto& [image, total] : trace.total_patches_by_image) {
    const auto it = unsampled.by_image.find(image);
    const std::vector<Index>* list = it == unsampled.by_image.end() ? nullptr : &it->second;

    ts.argmax_image.push_back(image);
    if (list == nullptr || list->empty()) {
      ts.scores.push_back(0.0);
      ts.argmax_patch.push_back(-1);
      ts.empty_unsampled.push_back(true);
      continue;
    }

    MatrixF queries(static_cast<Index>(list->size()), features.channels());
    const Index offset = offsets.at(image);
    for (std::size_t k = 0; k < list->size(); ++k)
      queries.row(static_cast<Index>(k)) = features.vectors.row(offset + (*list)[k]);

    VectorD distances;
    std::vector<Index> ids;
    bank.nearest(queries, distances, ids);

    Index best = 0;
    for (Index k = 1; k < distances.size(); ++k)
      if (distances(k) > distances(best)) best = k;

    ts.scores.push_back(distances(best));
    ts.argmax_patch.push_back((*list)[static_cast<std::size_t>(best)]);
    ts.empty_unsampled.push_back(false);
  }
  return ts;
}

ThresholdModel fit_threshold(const TrainingScoreSet& ts, double kappa, bool exclude_flagged) {
  const Moments m = score_moments(ts, exclude_flagged);
  if (m.n < 2) throw ArgumentError("fit_threshold needs at least 2 usable training scores");

  ThresholdModel model;
  model.mu = m.mu;
  model.sigma = m.sigma;
  model.kappa = kappa;
  model.tau = m.mu + kappa * m.sigma;
  model.s_max = m.max;
  model.n = m.n;
  return model;
}

double EvtFit::threshold() const {
  return location - scale * std::log(-std::log(quantile_q));
}

EvtFit fit_evt(const TrainingScoreSet& ts, double q, bool exclude_flagged) {
  if (!(q > 0.0 && q < 1.0)) throw ArgumentError("EVT quantile must lie in (0, 1)");
  const Moments m = score_moments(ts, exclude_flagged);
  if (m.n < 20) throw ArgumentError("fit_evt needs at least 20 usable training scores");
  if (m.sigma == 0.0) throw ArgumentError("degenerate EVT fit: zero score variance");

  EvtFit fit;
  fit.scale = m.sigma * std::sqrt(6.0) / kPi;
  fit.location = m.mu - kEulerMascheroni * fit.scale;
  fit.gamma = 0.0;
  fit.quantile_q = q;
  return fit;
}

ConfidenceVerdict classify(double s_img, const ThresholdModel& model) {
  ConfidenceVerdict verdict;
  verdict.s_img = s_img;
  verdict.abnormal = s_img >= model.tau;
  verdict.low_confidence = s_img >= model.tau && s_img <= model.s_max;
  return verdict;
}

void save_threshold_model(const ThresholdModel& model, const std::filesystem::path& path,
                          const std::string& config_hash) {
  json doc;
  doc["schema_version"] = 1;
  doc["config_hash"] = config_hash;
  doc["mu"] = model.mu;
  doc["sigma"] = model.sigma;
  doc["kappa"] = model.kappa;
  doc["tau"] = model.tau;
  doc["s_max"] = model.s_max;
  doc["n"] = model.n;
  if (model.evt) {
    doc["evt"] = {{"location", model.evt->location},
                  {"scale", model.evt->scale},
                  {"q", model.evt->quantile_q},
                  {"threshold", model.evt->threshold()}};
  } else {
    doc["evt"] = nullptr;
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << doc.dump(2) << "\n";
}

ThresholdModel load_threshold_model(const std::filesystem::path& path,
                                    const std::string& expected_config_hash) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw FormatError("threshold parse error: " + std::string(e.what()));
  }
  if (doc.value("schema_version", 0) != 1)
    throw FormatError("unsupported threshold schema version");
  if (!expected_config_hash.empty() && doc.value("config_hash", "") != expected_config_hash)
    throw FormatError("threshold config hash mismatch; re-run the threshold stage");

  ThresholdModel model;
  model.mu = doc.at("mu").get<double>();
  model.sigma = doc.at("sigma").get<double>();
  model.kappa = doc.at("kappa").get<double>();
  model.tau = doc.at("tau").get<double>();
  model.s_max = doc.at("s_max").get<double>();
  model.n = doc.at("n").get<Index>();
  if (doc.contains("evt") && !doc.at("evt").is_null()) {
    EvtFit fit;
    fit.location = doc["evt"].at("location").get<double>();
    fit.scale = doc["evt"].at("scale").get<double>();
    fit.quantile_q = doc["evt"].at("q").get<double>();
    model.evt = fit;
  }
  return model;
}

}  // namespace eagle
