#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <eagle/coreset.hpp>
#include <eagle/scoring.hpp>
#include <eagle/types.hpp>

namespace eagle {

// Image-level anomaly scores of the training normals, computed from their
// unsampled patches only.
struct TrainingScoreSet {
  std::vector<double> scores;          // one per training image, image-index order
  std::vector<Index> argmax_image;     // image index of each score (== position)
  std::vector<Index> argmax_patch;     // patch index attaining the max; -1 when none
  std::vector<bool> empty_unsampled;   // true when the image had no unsampled patches

  std::size_t size() const { return scores.size(); }
};

struct EvtFit {
  double location = 0.0;
  double scale = 0.0;    // > 0
  double gamma = 0.0;    // Gumbel family
  double quantile_q = 0.0;

  // q-quantile of the fitted Gumbel law.
  double threshold() const;
};

struct ThresholdModel {
  double mu = 0.0;
  double sigma = 0.0;    // population (1/N) estimator
  double kappa = 3.0;
  double tau = 0.0;      // mu + kappa * sigma, exactly
  double s_max = 0.0;    // max training score
  Index n = 0;           // scores used for the fit
  std::optional<EvtFit> evt;
};

struct ConfidenceVerdict {
  bool abnormal = false;        // s_img >= tau
  bool low_confidence = false;  // tau <= s_img <= s_max
  double s_img = 0.0;
};

inline constexpr double kDefaultKappa = 3.0;
inline constexpr double kEulerMascheroni = 0.5772156649015329;

// Max NN distance over each training image's unsampled patches. Images whose
// unsampled set is empty score 0 and are flagged; such a score is an artifact
// of full sampling, not evidence.
TrainingScoreSet training_scores(const FeatureSet& features, const CoresetTrace& trace,
                                 const UnsampledIndex& unsampled, const BankIndex& bank);

// Gaussian threshold: tau = mu + kappa * sigma over the training scores.
// Flagged (empty-unsampled) images are excluded from the fit by default.
ThresholdModel fit_threshold(const TrainingScoreSet& ts, double kappa = kDefaultKappa,
                             bool exclude_flagged = true);

// Gumbel fit by method of moments on the same scores;
// scale = sigma * sqrt(6)/pi, location = mu - gamma_E * scale.
EvtFit fit_evt(const TrainingScoreSet& ts, double q, bool exclude_flagged = true);

ConfidenceVerdict classify(double s_img, const ThresholdModel& model);

// JSON document {mu, sigma, kappa, tau, s_max, n, evt:{location, scale, q,
// threshold}} plus schema version and config hash.
void save_threshold_model(const ThresholdModel& model, const std::filesystem::path& path,
                          const std::string& config_hash);
ThresholdModel load_threshold_model(const std::filesystem::path& path,
                                    const std::string& expected_config_hash = "");

}  // namespace eagle
