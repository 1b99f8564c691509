#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <eagle/caas.hpp>
#include <eagle/chat_client.hpp>
#include <eagle/coreset.hpp>
#include <eagle/dbt.hpp>
#include <eagle/feature_store.hpp>
#include <eagle/prompting.hpp>
#include <eagle/scoring.hpp>

namespace eagle {

struct EndpointSettings {
  std::string mode = "stub-echo";  // stub-echo | stub-adversarial | stub-fixed | http
  std::string url;
  std::string model = "stub";
  std::string api_key;
  std::string fixed_answer = "A";  // for stub-fixed
};

struct RunConfig {
  std::filesystem::path dataset_root;
  std::filesystem::path output_dir = "out";

  double target_fraction = kDefaultTargetFraction;
  Index patchsize = 3;
  Index stride = 1;
  bool use_projection = true;
  Index projection_dim_cap = kDefaultProjectionDim;  // d* = min(C, cap)
  std::uint64_t seed = 0;

  double kappa = kDefaultKappa;
  bool exclude_flagged_scores = true;
  std::optional<double> evt_quantile;

  Index map_upsample = 8;   // anomaly-map resolution factor over the patch grid
  double blur_sigma = 0.0;  // optional map blur, off by default
  Index min_box_area = 1;

  double alpha = 0.6;
  std::optional<double> beta;
  Index layer_lo = 9;
  Index layer_hi = 15;
  bool renormalize = false;

  PromptStyle prompt_style = PromptStyle::appendix;
  bool unparseable_as_abnormal = false;  // default policy: unparseable -> normal, flagged
  bool template_retrieval = true;

  EndpointSettings endpoint;

  // Loads a JSON config file, then applies EAGLE_ENDPOINT / EAGLE_API_KEY /
  // EAGLE_MODEL environment overrides.
  static RunConfig from_file(const std::filesystem::path& path);

  // Hash over the fields that determine build/threshold artifacts; embedded
  // in every artifact and checked on load.
  std::string config_hash() const;
};

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalRow {
  std::string image_id;
  Label label = Label::normal;
  bool predicted_anomalous = false;
  bool unparseable = false;
};

struct EvalReport {
  Index tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
  bool precision_degenerate = false;  // no positive predictions; 1.0 reported
  bool recall_degenerate = false;     // no positive labels; 1.0 reported
  Index unparseable_count = 0;
  std::vector<EvalRow> rows;
};

EvalReport compute_eval(std::vector<EvalRow> rows);

// ---------------------------------------------------------------------------
// Stages. Heavyweight intermediates are returned so later stages can reuse
// them in-process; every stage also persists its artifact under
// config.output_dir.
// ---------------------------------------------------------------------------

struct BuildResult {
  FeatureSet features;
  std::vector<std::string> image_ids;
  CoresetTrace trace;
};

struct ScoreRecord {
  std::string image_id;
  double s_img = 0.0;
  Index argmax_h = 0, argmax_w = 0;
  bool abnormal = false;
  bool low_confidence = false;
  std::vector<BoundingBox> boxes;
};

BuildResult cmd_build(const RunConfig& config);
ThresholdModel cmd_threshold(const RunConfig& config, const BuildResult& build);
std::vector<ScoreRecord> cmd_score(const RunConfig& config, Split split,
                                   const BuildResult& build, const ThresholdModel& model);

// Loads persisted artifacts instead of rebuilding; refuses hash mismatches.
BuildResult load_build(const RunConfig& config);
ThresholdModel load_threshold(const RunConfig& config);

struct PromptRecord {
  std::string image_id;
  PromptBundle bundle;
  ChatRequest request;
  bool low_confidence = false;
};

std::vector<PromptRecord> cmd_prompt(const RunConfig& config, const BuildResult& build,
                                     const std::vector<ScoreRecord>& scores);

struct AnswerRecord {
  std::string image_id;
  std::string raw_text;
  Parsed parsed = Parsed::unparseable;
  bool low_confidence = false;
  int status = 0;
  double latency_seconds = 0.0;
};

std::vector<AnswerRecord> cmd_send(const RunConfig& config,
                                   const std::vector<PromptRecord>& prompts);

EvalReport cmd_eval(const RunConfig& config, const std::vector<AnswerRecord>& answers,
                    const std::map<std::string, Label>& labels);

// Expert-only evaluation straight from score verdicts.
EvalReport eval_from_scores(const std::vector<ScoreRecord>& scores,
                            const std::map<std::string, Label>& labels);

// Full pipeline: build -> threshold -> score -> prompt -> send -> eval, with
// artifacts, the request log, eval.json, and a MANIFEST of artifact hashes
// under config.output_dir. Stage failures carry a stage tag.
EvalReport cmd_run(const RunConfig& config);

// ---------------------------------------------------------------------------
// Persistence helpers (also used by the CLI)
// ---------------------------------------------------------------------------

std::map<std::string, Label> labels_from_manifest(const DatasetManifest& manifest);

void save_scores_jsonl(const std::vector<ScoreRecord>& scores, const std::filesystem::path& path,
                       const std::string& config_hash);
std::vector<ScoreRecord> load_scores_jsonl(const std::filesystem::path& path,
                                           const std::string& expected_config_hash = "");

void save_prompts_jsonl(const std::vector<PromptRecord>& prompts,
                        const std::filesystem::path& path, const std::string& config_hash);
void save_answers_jsonl(const std::vector<AnswerRecord>& answers,
                        const std::filesystem::path& path, const std::string& config_hash);
std::vector<AnswerRecord> load_answers_jsonl(const std::filesystem::path& path,
                                             const std::string& expected_config_hash = "");

void save_eval_report(const EvalReport& report, const std::filesystem::path& path,
                      const std::string& config_hash);

// FNV-1a 64-bit content hash, hex encoded.
std::string fnv1a64_hex(const std::string& bytes);
std::string hash_file(const std::filesystem::path& path);

void write_artifact_manifest(const std::vector<std::filesystem::path>& artifacts,
                             const std::filesystem::path& manifest_path,
                             const std::string& config_hash);

}  // namespace eagle
