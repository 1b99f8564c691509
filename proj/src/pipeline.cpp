#include <eagle/pipeline.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include <eagle/errors.hpp>

namespace eagle {

namespace {

using json = nlohmann::json;

std::string env_or(const char* name, const std::string& fallback) {
  const char* value = std::getenv(name);
  return value && *value ? std::string(value) : fallback;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    json doc;
    in >> doc;
    return doc;
  } catch (const json::exception& e) {
    throw FormatError("JSON parse error in " + path.string() + ": " + e.what());
  }
}

std::filesystem::path split_manifest_path(const RunConfig& config, Split split) {
  return config.dataset_root / to_string(split) / "manifest.json";
}

// Loads, aggregates, and pools one image's grid through the configured patch
// transform.
FeatureGrid load_aggregated(const RunConfig& config, const std::filesystem::path& root,
                            const ManifestEntry& entry) {
  FeatureGrid grid = load_feature_grid(root / entry.feature_path);
  if (config.patchsize != 1 || config.stride != 1)
    grid = aggregate_patches(grid, config.patchsize, config.stride);
  return grid;
}

VectorD pooled_vector(const FeatureGrid& grid) {
  return grid.patches.cast<double>().colwise().mean();
}

}  // namespace

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  const json doc = read_json_file(path);
  RunConfig config;

  config.dataset_root = doc.value("dataset_root", std::string("data"));
  config.output_dir = doc.value("output_dir", std::string("out"));
  config.target_fraction = doc.value("target_fraction", config.target_fraction);
  config.patchsize = doc.value("patchsize", config.patchsize);
  config.stride = doc.value("stride", config.stride);
  config.use_projection = doc.value("use_projection", config.use_projection);
  config.projection_dim_cap = doc.value("projection_dim_cap", config.projection_dim_cap);
  config.seed = doc.value("seed", config.seed);
  config.kappa = doc.value("kappa", config.kappa);
  config.exclude_flagged_scores =
      doc.value("exclude_flagged_scores", config.exclude_flagged_scores);
  if (doc.contains("evt_quantile") && !doc.at("evt_quantile").is_null())
    config.evt_quantile = doc.at("evt_quantile").get<double>();
  config.map_upsample = doc.value("map_upsample", config.map_upsample);
  config.blur_sigma = doc.value("blur_sigma", config.blur_sigma);
  config.min_box_area = doc.value("min_box_area", config.min_box_area);
  config.alpha = doc.value("alpha", config.alpha);
  if (doc.contains("beta") && !doc.at("beta").is_null())
    config.beta = doc.at("beta").get<double>();
  config.layer_lo = doc.value("layer_lo", config.layer_lo);
  config.layer_hi = doc.value("layer_hi", config.layer_hi);
  config.renormalize = doc.value("renormalize", config.renormalize);
  const std::string style = doc.value("prompt_style", std::string("appendix"));
  if (style == "appendix") {
    config.prompt_style = PromptStyle::appendix;
  } else if (style == "short") {
    config.prompt_style = PromptStyle::short_form;
  } else {
    throw FormatError("prompt_style must be 'appendix' or 'short'");
  }
  const std::string policy = doc.value("unparseable_policy", std::string("normal"));
  if (policy == "normal") {
    config.unparseable_as_abnormal = false;
  } else if (policy == "abnormal") {
    config.unparseable_as_abnormal = true;
  } else {
    throw FormatError("unparseable_policy must be 'normal' or 'abnormal'");
  }
  config.template_retrieval = doc.value("template_retrieval", config.template_retrieval);

  if (doc.contains("endpoint")) {
    const auto& ep = doc.at("endpoint");
    config.endpoint.mode = ep.value("mode", config.endpoint.mode);
    config.endpoint.url = ep.value("url", config.endpoint.url);
    config.endpoint.model = ep.value("model", config.endpoint.model);
    config.endpoint.api_key = ep.value("api_key", config.endpoint.api_key);
    config.endpoint.fixed_answer = ep.value("fixed_answer", config.endpoint.fixed_answer);
  }
  config.endpoint.url = env_or("EAGLE_ENDPOINT", config.endpoint.url);
  config.endpoint.api_key = env_or("EAGLE_API_KEY", config.endpoint.api_key);
  config.endpoint.model = env_or("EAGLE_MODEL", config.endpoint.model);
  return config;
}

std::string fnv1a64_hex(const std::string& bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ull;
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(hash));
  return out;
}

std::string hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return fnv1a64_hex(buffer.str());
}

std::string RunConfig::config_hash() const {
  // Only the fields that determine build/threshold artifacts participate.
  std::ostringstream canon;
  canon << dataset_root.generic_string() << '|' << target_fraction << '|' << patchsize << '|'
        << stride << '|' << use_projection << '|' << projection_dim_cap << '|' << seed << '|'
        << kappa << '|' << exclude_flagged_scores << '|'
        << (evt_quantile ? std::to_string(*evt_quantile) : "none");
  return fnv1a64_hex(canon.str());
}

EvalReport compute_eval(std::vector<EvalRow> rows) {
  EvalReport report;
  for (const auto& row : rows) {
    const bool actual = row.label == Label::anomalous;
    if (row.unparseable) ++report.unparseable_count;
    if (actual && row.predicted_anomalous) ++report.tp;
    if (!actual && row.predicted_anomalous) ++report.fp;
    if (!actual && !row.predicted_anomalous) ++report.tn;
    if (actual && !row.predicted_anomalous) ++report.fn;
  }
  const Index n = report.tp + report.fp + report.tn + report.fn;
  if (n == 0) throw ArgumentError("cannot evaluate an empty prediction set");

  report.accuracy = static_cast<double>(report.tp + report.tn) / static_cast<double>(n);
  if (report.tp + report.fp == 0) {
    report.precision = 1.0;
    report.precision_degenerate = true;
  } else {
    report.precision = static_cast<double>(report.tp) / static_cast<double>(report.tp + report.fp);
  }
  if (report.tp + report.fn == 0) {
    report.recall = 1.0;
    report.recall_degenerate = true;
  } else {
    report.recall = static_cast<double>(report.tp) / static_cast<double>(report.tp + report.fn);
  }
  report.f1 = report.precision + report.recall == 0.0
                  ? 0.0
                  : 2.0 * report.precision * report.recall / (report.precision + report.recall);
  report.rows = std::move(rows);
  return report;
}

BuildResult cmd_build(const RunConfig& config) {
  const DatasetManifest manifest = load_manifest(split_manifest_path(config, Split::train_normal));
  if (manifest.entries.empty()) throw ArgumentError("train split is empty");

  BuildResult build;
  const auto root = config.dataset_root;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const FeatureGrid grid = load_aggregated(config, root, manifest.entries[i]);
    build.features.add_grid(static_cast<Index>(i), grid);
    build.image_ids.push_back(manifest.entries[i].image_id);
  }

  std::optional<ProjectionMatrix> projection;
  if (config.use_projection) {
    const Index reduced = std::min(build.features.channels(), config.projection_dim_cap);
    projection = ProjectionMatrix::gaussian(reduced, build.features.channels(), config.seed);
  }
  build.trace = build_coreset(build.features, config.target_fraction, projection);

  std::filesystem::create_directories(config.output_dir);
  save_coreset_trace(build.trace, build.image_ids, config.output_dir / "bank.eaglfeat",
                     config.output_dir / "bank_index.json", config.config_hash());
  return build;
}

BuildResult load_build(const RunConfig& config) {
  const LoadedCoreset loaded =
      load_coreset_trace(config.output_dir / "bank.eaglfeat",
                         config.output_dir / "bank_index.json", config.config_hash());

  const DatasetManifest manifest = load_manifest(split_manifest_path(config, Split::train_normal));
  BuildResult build;
  build.trace = loaded.trace;
  build.image_ids = loaded.image_ids;
  if (manifest.entries.size() != loaded.image_ids.size())
    throw FormatError("persisted bank does not match the train manifest");
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    if (manifest.entries[i].image_id != loaded.image_ids[i])
      throw FormatError("persisted bank image order does not match the train manifest");
    build.features.add_grid(static_cast<Index>(i),
                            load_aggregated(config, config.dataset_root, manifest.entries[i]));
  }
  return build;
}

ThresholdModel cmd_threshold(const RunConfig& config, const BuildResult& build) {
  const UnsampledIndex unsampled = unsampled_of(build.trace);
  const BankIndex bank(build.trace.memory_bank);
  const TrainingScoreSet ts = training_scores(build.features, build.trace, unsampled, bank);

  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (ts.empty_unsampled[i])
      std::cerr << "note: image " << build.image_ids[i]
                << " has no unsampled patches; score flagged\n";
  }

  ThresholdModel model = fit_threshold(ts, config.kappa, config.exclude_flagged_scores);
  if (config.evt_quantile)
    model.evt = fit_evt(ts, *config.evt_quantile, config.exclude_flagged_scores);

  std::filesystem::create_directories(config.output_dir);
  save_threshold_model(model, config.output_dir / "threshold.json", config.config_hash());
  return model;
}

ThresholdModel load_threshold(const RunConfig& config) {
  return load_threshold_model(config.output_dir / "threshold.json", config.config_hash());
}

std::vector<ScoreRecord> cmd_score(const RunConfig& config, Split split,
                                   const BuildResult& build, const ThresholdModel& model) {
  const DatasetManifest manifest = load_manifest(split_manifest_path(config, split));
  const BankIndex bank(build.trace.memory_bank);

  std::vector<ScoreRecord> records;
  records.reserve(manifest.entries.size());
  for (const auto& entry : manifest.entries) {
    const FeatureGrid grid = load_aggregated(config, config.dataset_root, entry);
    const ScoreGrid sg = score_grid(grid, bank);
    const ImageScore is = image_score(sg);
    const ConfidenceVerdict verdict = classify(is.value, model);

    ScoreRecord record;
    record.image_id = entry.image_id;
    record.s_img = is.value;
    record.argmax_h = is.argmax_h;
    record.argmax_w = is.argmax_w;
    record.abnormal = verdict.abnormal;
    record.low_confidence = verdict.low_confidence;

    AnomalyMap map =
        upsample_map(sg, sg.height * config.map_upsample, sg.width * config.map_upsample);
    if (config.blur_sigma > 0.0) map = blur_map(map, config.blur_sigma);
    record.boxes = extract_boxes(map, model.tau, config.min_box_area);
    records.push_back(std::move(record));
  }

  std::filesystem::create_directories(config.output_dir);
  save_scores_jsonl(records,
                    config.output_dir / ("scores_" + to_string(split) + ".jsonl"),
                    config.config_hash());
  return records;
}

std::vector<PromptRecord> cmd_prompt(const RunConfig& config, const BuildResult& build,
                                     const std::vector<ScoreRecord>& scores) {
  // Pooled train vectors for 1-shot+ template retrieval, computed on the same
  // aggregated features the bank was built from.
  MatrixD train_pooled(static_cast<Index>(build.image_ids.size()), build.features.channels());
  {
    Index offset = 0;
    for (const auto& [image, total] : build.features.total_patches_by_image) {
      train_pooled.row(image) =
          build.features.vectors.middleRows(offset, total).cast<double>().colwise().mean();
      offset += total;
    }
  }

  std::map<std::string, std::filesystem::path> feature_paths;
  for (Split split : {Split::test_normal, Split::test_anomalous}) {
    const auto path = split_manifest_path(config, split);
    if (!std::filesystem::exists(path)) continue;
    for (const auto& entry : load_manifest(path).entries)
      feature_paths[entry.image_id] = config.dataset_root / entry.feature_path;
  }

  std::vector<PromptRecord> prompts;
  prompts.reserve(scores.size());
  for (const auto& score : scores) {
    ConfidenceVerdict verdict;
    verdict.abnormal = score.abnormal;
    verdict.low_confidence = score.low_confidence;
    verdict.s_img = score.s_img;

    std::optional<std::string> template_id;
    if (config.template_retrieval) {
      const auto it = feature_paths.find(score.image_id);
      if (it == feature_paths.end())
        throw ArgumentError("no manifest entry for scored image " + score.image_id);
      FeatureGrid grid = load_feature_grid(it->second);
      if (config.patchsize != 1 || config.stride != 1)
        grid = aggregate_patches(grid, config.patchsize, config.stride);
      const Index best = nearest_by_cosine(pooled_vector(grid), train_pooled);
      template_id = build.image_ids[static_cast<std::size_t>(best)];
    }

    PromptRecord record;
    record.image_id = score.image_id;
    record.low_confidence = score.low_confidence;
    record.bundle = build_prompt(verdict, score.boxes, template_id, config.prompt_style);
    record.request = build_chat_request(record.bundle, config.endpoint.model, score.image_id);
    record.request.low_confidence = score.low_confidence;
    prompts.push_back(std::move(record));
  }

  std::filesystem::create_directories(config.output_dir);
  save_prompts_jsonl(prompts, config.output_dir / "prompts.jsonl", config.config_hash());
  return prompts;
}

namespace {

std::unique_ptr<ModelClient> make_client(const EndpointSettings& settings) {
  if (settings.mode == "stub-echo") return std::make_unique<EchoPriorStub>();
  if (settings.mode == "stub-adversarial") return std::make_unique<AdversarialStub>();
  if (settings.mode == "stub-fixed") return std::make_unique<FixedAnswerStub>(settings.fixed_answer);
  if (settings.mode == "http") {
    EndpointConfig endpoint;
    endpoint.url = settings.url;
    endpoint.model = settings.model;
    endpoint.api_key = settings.api_key;
    if (endpoint.url.empty())
      throw ArgumentError("endpoint mode 'http' requires a URL (config or EAGLE_ENDPOINT)");
    return std::make_unique<HttpChatClient>(endpoint);
  }
  throw ArgumentError("unknown endpoint mode: " + settings.mode);
}

}  // namespace

std::vector<AnswerRecord> cmd_send(const RunConfig& config,
                                   const std::vector<PromptRecord>& prompts) {
  const auto client = make_client(config.endpoint);

  std::vector<AnswerRecord> answers;
  answers.reserve(prompts.size());
  for (const auto& prompt : prompts) {
    const ChatResponse response = client->complete(prompt.request);
    if (response.raw_text.empty())
      throw EndpointError("empty completion for image " + prompt.image_id);

    AnswerRecord answer;
    answer.image_id = prompt.image_id;
    answer.raw_text = response.raw_text;
    answer.parsed = parse_answer(response.raw_text);
    answer.low_confidence = prompt.low_confidence;
    answer.status = response.status;
    answer.latency_seconds = response.latency_seconds;
    answers.push_back(std::move(answer));
  }

  std::filesystem::create_directories(config.output_dir);
  save_answers_jsonl(answers, config.output_dir / "answers.jsonl", config.config_hash());
  return answers;
}

EvalReport cmd_eval(const RunConfig& config, const std::vector<AnswerRecord>& answers,
                    const std::map<std::string, Label>& labels) {
  std::vector<EvalRow> rows;
  rows.reserve(answers.size());
  for (const auto& answer : answers) {
    const auto it = labels.find(answer.image_id);
    if (it == labels.end())
      throw ArgumentError("prediction for " + answer.image_id + " has no label");
    EvalRow row;
    row.image_id = answer.image_id;
    row.label = it->second;
    switch (answer.parsed) {
      case Parsed::defect_yes: row.predicted_anomalous = true; break;
      case Parsed::defect_no: row.predicted_anomalous = false; break;
      case Parsed::unparseable:
        row.predicted_anomalous = config.unparseable_as_abnormal;
        row.unparseable = true;
        break;
    }
    rows.push_back(std::move(row));
  }

  EvalReport report = compute_eval(std::move(rows));
  std::filesystem::create_directories(config.output_dir);
  save_eval_report(report, config.output_dir / "eval.json", config.config_hash());
  return report;
}

EvalReport eval_from_scores(const std::vector<ScoreRecord>& scores,
                            const std::map<std::string, Label>& labels) {
  std::vector<EvalRow> rows;
  rows.reserve(scores.size());
  for (const auto& score : scores) {
    const auto it = labels.find(score.image_id);
    if (it == labels.end())
      throw ArgumentError("score for " + score.image_id + " has no label");
    rows.push_back({score.image_id, it->second, score.abnormal, false});
  }
  return compute_eval(std::move(rows));
}

std::map<std::string, Label> labels_from_manifest(const DatasetManifest& manifest) {
  std::map<std::string, Label> labels;
  for (const auto& entry : manifest.entries) labels[entry.image_id] = entry.label;
  return labels;
}

EvalReport cmd_run(const RunConfig& config) {
  const auto stage = [](const char* name, auto&& fn) {
    try {
      return fn();
    } catch (const std::exception& e) {
      throw Error(std::string("stage ") + name + ": " + e.what());
    }
  };

  const BuildResult build = stage("build", [&] { return cmd_build(config); });
  const ThresholdModel model = stage("threshold", [&] { return cmd_threshold(config, build); });

  std::vector<ScoreRecord> scores = stage("score", [&] {
    auto normal = cmd_score(config, Split::test_normal, build, model);
    auto anomalous = cmd_score(config, Split::test_anomalous, build, model);
    normal.insert(normal.end(), anomalous.begin(), anomalous.end());
    return normal;
  });

  const auto prompts = stage("prompt", [&] { return cmd_prompt(config, build, scores); });
  const auto answers = stage("send", [&] { return cmd_send(config, prompts); });

  std::map<std::string, Label> labels;
  for (Split split : {Split::test_normal, Split::test_anomalous}) {
    const auto manifest = load_manifest(split_manifest_path(config, split));
    for (const auto& [id, label] : labels_from_manifest(manifest)) labels[id] = label;
  }
  const EvalReport report = stage("eval", [&] { return cmd_eval(config, answers, labels); });

  write_artifact_manifest(
      {config.output_dir / "bank.eaglfeat", config.output_dir / "bank_index.json",
       config.output_dir / "threshold.json", config.output_dir / "scores_test_normal.jsonl",
       config.output_dir / "scores_test_anomalous.jsonl", config.output_dir / "prompts.jsonl",
       config.output_dir / "answers.jsonl", config.output_dir / "eval.json"},
      config.output_dir / "MANIFEST.json", config.config_hash());
  return report;
}

// ---------------------------------------------------------------------------
// JSONL persistence. Every file opens with a header record carrying the
// schema version and config hash.
// ---------------------------------------------------------------------------

namespace {

void check_jsonl_header(const json& header, const std::string& expected_config_hash,
                        const std::filesystem::path& path) {
  if (header.value("schema_version", 0) != 1)
    throw FormatError("unsupported schema version in " + path.string());
  if (!expected_config_hash.empty() &&
      header.value("config_hash", "") != expected_config_hash)
    throw FormatError("config hash mismatch in " + path.string());
}

json header_record(const std::string& config_hash) {
  return json{{"schema_version", 1}, {"config_hash", config_hash}};
}

json boxes_to_json(const std::vector<BoundingBox>& boxes) {
  json arr = json::array();
  for (const auto& box : boxes)
    arr.push_back({{"x0", box.x0},
                   {"y0", box.y0},
                   {"x1", box.x1},
                   {"y1", box.y1},
                   {"peak", box.peak_score}});
  return arr;
}

}  // namespace

void save_scores_jsonl(const std::vector<ScoreRecord>& scores, const std::filesystem::path& path,
                       const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << header_record(config_hash).dump() << "\n";
  for (const auto& record : scores) {
    json row;
    row["image_id"] = record.image_id;
    row["s_img"] = record.s_img;
    row["argmax_patch"] = {record.argmax_h, record.argmax_w};
    row["verdict"] = record.abnormal ? "abnormal" : "normal";
    row["low_confidence"] = record.low_confidence;
    row["boxes"] = boxes_to_json(record.boxes);
    out << row.dump() << "\n";
  }
}

std::vector<ScoreRecord> load_scores_jsonl(const std::filesystem::path& path,
                                           const std::string& expected_config_hash) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty scores file " + path.string());
  check_jsonl_header(json::parse(line), expected_config_hash, path);

  std::vector<ScoreRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json row = json::parse(line);
    ScoreRecord record;
    record.image_id = row.at("image_id").get<std::string>();
    record.s_img = row.at("s_img").get<double>();
    record.argmax_h = row.at("argmax_patch").at(0).get<Index>();
    record.argmax_w = row.at("argmax_patch").at(1).get<Index>();
    record.abnormal = row.at("verdict").get<std::string>() == "abnormal";
    record.low_confidence = row.at("low_confidence").get<bool>();
    for (const auto& b : row.at("boxes")) {
      record.boxes.push_back({b.at("x0").get<Index>(), b.at("y0").get<Index>(),
                              b.at("x1").get<Index>(), b.at("y1").get<Index>(),
                              b.at("peak").get<double>()});
    }
    records.push_back(std::move(record));
  }
  return records;
}

void save_prompts_jsonl(const std::vector<PromptRecord>& prompts,
                        const std::filesystem::path& path, const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << header_record(config_hash).dump() << "\n";
  for (const auto& prompt : prompts) {
    json row;
    row["image_id"] = prompt.image_id;
    row["low_confidence"] = prompt.low_confidence;
    row["prior"] =
        prompt.bundle.prior == TextualPrior::anomalous_prior ? "anomalous" : "normal";
    row["missing_boxes"] = prompt.bundle.missing_boxes;
    row["request"] = json::parse(chat_request_to_wire_json(prompt.request));
    out << row.dump() << "\n";
  }
}

void save_answers_jsonl(const std::vector<AnswerRecord>& answers,
                        const std::filesystem::path& path, const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << header_record(config_hash).dump() << "\n";
  for (const auto& answer : answers) {
    json row;
    row["image_id"] = answer.image_id;
    row["raw_text"] = answer.raw_text;
    row["parsed"] = to_string(answer.parsed);
    row["low_confidence"] = answer.low_confidence;
    row["status"] = answer.status;
    row["latency_seconds"] = answer.latency_seconds;
    out << row.dump() << "\n";
  }
}

std::vector<AnswerRecord> load_answers_jsonl(const std::filesystem::path& path,
                                             const std::string& expected_config_hash) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty answers file " + path.string());
  check_jsonl_header(json::parse(line), expected_config_hash, path);

  std::vector<AnswerRecord> answers;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json row = json::parse(line);
    AnswerRecord answer;
    answer.image_id = row.at("image_id").get<std::string>();
    answer.raw_text = row.at("raw_text").get<std::string>();
    const std::string parsed = row.at("parsed").get<std::string>();
    answer.parsed = parsed == "defect_yes"   ? Parsed::defect_yes
                    : parsed == "defect_no" ? Parsed::defect_no
                                            : Parsed::unparseable;
    answer.low_confidence = row.at("low_confidence").get<bool>();
    answer.status = row.at("status").get<int>();
    answer.latency_seconds = row.at("latency_seconds").get<double>();
    answers.push_back(std::move(answer));
  }
  return answers;
}

void save_eval_report(const EvalReport& report, const std::filesystem::path& path,
                      const std::string& config_hash) {
  json doc;
  doc["schema_version"] = 1;
  doc["config_hash"] = config_hash;
  doc["tp"] = report.tp;
  doc["fp"] = report.fp;
  doc["tn"] = report.tn;
  doc["fn"] = report.fn;
  doc["accuracy"] = report.accuracy;
  doc["precision"] = report.precision;
  doc["recall"] = report.recall;
  doc["f1"] = report.f1;
  doc["precision_degenerate"] = report.precision_degenerate;
  doc["recall_degenerate"] = report.recall_degenerate;
  doc["unparseable_count"] = report.unparseable_count;
  doc["rows"] = json::array();
  for (const auto& row : report.rows) {
    doc["rows"].push_back({{"image_id", row.image_id},
                           {"label", to_string(row.label)},
                           {"predicted", row.predicted_anomalous ? "anomalous" : "normal"},
                           {"unparseable", row.unparseable}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << doc.dump(2) << "\n";
}

void write_artifact_manifest(const std::vector<std::filesystem::path>& artifacts,
                             const std::filesystem::path& manifest_path,
                             const std::string& config_hash) {
  json doc;
  doc["schema_version"] = 1;
  doc["config_hash"] = config_hash;
  doc["artifacts"] = json::object();
  for (const auto& artifact : artifacts) {
    if (!std::filesystem::exists(artifact)) continue;
    doc["artifacts"][artifact.filename().string()] = {
        {"fnv1a64", hash_file(artifact)},
        {"bytes", std::filesystem::file_size(artifact)}};
  }
  std::ofstream out(manifest_path);
  if (!out) throw IoError("cannot open " + manifest_path.string() + " for writing");
  out << doc.dump(2) << "\n";
}

}  // namespace eagle
