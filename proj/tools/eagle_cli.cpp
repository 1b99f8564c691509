// Command-line front end: gen | build | threshold | score | prompt | caas-sim
// | eval | run.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <eagle/errors.hpp>
#include <eagle/pipeline.hpp>
#include <eagle/rng.hpp>

namespace {

using json = nlohmann::json;
using namespace eagle;

Split parse_split(const std::string& name) { return split_from_string(name); }

void print_eval(const EvalReport& report) {
  std::printf("tp=%lld fp=%lld tn=%lld fn=%lld\n", static_cast<long long>(report.tp),
              static_cast<long long>(report.fp), static_cast<long long>(report.tn),
              static_cast<long long>(report.fn));
  std::printf("accuracy=%.4f precision=%.4f%s recall=%.4f%s f1=%.4f\n", report.accuracy,
              report.precision, report.precision_degenerate ? " (degenerate)" : "",
              report.recall, report.recall_degenerate ? " (degenerate)" : "", report.f1);
  if (report.unparseable_count > 0)
    std::printf("unparseable answers: %lld\n", static_cast<long long>(report.unparseable_count));
}

int run_caas_sim(double alpha, std::optional<double> beta, const std::string& layers,
                 bool renormalize, std::uint64_t seed, int trials, const std::string& prior,
                 const std::string& csv_path, const std::string& json_path) {
  ScenarioSpec spec;
  spec.base_seed = seed;
  if (prior == "correct") {
    spec.bias = PriorBias::correct;
  } else if (prior == "misleading") {
    spec.bias = PriorBias::misleading;
  } else if (prior == "none") {
    spec.bias = PriorBias::none;
  } else {
    throw ArgumentError("--prior must be correct, misleading, or none");
  }

  CaasConfig config;
  config.alpha = alpha;
  config.beta = beta;
  config.renormalize_rows = renormalize;
  config.gate = {0.0, 1.0};
  if (!layers.empty()) {
    const auto colon = layers.find(':');
    if (colon == std::string::npos) throw ArgumentError("--layers expects LO:HI");
    config.layer_lo = std::stoll(layers.substr(0, colon));
    config.layer_hi = std::stoll(layers.substr(colon + 1));
  }

  // Averaged layer dynamics and attention ratios across trials, plus the
  // correct-rate with and without the intervention.
  MatrixD mean_probs = MatrixD::Zero(spec.n_layers, 2);
  VectorD mean_ar = VectorD::Zero(spec.n_layers);
  int correct_with = 0;
  int correct_without = 0;

  for (int t = 0; t < trials; ++t) {
    AttentionStack stack =
        build_stack(spec.layout(), spec.n_layers, spec.n_heads, spec.dim,
                    derive_seed(seed, static_cast<std::uint64_t>(t)), spec.bias);
    const ForwardResult baseline = forward(stack);
    if (baseline.predicted_correct) ++correct_without;

    const ForwardResult gated = forward(stack, config, 0.5);
    if (gated.predicted_correct) ++correct_with;
    mean_probs += gated.dynamics.probs;
    const AttentionRatioReport ar = attention_ratio(stack, spec.layout());
    for (Index l = 0; l < spec.n_layers; ++l) mean_ar(l) += ar.per_layer[static_cast<std::size_t>(l)];
  }
  mean_probs /= static_cast<double>(trials);
  mean_ar /= static_cast<double>(trials);

  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot open " + csv_path + " for writing");
  csv << "layer,p_correct,p_incorrect,attention_ratio\n";
  for (Index l = 0; l < spec.n_layers; ++l)
    csv << (l + 1) << "," << mean_probs(l, 0) << "," << mean_probs(l, 1) << "," << mean_ar(l)
        << "\n";

  json summary;
  summary["alpha"] = alpha;
  if (beta) summary["beta"] = *beta;
  summary["layer_lo"] = config.layer_lo;
  summary["layer_hi"] = config.layer_hi;
  summary["renormalize"] = renormalize;
  summary["prior"] = prior;
  summary["trials"] = trials;
  summary["seed"] = seed;
  summary["correct_rate"] = static_cast<double>(correct_with) / trials;
  summary["baseline_correct_rate"] = static_cast<double>(correct_without) / trials;
  std::ofstream js(json_path);
  if (!js) throw IoError("cannot open " + json_path + " for writing");
  js << summary.dump(2) << "\n";

  std::printf("caas-sim: correct_rate=%.3f baseline=%.3f (csv: %s, summary: %s)\n",
              summary["correct_rate"].get<double>(),
              summary["baseline_correct_rate"].get<double>(), csv_path.c_str(),
              json_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EAGLE: tuning-free industrial anomaly detection pipeline"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic feature dataset");
  std::string gen_root = "data";
  SyntheticSpec spec;
  long long gen_channels = spec.channels, gen_height = spec.height, gen_width = spec.width;
  gen->add_option("--root", gen_root, "Dataset root directory");
  gen->add_option("--seed", spec.seed);
  gen->add_option("--n-train", spec.n_train);
  gen->add_option("--n-test-normal", spec.n_test_normal);
  gen->add_option("--n-test-anom", spec.n_test_anomalous);
  gen->add_option("--channels", gen_channels);
  gen->add_option("--height", gen_height);
  gen->add_option("--width", gen_width);
  gen->add_option("--components", spec.mixture_components,
                  "Mixture vocabulary size (0 = auto)");
  gen->add_option("--rank", spec.latent_rank, "Within-component latent rank");
  gen->add_option("--dirt", spec.dirt_probability, "Per-patch contamination probability");
  gen->add_option("--clusters-per-image", spec.clusters_per_image,
                  "Vocabulary subset size per image (0 = unrestricted)");
  gen->add_option("--shift", spec.anomaly_shift, "Anomaly shift in feature units");

  // config-driven subcommands
  std::string config_path = "eagle.json";
  std::string out_override;
  std::string split_name = "test_anomalous";
  for (auto* sub : {app.add_subcommand("build", "Build the coreset memory bank"),
                    app.add_subcommand("threshold", "Fit the DBT threshold"),
                    app.add_subcommand("run", "Run the full pipeline")}) {
    sub->add_option("--config", config_path, "Run configuration file");
    sub->add_option("--out", out_override, "Output directory override");
  }
  auto* score = app.add_subcommand("score", "Score a split against the bank");
  score->add_option("--config", config_path);
  score->add_option("--out", out_override);
  score->add_option("--split", split_name, "train_normal | test_normal | test_anomalous");
  auto* prompt = app.add_subcommand("prompt", "Build prompts from persisted scores");
  prompt->add_option("--config", config_path);
  prompt->add_option("--out", out_override);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate predictions against labels");
  std::vector<std::string> pred_paths;
  bool eval_expert_only = false;
  eval->add_option("--config", config_path);
  eval->add_option("--out", out_override);
  eval->add_option("--pred", pred_paths, "Prediction JSONL files (answers or scores)");
  eval->add_flag("--from-scores", eval_expert_only,
                 "Treat --pred files as score files (expert-only verdicts)");

  // caas-sim
  auto* sim = app.add_subcommand("caas-sim", "Toy attention-stack intervention study");
  double sim_alpha = 0.6;
  double sim_beta = 0.0;
  bool sim_beta_set = false;
  std::string sim_layers = "9:15";
  bool sim_renorm = false;
  std::uint64_t sim_seed = 0;
  int sim_trials = 100;
  std::string sim_prior = "misleading";
  std::string sim_csv = "caas_sim.csv";
  std::string sim_json = "caas_sim.json";
  sim->add_option("--alpha", sim_alpha);
  auto* beta_opt = sim->add_option("--beta", sim_beta, "Textual suppression ablation");
  sim->add_option("--layers", sim_layers, "Intervention range LO:HI (1-based)");
  sim->add_flag("--renormalize", sim_renorm);
  sim->add_option("--seed", sim_seed);
  sim->add_option("--trials", sim_trials);
  sim->add_option("--prior", sim_prior, "correct | misleading | none");
  sim->add_option("--out-csv", sim_csv);
  sim->add_option("--out-json", sim_json);

  CLI11_PARSE(app, argc, argv);
  sim_beta_set = beta_opt->count() > 0;

  const auto load_config = [&] {
    RunConfig config = RunConfig::from_file(config_path);
    if (!out_override.empty()) config.output_dir = out_override;
    return config;
  };

  try {
    if (gen->parsed()) {
      spec.channels = gen_channels;
      spec.height = gen_height;
      spec.width = gen_width;
      generate_synthetic_dataset(spec, gen_root);
      std::printf("wrote synthetic dataset under %s\n", gen_root.c_str());
      return 0;
    }
    if (app.got_subcommand("build")) {
      const RunConfig config = load_config();
      const BuildResult build = cmd_build(config);
      std::printf("bank: %lld rows of %lld patches (%.1f%%)\n",
                  static_cast<long long>(build.trace.size()),
                  static_cast<long long>(build.features.size()),
                  100.0 * build.trace.size() / build.features.size());
      return 0;
    }
    if (app.got_subcommand("threshold")) {
      const RunConfig config = load_config();
      const BuildResult build = load_build(config);
      const ThresholdModel model = cmd_threshold(config, build);
      std::printf("mu=%.6g sigma=%.6g kappa=%g tau=%.6g s_max=%.6g n=%lld\n", model.mu,
                  model.sigma, model.kappa, model.tau, model.s_max,
                  static_cast<long long>(model.n));
      return 0;
    }
    if (score->parsed()) {
      const RunConfig config = load_config();
      const BuildResult build = load_build(config);
      const ThresholdModel model = load_threshold(config);
      const auto records = cmd_score(config, parse_split(split_name), build, model);
      std::printf("scored %zu images -> %s\n", records.size(),
                  (config.output_dir / ("scores_" + split_name + ".jsonl")).c_str());
      return 0;
    }
    if (prompt->parsed()) {
      const RunConfig config = load_config();
      const BuildResult build = load_build(config);
      std::vector<ScoreRecord> scores;
      for (Split s : {Split::test_normal, Split::test_anomalous}) {
        const auto path = config.output_dir / ("scores_" + to_string(s) + ".jsonl");
        if (!std::filesystem::exists(path)) continue;
        auto part = load_scores_jsonl(path, config.config_hash());
        scores.insert(scores.end(), part.begin(), part.end());
      }
      if (scores.empty()) throw ArgumentError("no score files found; run `eagle score` first");
      const auto prompts = cmd_prompt(config, build, scores);
      std::printf("wrote %zu prompts -> %s\n", prompts.size(),
                  (config.output_dir / "prompts.jsonl").c_str());
      return 0;
    }
    if (eval->parsed()) {
      const RunConfig config = load_config();
      std::map<std::string, Label> labels;
      for (Split s : {Split::test_normal, Split::test_anomalous}) {
        const auto path = config.dataset_root / to_string(s) / "manifest.json";
        if (!std::filesystem::exists(path)) continue;
        for (const auto& [id, label] : labels_from_manifest(load_manifest(path)))
          labels[id] = label;
      }
      if (pred_paths.empty()) pred_paths = {(config.output_dir / "answers.jsonl").string()};

      EvalReport report;
      if (eval_expert_only) {
        std::vector<ScoreRecord> scores;
        for (const auto& path : pred_paths) {
          auto part = load_scores_jsonl(path, config.config_hash());
          scores.insert(scores.end(), part.begin(), part.end());
        }
        report = eval_from_scores(scores, labels);
        save_eval_report(report, config.output_dir / "eval.json", config.config_hash());
      } else {
        std::vector<AnswerRecord> answers;
        for (const auto& path : pred_paths) {
          auto part = load_answers_jsonl(path, config.config_hash());
          answers.insert(answers.end(), part.begin(), part.end());
        }
        report = cmd_eval(config, answers, labels);
      }
      print_eval(report);
      return 0;
    }
    if (sim->parsed()) {
      return run_caas_sim(sim_alpha,
                          sim_beta_set ? std::optional<double>(sim_beta) : std::nullopt,
                          sim_layers, sim_renorm, sim_seed, sim_trials, sim_prior, sim_csv,
                          sim_json);
    }
    if (app.got_subcommand("run")) {
      const RunConfig config = load_config();
      const EvalReport report = cmd_run(config);
      print_eval(report);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
