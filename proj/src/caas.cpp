#include <eagle/caas.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include <eagle/errors.hpp>
#include <eagle/rng.hpp>

namespace eagle {

namespace {

// Reserved embedding axes. Everything past kContent carries seeded noise.
constexpr Index kGtTag = 0;      // ground-truth visual token marker
constexpr Index kPriorTag = 1;   // textual-prior token marker
constexpr Index kAnswerTag = 2;  // answer-generating token marker
constexpr Index kContent = 3;    // evidence axis: positive = correct answer

// Scenario magnitudes. Attention schedules are expressed in effective logit
// units; build_stack folds the sqrt(dim) softmax scaling back in.
struct ScenarioConstants {
  double gt_content = 1.0;        // correct evidence carried by ground-truth tokens
  double prior_content = 7.0;     // evidence carried by the prior token
  double background_tag = 0.12;   // stray gt-tag mass on ordinary visual tokens
  double embed_noise = 0.05;
  double attn_visual = 2.0;       // answer-position logit toward gt tokens, mid layers
  double attn_visual_bg = 0.15;   // same outside the sensitive window
  double attn_prior = 6.3;        // terminal logit toward the prior token
  double value_scale = 0.25;      // content gain per layer (split across heads)
  double value_noise = 0.04;
  double weight_noise = 0.02;     // off-structure noise in W_Q / W_K
  double unembed_scale = 1.1;
  double seed_jitter = 0.22;      // per-scenario relative spread of the magnitudes
  double head_jitter = 0.15;      // per-(layer, head) schedule spread
};

constexpr ScenarioConstants kScenario{};

}  // namespace

void TokenLayout::validate() const {
  if (n_visual < 1) throw ArgumentError("token layout needs at least one visual token");
  if (n_text < 2)
    throw ArgumentError("token layout needs at least two text tokens (prior and answer)");
  std::set<Index> seen;
  for (Index g : ground_truth_indices) {
    if (g < 0 || g >= n_visual)
      throw ArgumentError("ground-truth index outside the visual token range");
    if (!seen.insert(g).second) throw ArgumentError("duplicate ground-truth index");
  }
}

void CaasConfig::validate(Index n_layers) const {
  if (!(1.0 + alpha > 0.0)) throw ArgumentError("1 + alpha must be positive");
  if (beta && !(1.0 + *beta > 0.0)) throw ArgumentError("1 + beta must be positive");
  if (layer_lo < 1 || layer_lo > layer_hi || layer_hi > n_layers)
    throw ArgumentError("layer range must satisfy 1 <= lo <= hi <= n_layers");
}

AttentionStack build_stack(const TokenLayout& layout, Index n_layers, Index n_heads, Index dim,
                           std::uint64_t seed, PriorBias prior_bias) {
  layout.validate();
  if (n_layers < 1 || n_heads < 1) throw ArgumentError("need at least one layer and head");
  if (dim < 4) throw ArgumentError("model dim must be at least 4");

  AttentionStack stack;
  stack.layout = layout;
  stack.n_layers = n_layers;
  stack.n_heads = n_heads;
  stack.dim = dim;
  stack.seed = seed;
  stack.prior_bias = prior_bias;
  stack.prior_token = layout.n_visual;        // first text token
  stack.answer_token = layout.seq_len() - 1;  // last position

  Rng rng(derive_seed(seed, 0xCAA5ull));
  const auto jitter = [&rng](double spread) { return 1.0 + spread * rng.normal(); };

  // Per-scenario wobble so seeds land on both sides of the decision boundary.
  // The visual-attention amplitude gets the widest spread: it drives both the
  // outcome and the attention ratio, the correlation the diagnostics study.
  const double gt_content = kScenario.gt_content * jitter(0.5 * kScenario.seed_jitter);
  const double prior_content = kScenario.prior_content * jitter(0.5 * kScenario.seed_jitter);
  const double attn_visual = kScenario.attn_visual * jitter(2.0 * kScenario.seed_jitter);
  const double attn_prior = kScenario.attn_prior * jitter(kScenario.seed_jitter);

  const Index seq = layout.seq_len();
  const std::set<Index> gt(layout.ground_truth_indices.begin(),
                           layout.ground_truth_indices.end());

  stack.embeddings = MatrixD::Zero(seq, dim);
  for (Index i = 0; i < seq; ++i) {
    for (Index k = kContent + 1; k < dim; ++k)
      stack.embeddings(i, k) = kScenario.embed_noise * rng.normal();
    if (i < layout.n_visual) {
      if (gt.count(i)) {
        stack.embeddings(i, kGtTag) = 1.0;
        stack.embeddings(i, kContent) = gt_content * jitter(0.15);
      } else {
        stack.embeddings(i, kGtTag) = kScenario.background_tag * std::abs(rng.normal());
        stack.embeddings(i, kContent) = kScenario.embed_noise * rng.normal();
      }
    } else if (i == stack.prior_token) {
      stack.embeddings(i, kPriorTag) = 1.0;
      switch (prior_bias) {
        case PriorBias::correct: stack.embeddings(i, kContent) = prior_content; break;
        case PriorBias::misleading: stack.embeddings(i, kContent) = -prior_content; break;
        case PriorBias::none: break;
      }
    } else if (i == stack.answer_token) {
      stack.embeddings(i, kAnswerTag) = 1.0;
    } else {
      stack.embeddings(i, kContent) = kScenario.embed_noise * rng.normal();
    }
  }

  // Attention schedule. The visual-sensitive window and the late prior ramp
  // are placed relative to depth; at 16 layers they are 9..15 and 12..16.
  const Index vis_lo = std::max<Index>(1, (9 * n_layers) / 16);
  const Index vis_hi = std::max(vis_lo, (15 * n_layers) / 16);
  const Index txt_lo = std::max<Index>(1, (12 * n_layers) / 16);

  const double sqrt_dim = std::sqrt(static_cast<double>(dim));
  stack.w_query.resize(static_cast<std::size_t>(n_layers));
  stack.w_key.resize(static_cast<std::size_t>(n_layers));
  stack.w_value.resize(static_cast<std::size_t>(n_layers));

  for (Index l = 1; l <= n_layers; ++l) {
    auto& wq = stack.w_query[static_cast<std::size_t>(l - 1)];
    auto& wk = stack.w_key[static_cast<std::size_t>(l - 1)];
    auto& wv = stack.w_value[static_cast<std::size_t>(l - 1)];
    wq.reserve(static_cast<std::size_t>(n_heads));

    const bool in_window = l >= vis_lo && l <= vis_hi;
    const double a_l = in_window ? attn_visual : kScenario.attn_visual_bg;
    const double b_l = l >= txt_lo ? attn_prior * static_cast<double>(l - txt_lo + 1) /
                                         static_cast<double>(n_layers - txt_lo + 1)
                                   : 0.0;

    for (Index h = 0; h < n_heads; ++h) {
      const double a = a_l * jitter(kScenario.head_jitter);
      const double b = b_l * jitter(kScenario.head_jitter);

      // Queries exist only at the answer position (its tag selects the row of
      // this rank-one map); keys expose the token tags.
      VectorD probe = VectorD::Zero(dim);
      probe(kGtTag) = a * sqrt_dim;
      probe(kPriorTag) = b * sqrt_dim;
      MatrixD q = MatrixD::Zero(dim, dim);
      q.row(kAnswerTag) = probe.transpose();
      MatrixD k = MatrixD::Zero(dim, dim);
      k(kGtTag, kGtTag) = 1.0;
      k(kPriorTag, kPriorTag) = 1.0;
      for (Index r = 0; r < dim; ++r)
        for (Index c = 0; c < dim; ++c) {
          q(r, c) += kScenario.weight_noise * rng.normal();
          k(r, c) += kScenario.weight_noise * rng.normal();
        }
      wq.push_back(std::move(q));
      wk.push_back(std::move(k));

      // Values route content only, split across heads.
      MatrixD v = MatrixD::Zero(dim, dim);
      const double gain = kScenario.value_scale / static_cast<double>(n_heads);
      for (Index c = kContent; c < dim; ++c) v(c, c) = gain;
      for (Index r = kContent; r < dim; ++r)
        for (Index c = kContent; c < dim; ++c)
          v(r, c) += kScenario.value_noise / static_cast<double>(n_heads) * rng.normal();
      wv.push_back(std::move(v));
    }
  }

  stack.unembedding = MatrixD::Zero(dim, 2);
  stack.unembedding(kContent, 0) = kScenario.unembed_scale;
  stack.unembedding(kContent, 1) = -kScenario.unembed_scale;
  return stack;
}

MatrixD causal_softmax(const MatrixD& logits) {
  const Index n = logits.rows();
  MatrixD att = MatrixD::Zero(n, logits.cols());
  for (Index i = 0; i < n; ++i) {
    const double row_max = logits.row(i).head(i + 1).maxCoeff();
    double denom = 0.0;
    for (Index j = 0; j <= i; ++j) {
      const double e = std::exp(logits(i, j) - row_max);
      att(i, j) = e;
      denom += e;
    }
    att.row(i).head(i + 1) /= denom;
  }
  return att;
}

void apply_caas_to_attention(MatrixD& attention, Index n_visual, double alpha,
                             std::optional<Index> beta_column, std::optional<double> beta,
                             bool renormalize) {
  attention.leftCols(n_visual) *= (1.0 + alpha);
  if (beta_column && beta) attention.col(*beta_column) *= (1.0 + *beta);
  if (renormalize) {
    for (Index i = 0; i < attention.rows(); ++i) {
      const double sum = attention.row(i).sum();
      if (sum > 0.0) attention.row(i) /= sum;
    }
  }
}

ForwardResult forward(AttentionStack& stack, const std::optional<CaasConfig>& config,
                      std::optional<double> s_img) {
  if (config && !s_img)
    throw ArgumentError("forward with a CAAS config requires the image score");
  if (config) config->validate(stack.n_layers);

  const bool active = config && *s_img >= config->gate.tau && *s_img <= config->gate.s_max;

  const Index seq = stack.layout.seq_len();
  const double inv_sqrt_dim = 1.0 / std::sqrt(static_cast<double>(stack.dim));

  stack.attention.assign(static_cast<std::size_t>(stack.n_layers), {});
  stack.hidden.assign(1, stack.embeddings);

  ForwardResult result;
  result.intervention_active = active;
  result.dynamics.probs.resize(stack.n_layers, 2);

  MatrixD x = stack.embeddings;
  for (Index l = 1; l <= stack.n_layers; ++l) {
    MatrixD delta = MatrixD::Zero(seq, stack.dim);
    auto& layer_attention = stack.attention[static_cast<std::size_t>(l - 1)];
    layer_attention.reserve(static_cast<std::size_t>(stack.n_heads));

    for (Index h = 0; h < stack.n_heads; ++h) {
      const MatrixD& wq = stack.w_query[static_cast<std::size_t>(l - 1)][static_cast<std::size_t>(h)];
      const MatrixD& wk = stack.w_key[static_cast<std::size_t>(l - 1)][static_cast<std::size_t>(h)];
      const MatrixD& wv = stack.w_value[static_cast<std::size_t>(l - 1)][static_cast<std::size_t>(h)];

      const MatrixD logits = (x * wq) * (x * wk).transpose() * inv_sqrt_dim;
      MatrixD att = causal_softmax(logits);

      if (active && l >= config->layer_lo && l <= config->layer_hi) {
        apply_caas_to_attention(att, stack.layout.n_visual, config->alpha,
                                config->beta ? std::optional<Index>(stack.prior_token)
                                             : std::nullopt,
                                config->beta, config->renormalize_rows);
      }

      delta.noalias() += att * x * wv;
      layer_attention.push_back(std::move(att));
    }

    x += delta;
    stack.hidden.push_back(x);

    // Logit-lens probe at the answer position.
    const Eigen::RowVector2d logits2 = x.row(stack.answer_token) * stack.unembedding;
    const double m = logits2.maxCoeff();
    const double e0 = std::exp(logits2(0) - m);
    const double e1 = std::exp(logits2(1) - m);
    result.dynamics.probs(l - 1, 0) = e0 / (e0 + e1);
    result.dynamics.probs(l - 1, 1) = e1 / (e0 + e1);
  }

  result.p_correct_final = result.dynamics.probs(stack.n_layers - 1, 0);
  result.predicted_correct = result.p_correct_final > 0.5;
  return result;
}

AttentionRatioReport attention_ratio(const AttentionStack& stack, const TokenLayout& layout) {
  if (layout.ground_truth_indices.empty())
    throw ArgumentError("attention ratio undefined for an empty ground-truth set");
  if (stack.attention.empty())
    throw ArgumentError("attention ratio requires a prior forward pass");

  AttentionRatioReport report;
  report.per_layer.reserve(static_cast<std::size_t>(stack.n_layers));
  for (Index l = 0; l < stack.n_layers; ++l) {
    VectorD mean_row = VectorD::Zero(layout.seq_len());
    for (Index h = 0; h < stack.n_heads; ++h)
      mean_row += stack.attention[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)]
                      .row(stack.answer_token)
                      .transpose();
    mean_row /= static_cast<double>(stack.n_heads);

    double gt_mass = 0.0;
    for (Index g : layout.ground_truth_indices) gt_mass += mean_row(g);
    const double visual_mass = mean_row.head(layout.n_visual).sum();
    report.per_layer.push_back(visual_mass > 0.0 ? gt_mass / visual_mass : 0.0);
  }
  return report;
}

double AttentionRatioReport::mean() const {
  if (per_layer.empty()) return 0.0;
  double sum = 0.0;
  for (double v : per_layer) sum += v;
  return sum / static_cast<double>(per_layer.size());
}

TokenLayout ScenarioSpec::layout() const {
  TokenLayout l;
  l.n_visual = n_visual;
  l.n_text = n_text;
  l.ground_truth_indices = ground_truth;
  return l;
}

std::vector<SweepRow> sweep_alpha(const ScenarioSpec& spec, const std::vector<double>& alphas,
                                  int trials) {
  if (trials < 1) throw ArgumentError("sweep needs at least one trial");

  std::vector<SweepRow> rows;
  rows.reserve(alphas.size());
  for (double alpha : alphas) rows.push_back({alpha, 0.0});

  const TokenLayout layout = spec.layout();
  for (int t = 0; t < trials; ++t) {
    AttentionStack stack = build_stack(layout, spec.n_layers, spec.n_heads, spec.dim,
                                       derive_seed(spec.base_seed, static_cast<std::uint64_t>(t)),
                                       spec.bias);
    for (std::size_t a = 0; a < alphas.size(); ++a) {
      CaasConfig config;
      config.alpha = alphas[a];
      config.gate = {0.0, 1.0};  // open gate: the sweep studies the scaling itself
      const ForwardResult r = forward(stack, config, 0.5);
      if (r.predicted_correct) rows[a].flip_rate += 1.0;
    }
  }
  for (auto& row : rows) row.flip_rate /= static_cast<double>(trials);
  return rows;
}

}  // namespace eagle
