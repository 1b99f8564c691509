#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <eagle/types.hpp>

namespace eagle {

// Token layout of the toy stack: visual tokens first (indices 0..n_visual-1),
// then text tokens. A subset of the visual tokens is marked as the
// ground-truth anomalous region.
struct TokenLayout {
  Index n_visual = 0;
  Index n_text = 0;
  std::vector<Index> ground_truth_indices;  // subset of [0, n_visual)

  Index seq_len() const { return n_visual + n_text; }
  void validate() const;
};

enum class PriorBias { correct, misleading, none };

// Deterministic residual + multi-head-attention stack. No layer norm, no MLP:
// x_i^l = x_i^{l-1} + sum_h sum_{j<=i} A^{l,h}_{i,j} x_j^{l-1} W_V^{l,h},
// with A computed by scaled dot-product and causal softmax. Layers are
// 1-based. The scenario encodes visual evidence for the "correct" answer at
// the ground-truth tokens and a textual-prior token whose content follows
// `prior_bias`; attention drifts from the visual tokens in intermediate
// layers toward the prior token in late layers.
struct AttentionStack {
  TokenLayout layout;
  Index n_layers = 0;
  Index n_heads = 0;
  Index dim = 0;
  std::uint64_t seed = 0;
  PriorBias prior_bias = PriorBias::none;
  Index prior_token = -1;   // sequence position carrying the textual prior
  Index answer_token = -1;  // answer-generating position (last)

  MatrixD embeddings;  // seq x dim
  std::vector<std::vector<MatrixD>> w_query;  // [layer][head], dim x dim
  std::vector<std::vector<MatrixD>> w_key;
  std::vector<std::vector<MatrixD>> w_value;
  MatrixD unembedding;  // dim x 2: columns map to (correct, incorrect) logits

  // Populated by forward():
  std::vector<std::vector<MatrixD>> attention;  // [layer][head], seq x seq
  std::vector<MatrixD> hidden;                  // [0..n_layers], seq x dim
};

// Low-confidence interval that arms the intervention.
struct CaasGate {
  double tau = 0.0;
  double s_max = 0.0;
};

struct CaasConfig {
  double alpha = 0.6;
  std::optional<double> beta;  // textual-prior suppression ablation when set
  Index layer_lo = 9;          // 1-based inclusive range
  Index layer_hi = 15;
  bool renormalize_rows = false;
  CaasGate gate;

  void validate(Index n_layers) const;
};

// Per-layer (p_correct, p_incorrect) read through the unembedding at the
// answer position; row l-1 holds layer l. Each row sums to 1.
struct LayerDynamics {
  MatrixD probs;  // n_layers x 2
};

struct ForwardResult {
  LayerDynamics dynamics;
  double p_correct_final = 0.0;
  bool predicted_correct = false;
  bool intervention_active = false;
};

struct AttentionRatioReport {
  std::vector<double> per_layer;  // AR^(l), l = 1..n_layers

  double mean() const;
};

AttentionStack build_stack(const TokenLayout& layout, Index n_layers, Index n_heads, Index dim,
                           std::uint64_t seed, PriorBias prior_bias);

// Runs all layers, recording attention, hidden states, and the probe. When a
// config is supplied, s_img must be too; the scaling fires only for
// s_img in [gate.tau, gate.s_max], multiplying post-softmax attention to
// visual-token columns by (1+alpha) (and the prior-token column by (1+beta)
// when set) in layers layer_lo..layer_hi.
ForwardResult forward(AttentionStack& stack, const std::optional<CaasConfig>& config = {},
                      std::optional<double> s_img = {});

// Head-averaged attention mass from the answer position onto ground-truth
// visual tokens relative to all visual tokens, per layer. Requires a prior
// forward() and a non-empty ground-truth set.
AttentionRatioReport attention_ratio(const AttentionStack& stack, const TokenLayout& layout);

// ---------------------------------------------------------------------------
// Building blocks (also used by tests)
// ---------------------------------------------------------------------------

// Softmax over j <= i per row; entries above the diagonal are exactly 0.
MatrixD causal_softmax(const MatrixD& logits);

// In-place CAAS rewrite of one attention matrix: columns [0, n_visual) are
// scaled by (1+alpha); `beta_column`, when given, is scaled by (1+beta).
// With renormalize on, each row is rescaled to sum to 1 afterwards.
void apply_caas_to_attention(MatrixD& attention, Index n_visual, double alpha,
                             std::optional<Index> beta_column, std::optional<double> beta,
                             bool renormalize);

// ---------------------------------------------------------------------------
// Scenario sweeps
// ---------------------------------------------------------------------------

struct ScenarioSpec {
  Index n_visual = 12;
  Index n_text = 4;
  std::vector<Index> ground_truth = {3, 4, 5};
  Index n_layers = 16;
  Index n_heads = 4;
  Index dim = 16;
  std::uint64_t base_seed = 0;
  PriorBias bias = PriorBias::misleading;

  TokenLayout layout() const;
};

struct SweepRow {
  double alpha = 0.0;
  double flip_rate = 0.0;  // fraction of seeds ending on the correct answer
};

// For each alpha, runs `trials` seeded scenarios with an open gate and
// reports the fraction whose final prediction is correct. alpha = 0
// reproduces the no-intervention baseline exactly.
std::vector<SweepRow> sweep_alpha(const ScenarioSpec& spec, const std::vector<double>& alphas,
                                  int trials);

}  // namespace eagle
