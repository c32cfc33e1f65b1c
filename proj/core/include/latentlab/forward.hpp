#pragma once

#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "latentlab/model.hpp"

namespace latentlab {

// One residual-stream replacement. Layer index runs 0..L where layer 0 is
// the embedding output h0 and layer l is the residual after block l; the
// replacement overwrites that vector before the next block consumes it.
struct PatchSpec {
  int layer = 0;
  int position = 0;
  Vector replacement;
};

struct HookPlan {
  std::vector<std::pair<int, int>> captures;  // (layer, position)
  std::vector<PatchSpec> patches;

  bool empty() const { return captures.empty() && patches.empty(); }
  void validate(int n_layers, int seq_len) const;
};

struct ForwardTrace {
  Matrix logits;  // seq_len x vocab_size
  std::map<std::pair<int, int>, Vector> captured;

  const Vector& captured_at(int layer, int position) const;
};

// Low-rank additive delta on one projection: x*W becomes
// x*W + scale * (x*A^T)*B^T with A r x d_model and B d_model x r.
struct LowRankDelta {
  const Matrix* a = nullptr;
  const Matrix* b = nullptr;
  double scale = 0.0;
};

// Per-layer adapter deltas resolved against a model; empty optionals mean
// the frozen projection is used as-is.
struct AdapterView {
  std::vector<std::optional<LowRankDelta>> query;
  std::vector<std::optional<LowRankDelta>> value;
};

// Recorded intermediates of one forward pass, for reverse-mode gradients.
struct LayerActivations {
  Matrix h_in;          // residual entering the block
  Matrix x_attn;        // rms-normed attention input
  Vector inv_rms_attn;  // per-position 1/rms
  Matrix q, k, v;       // seq x d_model, heads concatenated
  std::vector<Matrix> attn_weights;  // per head, seq x seq
  Matrix ctx;           // seq x d_model
  Matrix h_mid;         // residual after the attention update
  Matrix x_mlp;
  Vector inv_rms_mlp;
  Matrix z1;  // pre-activation, seq x d_ff
  Matrix a1;  // gelu(z1)
};

struct ForwardActivations {
  std::vector<LayerActivations> layers;
  Matrix h_final;
  Matrix x_final;
  Vector inv_rms_final;
};

ForwardTrace forward(const TransformerModel& model, const std::vector<TokenId>& token_ids,
                     const HookPlan& plan);
ForwardTrace forward(const TransformerModel& model, const std::vector<TokenId>& token_ids,
                     const HookPlan& plan, const AdapterView* adapter,
                     ForwardActivations* record = nullptr);

Vector next_token_distribution(const ForwardTrace& trace, int position);

std::vector<TokenId> decode_greedy(const TransformerModel& model,
                                   const std::vector<TokenId>& prompt_ids, int max_new_tokens,
                                   const HookPlan& plan, const AdapterView* adapter = nullptr);

double gelu(double x);
double gelu_derivative(double x);

}  // namespace latentlab
