#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "latentlab/forward.hpp"
#include "latentlab/tokenizer.hpp"

namespace latentlab {

// The interpretive run: a masked prompt with two candidate answer tokens
// and a fixed injection layer for the cached activation.
struct InterpretiveSetup {
  std::vector<TokenId> prompt_ids;
  int mask_position = 0;
  TokenId race_id = 0;
  TokenId color_id = 0;
  int inject_layer = 2;

  static InterpretiveSetup from_text(const Tokenizer& tokenizer, const std::string& prompt_text,
                                     const std::string& race_word, const std::string& color_word,
                                     int inject_layer = 2);
  void validate(const ModelConfig& config) const;
};

struct CandidateProbs {
  double p_race = 0.0;
  double p_color = 0.0;
};

struct LayerDelta {
  int source_layer = 0;
  double dp_race = 0.0;
  double dp_color = 0.0;
};

struct RaceBlindReport {
  std::string condition;
  std::vector<LayerDelta> deltas;
  double mean_dp_race = 0.0;
  double mean_dp_color = 0.0;
  double r_blind = 0.0;  // mean_dp_color - mean_dp_race
};

CandidateProbs baseline_probs(const TransformerModel& model, const InterpretiveSetup& setup);

// Clean-run residual activations at (layer, probe_position) for every
// layer 0..L; layer 0 is the embedding output.
std::vector<Vector> cache_probe_activation(const TransformerModel& model,
                                           const std::vector<TokenId>& prompt_ids,
                                           int probe_position);

CandidateProbs patched_probs(const TransformerModel& model, const InterpretiveSetup& setup,
                             const Vector& cached);

RaceBlindReport race_blind_score(const std::vector<LayerDelta>& deltas);

TokenId select_str_token(const TransformerModel& model, const InterpretiveSetup& setup,
                         const std::vector<TokenId>& candidate_fillers);

struct SweepPrompt {
  std::string id;
  std::vector<TokenId> token_ids;
  std::vector<int> probe_positions;
};

// For each source layer: delta averaged over all (prompt, probe) pairs
// (prompt mean first, then the layer mean enters the report).
RaceBlindReport layer_sweep(const TransformerModel& model, const InterpretiveSetup& setup,
                            const std::vector<SweepPrompt>& prompts,
                            const std::string& condition = "");

void write_patching_report(const std::vector<RaceBlindReport>& reports,
                           const std::filesystem::path& path);

}  // namespace latentlab
