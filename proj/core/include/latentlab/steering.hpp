#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "latentlab/bias_eval.hpp"
#include "latentlab/forward.hpp"
#include "latentlab/tokenizer.hpp"

namespace latentlab {

// Per-probe, per-layer activations captured from an unambiguous concept
// prompt; layers run 0..L with layer 0 the embedding output.
struct ConceptCache {
  std::string concept_prompt;
  std::map<std::string, std::vector<Vector>> activations;

  const std::vector<Vector>& for_probe(const std::string& probe) const;
  void save(const std::filesystem::path& path) const;
  static ConceptCache load(const std::filesystem::path& path);
};

struct SteeringSpec {
  int start_layer = 0;  // 0-based; reports use 1-based labels
  int window = 0;       // number of consecutive layers; 0 is a no-op
  std::map<std::string, std::vector<int>> probe_positions;

  void validate(const ModelConfig& config) const;
};

ConceptCache build_concept_cache(const TransformerModel& model, const Tokenizer& tokenizer,
                                 const std::string& concept_prompt,
                                 const std::vector<std::string>& probe_words);

// All occurrences of each probe token in the encoded prompt (with BOS).
std::map<std::string, std::vector<int>> find_probe_positions(
    const Tokenizer& tokenizer, const std::vector<TokenId>& prompt_ids,
    const std::vector<std::string>& probe_words);

std::string steer_generate(const TransformerModel& model, const Tokenizer& tokenizer,
                           const PromptRecord& record, const ConceptCache& cache,
                           const SteeringSpec& spec, int max_new_tokens);

struct SteeringCell {
  int window = 0;
  int start_layer = 0;  // 1-based in reports
  std::string category;
  double p_hat = 0.0;
  int n = 0;
};

struct SteeringGrid {
  std::vector<SteeringCell> cells;
  std::vector<Outcome> outcomes;
};

SteeringGrid steering_sweep(const TransformerModel& model, const Tokenizer& tokenizer,
                            const std::vector<PromptRecord>& implicit_suite,
                            const ConceptCache& cache, const std::vector<int>& window_sizes,
                            const std::vector<int>& start_layers, int max_new_tokens,
                            const ParseOptions& options = ParseOptions::defaults());

void write_steering_grid(const SteeringGrid& grid, const std::filesystem::path& path);

}  // namespace latentlab
