#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "latentlab/forward.hpp"
#include "latentlab/tokenizer.hpp"

namespace latentlab {

enum class Projection { kQuery, kValue };

std::string to_string(Projection p);
Projection projection_from_string(const std::string& s);

// Low-rank factors on frozen attention projections. The effective update
// per target is (alpha/rank) * B*A added to the projection; B starts at
// zero so a fresh adapter is an exact identity.
struct LoraAdapter {
  int rank = 0;
  double alpha = 0.0;
  std::set<int> target_layers;  // 0-based layer indices
  std::set<Projection> target_projections;

  struct Factors {
    Matrix a;  // rank x d_model
    Matrix b;  // d_model x rank
  };
  std::map<std::pair<int, Projection>, Factors> factors;

  double scaling() const { return alpha / rank; }
  std::size_t parameter_count() const;
  void validate(const ModelConfig& config) const;
};

// Model + adapter pair used for adapted forward passes and training.
struct AdaptedModel {
  const TransformerModel* base = nullptr;
  LoraAdapter adapter;

  AdapterView view() const;
};

AdaptedModel attach(const TransformerModel& model, const std::set<int>& layers, int rank,
                    double alpha);

struct TrainExample {
  std::string input_text;
  std::string target_text;
};

struct TrainConfig {
  double learning_rate = 2e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double weight_decay = 0.01;
  int epochs = 7;
  int batch_size = 4;
  int grad_accumulation = 4;
  double max_grad_norm = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TokenizedExample {
  std::vector<TokenId> ids;   // bos + input + target
  int target_start = 0;       // first target position in ids
};

TokenizedExample tokenize_example(const Tokenizer& tokenizer, const TrainExample& example,
                                  int max_seq_len);

// Mean token-level cross-entropy over target positions only.
double loss(const AdaptedModel& model, const TokenizedExample& example);

// Gradients of the mean batch loss with respect to adapter factors only.
struct AdapterGradients {
  std::map<std::pair<int, Projection>, LoraAdapter::Factors> factors;

  double global_norm() const;
  void scale(double s);
  void accumulate(const AdapterGradients& other, double weight);
};

AdapterGradients grad(const AdaptedModel& model, const std::vector<TokenizedExample>& batch);

struct TrainResult {
  LoraAdapter adapter;
  std::vector<double> loss_trace;  // mean micro-batch loss per optimizer step
};

TrainResult train(const AdaptedModel& model, const Tokenizer& tokenizer,
                  const std::vector<TrainExample>& dataset, const TrainConfig& config);

void save_adapter(const LoraAdapter& adapter, const std::filesystem::path& path);
LoraAdapter load_adapter(const std::filesystem::path& path, const ModelConfig& config);

// Cosine decay from the configured rate to ~0 at the final step.
double cosine_lr(double base_lr, int step, int total_steps);

// Template-based generator for ambiguous-input -> concept-explicit-output
// training pairs over a probe pair.
std::vector<TrainExample> generate_concept_pairs(const std::string& probe_a,
                                                 const std::string& probe_b, int count);

}  // namespace latentlab
