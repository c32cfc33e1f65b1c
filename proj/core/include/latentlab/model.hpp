#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "latentlab/common.hpp"

namespace latentlab {

struct ModelConfig {
  int n_layers = 0;
  int d_model = 0;
  int n_heads = 0;
  int d_ff = 0;
  int vocab_size = 0;
  int max_seq_len = 0;
  std::uint64_t seed = 0;
  double norm_epsilon = 1e-6;

  void validate() const;
  int head_dim() const { return d_model / n_heads; }
};

// One pre-norm decoder block. The residual stream is updated additively by
// the attention block and then the feed-forward block; RMS normalization
// with learned gains is applied to the block inputs only.
struct TransformerLayer {
  Matrix w_query, w_key, w_value, w_output;  // d_model x d_model, applied as x * W
  Matrix w_ff_in;                            // d_model x d_ff
  Vector b_ff_in;                            // d_ff
  Matrix w_ff_out;                           // d_ff x d_model
  Vector b_ff_out;                           // d_model
  Vector attn_norm_gain;                     // d_model
  Vector mlp_norm_gain;                      // d_model
};

// Immutable after construction; safely shareable across concurrent runs.
struct TransformerModel {
  ModelConfig config;
  Matrix embedding;  // vocab_size x d_model
  std::vector<TransformerLayer> layers;
  Vector final_norm_gain;  // d_model
  Matrix output_proj;      // d_model x vocab_size

  void validate() const;
};

TransformerModel init_random(const ModelConfig& config);
TransformerModel load_model(const std::filesystem::path& path);
void save_model(const TransformerModel& model, const std::filesystem::path& path);

// mt19937_64 is standardized bit-exact; std::normal_distribution is not
// portable across standard libraries, so uniform/normal are mapped by hand.
class DeterministicRng {
 public:
  explicit DeterministicRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double normal();  // standard normal via Box-Muller

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace latentlab
