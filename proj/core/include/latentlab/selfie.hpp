#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "latentlab/forward.hpp"
#include "latentlab/prompts.hpp"
#include "latentlab/tokenizer.hpp"

namespace latentlab {

enum class ReadoutCategory { kRace, kColor, kNonsense };

std::string to_string(ReadoutCategory c);
ReadoutCategory readout_category_from_string(const std::string& s);

struct SelfieSpec {
  std::vector<TokenId> prompt_ids;  // with exactly one placeholder token
  int placeholder_position = 0;
  int inject_layer = 2;
  int max_new_tokens = 24;

  static SelfieSpec from_text(const Tokenizer& tokenizer, const std::string& prompt_text,
                              int inject_layer = 2, int max_new_tokens = 24);
  void validate(const ModelConfig& config) const;
};

struct ReadoutRecord {
  std::string prompt_id;  // source prompt the embedding was cached from
  int source_layer = 0;
  int source_position = 0;
  std::string model_tag;
  Mode mode = Mode::kImplicit;
  std::string text;
  ReadoutCategory category = ReadoutCategory::kNonsense;
};

// Word lists for the lexicon classifier; rejected if they overlap.
struct ReadoutLexicons {
  std::vector<std::string> race_terms;
  std::vector<std::string> color_terms;

  static ReadoutLexicons load(const std::filesystem::path& race_file,
                              const std::filesystem::path& color_file);
  void validate() const;
};

// Greedy decode of the interpretation prompt with the placeholder residual
// at the injection layer replaced by `embedding` on every decode step.
std::string interpret_embedding(const TransformerModel& model, const Tokenizer& tokenizer,
                                const SelfieSpec& spec, const Vector& embedding);

ReadoutCategory classify_readout(const std::string& text, const ReadoutLexicons& lexicons);

struct ReadoutGroupKey {
  std::string model_tag;
  Mode mode = Mode::kImplicit;

  bool operator<(const ReadoutGroupKey& other) const {
    if (model_tag != other.model_tag) return model_tag < other.model_tag;
    return static_cast<int>(mode) < static_cast<int>(other.mode);
  }
};

struct ReadoutCounts {
  int race = 0;
  int color = 0;
  int nonsense = 0;

  int total() const { return race + color + nonsense; }
};

std::map<ReadoutGroupKey, ReadoutCounts> readout_frequency(
    const std::vector<ReadoutRecord>& records);

void save_readouts(const std::vector<ReadoutRecord>& records, const std::filesystem::path& path);
std::vector<ReadoutRecord> load_readouts(const std::filesystem::path& path);

}  // namespace latentlab
