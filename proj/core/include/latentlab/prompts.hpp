#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "latentlab/common.hpp"

namespace latentlab {

enum class Condition { kDefault, kDirectColor, kNames };
enum class Category { kItemWeapon, kAdjective, kGuilt };
enum class Mode { kImplicit, kExplicit };
enum class Variation { kRandom0, kRandom1, kVariation0, kVariation1 };

std::string to_string(Condition c);
std::string to_string(Category c);
std::string to_string(Mode m);
std::string to_string(Variation v);
Condition condition_from_string(const std::string& s);
Category category_from_string(const std::string& s);
Mode mode_from_string(const std::string& s);
Variation variation_from_string(const std::string& s);

struct StimulusSet {
  std::vector<std::string> positive;  // exactly 15
  std::vector<std::string> negative;  // exactly 15
};

struct Vocabularies {
  std::array<std::string, 2> default_probes;  // {"white", "black"}
  std::string color_prefix;
  std::vector<std::string> caucasian_names;         // exactly 10
  std::vector<std::string> african_american_names;  // exactly 10
  StimulusSet items;
  StimulusSet adjectives;
  StimulusSet guilt;

  const StimulusSet& stimuli(Category c) const;
  void validate() const;

  // The probe and stimulus word lists used throughout.
  static Vocabularies standard();
  static Vocabularies load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

struct PromptRecord {
  std::string id;
  Condition condition = Condition::kDefault;
  Category category = Category::kItemWeapon;
  Mode mode = Mode::kImplicit;
  Variation variation = Variation::kRandom0;
  std::string probe_a;  // non-target probe ("white" or a Caucasian name)
  std::string probe_b;  // stereotype-target probe ("black" or an African-American name)
  std::string stimulus_pos;
  std::string stimulus_neg;
  std::string text;
  // True when the embedded explicit statement links probe_b to the
  // negative stimulus. Implicit records keep the structural default.
  bool explicit_polarity = false;

  const std::string& target_probe() const { return probe_b; }
};

std::vector<PromptRecord> generate_suite(const Vocabularies& vocab,
                                         const std::vector<Condition>& conditions,
                                         const std::vector<Category>& categories,
                                         const std::vector<Variation>& variations);

// Returns the record identical in all fields except mode. The suite must be
// sorted by id (as generate_suite and load_suite produce).
const PromptRecord& twin_of(const PromptRecord& record, const std::vector<PromptRecord>& suite);

void save_suite(const std::vector<PromptRecord>& suite, const std::filesystem::path& path);
std::vector<PromptRecord> load_suite(const std::filesystem::path& path);

}  // namespace latentlab
