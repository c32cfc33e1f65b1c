#include "latentlab/selfie.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace latentlab {

namespace {

std::string lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string> lower_words(const std::string& text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : lower(text)) {
    if (std::isalnum(static_cast<unsigned char>(ch)))
      current.push_back(ch);
    else if (!current.empty()) {
      words.push_back(current);
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(current);
  return words;
}

std::vector<std::string> load_term_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open lexicon file '" + path.string() + "'");
  std::vector<std::string> terms;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    terms.push_back(lower(line));
  }
  return terms;
}

}  // namespace

std::string to_string(ReadoutCategory c) {
  switch (c) {
    case ReadoutCategory::kRace: return "race";
    case ReadoutCategory::kColor: return "color";
    case ReadoutCategory::kNonsense: return "nonsense";
  }
  throw Error("bad readout category");
}

ReadoutCategory readout_category_from_string(const std::string& s) {
  if (s == "race") return ReadoutCategory::kRace;
  if (s == "color") return ReadoutCategory::kColor;
  if (s == "nonsense") return ReadoutCategory::kNonsense;
  throw Error("unknown readout category '" + s + "'");
}

SelfieSpec SelfieSpec::from_text(const Tokenizer& tokenizer, const std::string& prompt_text,
                                 int inject_layer, int max_new_tokens) {
  SelfieSpec spec;
  spec.prompt_ids.push_back(tokenizer.bos_id());
  const auto body = tokenizer.encode(prompt_text);
  spec.prompt_ids.insert(spec.prompt_ids.end(), body.begin(), body.end());
  int placeholder_count = 0;
  for (std::size_t i = 0; i < spec.prompt_ids.size(); ++i) {
    if (spec.prompt_ids[i] == tokenizer.mask_id()) {
      spec.placeholder_position = static_cast<int>(i);
      ++placeholder_count;
    }
  }
  check(placeholder_count == 1, "interpretation prompt must contain exactly one placeholder");
  spec.inject_layer = inject_layer;
  spec.max_new_tokens = max_new_tokens;
  return spec;
}

void SelfieSpec::validate(const ModelConfig& config) const {
  check(!prompt_ids.empty(), "empty interpretation prompt");
  check(placeholder_position >= 0 &&
            placeholder_position < static_cast<int>(prompt_ids.size()),
        "placeholder position out of range");
  check(inject_layer >= 0 && inject_layer <= config.n_layers, "injection layer out of range");
  check(max_new_tokens >= 0, "max_new_tokens must be >= 0");
}

std::string interpret_embedding(const TransformerModel& model, const Tokenizer& tokenizer,
                                const SelfieSpec& spec, const Vector& embedding) {
  spec.validate(model.config);
  check(embedding.size() == model.config.d_model, "embedding length != d_model");
  HookPlan plan;
  plan.patches.push_back({spec.inject_layer, spec.placeholder_position, embedding});
  const auto generated = decode_greedy(model, spec.prompt_ids, spec.max_new_tokens, plan);
  return tokenizer.decode(generated);
}

void ReadoutLexicons::validate() const {
  check(!race_terms.empty() && !color_terms.empty(), "lexicons must be non-empty");
  std::set<std::string> race_set(race_terms.begin(), race_terms.end());
  for (const auto& term : color_terms)
    check(race_set.count(term) == 0, "lexicons overlap on term '" + term + "'");
}

ReadoutLexicons ReadoutLexicons::load(const std::filesystem::path& race_file,
                                      const std::filesystem::path& color_file) {
  ReadoutLexicons lex;
  lex.race_terms = load_term_file(race_file);
  lex.color_terms = load_term_file(color_file);
  lex.validate();
  return lex;
}

ReadoutCategory classify_readout(const std::string& text, const ReadoutLexicons& lexicons) {
  lexicons.validate();
  const auto words = lower_words(text);
  std::set<std::string> word_set(words.begin(), words.end());
  int race_hits = 0, color_hits = 0;
  for (const auto& term : lexicons.race_terms)
    if (word_set.count(term)) ++race_hits;
  for (const auto& term : lexicons.color_terms)
    if (word_set.count(term)) ++color_hits;
  if (race_hits > 0 && race_hits >= color_hits) return ReadoutCategory::kRace;
  if (color_hits > 0) return ReadoutCategory::kColor;
  return ReadoutCategory::kNonsense;
}

std::map<ReadoutGroupKey, ReadoutCounts> readout_frequency(
    const std::vector<ReadoutRecord>& records) {
  std::map<ReadoutGroupKey, ReadoutCounts> counts;
  for (const auto& r : records) {
    auto& c = counts[{r.model_tag, r.mode}];
    switch (r.category) {
      case ReadoutCategory::kRace: ++c.race; break;
      case ReadoutCategory::kColor: ++c.color; break;
      case ReadoutCategory::kNonsense: ++c.nonsense; break;
    }
  }
  return counts;
}

void save_readouts(const std::vector<ReadoutRecord>& records,
                   const std::filesystem::path& path) {
  std::ofstream out(path);
  check(out.good(), "cannot open '" + path.string() + "' for writing");
  for (const auto& r : records) {
    std::string text = r.text;
    std::replace(text.begin(), text.end(), '\t', ' ');
    std::replace(text.begin(), text.end(), '\n', ' ');
    out << "prompt_id=" << r.prompt_id << "\tlayer=" << r.source_layer
        << "\tposition=" << r.source_position << "\tmodel=" << r.model_tag
        << "\tmode=" << to_string(r.mode) << "\tcategory=" << to_string(r.category)
        << "\ttext=" << text << "\n";
  }
  check(out.good(), "write failed for '" + path.string() + "'");
}

std::vector<ReadoutRecord> load_readouts(const std::filesystem::path& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open readout file '" + path.string() + "'");
  std::vector<ReadoutRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ReadoutRecord r;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) {
      auto eq = field.find('=');
      check(eq != std::string::npos,
            "malformed readout field at line " + std::to_string(line_no));
      const std::string key = field.substr(0, eq);
      const std::string value = field.substr(eq + 1);
      if (key == "prompt_id") r.prompt_id = value;
      else if (key == "layer") r.source_layer = std::stoi(value);
      else if (key == "position") r.source_position = std::stoi(value);
      else if (key == "model") r.model_tag = value;
      else if (key == "mode") r.mode = mode_from_string(value);
      else if (key == "category") r.category = readout_category_from_string(value);
      else if (key == "text") r.text = value;
      else throw Error("unknown readout field '" + key + "'");
    }
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace latentlab
