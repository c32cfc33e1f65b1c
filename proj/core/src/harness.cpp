#include "latentlab/harness.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "latentlab/patching.hpp"
#include "latentlab/selfie.hpp"
#include "latentlab/steering.hpp"

namespace latentlab {

namespace {

constexpr const char* kVersion = "0.1.0";

std::string trim(const std::string& s) {
  std::size_t start = 0, end = s.size();
  while (start < end && std::isspace(static_cast<unsigned char>(s[start]))) ++start;
  while (end > start && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
  return s.substr(start, end - start);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> parts;
  std::string current;
  std::stringstream ss(value);
  while (std::getline(ss, current, ',')) {
    const std::string part = trim(current);
    if (!part.empty()) parts.push_back(part);
  }
  return parts;
}

std::vector<int> int_list(const std::string& value, const std::string& what) {
  std::vector<int> out;
  for (const auto& part : split_list(value)) {
    try {
      out.push_back(std::stoi(part));
    } catch (const std::exception&) {
      throw ValidationError("bad integer '" + part + "' in " + what);
    }
  }
  return out;
}

std::uint64_t parse_u64(const std::string& value, const std::string& what) {
  try {
    return std::stoull(value);
  } catch (const std::exception&) {
    throw ValidationError("bad integer '" + value + "' for " + what);
  }
}

double parse_double(const std::string& value, const std::string& what) {
  try {
    return std::stod(value);
  } catch (const std::exception&) {
    throw ValidationError("bad number '" + value + "' for " + what);
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void require_file(const std::filesystem::path& path, const std::string& what) {
  if (!std::filesystem::exists(path))
    throw ValidationError(what + " path '" + path.string() + "' does not exist");
}

std::vector<TokenId> prompt_ids_for(const Tokenizer& tokenizer, const std::string& text) {
  std::vector<TokenId> ids;
  ids.push_back(tokenizer.bos_id());
  const auto body = tokenizer.encode(text);
  ids.insert(ids.end(), body.begin(), body.end());
  return ids;
}

std::string respond(const TransformerModel& model, const Tokenizer& tokenizer,
                    const std::string& prompt_text, int max_new_tokens,
                    const AdapterView* adapter = nullptr) {
  const auto ids = prompt_ids_for(tokenizer, prompt_text);
  const auto generated = decode_greedy(model, ids, max_new_tokens, HookPlan{}, adapter);
  return tokenizer.decode(generated);
}

}  // namespace

std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::kBehavioral: return "behavioral";
    case ExperimentKind::kPatching: return "patching";
    case ExperimentKind::kSelfie: return "selfie";
    case ExperimentKind::kSteering: return "steering";
    case ExperimentKind::kLoraTrain: return "lora_train";
    case ExperimentKind::kLoraEval: return "lora_eval";
  }
  throw Error("bad experiment kind");
}

ExperimentKind experiment_kind_from_string(const std::string& s) {
  if (s == "behavioral") return ExperimentKind::kBehavioral;
  if (s == "patching") return ExperimentKind::kPatching;
  if (s == "selfie") return ExperimentKind::kSelfie;
  if (s == "steering") return ExperimentKind::kSteering;
  if (s == "lora_train") return ExperimentKind::kLoraTrain;
  if (s == "lora_eval") return ExperimentKind::kLoraEval;
  throw ValidationError("unknown experiment kind '" + s + "'");
}

ConfigText ConfigText::parse(const std::string& text) {
  ConfigText config;
  config.raw_ = text;
  std::stringstream ss(text);
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    if (stripped.front() == '[') {
      if (stripped.back() != ']')
        throw ValidationError("config line " + std::to_string(line_no) + ": malformed section");
      section = trim(stripped.substr(1, stripped.size() - 2));
      if (section.empty())
        throw ValidationError("config line " + std::to_string(line_no) + ": empty section name");
      config.sections_[section];
      continue;
    }
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(stripped.substr(0, eq));
    if (key.empty())
      throw ValidationError("config line " + std::to_string(line_no) + ": empty key");
    if (section.empty())
      throw ValidationError("config line " + std::to_string(line_no) + ": key outside a section");
    auto& entries = config.sections_[section];
    if (entries.count(key))
      throw ValidationError("config line " + std::to_string(line_no) + ": duplicate key '" +
                            key + "' in [" + section + "]");
    entries[key] = Entry{trim(stripped.substr(eq + 1)), false};
  }
  return config;
}

ConfigText ConfigText::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw ValidationError("config file '" + path.string() + "' does not exist");
  return parse(read_file(path));
}

bool ConfigText::has(const std::string& section, const std::string& key) const {
  auto sit = sections_.find(section);
  return sit != sections_.end() && sit->second.count(key) > 0;
}

std::string ConfigText::require(const std::string& section, const std::string& key) const {
  auto sit = sections_.find(section);
  if (sit == sections_.end() || !sit->second.count(key))
    throw ValidationError("config is missing [" + section + "] " + key);
  const auto& entry = sit->second.at(key);
  entry.consumed = true;
  return entry.value;
}

std::string ConfigText::get(const std::string& section, const std::string& key,
                            const std::string& fallback) const {
  if (!has(section, key)) return fallback;
  return require(section, key);
}

void ConfigText::check_fully_consumed() const {
  std::vector<std::string> unknown;
  for (const auto& [section, entries] : sections_)
    for (const auto& [key, entry] : entries)
      if (!entry.consumed) unknown.push_back("[" + section + "] " + key);
  if (!unknown.empty()) {
    std::string joined;
    for (const auto& k : unknown) joined += (joined.empty() ? "" : ", ") + k;
    throw ValidationError("unknown config keys: " + joined);
  }
}

ExperimentConfig ExperimentConfig::from_config(const ConfigText& config) {
  ExperimentConfig out;
  out.kind = experiment_kind_from_string(config.require("experiment", "kind"));
  out.output_dir = config.require("experiment", "output_dir");
  out.seed = parse_u64(config.get("experiment", "seed", "0"), "[experiment] seed");
  out.jobs = static_cast<int>(parse_u64(config.get("experiment", "jobs", "1"),
                                        "[experiment] jobs"));
  out.model_path = config.require("model", "path");
  out.tokenizer_path = config.require("model", "tokenizer");

  const bool needs_suite = out.kind != ExperimentKind::kLoraTrain;
  if (needs_suite) {
    if (config.has("suite", "path")) {
      out.suite.path = config.require("suite", "path");
    } else {
      if (config.has("suite", "vocabulary")) out.suite.vocab_path = config.require("suite", "vocabulary");
      for (const auto& name : split_list(config.get("suite", "conditions", "default")))
        out.suite.conditions.push_back(condition_from_string(name));
      for (const auto& name : split_list(config.get("suite", "categories", "item_weapon")))
        out.suite.categories.push_back(category_from_string(name));
      for (const auto& name :
           split_list(config.get("suite", "variations", "random_0,random_1,variation_0,variation_1")))
        out.suite.variations.push_back(variation_from_string(name));
    }
  }

  switch (out.kind) {
    case ExperimentKind::kBehavioral:
      out.max_new_tokens = static_cast<int>(
          parse_u64(config.get("behavioral", "max_new_tokens", "24"), "max_new_tokens"));
      break;
    case ExperimentKind::kPatching:
      out.interpretive_prompt = config.require("patching", "interpretive_prompt");
      out.race_word = config.get("patching", "race_word", "race");
      out.color_word = config.get("patching", "color_word", "color");
      out.inject_layer = static_cast<int>(
          parse_u64(config.get("patching", "inject_layer", "2"), "inject_layer"));
      break;
    case ExperimentKind::kSelfie:
      out.interpretation_prompt = config.require("selfie", "interpretation_prompt");
      out.race_lexicon_path = config.require("selfie", "race_lexicon");
      out.color_lexicon_path = config.require("selfie", "color_lexicon");
      out.source_layers = int_list(config.require("selfie", "source_layers"),
                                   "[selfie] source_layers");
      out.inject_layer = static_cast<int>(
          parse_u64(config.get("selfie", "inject_layer", "2"), "inject_layer"));
      out.max_new_tokens = static_cast<int>(
          parse_u64(config.get("selfie", "max_new_tokens", "24"), "max_new_tokens"));
      out.model_tag = config.get("selfie", "model_tag", "base");
      break;
    case ExperimentKind::kSteering:
      out.concept_prompt = config.require("steering", "concept_prompt");
      out.probe_words = split_list(config.require("steering", "probes"));
      out.window_sizes = int_list(config.require("steering", "window_sizes"),
                                  "[steering] window_sizes");
      out.start_layers = int_list(config.require("steering", "start_layers"),
                                  "[steering] start_layers");
      out.max_new_tokens = static_cast<int>(
          parse_u64(config.get("steering", "max_new_tokens", "24"), "max_new_tokens"));
      break;
    case ExperimentKind::kLoraTrain: {
      out.rank = static_cast<int>(parse_u64(config.get("lora", "rank", "16"), "rank"));
      out.alpha = parse_double(config.get("lora", "alpha", std::to_string(out.rank)), "alpha");
      out.adapter_layers = int_list(config.require("lora", "layers"), "[lora] layers");
      out.pair_count = static_cast<int>(
          parse_u64(config.get("lora", "pair_count", "8"), "pair_count"));
      out.pair_probe_a = config.get("lora", "probe_a", "black");
      out.pair_probe_b = config.get("lora", "probe_b", "white");
      out.train.learning_rate = parse_double(config.get("lora", "learning_rate", "0.0002"),
                                             "learning_rate");
      out.train.epochs = static_cast<int>(parse_u64(config.get("lora", "epochs", "7"), "epochs"));
      out.train.batch_size = static_cast<int>(
          parse_u64(config.get("lora", "batch_size", "4"), "batch_size"));
      out.train.grad_accumulation = static_cast<int>(
          parse_u64(config.get("lora", "grad_accumulation", "4"), "grad_accumulation"));
      out.train.weight_decay = parse_double(config.get("lora", "weight_decay", "0.01"),
                                            "weight_decay");
      out.train.max_grad_norm = parse_double(config.get("lora", "max_grad_norm", "1.0"),
                                             "max_grad_norm");
      out.train.seed = out.seed;
      break;
    }
    case ExperimentKind::kLoraEval:
      out.adapter_path = config.require("lora", "adapter");
      out.max_new_tokens = static_cast<int>(
          parse_u64(config.get("lora", "max_new_tokens", "24"), "max_new_tokens"));
      break;
  }
  config.check_fully_consumed();
  return out;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path, std::string* raw_text) {
  const ConfigText config = ConfigText::load(path);
  if (raw_text) *raw_text = config.raw_text();
  ExperimentConfig out = from_config(config);
  out.validate();
  return out;
}

void ExperimentConfig::validate() const {
  require_file(model_path, "model");
  require_file(tokenizer_path, "tokenizer");
  if (jobs < 1) throw ValidationError("jobs must be >= 1");
  if (output_dir.empty()) throw ValidationError("output_dir must be set");
  if (!suite.path.empty()) require_file(suite.path, "suite");
  if (!suite.vocab_path.empty()) require_file(suite.vocab_path, "vocabulary");
  switch (kind) {
    case ExperimentKind::kBehavioral:
      if (max_new_tokens < 1) throw ValidationError("max_new_tokens must be >= 1");
      break;
    case ExperimentKind::kPatching:
      if (interpretive_prompt.empty()) throw ValidationError("interpretive_prompt must be set");
      break;
    case ExperimentKind::kSelfie:
      require_file(race_lexicon_path, "race lexicon");
      require_file(color_lexicon_path, "color lexicon");
      if (source_layers.empty()) throw ValidationError("source_layers must be non-empty");
      break;
    case ExperimentKind::kSteering:
      if (probe_words.empty()) throw ValidationError("steering probes must be non-empty");
      if (window_sizes.empty() || start_layers.empty())
        throw ValidationError("window_sizes and start_layers must be non-empty");
      break;
    case ExperimentKind::kLoraTrain:
      if (adapter_layers.empty()) throw ValidationError("adapter layers must be non-empty");
      if (rank < 1) throw ValidationError("rank must be >= 1");
      if (pair_count < 1) throw ValidationError("pair_count must be >= 1");
      try {
        train.validate();
      } catch (const Error& e) {
        throw ValidationError(e.what());
      }
      break;
    case ExperimentKind::kLoraEval:
      require_file(adapter_path, "adapter");
      break;
  }
}

std::uint64_t fnv1a_checksum(const std::string& bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::uint64_t file_checksum(const std::filesystem::path& path) {
  return fnv1a_checksum(read_file(path));
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct RunContext {
  const ExperimentConfig& config;
  std::vector<std::filesystem::path> artifacts;  // relative names

  std::filesystem::path out(const std::string& name) {
    artifacts.emplace_back(name);
    return config.output_dir / name;
  }
};

std::vector<PromptRecord> resolve_suite(const ExperimentConfig& config, RunContext& ctx) {
  if (!config.suite.path.empty()) return load_suite(config.suite.path);
  const Vocabularies vocab = config.suite.vocab_path.empty()
                                 ? Vocabularies::standard()
                                 : Vocabularies::load(config.suite.vocab_path);
  auto suite = generate_suite(vocab, config.suite.conditions, config.suite.categories,
                              config.suite.variations);
  save_suite(suite, ctx.out("suite.tsv"));
  return suite;
}

std::string group_key(const PromptRecord& r) {
  return to_string(r.condition) + "|" + to_string(r.category) + "|" + to_string(r.mode);
}

// Outcomes grouped as condition|category|mode; implicit groups get a
// two-proportion comparison against the matching explicit group.
void write_grouped_report(const std::vector<PromptRecord>& suite,
                          const std::vector<Outcome>& outcomes,
                          const std::filesystem::path& path) {
  check(suite.size() == outcomes.size(), "suite/outcome size mismatch");
  std::map<std::string, std::vector<Outcome>> groups;
  for (std::size_t i = 0; i < suite.size(); ++i)
    groups[group_key(suite[i])].push_back(outcomes[i]);

  std::map<std::string, BiasReport> reports;
  for (const auto& [key, group_outcomes] : groups)
    reports.emplace(key, bias_level(group_outcomes, key));

  std::vector<ReportRow> rows;
  for (const auto& [key, report] : reports) {
    ReportRow row;
    row.group = key;
    row.n = report.n_ok;
    row.p_hat = report.p_hat;
    const std::string implicit_suffix = "|" + to_string(Mode::kImplicit);
    if (key.size() > implicit_suffix.size() &&
        key.compare(key.size() - implicit_suffix.size(), implicit_suffix.size(),
                    implicit_suffix) == 0) {
      const std::string twin_key =
          key.substr(0, key.size() - implicit_suffix.size()) + "|" + to_string(Mode::kExplicit);
      auto it = reports.find(twin_key);
      if (it != reports.end() && report.n_ok > 0 && it->second.n_ok > 0)
        row.vs_baseline = compare_proportions(as_proportion_group(report),
                                              as_proportion_group(it->second));
    }
    rows.push_back(std::move(row));
  }
  write_report_table(rows, path);
}

std::vector<Outcome> evaluate_suite(const TransformerModel& model, const Tokenizer& tokenizer,
                                    const std::vector<PromptRecord>& suite, int max_new_tokens,
                                    const AdapterView* adapter) {
  std::vector<Outcome> outcomes;
  outcomes.reserve(suite.size());
  for (const auto& record : suite) {
    const std::string response = respond(model, tokenizer, record.text, max_new_tokens, adapter);
    Outcome outcome = parse_response(response, record);
    outcome.prompt_id = record.id;
    outcomes.push_back(std::move(outcome));
  }
  return outcomes;
}

void run_behavioral(const TransformerModel& model, const Tokenizer& tokenizer,
                    const ExperimentConfig& config, RunContext& ctx,
                    const AdapterView* adapter = nullptr) {
  const auto suite = resolve_suite(config, ctx);
  const auto outcomes = evaluate_suite(model, tokenizer, suite, config.max_new_tokens, adapter);
  save_outcomes(outcomes, ctx.out("outcomes.tsv"));
  write_grouped_report(suite, outcomes, ctx.out("report.tsv"));
}

void run_patching(const TransformerModel& model, const Tokenizer& tokenizer,
                  const ExperimentConfig& config, RunContext& ctx) {
  const auto suite = resolve_suite(config, ctx);
  const InterpretiveSetup setup = InterpretiveSetup::from_text(
      tokenizer, config.interpretive_prompt, config.race_word, config.color_word,
      config.inject_layer);
  setup.validate(model.config);

  std::map<std::string, std::vector<SweepPrompt>> by_condition;
  for (const auto& record : suite) {
    if (record.mode != Mode::kImplicit) continue;
    SweepPrompt prompt;
    prompt.id = record.id;
    prompt.token_ids = prompt_ids_for(tokenizer, record.text);
    const TokenId probe_id = tokenizer.id_of(record.target_probe());
    for (std::size_t i = 0; i < prompt.token_ids.size(); ++i)
      if (prompt.token_ids[i] == probe_id) prompt.probe_positions.push_back(static_cast<int>(i));
    check(!prompt.probe_positions.empty(),
          "target probe not found in prompt '" + record.id + "'");
    by_condition[to_string(record.condition)].push_back(std::move(prompt));
  }
  check(!by_condition.empty(), "patching requires implicit records in the suite");

  std::vector<RaceBlindReport> reports;
  for (const auto& [condition, prompts] : by_condition)
    reports.push_back(layer_sweep(model, setup, prompts, condition));
  write_patching_report(reports, ctx.out("patching.tsv"));
}

void run_selfie(const TransformerModel& model, const Tokenizer& tokenizer,
                const ExperimentConfig& config, RunContext& ctx) {
  const auto suite = resolve_suite(config, ctx);
  const auto lexicons =
      ReadoutLexicons::load(config.race_lexicon_path, config.color_lexicon_path);
  const SelfieSpec spec = SelfieSpec::from_text(tokenizer, config.interpretation_prompt,
                                                config.inject_layer, config.max_new_tokens);
  spec.validate(model.config);
  for (int layer : config.source_layers)
    check(layer >= 0 && layer <= model.config.n_layers,
          "source layer " + std::to_string(layer) + " out of range");

  std::vector<ReadoutRecord> records;
  for (const auto& record : suite) {
    const auto ids = prompt_ids_for(tokenizer, record.text);
    const TokenId probe_id = tokenizer.id_of(record.target_probe());
    int position = -1;
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == probe_id) {
        position = static_cast<int>(i);
        break;
      }
    check(position >= 0, "target probe not found in prompt '" + record.id + "'");
    const auto layers = cache_probe_activation(model, ids, position);
    for (int layer : config.source_layers) {
      ReadoutRecord readout;
      readout.prompt_id = record.id;
      readout.source_layer = layer;
      readout.source_position = position;
      readout.model_tag = config.model_tag;
      readout.mode = record.mode;
      readout.text =
          interpret_embedding(model, tokenizer, spec, layers[static_cast<std::size_t>(layer)]);
      readout.category = classify_readout(readout.text, lexicons);
      records.push_back(std::move(readout));
    }
  }
  save_readouts(records, ctx.out("readouts.tsv"));

  const auto freq = readout_frequency(records);
  std::ofstream out(ctx.out("readout_frequency.tsv"));
  out << "model\tmode\trace\tcolor\tnonsense\n";
  for (const auto& [key, counts] : freq)
    out << key.model_tag << "\t" << to_string(key.mode) << "\t" << counts.race << "\t"
        << counts.color << "\t" << counts.nonsense << "\n";
  check(out.good(), "write failed for readout_frequency.tsv");
}

void run_steering(const TransformerModel& model, const Tokenizer& tokenizer,
                  const ExperimentConfig& config, RunContext& ctx) {
  auto suite = resolve_suite(config, ctx);
  std::vector<PromptRecord> implicit_suite;
  for (auto& record : suite)
    if (record.mode == Mode::kImplicit) implicit_suite.push_back(std::move(record));
  check(!implicit_suite.empty(), "steering requires implicit records in the suite");

  const ConceptCache cache =
      build_concept_cache(model, tokenizer, config.concept_prompt, config.probe_words);
  cache.save(ctx.out("concept_cache.tf"));

  std::vector<int> starts_zero_based;
  for (int s : config.start_layers) {
    check(s >= 1, "start layers are 1-based and must be >= 1");
    starts_zero_based.push_back(s - 1);
  }
  const SteeringGrid grid =
      steering_sweep(model, tokenizer, implicit_suite, cache, config.window_sizes,
                     starts_zero_based, config.max_new_tokens);
  save_outcomes(grid.outcomes, ctx.out("outcomes.tsv"));
  write_steering_grid(grid, ctx.out("steering_grid.tsv"));
}

void run_lora_train(const TransformerModel& model, const Tokenizer& tokenizer,
                    const ExperimentConfig& config, RunContext& ctx) {
  const auto dataset =
      generate_concept_pairs(config.pair_probe_a, config.pair_probe_b, config.pair_count);
  std::set<int> layers(config.adapter_layers.begin(), config.adapter_layers.end());
  const AdaptedModel adapted = attach(model, layers, config.rank, config.alpha);
  const TrainResult result = train(adapted, tokenizer, dataset, config.train);
  save_adapter(result.adapter, ctx.out("adapter.tf"));

  std::ofstream out(ctx.out("loss_trace.tsv"));
  out << "step\tloss\n";
  for (std::size_t i = 0; i < result.loss_trace.size(); ++i)
    out << i << "\t" << result.loss_trace[i] << "\n";
  check(out.good(), "write failed for loss_trace.tsv");
}

void run_lora_eval(const TransformerModel& model, const Tokenizer& tokenizer,
                   const ExperimentConfig& config, RunContext& ctx) {
  const LoraAdapter adapter = load_adapter(config.adapter_path, model.config);
  AdaptedModel adapted;
  adapted.base = &model;
  adapted.adapter = adapter;
  const AdapterView view = adapted.view();
  run_behavioral(model, tokenizer, config, ctx, &view);
}

void write_manifest(const ExperimentConfig& config, const std::string& config_text,
                    const std::vector<std::filesystem::path>& artifacts,
                    const std::filesystem::path& path) {
  std::vector<std::filesystem::path> sorted = artifacts;
  std::sort(sorted.begin(), sorted.end());
  std::ofstream out(path);
  check(out.good(), "cannot open manifest '" + path.string() + "' for writing");
  out << "config_hash=" << hex64(fnv1a_checksum(config_text)) << "\n";
  out << "seed=" << config.seed << "\n";
  out << "version=" << kVersion << "\n";
  out << "kind=" << to_string(config.kind) << "\n";
  out << "file\tchecksum\n";
  for (const auto& name : sorted)
    out << name.string() << "\t" << hex64(file_checksum(config.output_dir / name)) << "\n";
  check(out.good(), "write failed for manifest");
}

}  // namespace

RunResult run(const ExperimentConfig& config, const std::string& config_text) {
  config.validate();

  // Validation passed; everything below is a runtime failure on error.
  std::filesystem::create_directories(config.output_dir);
  RunContext ctx{config, {}};
  try {
    const TransformerModel model = load_model(config.model_path);
    const Tokenizer tokenizer = Tokenizer::load(config.tokenizer_path);
    check(tokenizer.vocab_size() == model.config.vocab_size,
          "tokenizer vocabulary size does not match the model");
    switch (config.kind) {
      case ExperimentKind::kBehavioral: run_behavioral(model, tokenizer, config, ctx); break;
      case ExperimentKind::kPatching: run_patching(model, tokenizer, config, ctx); break;
      case ExperimentKind::kSelfie: run_selfie(model, tokenizer, config, ctx); break;
      case ExperimentKind::kSteering: run_steering(model, tokenizer, config, ctx); break;
      case ExperimentKind::kLoraTrain: run_lora_train(model, tokenizer, config, ctx); break;
      case ExperimentKind::kLoraEval: run_lora_eval(model, tokenizer, config, ctx); break;
    }
  } catch (const std::exception& e) {
    std::ofstream err(config.output_dir / "error_manifest.txt");
    err << "config_hash=" << hex64(fnv1a_checksum(config_text)) << "\n";
    err << "error=" << e.what() << "\n";
    throw;
  }

  RunResult result;
  result.artifacts = ctx.artifacts;
  result.manifest = config.output_dir / "manifest.tsv";
  write_manifest(config, config_text, ctx.artifacts, result.manifest);
  return result;
}

ExternalIngest ingest_external(const std::filesystem::path& path, const std::string& format) {
  check(format == "bbq_style", "unknown external format '" + format + "'");
  std::ifstream in(path);
  check(in.good(), "cannot open external dataset '" + path.string() + "'");
  ExternalIngest out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error("external dataset line " + std::to_string(line_no) + ": " + e.what());
    }
    auto fail = [&](const std::string& message) {
      out.record_errors.push_back("line " + std::to_string(line_no) + ": " + message);
    };
    if (!record.is_object()) {
      fail("record is not an object");
      continue;
    }
    ExternalDatasetRecord parsed;
    if (!record.contains("context") || !record["context"].is_string()) {
      fail("missing string field 'context'");
      continue;
    }
    if (!record.contains("question") || !record["question"].is_string()) {
      fail("missing string field 'question'");
      continue;
    }
    parsed.context = record["context"].get<std::string>();
    parsed.question = record["question"].get<std::string>();
    if (record.contains("options") && record["options"].is_array()) {
      for (const auto& opt : record["options"]) {
        if (!opt.is_string()) break;
        parsed.options.push_back(opt.get<std::string>());
      }
    } else {
      for (int i = 0;; ++i) {
        const std::string key = "ans" + std::to_string(i);
        if (!record.contains(key) || !record[key].is_string()) break;
        parsed.options.push_back(record[key].get<std::string>());
      }
    }
    if (parsed.options.size() < 2) {
      fail("needs at least 2 answer options");
      continue;
    }
    bool bad_index = false;
    auto read_index = [&](const char* key) -> std::optional<int> {
      if (!record.contains(key)) return std::nullopt;
      if (!record[key].is_number_integer()) {
        fail(std::string("field '") + key + "' is not an integer");
        bad_index = true;
        return std::nullopt;
      }
      const int idx = record[key].get<int>();
      if (idx < 0 || idx >= static_cast<int>(parsed.options.size())) {
        fail(std::string("field '") + key + "' out of range");
        bad_index = true;
        return std::nullopt;
      }
      return idx;
    };
    parsed.correct_index = read_index("label");
    parsed.bias_target_index = read_index("target");
    if (bad_index) continue;
    out.records.push_back(std::move(parsed));
  }
  return out;
}

ExternalReport score_external(const TransformerModel& model, const Tokenizer& tokenizer,
                              const std::vector<ExternalDatasetRecord>& records,
                              const AdapterView* adapter) {
  ExternalReport report;
  report.n_records = static_cast<int>(records.size());
  for (const auto& record : records) {
    std::vector<std::vector<TokenId>> option_ids;
    std::size_t longest = 0;
    for (const auto& option : record.options) {
      option_ids.push_back(tokenizer.encode(option));
      longest = std::max(longest, option_ids.back().size());
    }
    const std::string prompt = record.context + " " + record.question;
    const auto ids = prompt_ids_for(tokenizer, prompt);
    const auto generated =
        decode_greedy(model, ids, static_cast<int>(longest), HookPlan{}, adapter);

    // Longest option whose tokens prefix the generation wins; ties go to
    // the lower option index via the scan order.
    int chosen = -1;
    std::size_t chosen_len = 0;
    for (std::size_t opt = 0; opt < option_ids.size(); ++opt) {
      const auto& tokens = option_ids[opt];
      if (tokens.empty() || tokens.size() > generated.size()) continue;
      if (std::equal(tokens.begin(), tokens.end(), generated.begin()) &&
          tokens.size() > chosen_len) {
        chosen = static_cast<int>(opt);
        chosen_len = tokens.size();
      }
    }
    if (chosen < 0) {
      ++report.n_unanswered;
    } else {
      ++report.n_answered;
      if (record.bias_target_index && *record.bias_target_index == chosen) ++report.n_biased;
    }
  }
  report.biased_fraction =
      report.n_answered > 0 ? static_cast<double>(report.n_biased) / report.n_answered : 0.0;
  report.unanswered_fraction =
      report.n_records > 0 ? static_cast<double>(report.n_unanswered) / report.n_records : 0.0;
  return report;
}

void write_external_report(const ExternalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  check(out.good(), "cannot open '" + path.string() + "' for writing");
  out << "n_records\tn_answered\tn_biased\tn_unanswered\tbiased_fraction\tunanswered_fraction\n";
  out << report.n_records << "\t" << report.n_answered << "\t" << report.n_biased << "\t"
      << report.n_unanswered << "\t" << report.biased_fraction << "\t"
      << report.unanswered_fraction << "\n";
  check(out.good(), "write failed for '" + path.string() + "'");
}

namespace {

std::vector<std::vector<std::string>> read_tsv(const std::filesystem::path& path,
                                               const std::vector<std::string>& expected_header) {
  std::ifstream in(path);
  check(in.good(), "cannot open report '" + path.string() + "'");
  std::string line;
  check(static_cast<bool>(std::getline(in, line)), "empty report '" + path.string() + "'");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) header.push_back(field);
  }
  check(header == expected_header, "unexpected column set in '" + path.string() + "'");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> row;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) row.push_back(field);
    check(row.size() == expected_header.size(),
          "malformed row in '" + path.string() + "'");
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

std::vector<PlotRow> plot_from_behavioral(const std::filesystem::path& report_path) {
  const auto rows = read_tsv(report_path,
                             {"group", "n", "p_hat", "estimate", "ci_low", "ci_high", "p_value"});
  std::vector<PlotRow> out;
  double x = 0.0;
  for (const auto& row : rows) {
    PlotRow p;
    p.series = row[0];
    p.x = x++;
    p.y = std::stod(row[2]);
    p.ci_low = p.y;
    p.ci_high = p.y;
    out.push_back(p);
  }
  return out;
}

std::vector<PlotRow> plot_from_patching(const std::filesystem::path& report_path) {
  const auto rows = read_tsv(report_path, {"condition", "layer", "dP_race", "dP_color"});
  std::vector<PlotRow> out;
  for (const auto& row : rows) {
    if (row[1] == "summary") continue;
    const double layer = std::stod(row[1]);
    for (int which = 0; which < 2; ++which) {
      PlotRow p;
      p.series = row[0] + (which == 0 ? ".dP_race" : ".dP_color");
      p.x = layer;
      p.y = std::stod(row[which == 0 ? 2 : 3]);
      p.ci_low = p.y;
      p.ci_high = p.y;
      out.push_back(p);
    }
  }
  return out;
}

std::vector<PlotRow> plot_from_steering(const std::filesystem::path& grid_path) {
  const auto rows = read_tsv(grid_path, {"window_size", "start_layer", "category", "p_hat", "n"});
  std::vector<PlotRow> out;
  for (const auto& row : rows) {
    PlotRow p;
    p.series = row[2] + ".w" + row[0];
    p.x = std::stod(row[1]);
    p.y = std::stod(row[3]);
    p.ci_low = p.y;
    p.ci_high = p.y;
    out.push_back(p);
  }
  return out;
}

void write_plot_table(const std::vector<PlotRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  check(out.good(), "cannot open '" + path.string() + "' for writing");
  out << "series\tx\ty\tci_low\tci_high\n";
  for (const auto& row : rows)
    out << row.series << "\t" << row.x << "\t" << row.y << "\t" << row.ci_low << "\t"
        << row.ci_high << "\n";
  check(out.good(), "write failed for '" + path.string() + "'");
}

std::vector<std::filesystem::path> emit_plot_data(const std::filesystem::path& experiment_dir) {
  check(std::filesystem::is_directory(experiment_dir),
        "'" + experiment_dir.string() + "' is not a directory");
  std::vector<std::filesystem::path> written;
  const auto emit = [&](const char* input, const char* output, auto reader) {
    const auto in_path = experiment_dir / input;
    if (!std::filesystem::exists(in_path)) return;
    const auto out_path = experiment_dir / output;
    write_plot_table(reader(in_path), out_path);
    written.push_back(out_path);
  };
  emit("report.tsv", "plot_behavioral.tsv", plot_from_behavioral);
  emit("patching.tsv", "plot_patching.tsv", plot_from_patching);
  emit("steering_grid.tsv", "plot_steering.tsv", plot_from_steering);
  return written;
}

}  // namespace latentlab
