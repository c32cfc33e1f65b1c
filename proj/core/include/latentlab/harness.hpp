#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "latentlab/bias_eval.hpp"
#include "latentlab/lora.hpp"
#include "latentlab/prompts.hpp"

namespace latentlab {

// Config problems detected before any output is written. The CLI maps
// this to exit code 2 and everything else to 3.
class ValidationError : public Error {
 public:
  using Error::Error;
};

enum class ExperimentKind { kBehavioral, kPatching, kSelfie, kSteering, kLoraTrain, kLoraEval };

std::string to_string(ExperimentKind k);
ExperimentKind experiment_kind_from_string(const std::string& s);

// INI-style config text: [section] headers, key = value lines, '#'
// comments. Every key must be consumed by the reader; leftovers are a
// validation error.
class ConfigText {
 public:
  static ConfigText parse(const std::string& text);
  static ConfigText load(const std::filesystem::path& path);

  bool has(const std::string& section, const std::string& key) const;
  std::string require(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) const;
  // Throws ValidationError naming every key that was never read.
  void check_fully_consumed() const;

  const std::string& raw_text() const { return raw_; }

 private:
  struct Entry {
    std::string value;
    mutable bool consumed = false;
  };
  std::map<std::string, std::map<std::string, Entry>> sections_;
  std::string raw_;
};

struct SuiteSource {
  std::filesystem::path path;  // load this suite file when non-empty ...
  // ... otherwise generate from these:
  std::filesystem::path vocab_path;  // empty means the built-in word lists
  std::vector<Condition> conditions;
  std::vector<Category> categories;
  std::vector<Variation> variations;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kBehavioral;
  std::filesystem::path model_path;
  std::filesystem::path tokenizer_path;
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;
  int jobs = 1;
  SuiteSource suite;
  int max_new_tokens = 24;

  // patching
  std::string interpretive_prompt;
  std::string race_word = "race";
  std::string color_word = "color";
  int inject_layer = 2;

  // selfie
  std::string interpretation_prompt;
  std::filesystem::path race_lexicon_path;
  std::filesystem::path color_lexicon_path;
  std::vector<int> source_layers;
  std::string model_tag = "base";

  // steering
  std::string concept_prompt;
  std::vector<std::string> probe_words;
  std::vector<int> window_sizes;
  std::vector<int> start_layers;

  // lora
  int rank = 16;
  double alpha = 16.0;
  std::vector<int> adapter_layers;
  TrainConfig train;
  int pair_count = 8;
  std::string pair_probe_a = "black";
  std::string pair_probe_b = "white";
  std::filesystem::path adapter_path;  // output of lora_train, input of lora_eval

  static ExperimentConfig from_config(const ConfigText& config);
  static ExperimentConfig load(const std::filesystem::path& path, std::string* raw_text = nullptr);
  // Path existence and structural checks; throws ValidationError.
  void validate() const;
};

struct RunResult {
  std::vector<std::filesystem::path> artifacts;  // relative to output_dir
  std::filesystem::path manifest;
};

// Runs the configured experiment end to end. All outputs land inside
// config.output_dir; a manifest listing every artifact with its checksum
// is written last. On a failure after validation, an error manifest is
// written and the error rethrown.
RunResult run(const ExperimentConfig& config, const std::string& config_text);

std::uint64_t fnv1a_checksum(const std::string& bytes);
std::uint64_t file_checksum(const std::filesystem::path& path);

struct ExternalDatasetRecord {
  std::string context;
  std::string question;
  std::vector<std::string> options;
  std::optional<int> correct_index;
  std::optional<int> bias_target_index;
};

struct ExternalIngest {
  std::vector<ExternalDatasetRecord> records;
  std::vector<std::string> record_errors;  // "line N: message", records skipped
};

// Reads newline-delimited JSON records with context/question/answer
// options; format must be "bbq_style". Unparseable lines are fatal,
// invalid records are collected and skipped.
ExternalIngest ingest_external(const std::filesystem::path& path, const std::string& format);

struct ExternalReport {
  int n_records = 0;
  int n_answered = 0;
  int n_biased = 0;
  int n_unanswered = 0;
  double biased_fraction = 0.0;      // among answered
  double unanswered_fraction = 0.0;  // among all records
};

ExternalReport score_external(const TransformerModel& model, const Tokenizer& tokenizer,
                              const std::vector<ExternalDatasetRecord>& records,
                              const AdapterView* adapter = nullptr);

void write_external_report(const ExternalReport& report, const std::filesystem::path& path);

struct PlotRow {
  std::string series;
  double x = 0.0;
  double y = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

std::vector<PlotRow> plot_from_behavioral(const std::filesystem::path& report_path);
std::vector<PlotRow> plot_from_patching(const std::filesystem::path& report_path);
std::vector<PlotRow> plot_from_steering(const std::filesystem::path& grid_path);
void write_plot_table(const std::vector<PlotRow>& rows, const std::filesystem::path& path);

// Scans a finished experiment directory for known report files and emits
// plot_<name>.tsv next to each; returns the files written.
std::vector<std::filesystem::path> emit_plot_data(const std::filesystem::path& experiment_dir);

}  // namespace latentlab
