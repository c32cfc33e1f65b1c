// Command-line front end: config-driven experiment runs, prompt-suite
// generation, external-dataset evaluation, and plot-data emission.
//
// Exit codes: 0 success, 2 validation failure, 3 runtime failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "latentlab/harness.hpp"
#include "latentlab/model.hpp"
#include "latentlab/prompts.hpp"
#include "latentlab/tokenizer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags, bool config_required = true) {
  auto* config = cmd->add_option("--config", flags.config_path, "experiment config file");
  if (config_required) config->required();
  cmd->add_option("--out", flags.out_dir, "output directory (overrides the config)");
  cmd->add_option("--seed", flags.seed, "seed override");
  cmd->add_option("--jobs", flags.jobs, "max parallel evaluations");
}

latentlab::ExperimentConfig load_config(const CommonFlags& flags, std::string* raw_text) {
  const latentlab::ConfigText text = latentlab::ConfigText::load(flags.config_path);
  *raw_text = text.raw_text();
  latentlab::ExperimentConfig config = latentlab::ExperimentConfig::from_config(text);
  if (!flags.out_dir.empty()) config.output_dir = flags.out_dir;
  if (flags.seed) config.seed = *flags.seed;
  if (flags.jobs) config.jobs = *flags.jobs;
  return config;
}

int run_experiment(const CommonFlags& flags,
                   const std::vector<latentlab::ExperimentKind>& allowed_kinds) {
  std::string raw_text;
  const latentlab::ExperimentConfig config = load_config(flags, &raw_text);
  bool kind_ok = false;
  for (auto kind : allowed_kinds) kind_ok = kind_ok || config.kind == kind;
  if (!kind_ok) {
    throw latentlab::ValidationError("config kind '" + latentlab::to_string(config.kind) +
                                     "' does not match this subcommand");
  }
  const latentlab::RunResult result = latentlab::run(config, raw_text);
  std::cout << "wrote " << result.artifacts.size() << " artifact(s) to "
            << config.output_dir.string() << "\n";
  std::cout << "manifest: " << result.manifest.string() << "\n";
  return kExitOk;
}

int run_gen_prompts(const CommonFlags& flags) {
  const latentlab::ConfigText text = latentlab::ConfigText::load(flags.config_path);
  latentlab::SuiteSource source;
  if (text.has("suite", "vocabulary")) source.vocab_path = text.require("suite", "vocabulary");
  for (const auto& name : latentlab::Tokenizer::split_words(
           text.get("suite", "conditions", "default")))
    if (name != ",") source.conditions.push_back(latentlab::condition_from_string(name));
  for (const auto& name : latentlab::Tokenizer::split_words(
           text.get("suite", "categories", "item_weapon")))
    if (name != ",") source.categories.push_back(latentlab::category_from_string(name));
  for (const auto& name : latentlab::Tokenizer::split_words(
           text.get("suite", "variations", "random_0 random_1 variation_0 variation_1")))
    if (name != ",") source.variations.push_back(latentlab::variation_from_string(name));
  text.check_fully_consumed();

  if (flags.out_dir.empty())
    throw latentlab::ValidationError("gen-prompts requires --out <dir>");
  const latentlab::Vocabularies vocab = source.vocab_path.empty()
                                            ? latentlab::Vocabularies::standard()
                                            : latentlab::Vocabularies::load(source.vocab_path);
  const auto suite =
      latentlab::generate_suite(vocab, source.conditions, source.categories, source.variations);
  std::filesystem::create_directories(flags.out_dir);
  const auto path = std::filesystem::path(flags.out_dir) / "suite.tsv";
  latentlab::save_suite(suite, path);
  std::cout << "wrote " << suite.size() << " prompts to " << path.string() << "\n";
  return kExitOk;
}

int run_eval_external(const CommonFlags& flags) {
  const latentlab::ConfigText text = latentlab::ConfigText::load(flags.config_path);
  const std::filesystem::path data_path = text.require("external", "data");
  const std::string format = text.get("external", "format", "bbq_style");
  const std::filesystem::path model_path = text.require("model", "path");
  const std::filesystem::path tokenizer_path = text.require("model", "tokenizer");
  const std::string adapter_path = text.get("model", "adapter", "");
  std::string out_dir = text.get("experiment", "output_dir", "");
  text.check_fully_consumed();
  if (!flags.out_dir.empty()) out_dir = flags.out_dir;
  if (out_dir.empty())
    throw latentlab::ValidationError("eval-external requires an output directory");
  const auto require_file = [](const std::filesystem::path& path, const char* what) {
    if (!std::filesystem::exists(path))
      throw latentlab::ValidationError(std::string(what) + " path '" + path.string() +
                                       "' does not exist");
  };
  require_file(data_path, "external data");
  require_file(model_path, "model");
  require_file(tokenizer_path, "tokenizer");
  if (!adapter_path.empty() && !std::filesystem::exists(adapter_path))
    throw latentlab::ValidationError("adapter path '" + adapter_path + "' does not exist");

  const latentlab::TransformerModel model = latentlab::load_model(model_path);
  const latentlab::Tokenizer tokenizer = latentlab::Tokenizer::load(tokenizer_path);
  const latentlab::ExternalIngest ingest = latentlab::ingest_external(data_path, format);

  std::optional<latentlab::AdaptedModel> adapted;
  std::optional<latentlab::AdapterView> view;
  if (!adapter_path.empty()) {
    adapted.emplace();
    adapted->base = &model;
    adapted->adapter = latentlab::load_adapter(adapter_path, model.config);
    view = adapted->view();
  }
  const latentlab::ExternalReport report =
      latentlab::score_external(model, tokenizer, ingest.records, view ? &*view : nullptr);

  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  latentlab::write_external_report(report, dir / "external_report.tsv");
  {
    std::ofstream errs(dir / "ingest_errors.txt");
    for (const auto& e : ingest.record_errors) errs << e << "\n";
  }
  std::cout << "records=" << report.n_records << " answered=" << report.n_answered
            << " biased_fraction=" << report.biased_fraction
            << " unanswered_fraction=" << report.unanswered_fraction << "\n";
  if (!ingest.record_errors.empty())
    std::cout << ingest.record_errors.size() << " record(s) skipped; see ingest_errors.txt\n";
  return kExitOk;
}

int run_report(const CommonFlags& flags) {
  if (flags.out_dir.empty())
    throw latentlab::ValidationError("report requires --out <experiment dir>");
  const auto written = latentlab::emit_plot_data(flags.out_dir);
  for (const auto& path : written) std::cout << "wrote " << path.string() << "\n";
  if (written.empty()) std::cout << "no known report files found\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"concept-representation experiment runner"};
  app.require_subcommand(1);

  CommonFlags gen_flags, behavioral_flags, patching_flags, selfie_flags, steering_flags,
      lora_flags, external_flags, report_flags;

  auto* gen = app.add_subcommand("gen-prompts", "generate a matched bias prompt suite");
  add_common_flags(gen, gen_flags);
  auto* behavioral =
      app.add_subcommand("run-behavioral", "evaluate a prompt suite and report bias levels");
  add_common_flags(behavioral, behavioral_flags);
  auto* patching =
      app.add_subcommand("run-patching", "activation-patching layer sweep with race-blind score");
  add_common_flags(patching, patching_flags);
  auto* selfie =
      app.add_subcommand("run-selfie", "natural-language readouts of cached activations");
  add_common_flags(selfie, selfie_flags);
  auto* steering =
      app.add_subcommand("run-steering", "concept-activation steering sweep");
  add_common_flags(steering, steering_flags);
  auto* lora = app.add_subcommand("train-lora", "train low-rank adapters on concept pairs");
  add_common_flags(lora, lora_flags);
  auto* external =
      app.add_subcommand("eval-external", "score an external multiple-choice dataset");
  add_common_flags(external, external_flags);
  auto* report = app.add_subcommand("report", "emit plot-ready tables from experiment outputs");
  add_common_flags(report, report_flags, /*config_required=*/false);

  CLI11_PARSE(app, argc, argv);

  try {
    using latentlab::ExperimentKind;
    if (gen->parsed()) return run_gen_prompts(gen_flags);
    if (behavioral->parsed())
      return run_experiment(behavioral_flags,
                            {ExperimentKind::kBehavioral, ExperimentKind::kLoraEval});
    if (patching->parsed()) return run_experiment(patching_flags, {ExperimentKind::kPatching});
    if (selfie->parsed()) return run_experiment(selfie_flags, {ExperimentKind::kSelfie});
    if (steering->parsed()) return run_experiment(steering_flags, {ExperimentKind::kSteering});
    if (lora->parsed()) return run_experiment(lora_flags, {ExperimentKind::kLoraTrain});
    if (external->parsed()) return run_eval_external(external_flags);
    if (report->parsed()) return run_report(report_flags);
  } catch (const latentlab::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
