#include "latentlab/patching.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace latentlab {

InterpretiveSetup InterpretiveSetup::from_text(const Tokenizer& tokenizer,
                                               const std::string& prompt_text,
                                               const std::string& race_word,
                                               const std::string& color_word, int inject_layer) {
  InterpretiveSetup setup;
  setup.prompt_ids.push_back(tokenizer.bos_id());
  const auto body = tokenizer.encode(prompt_text);
  setup.prompt_ids.insert(setup.prompt_ids.end(), body.begin(), body.end());
  int mask_count = 0;
  for (std::size_t i = 0; i < setup.prompt_ids.size(); ++i) {
    if (setup.prompt_ids[i] == tokenizer.mask_id()) {
      setup.mask_position = static_cast<int>(i);
      ++mask_count;
    }
  }
  check(mask_count == 1, "interpretive prompt must contain exactly one mask token, found " +
                             std::to_string(mask_count));
  setup.race_id = tokenizer.id_of(race_word);
  setup.color_id = tokenizer.id_of(color_word);
  setup.inject_layer = inject_layer;
  return setup;
}

void InterpretiveSetup::validate(const ModelConfig& config) const {
  check(!prompt_ids.empty(), "empty interpretive prompt");
  check(mask_position >= 0 && mask_position < static_cast<int>(prompt_ids.size()),
        "mask position out of range");
  check(race_id != color_id, "race and color candidates must be distinct");
  check(race_id >= 0 && race_id < config.vocab_size && color_id >= 0 &&
            color_id < config.vocab_size,
        "candidate token out of vocabulary");
  check(inject_layer >= 0 && inject_layer <= config.n_layers, "injection layer out of range");
}

namespace {

CandidateProbs candidate_probs(const TransformerModel& model, const InterpretiveSetup& setup,
                               const HookPlan& plan) {
  const ForwardTrace trace = forward(model, setup.prompt_ids, plan);
  const Vector probs =
      next_token_distribution(trace, static_cast<int>(setup.prompt_ids.size()) - 1);
  return {probs(setup.race_id), probs(setup.color_id)};
}

}  // namespace

CandidateProbs baseline_probs(const TransformerModel& model, const InterpretiveSetup& setup) {
  setup.validate(model.config);
  return candidate_probs(model, setup, {});
}

std::vector<Vector> cache_probe_activation(const TransformerModel& model,
                                           const std::vector<TokenId>& prompt_ids,
                                           int probe_position) {
  check(probe_position >= 0 && probe_position < static_cast<int>(prompt_ids.size()),
        "probe position out of range");
  HookPlan plan;
  for (int l = 0; l <= model.config.n_layers; ++l) plan.captures.emplace_back(l, probe_position);
  const ForwardTrace trace = forward(model, prompt_ids, plan);
  std::vector<Vector> cached;
  cached.reserve(static_cast<std::size_t>(model.config.n_layers) + 1);
  for (int l = 0; l <= model.config.n_layers; ++l)
    cached.push_back(trace.captured_at(l, probe_position));
  return cached;
}

CandidateProbs patched_probs(const TransformerModel& model, const InterpretiveSetup& setup,
                             const Vector& cached) {
  setup.validate(model.config);
  check(cached.size() == model.config.d_model, "cached activation length != d_model");
  HookPlan plan;
  plan.patches.push_back({setup.inject_layer, setup.mask_position, cached});
  return candidate_probs(model, setup, plan);
}

RaceBlindReport race_blind_score(const std::vector<LayerDelta>& deltas) {
  check(!deltas.empty(), "race_blind_score needs at least one layer delta");
  RaceBlindReport report;
  report.deltas = deltas;
  std::sort(report.deltas.begin(), report.deltas.end(),
            [](const LayerDelta& a, const LayerDelta& b) { return a.source_layer < b.source_layer; });
  double sum_race = 0.0, sum_color = 0.0;
  for (const auto& d : report.deltas) {
    check(std::fabs(d.dp_race) <= 1.0 && std::fabs(d.dp_color) <= 1.0,
          "probability delta outside [-1, 1]");
    sum_race += d.dp_race;
    sum_color += d.dp_color;
  }
  const double n = static_cast<double>(report.deltas.size());
  report.mean_dp_race = sum_race / n;
  report.mean_dp_color = sum_color / n;
  report.r_blind = report.mean_dp_color - report.mean_dp_race;
  return report;
}

TokenId select_str_token(const TransformerModel& model, const InterpretiveSetup& setup,
                         const std::vector<TokenId>& candidate_fillers) {
  check(!candidate_fillers.empty(), "empty filler candidate set");
  TokenId best = -1;
  double best_gap = std::numeric_limits<double>::infinity();
  for (TokenId filler : candidate_fillers) {
    InterpretiveSetup filled = setup;
    filled.prompt_ids[static_cast<std::size_t>(setup.mask_position)] = filler;
    const CandidateProbs probs = baseline_probs(model, filled);
    const double gap = std::fabs(probs.p_race - probs.p_color);
    if (gap < best_gap || (gap == best_gap && filler < best)) {
      best_gap = gap;
      best = filler;
    }
  }
  return best;
}

RaceBlindReport layer_sweep(const TransformerModel& model, const InterpretiveSetup& setup,
                            const std::vector<SweepPrompt>& prompts,
                            const std::string& condition) {
  setup.validate(model.config);
  check(!prompts.empty(), "layer_sweep needs at least one prompt");
  const CandidateProbs baseline = baseline_probs(model, setup);
  const int n_layers = model.config.n_layers;

  std::vector<double> sum_race(static_cast<std::size_t>(n_layers) + 1, 0.0);
  std::vector<double> sum_color(static_cast<std::size_t>(n_layers) + 1, 0.0);
  std::size_t pair_count = 0;
  for (const auto& prompt : prompts) {
    check(!prompt.probe_positions.empty(), "prompt '" + prompt.id + "' has no probe positions");
    for (int pos : prompt.probe_positions) {
      const auto cached = cache_probe_activation(model, prompt.token_ids, pos);
      for (int l = 0; l <= n_layers; ++l) {
        const CandidateProbs patched = patched_probs(model, setup, cached[static_cast<std::size_t>(l)]);
        sum_race[static_cast<std::size_t>(l)] += patched.p_race - baseline.p_race;
        sum_color[static_cast<std::size_t>(l)] += patched.p_color - baseline.p_color;
      }
      ++pair_count;
    }
  }

  std::vector<LayerDelta> deltas;
  deltas.reserve(static_cast<std::size_t>(n_layers) + 1);
  for (int l = 0; l <= n_layers; ++l) {
    deltas.push_back({l, sum_race[static_cast<std::size_t>(l)] / static_cast<double>(pair_count),
                      sum_color[static_cast<std::size_t>(l)] / static_cast<double>(pair_count)});
  }
  RaceBlindReport report = race_blind_score(deltas);
  report.condition = condition;
  return report;
}

void write_patching_report(const std::vector<RaceBlindReport>& reports,
                           const std::filesystem::path& path) {
  std::ofstream out(path);
  check(out.good(), "cannot open '" + path.string() + "' for writing");
  out << "condition\tlayer\tdP_race\tdP_color\n";
  for (const auto& report : reports) {
    for (const auto& d : report.deltas)
      out << report.condition << "\t" << d.source_layer << "\t" << d.dp_race << "\t" << d.dp_color
          << "\n";
    out << report.condition << "\tsummary\t" << report.r_blind << "\tr_blind\n";
  }
  check(out.good(), "write failed for '" + path.string() + "'");
}

}  // namespace latentlab
