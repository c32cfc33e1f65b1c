#include "latentlab/steering.hpp"

#include <algorithm>
#include <fstream>

#include "latentlab/patching.hpp"
#include "latentlab/tensor_file.hpp"

namespace latentlab {

const std::vector<Vector>& ConceptCache::for_probe(const std::string& probe) const {
  auto it = activations.find(probe);
  check(it != activations.end(), "concept cache has no entry for probe '" + probe + "'");
  return it->second;
}

void ConceptCache::save(const std::filesystem::path& path) const {
  TensorFile file;
  file.header = {{"format_version", "1"}, {"kind", "concept_cache"},
                 {"concept_prompt", concept_prompt}};
  for (const auto& [probe, layers] : activations) {
    for (std::size_t l = 0; l < layers.size(); ++l)
      file.tensors.push_back(make_tensor(probe + ".layer." + std::to_string(l), layers[l]));
    file.header.emplace_back("probe_layers." + probe, std::to_string(layers.size()));
  }
  write_tensor_file(path, file);
}

ConceptCache ConceptCache::load(const std::filesystem::path& path) {
  const TensorFile file = read_tensor_file(path);
  check(file.header_value("kind") == "concept_cache", "not a concept cache file");
  ConceptCache cache;
  cache.concept_prompt = file.header_value("concept_prompt");
  for (const auto& [key, value] : file.header) {
    if (key.rfind("probe_layers.", 0) != 0) continue;
    const std::string probe = key.substr(std::string("probe_layers.").size());
    const int n_layers = std::stoi(value);
    std::vector<Vector> layers;
    layers.reserve(static_cast<std::size_t>(n_layers));
    for (int l = 0; l < n_layers; ++l)
      layers.push_back(tensor_as_vector(file.tensor(probe + ".layer." + std::to_string(l))));
    cache.activations.emplace(probe, std::move(layers));
  }
  check(!cache.activations.empty(), "concept cache has no probes");
  return cache;
}

void SteeringSpec::validate(const ModelConfig& config) const {
  check(window >= 0, "window size must be >= 0");
  check(start_layer >= 0, "start layer must be >= 0");
  check(start_layer + window <= config.n_layers + 1,
        "steering window exceeds layer range 0.." + std::to_string(config.n_layers));
}

ConceptCache build_concept_cache(const TransformerModel& model, const Tokenizer& tokenizer,
                                 const std::string& concept_prompt,
                                 const std::vector<std::string>& probe_words) {
  check(!probe_words.empty(), "no probe words given");
  std::vector<TokenId> ids;
  ids.push_back(tokenizer.bos_id());
  const auto body = tokenizer.encode(concept_prompt);
  ids.insert(ids.end(), body.begin(), body.end());

  ConceptCache cache;
  cache.concept_prompt = concept_prompt;
  for (const auto& probe : probe_words) {
    const TokenId probe_id = tokenizer.id_of(probe);
    int position = -1;
    int occurrences = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] == probe_id) {
        position = static_cast<int>(i);
        ++occurrences;
      }
    }
    check(occurrences == 1, "probe '" + probe + "' must appear exactly once in the concept "
                            "prompt, found " + std::to_string(occurrences));
    cache.activations.emplace(probe, cache_probe_activation(model, ids, position));
  }
  return cache;
}

std::map<std::string, std::vector<int>> find_probe_positions(
    const Tokenizer& tokenizer, const std::vector<TokenId>& prompt_ids,
    const std::vector<std::string>& probe_words) {
  std::map<std::string, std::vector<int>> positions;
  for (const auto& probe : probe_words) {
    const TokenId probe_id = tokenizer.id_of(probe);
    auto& list = positions[probe];
    for (std::size_t i = 0; i < prompt_ids.size(); ++i)
      if (prompt_ids[i] == probe_id) list.push_back(static_cast<int>(i));
    check(!list.empty(), "probe '" + probe + "' not found in prompt");
  }
  return positions;
}

std::string steer_generate(const TransformerModel& model, const Tokenizer& tokenizer,
                           const PromptRecord& record, const ConceptCache& cache,
                           const SteeringSpec& spec, int max_new_tokens) {
  spec.validate(model.config);
  std::vector<TokenId> ids;
  ids.push_back(tokenizer.bos_id());
  const auto body = tokenizer.encode(record.text);
  ids.insert(ids.end(), body.begin(), body.end());

  HookPlan plan;
  for (const auto& [probe, positions] : spec.probe_positions) {
    const auto& layers = cache.for_probe(probe);
    check(static_cast<int>(layers.size()) == model.config.n_layers + 1,
          "concept cache layer count mismatch for probe '" + probe + "'");
    for (int pos : positions) {
      check(pos >= 0 && pos < static_cast<int>(ids.size()),
            "probe position out of range in prompt '" + record.id + "'");
      for (int l = spec.start_layer; l < spec.start_layer + spec.window; ++l)
        plan.patches.push_back({l, pos, layers[static_cast<std::size_t>(l)]});
    }
  }
  const auto generated = decode_greedy(model, ids, max_new_tokens, plan);
  return tokenizer.decode(generated);
}

SteeringGrid steering_sweep(const TransformerModel& model, const Tokenizer& tokenizer,
                            const std::vector<PromptRecord>& implicit_suite,
                            const ConceptCache& cache, const std::vector<int>& window_sizes,
                            const std::vector<int>& start_layers, int max_new_tokens,
                            const ParseOptions& options) {
  SteeringGrid grid;
  std::vector<std::string> probe_words;
  for (const auto& [probe, layers] : cache.activations) probe_words.push_back(probe);

  for (int window : window_sizes) {
    for (int start : start_layers) {
      std::map<std::string, std::vector<Outcome>> by_category;
      for (const auto& record : implicit_suite) {
        check(record.mode == Mode::kImplicit, "steering sweep expects implicit records only");
        std::vector<TokenId> ids;
        ids.push_back(tokenizer.bos_id());
        const auto body = tokenizer.encode(record.text);
        ids.insert(ids.end(), body.begin(), body.end());

        SteeringSpec spec;
        spec.start_layer = start;
        spec.window = window;
        spec.probe_positions = find_probe_positions(tokenizer, ids, probe_words);
        const std::string response = steer_generate(model, tokenizer, record, cache, spec,
                                                    max_new_tokens);
        Outcome outcome = parse_implicit(response, record, options);
        outcome.prompt_id = "w" + std::to_string(window) + ".s" + std::to_string(start + 1) +
                            "." + record.id;
        by_category[to_string(record.category)].push_back(std::move(outcome));
      }
      for (const auto& [category, outcomes] : by_category) {
        SteeringCell cell;
        cell.window = window;
        cell.start_layer = start + 1;  // 1-based in reports
        cell.category = category;
        int n_ok = 0;
        double sum = 0.0;
        for (const auto& o : outcomes) {
          grid.outcomes.push_back(o);
          if (o.status == ParseStatus::kOk) {
            ++n_ok;
            sum += o.y;
          }
        }
        cell.n = n_ok;
        cell.p_hat = n_ok > 0 ? sum / n_ok : 0.0;
        grid.cells.push_back(cell);
      }
    }
  }
  return grid;
}

void write_steering_grid(const SteeringGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path);
  check(out.good(), "cannot open '" + path.string() + "' for writing");
  out << "window_size\tstart_layer\tcategory\tp_hat\tn\n";
  for (const auto& cell : grid.cells)
    out << cell.window << "\t" << cell.start_layer << "\t" << cell.category << "\t" << cell.p_hat
        << "\t" << cell.n << "\n";
  check(out.good(), "write failed for '" + path.string() + "'");
}

}  // namespace latentlab
