#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "latentlab/steering.hpp"
#include "toy_models.hpp"

using namespace latentlab;
using namespace latentlab::testing;

namespace {

std::vector<PromptRecord> sentinel_implicit_records(const SentinelWorld& world, std::size_t count) {
  const auto suite = generate_suite(world.vocab, {Condition::kDefault}, {Category::kItemWeapon},
                                    {Variation::kRandom0});
  std::vector<PromptRecord> implicit;
  for (const auto& r : suite)
    if (r.mode == Mode::kImplicit) implicit.push_back(r);
  implicit.resize(std::min(count, implicit.size()));
  return implicit;
}

}  // namespace

TEST_CASE("concept cache stores per-probe activations for every residual index") {
  const SentinelWorld world = build_sentinel_world();
  const ConceptCache cache = build_concept_cache(world.model, world.tokenizer,
                                                 world.concept_prompt, world.probe_words);
  CHECK(cache.concept_prompt == world.concept_prompt);
  for (const auto& probe : world.probe_words) {
    const auto& layers = cache.for_probe(probe);
    REQUIRE(layers.size() == 3);  // residual indices 0..2
    for (const auto& v : layers) CHECK(v.size() == world.model.config.d_model);
    const TokenId id = world.tokenizer.id_of(probe);
    CHECK(layers[0] == world.model.embedding.row(id).transpose());
  }
  CHECK_THROWS_AS(cache.for_probe("missing"), Error);
  // Probes must occur exactly once in the concept prompt.
  CHECK_THROWS_AS(build_concept_cache(world.model, world.tokenizer, "blk and blk", {"blk"}),
                  Error);
  CHECK_THROWS_AS(build_concept_cache(world.model, world.tokenizer, world.concept_prompt,
                                      {"pos01"}),
                  Error);
}

TEST_CASE("concept cache save/load round trip is exact") {
  const SentinelWorld world = build_sentinel_world();
  const ConceptCache cache = build_concept_cache(world.model, world.tokenizer,
                                                 world.concept_prompt, world.probe_words);
  const auto path = std::filesystem::temp_directory_path() / "concept_cache_round.tf";
  cache.save(path);
  const ConceptCache loaded = ConceptCache::load(path);
  CHECK(loaded.concept_prompt == cache.concept_prompt);
  REQUIRE(loaded.activations.size() == cache.activations.size());
  for (const auto& [probe, layers] : cache.activations) {
    const auto& other = loaded.for_probe(probe);
    REQUIRE(other.size() == layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) CHECK(other[l] == layers[l]);
  }
}

TEST_CASE("probe positions are located in encoded prompts") {
  const SentinelWorld world = build_sentinel_world();
  const auto records = sentinel_implicit_records(world, 1);
  REQUIRE_FALSE(records.empty());
  std::vector<TokenId> ids = {world.tokenizer.bos_id()};
  const auto body = world.tokenizer.encode(records[0].text);
  ids.insert(ids.end(), body.begin(), body.end());

  const auto positions = find_probe_positions(world.tokenizer, ids, world.probe_words);
  REQUIRE(positions.count("blk") == 1);
  REQUIRE(positions.count("wht") == 1);
  CHECK(positions.at("blk").size() == 2);  // probes are mentioned twice in the template
  CHECK(positions.at("wht").size() == 2);
  for (int pos : positions.at("blk"))
    CHECK(ids[static_cast<std::size_t>(pos)] == world.tokenizer.id_of("blk"));
  CHECK_THROWS_AS(find_probe_positions(world.tokenizer, ids, {"racial"}), Error);
}

TEST_CASE("steering spec validates the layer window") {
  const SentinelWorld world = build_sentinel_world();
  SteeringSpec spec;
  spec.start_layer = 1;
  spec.window = 2;
  CHECK_NOTHROW(spec.validate(world.model.config));
  spec.window = 3;  // 1 + 3 > n_layers + 1
  CHECK_THROWS_AS(spec.validate(world.model.config), Error);
  spec.start_layer = -1;
  CHECK_THROWS_AS(spec.validate(world.model.config), Error);
}

TEST_CASE("injecting concept activations flips the sentinel association") {
  const SentinelWorld world = build_sentinel_world();
  const ConceptCache cache = build_concept_cache(world.model, world.tokenizer,
                                                 world.concept_prompt, world.probe_words);
  const auto records = sentinel_implicit_records(world, 1);
  REQUIRE_FALSE(records.empty());
  const PromptRecord& record = records[0];

  std::vector<TokenId> ids = {world.tokenizer.bos_id()};
  const auto body = world.tokenizer.encode(record.text);
  ids.insert(ids.end(), body.begin(), body.end());

  SteeringSpec noop;
  noop.window = 0;
  noop.start_layer = 1;
  noop.probe_positions = find_probe_positions(world.tokenizer, ids, world.probe_words);
  const std::string baseline = steer_generate(world.model, world.tokenizer, record, cache, noop, 3);
  const Outcome base_outcome = parse_implicit(baseline, record);
  CHECK(base_outcome.status == ParseStatus::kOk);
  CHECK(base_outcome.y == 1);

  SteeringSpec steer = noop;
  steer.window = 1;
  const std::string steered = steer_generate(world.model, world.tokenizer, record, cache, steer, 3);
  const Outcome steered_outcome = parse_implicit(steered, record);
  CHECK(steered_outcome.status == ParseStatus::kOk);
  CHECK(steered_outcome.y == 0);
}

TEST_CASE("steering sweep aggregates outcomes per grid cell") {
  const SentinelWorld world = build_sentinel_world();
  const ConceptCache cache = build_concept_cache(world.model, world.tokenizer,
                                                 world.concept_prompt, world.probe_words);
  const auto records = sentinel_implicit_records(world, 3);
  const SteeringGrid grid = steering_sweep(world.model, world.tokenizer, records, cache, {0, 1},
                                           {1}, 3);
  REQUIRE(grid.cells.size() == 2);
  CHECK(grid.outcomes.size() == 2 * records.size());

  for (const auto& cell : grid.cells) {
    CHECK(cell.category == "item_weapon");
    CHECK(cell.start_layer == 2);  // 1-based label for 0-based start layer 1
    CHECK(cell.n == static_cast<int>(records.size()));
    if (cell.window == 0) CHECK(cell.p_hat == doctest::Approx(1.0));
    if (cell.window == 1) CHECK(cell.p_hat == doctest::Approx(0.0));
  }

  const auto path = std::filesystem::temp_directory_path() / "steering_grid.tsv";
  write_steering_grid(grid, path);
  std::ifstream in(path);
  std::string header;
  REQUIRE(std::getline(in, header));
  CHECK(header == "window_size\tstart_layer\tcategory\tp_hat\tn");
}

TEST_CASE("explicit records are rejected by the sweep") {
  const SentinelWorld world = build_sentinel_world();
  const ConceptCache cache = build_concept_cache(world.model, world.tokenizer,
                                                 world.concept_prompt, world.probe_words);
  const auto suite = generate_suite(world.vocab, {Condition::kDefault}, {Category::kItemWeapon},
                                    {Variation::kRandom0});
  std::vector<PromptRecord> explicit_only;
  for (const auto& r : suite)
    if (r.mode == Mode::kExplicit) {
      explicit_only.push_back(r);
      break;
    }
  CHECK_THROWS_AS(
      steering_sweep(world.model, world.tokenizer, explicit_only, cache, {1}, {1}, 2), Error);
}
