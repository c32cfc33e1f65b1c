#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "latentlab/patching.hpp"
#include "toy_models.hpp"

using namespace latentlab;
using namespace latentlab::testing;

namespace {

const char* kInterpretivePrompt = "think about the <m> word";

InterpretiveSetup make_setup(const RandomWorld& world, int inject_layer = 2) {
  return InterpretiveSetup::from_text(world.tokenizer, kInterpretivePrompt, "race", "color",
                                      inject_layer);
}

}  // namespace

TEST_CASE("interpretive setup locates the single mask token") {
  const RandomWorld world = build_random_world(3, 17);
  const InterpretiveSetup setup = make_setup(world);
  CHECK(setup.prompt_ids[0] == world.tokenizer.bos_id());
  CHECK(setup.prompt_ids[static_cast<std::size_t>(setup.mask_position)] ==
        world.tokenizer.mask_id());
  CHECK(setup.race_id == world.tokenizer.id_of("race"));
  CHECK(setup.color_id == world.tokenizer.id_of("color"));
  CHECK_NOTHROW(setup.validate(world.model.config));

  CHECK_THROWS_AS(InterpretiveSetup::from_text(world.tokenizer, "no mask here", "race", "color"),
                  Error);
  CHECK_THROWS_AS(
      InterpretiveSetup::from_text(world.tokenizer, "<m> twice <m>", "race", "color"), Error);
}

TEST_CASE("setup validation rejects bad layers and identical candidates") {
  const RandomWorld world = build_random_world(3, 17);
  InterpretiveSetup setup = make_setup(world, 4);  // residual indices are 0..3
  CHECK_THROWS_AS(setup.validate(world.model.config), Error);
  setup = make_setup(world);
  setup.color_id = setup.race_id;
  CHECK_THROWS_AS(setup.validate(world.model.config), Error);
}

TEST_CASE("baseline candidate probabilities are a valid slice of the softmax") {
  const RandomWorld world = build_random_world(3, 17);
  const CandidateProbs probs = baseline_probs(world.model, make_setup(world));
  CHECK(probs.p_race > 0.0);
  CHECK(probs.p_color > 0.0);
  CHECK(probs.p_race + probs.p_color < 1.0);
}

TEST_CASE("probe activation cache covers every residual index") {
  const RandomWorld world = build_random_world(3, 23);
  const auto ids = world.tokenizer.encode("the dog is red .");
  std::vector<TokenId> prompt = {world.tokenizer.bos_id()};
  prompt.insert(prompt.end(), ids.begin(), ids.end());
  const int pos = 2;
  const auto cached = cache_probe_activation(world.model, prompt, pos);
  REQUIRE(cached.size() == 4);  // layers 0..3
  for (const auto& v : cached) CHECK(v.size() == world.model.config.d_model);
  // Index 0 is the raw embedding of the probed token.
  CHECK(cached[0] == world.model.embedding.row(prompt[pos]).transpose());
}

TEST_CASE("injecting the clean activation back reproduces the baseline exactly") {
  const RandomWorld world = build_random_world(3, 29);
  const InterpretiveSetup setup = make_setup(world, 2);
  const CandidateProbs baseline = baseline_probs(world.model, setup);
  const auto cached = cache_probe_activation(world.model, setup.prompt_ids, setup.mask_position);
  const CandidateProbs patched = patched_probs(world.model, setup, cached[2]);
  CHECK(patched.p_race == baseline.p_race);
  CHECK(patched.p_color == baseline.p_color);
}

TEST_CASE("race-blind score averages layer deltas") {
  const RaceBlindReport report = race_blind_score({{0, 0.1, 0.3}, {1, -0.1, 0.1}});
  CHECK(report.mean_dp_race == doctest::Approx(0.0));
  CHECK(report.mean_dp_color == doctest::Approx(0.2));
  CHECK(report.r_blind == doctest::Approx(0.2));
  CHECK_THROWS_AS(race_blind_score({}), Error);
}

TEST_CASE("filler selection minimizes the candidate-probability gap") {
  const RandomWorld world = build_random_world(2, 31);
  const InterpretiveSetup setup = make_setup(world, 1);
  std::vector<TokenId> fillers;
  for (const char* w : {"dog", "cat", "sun", "moon", "tree", "rock"})
    fillers.push_back(world.tokenizer.id_of(w));

  const TokenId chosen = select_str_token(world.model, setup, fillers);
  double best_gap = std::numeric_limits<double>::infinity();
  TokenId best = -1;
  for (TokenId f : fillers) {
    InterpretiveSetup filled = setup;
    filled.prompt_ids[static_cast<std::size_t>(setup.mask_position)] = f;
    const CandidateProbs p = baseline_probs(world.model, filled);
    const double gap = std::fabs(p.p_race - p.p_color);
    if (gap < best_gap || (gap == best_gap && f < best)) {
      best_gap = gap;
      best = f;
    }
  }
  CHECK(chosen == best);
}

TEST_CASE("layer sweep reports one delta per residual index") {
  const RandomWorld world = build_random_world(2, 37);
  const InterpretiveSetup setup = make_setup(world, 1);
  SweepPrompt prompt;
  prompt.id = "p0";
  const auto ids = world.tokenizer.encode("the cat is blue .");
  prompt.token_ids = {world.tokenizer.bos_id()};
  prompt.token_ids.insert(prompt.token_ids.end(), ids.begin(), ids.end());
  prompt.probe_positions = {2, 4};

  const RaceBlindReport report = layer_sweep(world.model, setup, {prompt}, "unit");
  CHECK(report.condition == "unit");
  REQUIRE(report.deltas.size() == 3);
  for (std::size_t l = 0; l < report.deltas.size(); ++l) {
    CHECK(report.deltas[l].source_layer == static_cast<int>(l));
    CHECK(std::isfinite(report.deltas[l].dp_race));
    CHECK(std::isfinite(report.deltas[l].dp_color));
  }
  CHECK(report.r_blind ==
        doctest::Approx(report.mean_dp_color - report.mean_dp_race).epsilon(1e-15));
}

TEST_CASE("patching report file has the expected layout") {
  RaceBlindReport report = race_blind_score({{0, 0.1, 0.2}, {1, 0.3, 0.4}});
  report.condition = "unit";
  const auto path = std::filesystem::temp_directory_path() / "patching_report.tsv";
  write_patching_report({report}, path);
  std::ifstream in(path);
  std::string header, row;
  REQUIRE(std::getline(in, header));
  CHECK(header == "condition\tlayer\tdP_race\tdP_color");
  REQUIRE(std::getline(in, row));
  CHECK(row.rfind("unit\t0\t", 0) == 0);
}
