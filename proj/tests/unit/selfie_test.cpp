#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "latentlab/selfie.hpp"
#include "toy_models.hpp"

using namespace latentlab;
using namespace latentlab::testing;

namespace {

ReadoutLexicons unit_lexicons() {
  ReadoutLexicons lex;
  lex.race_terms = {"race", "racial", "black", "white", "ethnicity"};
  lex.color_terms = {"color", "blue", "red", "shade", "hue"};
  return lex;
}

std::filesystem::path write_terms(const char* name, const std::vector<std::string>& terms) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream out(path);
  out << "# terms\n";
  for (const auto& t : terms) out << t << "\n";
  return path;
}

}  // namespace

TEST_CASE("interpretation spec requires exactly one placeholder") {
  const RandomWorld world = build_random_world(3, 41);
  const SelfieSpec spec = SelfieSpec::from_text(world.tokenizer, "think about <m> word", 2, 8);
  CHECK(spec.prompt_ids[static_cast<std::size_t>(spec.placeholder_position)] ==
        world.tokenizer.mask_id());
  CHECK_NOTHROW(spec.validate(world.model.config));
  CHECK_THROWS_AS(SelfieSpec::from_text(world.tokenizer, "no placeholder", 2, 8), Error);
  CHECK_THROWS_AS(SelfieSpec::from_text(world.tokenizer, "<m> and <m>", 2, 8), Error);

  SelfieSpec bad = spec;
  bad.inject_layer = 4;
  CHECK_THROWS_AS(bad.validate(world.model.config), Error);
}

TEST_CASE("embedding interpretation decodes under a pinned injection") {
  const RandomWorld world = build_random_world(3, 43);
  const SelfieSpec spec = SelfieSpec::from_text(world.tokenizer, "think about <m> word", 1, 6);
  const Vector a = Vector::Constant(world.model.config.d_model, 0.4);
  const Vector b = Vector::Constant(world.model.config.d_model, -3.0);
  const std::string text_a = interpret_embedding(world.model, world.tokenizer, spec, a);
  const std::string text_b = interpret_embedding(world.model, world.tokenizer, spec, b);
  CHECK_FALSE(text_a.empty());
  // Different injected vectors should steer the readout; equality would
  // mean the injection is ignored.
  CHECK(text_a != text_b);
  CHECK_THROWS_AS(
      interpret_embedding(world.model, world.tokenizer, spec, Vector::Zero(3)), Error);
}

TEST_CASE("readout classification counts lexicon hits") {
  const ReadoutLexicons lex = unit_lexicons();
  CHECK(classify_readout("This is about Race and ethnicity.", lex) == ReadoutCategory::kRace);
  CHECK(classify_readout("a lovely shade of blue", lex) == ReadoutCategory::kColor);
  CHECK(classify_readout("nothing relevant here", lex) == ReadoutCategory::kNonsense);
  CHECK(classify_readout("", lex) == ReadoutCategory::kNonsense);
  // Ties go to race; majority wins otherwise.
  CHECK(classify_readout("black hue", lex) == ReadoutCategory::kRace);
  CHECK(classify_readout("black hue shade", lex) == ReadoutCategory::kColor);
}

TEST_CASE("lexicons load from term files and reject overlap") {
  const auto race_path = write_terms("lex_race.txt", {"race", "Black"});
  const auto color_path = write_terms("lex_color.txt", {"color", "blue"});
  const ReadoutLexicons lex = ReadoutLexicons::load(race_path, color_path);
  CHECK(lex.race_terms == std::vector<std::string>{"race", "black"});

  const auto overlap_path = write_terms("lex_overlap.txt", {"color", "black"});
  CHECK_THROWS_AS(ReadoutLexicons::load(race_path, overlap_path), Error);
}

TEST_CASE("readout frequency groups by model tag and mode") {
  std::vector<ReadoutRecord> records(4);
  records[0] = {"a", 1, 0, "base", Mode::kImplicit, "x", ReadoutCategory::kRace};
  records[1] = {"b", 2, 0, "base", Mode::kImplicit, "y", ReadoutCategory::kNonsense};
  records[2] = {"c", 1, 0, "base", Mode::kExplicit, "z", ReadoutCategory::kColor};
  records[3] = {"d", 1, 0, "tuned", Mode::kImplicit, "w", ReadoutCategory::kRace};
  const auto counts = readout_frequency(records);
  REQUIRE(counts.size() == 3);
  const ReadoutCounts& base_imp = counts.at({"base", Mode::kImplicit});
  CHECK(base_imp.race == 1);
  CHECK(base_imp.nonsense == 1);
  CHECK(base_imp.total() == 2);
  CHECK(counts.at({"base", Mode::kExplicit}).color == 1);
  CHECK(counts.at({"tuned", Mode::kImplicit}).race == 1);
}

TEST_CASE("readout save/load round trip") {
  std::vector<ReadoutRecord> records(2);
  records[0] = {"p1", 3, 7, "base", Mode::kImplicit, "about race\tmaybe", ReadoutCategory::kRace};
  records[1] = {"p2", 0, 1, "tuned", Mode::kExplicit, "gibberish", ReadoutCategory::kNonsense};
  const auto path = std::filesystem::temp_directory_path() / "readouts_round.tsv";
  save_readouts(records, path);
  const auto loaded = load_readouts(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].prompt_id == "p1");
  CHECK(loaded[0].source_layer == 3);
  CHECK(loaded[0].source_position == 7);
  CHECK(loaded[0].model_tag == "base");
  CHECK(loaded[0].category == ReadoutCategory::kRace);
  CHECK(loaded[0].text == "about race maybe");  // tab flattened on save
  CHECK(loaded[1].mode == Mode::kExplicit);
}
