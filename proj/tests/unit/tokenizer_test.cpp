#include <doctest.h>

#include <filesystem>

#include "latentlab/tokenizer.hpp"
#include "toy_models.hpp"

using namespace latentlab;
using latentlab::testing::make_word_tokenizer;

TEST_CASE("word splitting separates punctuation") {
  const auto words = Tokenizer::split_words("Hello, world: (yes)!");
  CHECK(words == std::vector<std::string>{"Hello", ",", "world", ":", "(", "yes", ")", "!"});
}

TEST_CASE("encode maps unknown words to unk and decode joins with spaces") {
  const Tokenizer tok = make_word_tokenizer({"alpha", "beta", ":"});
  const auto ids = tok.encode("alpha gamma: beta");
  REQUIRE(ids.size() == 4);
  CHECK(ids[0] == tok.id_of("alpha"));
  CHECK(ids[1] == tok.unk_id());
  CHECK(ids[2] == tok.id_of(":"));
  CHECK(ids[3] == tok.id_of("beta"));
  CHECK(tok.decode({ids[0], ids[2], ids[3]}) == "alpha : beta");
}

TEST_CASE("specials occupy ids 0..2 and lookups behave") {
  const Tokenizer tok = make_word_tokenizer({"x"});
  CHECK(tok.bos_id() == 0);
  CHECK(tok.unk_id() == 1);
  CHECK(tok.mask_id() == 2);
  CHECK(tok.vocab_size() == 4);
  CHECK(tok.find("x").has_value());
  CHECK_FALSE(tok.find("y").has_value());
  CHECK_THROWS_AS(tok.id_of("y"), Error);
  CHECK_THROWS_AS(tok.token(99), Error);
}

TEST_CASE("duplicate vocabulary entries are rejected") {
  CHECK_THROWS_AS(make_word_tokenizer({"dup", "dup"}), Error);
}

TEST_CASE("tokenizer save/load round trip preserves ids and specials") {
  const Tokenizer tok = make_word_tokenizer({"one", "two", ".", ":"});
  const auto path = std::filesystem::temp_directory_path() / "tok_round.txt";
  tok.save(path);
  const Tokenizer loaded = Tokenizer::load(path);
  CHECK(loaded.vocab_size() == tok.vocab_size());
  CHECK(loaded.bos_id() == tok.bos_id());
  CHECK(loaded.mask_id() == tok.mask_id());
  CHECK(loaded.id_of("two") == tok.id_of("two"));
  CHECK(loaded.encode("one : two .") == tok.encode("one : two ."));
}
