#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "latentlab/common.hpp"

namespace latentlab {

// Word-level tokenizer over a closed vocabulary. Text is split on
// whitespace and on the punctuation characters . , : ; ! ? ( ) " '
// which become single-character tokens, so probe and stimulus words map
// to exactly one id each.
//
// Vocabulary file: one token string per line, line number = id. Lines
// beginning "#!" declare special tokens as "#!<kind> <token>", where kind
// is one of bos, unk, mask; the declared token occupies that line's id.
class Tokenizer {
 public:
  static Tokenizer load(const std::filesystem::path& path);
  static Tokenizer from_tokens(std::vector<std::string> tokens,
                               const std::string& bos, const std::string& unk,
                               const std::string& mask);
  void save(const std::filesystem::path& path) const;

  int vocab_size() const { return static_cast<int>(vocab_.size()); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(const std::string& word) const;
  // Throws if the word is not in the vocabulary or maps to more than one id.
  TokenId id_of(const std::string& word) const;

  std::vector<TokenId> encode(const std::string& text) const;  // unknown words -> unk id
  std::string decode(const std::vector<TokenId>& ids) const;   // space-joined

  TokenId bos_id() const { return bos_id_; }
  TokenId unk_id() const { return unk_id_; }
  TokenId mask_id() const { return mask_id_; }

  static std::vector<std::string> split_words(const std::string& text);

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, TokenId> word_to_id_;
  TokenId bos_id_ = -1;
  TokenId unk_id_ = -1;
  TokenId mask_id_ = -1;
  std::vector<int> special_kind_;  // 0 = plain, 1 = bos, 2 = unk, 3 = mask

  void finish();
};

}  // namespace latentlab
