#include "latentlab/tokenizer.hpp"

#include <cctype>
#include <fstream>

namespace latentlab {

namespace {

bool is_separator_punct(char ch) {
  switch (ch) {
    case '.':
    case ',':
    case ':':
    case ';':
    case '!':
    case '?':
    case '(':
    case ')':
    case '"':
    case '\'':
      return true;
    default:
      return false;
  }
}

}  // namespace

std::vector<std::string> Tokenizer::split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!current.empty()) {
        words.push_back(current);
        current.clear();
      }
    } else if (is_separator_punct(ch)) {
      if (!current.empty()) {
        words.push_back(current);
        current.clear();
      }
      words.push_back(std::string(1, ch));
    } else {
      current.push_back(ch);
    }
  }
  if (!current.empty()) words.push_back(current);
  return words;
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open tokenizer file '" + path.string() + "'");
  Tokenizer tok;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("#!", 0) == 0) {
      auto space = line.find(' ');
      check(space != std::string::npos, "malformed special-token line '" + line + "'");
      const std::string kind = line.substr(2, space - 2);
      const std::string word = line.substr(space + 1);
      check(!word.empty(), "empty special token in '" + line + "'");
      const TokenId id = static_cast<TokenId>(tok.vocab_.size());
      if (kind == "bos") {
        tok.bos_id_ = id;
        tok.special_kind_.push_back(1);
      } else if (kind == "unk") {
        tok.unk_id_ = id;
        tok.special_kind_.push_back(2);
      } else if (kind == "mask") {
        tok.mask_id_ = id;
        tok.special_kind_.push_back(3);
      } else {
        throw Error("unknown special-token kind '" + kind + "'");
      }
      tok.vocab_.push_back(word);
    } else {
      check(!line.empty(), "empty vocabulary line at id " + std::to_string(tok.vocab_.size()));
      tok.vocab_.push_back(line);
      tok.special_kind_.push_back(0);
    }
  }
  tok.finish();
  return tok;
}

Tokenizer Tokenizer::from_tokens(std::vector<std::string> tokens, const std::string& bos,
                                 const std::string& unk, const std::string& mask) {
  Tokenizer tok;
  tok.bos_id_ = 0;
  tok.unk_id_ = 1;
  tok.mask_id_ = 2;
  tok.vocab_ = {bos, unk, mask};
  tok.special_kind_ = {1, 2, 3};
  for (auto& t : tokens) {
    tok.vocab_.push_back(std::move(t));
    tok.special_kind_.push_back(0);
  }
  tok.finish();
  return tok;
}

void Tokenizer::finish() {
  check(bos_id_ >= 0, "tokenizer missing #!bos declaration");
  check(unk_id_ >= 0, "tokenizer missing #!unk declaration");
  check(mask_id_ >= 0, "tokenizer missing #!mask declaration");
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    const auto& word = vocab_[i];
    auto [it, inserted] = word_to_id_.emplace(word, static_cast<TokenId>(i));
    check(inserted, "duplicate vocabulary entry '" + word + "'");
  }
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  check(out.good(), "cannot open '" + path.string() + "' for writing");
  static const char* kKinds[] = {"", "bos", "unk", "mask"};
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    if (special_kind_[i] != 0)
      out << "#!" << kKinds[special_kind_[i]] << " " << vocab_[i] << "\n";
    else
      out << vocab_[i] << "\n";
  }
  check(out.good(), "write failed for '" + path.string() + "'");
}

const std::string& Tokenizer::token(TokenId id) const {
  check(id >= 0 && id < vocab_size(), "token id " + std::to_string(id) + " out of range");
  return vocab_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Tokenizer::find(const std::string& word) const {
  auto it = word_to_id_.find(word);
  if (it == word_to_id_.end()) return std::nullopt;
  return it->second;
}

TokenId Tokenizer::id_of(const std::string& word) const {
  auto it = word_to_id_.find(word);
  check(it != word_to_id_.end(), "word '" + word + "' not in vocabulary");
  return it->second;
}

std::vector<TokenId> Tokenizer::encode(const std::string& text) const {
  std::vector<TokenId> ids;
  for (const auto& word : split_words(text)) {
    auto it = word_to_id_.find(word);
    ids.push_back(it == word_to_id_.end() ? unk_id_ : it->second);
  }
  return ids;
}

std::string Tokenizer::decode(const std::vector<TokenId>& ids) const {
  std::string text;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) text.push_back(' ');
    text += token(ids[i]);
  }
  return text;
}

}  // namespace latentlab
