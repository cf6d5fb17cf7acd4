#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "corerank/detail/hash.hpp"
#include "corerank/error.hpp"
#include "corerank/layout.hpp"

namespace corerank {

/// One token with its [begin, end) character offsets in the source text.
struct TokenPiece {
  TokenId id = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Deterministic text-to-token mapping. Offsets are monotone non-decreasing.
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  virtual std::string id() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::vector<TokenPiece> tokenize(std::string_view text) const = 0;

  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> ids;
    for (const auto& p : tokenize(text)) ids.push_back(p.id);
    return ids;
  }
};

inline bool is_space(char c) noexcept {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

/// Splits on ASCII whitespace; each word maps to FNV-1a(word) mod vocab.
class WhitespaceTokenizer final : public Tokenizer {
 public:
  explicit WhitespaceTokenizer(std::size_t vocab = std::size_t{1} << 24) : vocab_(vocab) {
    require(vocab_ > 0, ErrorCode::invalid_argument, "vocabulary size must be positive");
  }

  std::string id() const override { return "whitespace-fnv/" + std::to_string(vocab_); }
  std::size_t vocab_size() const override { return vocab_; }

  std::vector<TokenPiece> tokenize(std::string_view text) const override {
    std::vector<TokenPiece> out;
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && is_space(text[i])) ++i;
      if (i == text.size()) break;
      const std::size_t begin = i;
      while (i < text.size() && !is_space(text[i])) ++i;
      out.push_back({static_cast<TokenId>(detail::fnv1a(text.substr(begin, i - begin)) % vocab_), begin, i});
    }
    return out;
  }

 private:
  std::size_t vocab_;
};

/// One token per UTF-8 byte, vocabulary 256.
class ByteTokenizer final : public Tokenizer {
 public:
  std::string id() const override { return "bytes"; }
  std::size_t vocab_size() const override { return 256; }

  std::vector<TokenPiece> tokenize(std::string_view text) const override {
    std::vector<TokenPiece> out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i)
      out.push_back({static_cast<unsigned char>(text[i]), i, i + 1});
    return out;
  }
};

}  // namespace corerank
