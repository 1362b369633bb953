#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "misdetect/corpus.hpp"

namespace misdetect {

using TokenId = std::int32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kCls = 2;
inline constexpr TokenId kSep = 3;
inline constexpr TokenId kMask = 4;
inline constexpr TokenId kNumSpecial = 5;

/// Immutable word-level vocabulary. Ids are contiguous and the five special
/// tokens always occupy ids 0..4.
class Vocabulary {
 public:
  /// Vocabulary holding only the special tokens.
  Vocabulary();

  /// Takes an id-ordered token list; entries 0..4 must be the special names.
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  TokenId id_of(std::string_view token) const;  ///< kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::span<const std::string> tokens() const { return tokens_; }

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Content token ids of one document (no CLS/SEP).
struct TokenSequence {
  std::string doc_id;
  std::vector<TokenId> ids;

  std::size_t length() const { return ids.size(); }
};

/// NFC, lowercase, whitespace split, then leading and trailing ASCII
/// punctuation peeled off one character per token.
std::vector<std::string> normalize_and_split(std::string_view text);

/// Keeps up to max_size - 5 tokens with frequency >= min_freq, most frequent
/// first, ties in byte-lexicographic order.
Vocabulary build_vocab(std::span<const Document> train_docs, std::size_t min_freq,
                       std::size_t max_size);

TokenSequence encode(const Vocabulary& v, std::string_view text, std::string doc_id = {});

std::string decode(const Vocabulary& v, std::span<const TokenId> ids);

}  // namespace misdetect
