#include "misdetect/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "misdetect/error.hpp"

namespace misdetect {
namespace {

const std::vector<std::string> kSpecialNames{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

bool is_ascii_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 0x80 && std::ispunct(u);
}

std::string normalize(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw std::runtime_error("ICU NFC normalizer unavailable");
  auto ustr = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  icu::UnicodeString normalized = nfc->normalize(ustr, status);
  if (U_FAILURE(status)) throw Error("text is not valid Unicode", "text");
  normalized.toLower(icu::Locale::getRoot());
  std::string out;
  normalized.toUTF8String(out);
  return out;
}

void push_word(std::string_view word, std::vector<std::string>& out) {
  std::size_t lo = 0;
  std::size_t hi = word.size();
  while (lo < hi && is_ascii_punct(word[lo])) ++lo;
  while (hi > lo && is_ascii_punct(word[hi - 1])) --hi;
  for (std::size_t i = 0; i < lo; ++i) out.emplace_back(1, word[i]);
  if (hi > lo) out.emplace_back(word.substr(lo, hi - lo));
  for (std::size_t i = hi; i < word.size(); ++i) out.emplace_back(1, word[i]);
}

}  // namespace

std::vector<std::string> normalize_and_split(std::string_view text) {
  const std::string norm = normalize(text);
  std::vector<std::string> out;
  // Walk code points so that non-ASCII whitespace also separates words.
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(norm.data());
  const auto n = static_cast<int32_t>(norm.size());
  int32_t i = 0;
  int32_t word_start = -1;
  while (i < n) {
    const int32_t cp_start = i;
    UChar32 cp;
    U8_NEXT(bytes, i, n, cp);
    const bool space = cp >= 0 && u_isUWhiteSpace(cp);
    if (space) {
      if (word_start >= 0) push_word(std::string_view(norm).substr(word_start, cp_start - word_start), out);
      word_start = -1;
    } else if (word_start < 0) {
      word_start = cp_start;
    }
  }
  if (word_start >= 0) push_word(std::string_view(norm).substr(word_start), out);
  return out;
}

Vocabulary::Vocabulary() : Vocabulary(kSpecialNames) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < kSpecialNames.size() ||
      !std::equal(kSpecialNames.begin(), kSpecialNames.end(), tokens_.begin())) {
    throw Error("vocabulary must start with [PAD] [UNK] [CLS] [SEP] [MASK]", "vocab");
  }
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw Error("vocabulary token '" + tokens_[i] + "' appears twice", "vocab");
    }
  }
}

TokenId Vocabulary::id_of(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw Error("token id " + std::to_string(id) + " out of range", "ids");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

nlohmann::json Vocabulary::to_json() const {
  // nlohmann's default object is key-sorted, so the dump is canonical.
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
  return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error("vocabulary JSON must be an object", "vocab");
  std::vector<std::string> tokens(j.size());
  std::vector<bool> filled(j.size(), false);
  for (const auto& [tok, id] : j.items()) {
    if (!id.is_number_unsigned() || id.get<std::size_t>() >= tokens.size() || filled[id.get<std::size_t>()]) {
      throw Error("vocabulary ids must be contiguous 0..size-1", "vocab");
    }
    tokens[id.get<std::size_t>()] = tok;
    filled[id.get<std::size_t>()] = true;
  }
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string(), "vocab");
  out << to_json().dump(1) << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open vocabulary " + path.string(), "vocab");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("malformed vocabulary " + path.string() + ": " + e.what(), "vocab");
  }
  return from_json(j);
}

Vocabulary build_vocab(std::span<const Document> train_docs, std::size_t min_freq,
                       std::size_t max_size) {
  if (min_freq < 1) throw Error("min_freq must be >= 1", "min_freq");
  if (max_size <= kSpecialNames.size()) throw Error("max_size must exceed 5", "max_size");
  if (train_docs.empty()) throw Error("cannot build a vocabulary from an empty corpus", "data");

  std::map<std::string, std::size_t> freq;
  for (const auto& d : train_docs) {
    for (auto& tok : normalize_and_split(d.text)) ++freq[std::move(tok)];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : freq) {
    if (n >= min_freq && std::find(kSpecialNames.begin(), kSpecialNames.end(), tok) == kSpecialNames.end()) {
      ranked.emplace_back(tok, n);
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep = std::min(ranked.size(), max_size - kSpecialNames.size());

  auto tokens = kSpecialNames;
  for (std::size_t i = 0; i < keep; ++i) tokens.push_back(std::move(ranked[i].first));
  return Vocabulary(std::move(tokens));
}

TokenSequence encode(const Vocabulary& v, std::string_view text, std::string doc_id) {
  TokenSequence seq{std::move(doc_id), {}};
  for (const auto& tok : normalize_and_split(text)) seq.ids.push_back(v.id_of(tok));
  return seq;
}

std::string decode(const Vocabulary& v, std::span<const TokenId> ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += v.token(ids[i]);
  }
  return out;
}

}  // namespace misdetect
