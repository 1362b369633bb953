#include <doctest.h>

#include <filesystem>

#include "misdetect/error.hpp"
#include "misdetect/rng.hpp"
#include "misdetect/tokenizer.hpp"

using namespace misdetect;

namespace {

std::vector<Document> docs(std::initializer_list<const char*> texts) {
  std::vector<Document> out;
  int i = 0;
  for (const auto* t : texts) out.push_back({"d" + std::to_string(i++), t, 0});
  return out;
}

}  // namespace

TEST_CASE("build_vocab counts, thresholds and breaks ties") {
  const auto corpus = docs({"a a b"});
  const auto v = build_vocab(corpus, 1, 10);
  REQUIRE(v.size() == 7);
  CHECK(v.id_of("[PAD]") == kPad);
  CHECK(v.id_of("[MASK]") == kMask);
  CHECK(v.id_of("a") == 5);
  CHECK(v.id_of("b") == 6);

  const auto thresholded = build_vocab(corpus, 2, 10);
  CHECK(thresholded.size() == 6);
  CHECK(thresholded.contains("a"));
  CHECK_FALSE(thresholded.contains("b"));

  const auto tied = build_vocab(docs({"b a", "b a"}), 1, 10);
  CHECK(tied.id_of("a") == 5);
  CHECK(tied.id_of("b") == 6);

  const auto capped = build_vocab(docs({"c c c b b a"}), 1, 7);
  CHECK(capped.size() == 7);
  CHECK(capped.id_of("c") == 5);
  CHECK(capped.id_of("b") == 6);
  CHECK_FALSE(capped.contains("a"));
}

TEST_CASE("build_vocab preconditions") {
  const auto corpus = docs({"x"});
  CHECK_THROWS_AS(build_vocab(corpus, 0, 10), Error);
  CHECK_THROWS_AS(build_vocab(corpus, 1, 5), Error);
  CHECK_THROWS_AS(build_vocab(std::vector<Document>{}, 1, 10), Error);
}

TEST_CASE("encode normalizes and maps out-of-vocabulary tokens to UNK") {
  const auto v = build_vocab(docs({"a a b"}), 1, 10);
  CHECK(encode(v, "").ids.empty());
  CHECK(encode(v, "A a").ids == std::vector<TokenId>{5, 5});
  CHECK(encode(v, "zzz").ids == std::vector<TokenId>{kUnk});
  CHECK(encode(v, "  a\t\nb  ", "doc7").doc_id == "doc7");
  CHECK(encode(v, "  a\t\nb  ").length() == 2);
}

TEST_CASE("normalization: NFC, lowercase, whitespace, edge punctuation") {
  CHECK(normalize_and_split("Hello, World!") == std::vector<std::string>{"hello", ",", "world", "!"});
  CHECK(normalize_and_split("\"quoted\" don't") == std::vector<std::string>{"\"", "quoted", "\"", "don't"});
  CHECK(normalize_and_split("...") == std::vector<std::string>{".", ".", "."});
  CHECK(normalize_and_split("(a)!") == std::vector<std::string>{"(", "a", ")", "!"});
  // Decomposed e + combining acute composes to U+00E9; uppercase folds.
  CHECK(normalize_and_split("Cafe\xCC\x81") == std::vector<std::string>{"caf\xC3\xA9"});
  CHECK(normalize_and_split("\xC3\x89T\xC3\x89") == std::vector<std::string>{"\xC3\xA9t\xC3\xA9"});
  // No-break space (U+00A0) and ideographic space (U+3000) separate words.
  CHECK(normalize_and_split("a\xC2\xA0" "b\xE3\x80\x80" "c") == std::vector<std::string>{"a", "b", "c"});
  // Non-ASCII punctuation stays attached.
  CHECK(normalize_and_split("wow\xE2\x80\xA6") == std::vector<std::string>{"wow\xE2\x80\xA6"});
}

TEST_CASE("decode renders tokens and specials") {
  const auto v = build_vocab(docs({"a a b"}), 1, 10);
  const std::vector<TokenId> ab{5, 6};
  CHECK(decode(v, ab) == "a b");
  CHECK(decode(v, std::vector<TokenId>{}).empty());
  CHECK(decode(v, std::vector<TokenId>{kUnk}) == "[UNK]");
  CHECK(decode(v, std::vector<TokenId>{kCls, 5, kSep, kPad}) == "[CLS] a [SEP] [PAD]");
  CHECK_THROWS_AS(decode(v, std::vector<TokenId>{7}), Error);
}

TEST_CASE("decode inverts encode on normalized in-vocabulary text") {
  const auto v = build_vocab(docs({"the quick brown fox , jumps over the lazy dog ! and runs ."}), 1, 100);
  SplitMix64 rng(5);
  std::vector<std::string> words;
  for (std::size_t i = kNumSpecial; i < v.size(); ++i) words.push_back(v.token(static_cast<TokenId>(i)));
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    const auto n = rng.below(20);
    for (std::uint64_t k = 0; k < n; ++k) {
      if (k) text += ' ';
      text += words[rng.below(words.size())];
    }
    CHECK(decode(v, encode(v, text).ids) == text);
  }
}

TEST_CASE("vocabulary JSON round trip and validation") {
  const auto v = build_vocab(docs({"z y y x x x"}), 1, 100);
  const auto path = std::filesystem::temp_directory_path() / "misdetect_vocab.json";
  v.save(path);
  const auto loaded = Vocabulary::load(path);
  CHECK(loaded == v);
  std::filesystem::remove(path);

  // Building twice gives the same serialized bytes.
  CHECK(build_vocab(docs({"z y y x x x"}), 1, 100).to_json().dump() == v.to_json().dump());

  CHECK_THROWS_AS(Vocabulary::from_json(nlohmann::json{{"[PAD]", 0}, {"[UNK]", 1}}), Error);
  CHECK_THROWS_AS(Vocabulary::from_json(nlohmann::json{{"[PAD]", 0}, {"[UNK]", 1}, {"[CLS]", 2}, {"[SEP]", 3},
                                                       {"[MASK]", 4}, {"a", 6}}),
                  Error);
  CHECK_THROWS_AS(Vocabulary::from_json(nlohmann::json::array()), Error);
}
