#include "misdetect/synthetic.hpp"

#include <set>

#include "misdetect/error.hpp"
#include "misdetect/rng.hpp"

namespace misdetect {

SyntheticLexicon make_lexicon(const SyntheticSpec& spec) {
  static constexpr std::string_view kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
  static constexpr std::string_view kVowels[] = {"a", "e", "i", "o", "u"};
  SplitMix64 rng(spec.lexicon_seed);
  std::set<std::string> seen;
  auto fresh = [&] {
    for (;;) {
      std::string w;
      const auto syllables = 2 + rng.below(2);
      for (std::uint64_t s = 0; s < syllables; ++s) {
        w += kOnsets[rng.below(std::size(kOnsets))];
        w += kVowels[rng.below(std::size(kVowels))];
      }
      if (seen.insert(w).second) return w;
    }
  };
  SyntheticLexicon lex;
  for (std::size_t i = 0; i < spec.keywords_per_class; ++i) lex.class0.push_back(fresh());
  for (std::size_t i = 0; i < spec.keywords_per_class; ++i) lex.class1.push_back(fresh());
  for (std::size_t i = 0; i < spec.filler_words; ++i) lex.filler.push_back(fresh());
  return lex;
}

Dataset make_synthetic(const SyntheticSpec& spec, std::size_t docs_per_class, std::uint64_t seed,
                       const std::string& id_prefix) {
  if (spec.min_tokens > spec.max_tokens || spec.keywords_per_class == 0 || spec.filler_words == 0) {
    throw Error("invalid synthetic corpus spec", "synthetic");
  }
  const auto lex = make_lexicon(spec);
  SplitMix64 rng(seed);
  Dataset ds;
  ds.class_names = {"valid", "misinformation"};
  for (std::size_t n = 0; n < 2 * docs_per_class; ++n) {
    const int label = static_cast<int>(n % 2);
    const auto& keywords = label == 0 ? lex.class0 : lex.class1;
    const auto len = spec.min_tokens + rng.below(spec.max_tokens - spec.min_tokens + 1);
    std::string text;
    for (std::uint64_t t = 0; t < len; ++t) {
      if (t) text += ' ';
      text += rng.uniform() < spec.keyword_fraction ? keywords[rng.below(keywords.size())]
                                                    : lex.filler[rng.below(lex.filler.size())];
    }
    ds.documents.push_back({id_prefix + "-" + std::to_string(n), std::move(text), label});
  }
  return ds;
}

}  // namespace misdetect
