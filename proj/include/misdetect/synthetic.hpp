#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "misdetect/corpus.hpp"

namespace misdetect {

/// Two-class toy corpus: each class owns a disjoint keyword list and both
/// share a filler list. A token is a class keyword with probability
/// keyword_fraction, otherwise filler.
struct SyntheticSpec {
  std::size_t keywords_per_class = 50;
  std::size_t filler_words = 100;
  std::size_t min_tokens = 300;
  std::size_t max_tokens = 800;
  double keyword_fraction = 0.25;
  std::uint64_t lexicon_seed = 2024;  ///< fixes the word lists
};

struct SyntheticLexicon {
  std::vector<std::string> class0;
  std::vector<std::string> class1;
  std::vector<std::string> filler;
};

SyntheticLexicon make_lexicon(const SyntheticSpec& spec);

/// `docs_per_class` documents of each label, labels alternating 0, 1, 0, ...
/// Ids are `<id_prefix>-<n>`.
Dataset make_synthetic(const SyntheticSpec& spec, std::size_t docs_per_class, std::uint64_t seed,
                       const std::string& id_prefix);

}  // namespace misdetect
