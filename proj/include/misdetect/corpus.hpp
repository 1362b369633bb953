#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

namespace misdetect {

/// One labeled text unit. Label 1 is the misinformation class.
struct Document {
  std::string id;
  std::string text;
  std::optional<int> label;
};

struct Dataset {
  std::vector<Document> documents;
  std::array<std::string, 2> class_names{"valid", "misinformation"};

  std::size_t size() const { return documents.size(); }
  bool empty() const { return documents.empty(); }

  /// Number of documents carrying each label; unlabeled documents are skipped.
  std::array<std::size_t, 2> class_counts() const;

  /// Throws unless every document has a label.
  void require_labels(const std::string& context) const;
};

/// Train/val/test proportions and the shuffle seed.
struct SplitSpec {
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Splits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Reads one JSON object per line: {"id": str, "text": str, "label"?: 0|1}.
/// Blank lines are skipped. Errors carry the 1-based line number.
Dataset load_jsonl(const std::filesystem::path& path);
Dataset parse_jsonl(std::istream& in, const std::string& source = "<stream>");

void write_jsonl(const Dataset& ds, const std::filesystem::path& path);

/// Per-class shuffle (SplitMix64 seeded by spec.seed, classes drawn in label
/// order) followed by contiguous slicing. Slice sizes are
/// round(train_fraction * n) and round(val_fraction * n), the rest is test.
Splits split_stratified(const Dataset& ds, const SplitSpec& spec);

/// {"train": {"0": n, "1": n}, "val": ..., "test": ...}
nlohmann::json split_report(const Splits& splits);

}  // namespace misdetect
