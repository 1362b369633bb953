#include "misdetect/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "misdetect/error.hpp"
#include "misdetect/rng.hpp"

namespace misdetect {

std::array<std::size_t, 2> Dataset::class_counts() const {
  std::array<std::size_t, 2> counts{0, 0};
  for (const auto& d : documents) {
    if (d.label) ++counts[static_cast<std::size_t>(*d.label)];
  }
  return counts;
}

void Dataset::require_labels(const std::string& context) const {
  for (const auto& d : documents) {
    if (!d.label) throw Error(context + ": document '" + d.id + "' has no label", "label");
  }
}

void SplitSpec::validate() const {
  for (const double f : {train_fraction, val_fraction, test_fraction}) {
    if (!(f > 0.0 && f < 1.0)) throw Error("split fractions must each lie in (0, 1)", "split");
  }
  if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9) {
    throw Error("split fractions must sum to 1", "split");
  }
}

Dataset parse_jsonl(std::istream& in, const std::string& source) {
  Dataset ds;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = source + ":" + std::to_string(line_no);
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(where + ": malformed JSON (" + e.what() + ")", "data");
    }
    if (!obj.is_object()) throw Error(where + ": expected a JSON object", "data");
    if (!obj.contains("id") || !obj["id"].is_string() || obj["id"].get<std::string>().empty()) {
      throw Error(where + ": missing or empty string field 'id'", "id");
    }
    if (!obj.contains("text") || !obj["text"].is_string()) {
      throw Error(where + ": missing string field 'text'", "text");
    }
    Document doc{obj["id"].get<std::string>(), obj["text"].get<std::string>(), std::nullopt};
    if (obj.contains("label") && !obj["label"].is_null()) {
      const auto& l = obj["label"];
      if (!l.is_number_integer() || (l.get<long long>() != 0 && l.get<long long>() != 1)) {
        throw Error(where + ": label must be 0 or 1", "label");
      }
      doc.label = l.get<int>();
    }
    if (!seen.insert(doc.id).second) throw Error(where + ": duplicate id '" + doc.id + "'", "id");
    ds.documents.push_back(std::move(doc));
  }
  return ds;
}

Dataset load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open data file " + path.string(), "data");
  return parse_jsonl(in, path.string());
}

void write_jsonl(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string(), "out");
  for (const auto& d : ds.documents) {
    nlohmann::json j{{"id", d.id}, {"text", d.text}};
    if (d.label) j["label"] = *d.label;
    out << j.dump() << '\n';
  }
}

Splits split_stratified(const Dataset& ds, const SplitSpec& spec) {
  spec.validate();
  ds.require_labels("split");
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 0; i < ds.documents.size(); ++i) {
    by_class[static_cast<std::size_t>(*ds.documents[i].label)].push_back(i);
  }

  SplitMix64 rng(spec.seed);
  std::array<std::vector<std::size_t>, 3> parts;
  for (int c = 0; c < 2; ++c) {
    auto& idx = by_class[static_cast<std::size_t>(c)];
    if (idx.size() < 3) {
      throw Error("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                      " documents, fewer than the 3 splits",
                  "split");
    }
    shuffle(std::span<std::size_t>(idx), rng);
    const auto n = static_cast<double>(idx.size());
    const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * n));
    const auto n_val = static_cast<std::size_t>(std::llround(spec.val_fraction * n));
    const auto n_head = std::min(n_train + n_val, idx.size());
    parts[0].insert(parts[0].end(), idx.begin(), idx.begin() + static_cast<long>(n_train));
    parts[1].insert(parts[1].end(), idx.begin() + static_cast<long>(n_train),
                    idx.begin() + static_cast<long>(n_head));
    parts[2].insert(parts[2].end(), idx.begin() + static_cast<long>(n_head), idx.end());
  }

  std::array<Dataset, 3> out;
  for (std::size_t s = 0; s < 3; ++s) {
    std::sort(parts[s].begin(), parts[s].end());
    out[s].class_names = ds.class_names;
    for (const auto i : parts[s]) out[s].documents.push_back(ds.documents[i]);
  }
  return {std::move(out[0]), std::move(out[1]), std::move(out[2])};
}

nlohmann::json split_report(const Splits& splits) {
  auto counts = [](const Dataset& d) {
    const auto c = d.class_counts();
    return nlohmann::json{{"0", c[0]}, {"1", c[1]}};
  };
  return {{"train", counts(splits.train)}, {"val", counts(splits.val)}, {"test", counts(splits.test)}};
}

}  // namespace misdetect
