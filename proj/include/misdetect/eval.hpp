#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "misdetect/encoder.hpp"

namespace misdetect {

/// Binary confusion counts; class 1 (misinformation) is the positive class.
struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

struct MetricsReport {
  double mcc = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
  double macro_f1 = 0.0;
  ConfusionMatrix confusion;
  std::size_t n_documents = 0;

  nlohmann::json to_json() const;
  /// Aligned plain-text table with MCC / Accuracy / F1 columns.
  std::string to_table(const std::string& row_name) const;
  bool operator==(const MetricsReport&) const = default;
};

struct DocumentVerdict {
  int label = 0;
  std::array<double, 2> probs{0.5, 0.5};
};

/// Mean of per-window probability vectors, argmax with ties going to class 0.
DocumentVerdict aggregate_document(std::span<const WindowLogits> windows);

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels);

/// MCC (0 when any denominator factor is 0), accuracy, binary F1 on class 1
/// (0 when tp = fp = fn = 0) and macro F1 over both classes.
MetricsReport compute_metrics(const ConfusionMatrix& cm);

}  // namespace misdetect
