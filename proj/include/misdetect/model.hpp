#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "misdetect/checkpoint.hpp"
#include "misdetect/corpus.hpp"
#include "misdetect/encoder.hpp"
#include "misdetect/eval.hpp"
#include "misdetect/tokenizer.hpp"
#include "misdetect/windowing.hpp"

namespace misdetect {

/// Two-class linear classifier over document embeddings (few-shot head).
struct LinearHead {
  Eigen::MatrixXd weight;  // d x 2
  std::array<double, 2> bias{0.0, 0.0};

  std::array<double, 2> logits(std::span<const double> embedding) const;
  /// Rounds every value to the nearest float, the checkpoint precision.
  void round_to_float();
};

/// A trained classifier: encoder, window geometry and, for few-shot models,
/// the linear head that replaces the CLS classifier.
struct Model {
  EncoderParameters<float> encoder;
  WindowConfig window;
  std::optional<LinearHead> head;

  void validate() const;
};

struct DocumentPrediction {
  std::string id;
  int label = 0;
  std::array<double, 2> probs{0.5, 0.5};
  std::size_t n_windows = 0;
};

std::vector<Window> document_windows(const Vocabulary& vocab, const Document& doc, const WindowConfig& cfg);

/// Mean of the per-window mean-pooled embeddings.
std::vector<double> document_embedding(const EncoderParameters<float>& p, std::span<const Window> windows);

/// Fine-tuned models score each window with the CLS head and aggregate the
/// window probabilities; few-shot models apply the head to the document
/// embedding.
DocumentPrediction predict_document(const Model& model, const Vocabulary& vocab, const Document& doc);

/// Encode, window, score and aggregate every document, then tally metrics.
/// Throws on unlabeled documents or an empty dataset.
MetricsReport evaluate_pipeline(const Model& model, const Dataset& ds, const Vocabulary& vocab,
                                std::vector<DocumentPrediction>* predictions = nullptr);

Checkpoint model_to_checkpoint(const Model& model, nlohmann::json extra_meta = nlohmann::json::object());
Model model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace misdetect
