#include "misdetect/model.hpp"

#include "misdetect/error.hpp"

namespace misdetect {

std::array<double, 2> LinearHead::logits(std::span<const double> embedding) const {
  if (static_cast<Eigen::Index>(embedding.size()) != weight.rows()) {
    throw Error("embedding size differs from head input size", "head");
  }
  std::array<double, 2> out = bias;
  for (std::size_t i = 0; i < embedding.size(); ++i) {
    out[0] += embedding[i] * weight(static_cast<Eigen::Index>(i), 0);
    out[1] += embedding[i] * weight(static_cast<Eigen::Index>(i), 1);
  }
  return out;
}

void LinearHead::round_to_float() {
  for (Eigen::Index i = 0; i < weight.size(); ++i) weight.data()[i] = static_cast<float>(weight.data()[i]);
  bias[0] = static_cast<float>(bias[0]);
  bias[1] = static_cast<float>(bias[1]);
}

void Model::validate() const {
  window.validate();
  if (encoder.config.max_positions != window.max_seq_length) {
    throw Error("encoder max_positions differs from max_seq_length", "max_seq_length");
  }
  if (head && (head->weight.rows() != static_cast<Eigen::Index>(encoder.config.d_model) || head->weight.cols() != 2)) {
    throw Error("few-shot head shape does not match the encoder", "head");
  }
}

std::vector<Window> document_windows(const Vocabulary& vocab, const Document& doc, const WindowConfig& cfg) {
  return make_windows(encode(vocab, doc.text, doc.id), cfg);
}

std::vector<double> document_embedding(const EncoderParameters<float>& p, std::span<const Window> windows) {
  std::vector<double> sum(p.config.d_model, 0.0);
  for (const auto& w : windows) {
    const auto e = forward_embed<float>(p, w);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += e[i];
  }
  for (auto& x : sum) x /= static_cast<double>(windows.size());
  return sum;
}

DocumentPrediction predict_document(const Model& model, const Vocabulary& vocab, const Document& doc) {
  const auto windows = document_windows(vocab, doc, model.window);
  DocumentPrediction out;
  out.id = doc.id;
  out.n_windows = windows.size();
  if (model.head) {
    out.probs = softmax2(model.head->logits(document_embedding(model.encoder, windows)));
    out.label = out.probs[1] > out.probs[0] ? 1 : 0;
  } else {
    std::vector<WindowLogits> scored;
    scored.reserve(windows.size());
    for (const auto& w : windows) scored.push_back(forward_classify<float>(model.encoder, w, false, 0));
    const auto verdict = aggregate_document(scored);
    out.label = verdict.label;
    out.probs = verdict.probs;
  }
  return out;
}

MetricsReport evaluate_pipeline(const Model& model, const Dataset& ds, const Vocabulary& vocab,
                                std::vector<DocumentPrediction>* predictions) {
  if (ds.empty()) throw Error("empty evaluation set", "data");
  ds.require_labels("evaluation");
  if (vocab.size() != model.encoder.config.vocab_size) {
    throw Error("vocabulary size " + std::to_string(vocab.size()) + " differs from checkpoint vocab_size " +
                    std::to_string(model.encoder.config.vocab_size),
                "vocab");
  }
  std::vector<int> preds;
  std::vector<int> labels;
  for (const auto& doc : ds.documents) {
    auto pred = predict_document(model, vocab, doc);
    preds.push_back(pred.label);
    labels.push_back(*doc.label);
    if (predictions) predictions->push_back(std::move(pred));
  }
  return compute_metrics(confusion(preds, labels));
}

Checkpoint model_to_checkpoint(const Model& model, nlohmann::json extra_meta) {
  model.validate();
  Checkpoint ckpt;
  ckpt.meta = std::move(extra_meta);
  ckpt.meta["encoder"] = model.encoder.config.to_json();
  ckpt.meta["window"] = {{"max_seq_length", model.window.max_seq_length},
                         {"overlap_num", model.window.overlap_num},
                         {"overlap_den", model.window.overlap_den}};
  ckpt.meta["classifier"] = model.head ? "fewshot_head" : "cls_head";
  ckpt.tensors = to_named_tensors(model.encoder);
  if (model.head) {
    NamedTensor w{"fewshot_head.weight", static_cast<std::size_t>(model.head->weight.rows()), 2, {}};
    for (Eigen::Index r = 0; r < model.head->weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < 2; ++c) w.values.push_back(static_cast<float>(model.head->weight(r, c)));
    }
    NamedTensor b{"fewshot_head.bias", 1, 2,
                  {static_cast<float>(model.head->bias[0]), static_cast<float>(model.head->bias[1])}};
    ckpt.tensors.push_back(std::move(w));
    ckpt.tensors.push_back(std::move(b));
  }
  return ckpt;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model model{params_from_checkpoint(ckpt), {}, std::nullopt};
  const auto& win = ckpt.meta.at("window");
  model.window.max_seq_length = win.at("max_seq_length").get<std::size_t>();
  model.window.overlap_num = win.value("overlap_num", model.window.overlap_num);
  model.window.overlap_den = win.value("overlap_den", model.window.overlap_den);
  if (ckpt.meta.value("classifier", "cls_head") == "fewshot_head") {
    const auto* w = ckpt.find("fewshot_head.weight");
    const auto* b = ckpt.find("fewshot_head.bias");
    if (!w || !b || w->cols != 2 || b->values.size() != 2) throw Error("checkpoint few-shot head is incomplete", "checkpoint");
    LinearHead head;
    head.weight.resize(static_cast<Eigen::Index>(w->rows), 2);
    for (std::size_t r = 0; r < w->rows; ++r) {
      for (std::size_t c = 0; c < 2; ++c) {
        head.weight(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = w->values[r * 2 + c];
      }
    }
    head.bias = {b->values[0], b->values[1]};
    model.head = std::move(head);
  }
  model.validate();
  return model;
}

}  // namespace misdetect
