#include "misdetect/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "misdetect/error.hpp"

namespace misdetect {

DocumentVerdict aggregate_document(std::span<const WindowLogits> windows) {
  if (windows.empty()) throw Error("cannot aggregate a document with no windows", "windows");
  // Sum in window-index order so the result does not depend on list order.
  std::vector<const WindowLogits*> ordered;
  for (const auto& w : windows) {
    if (w.doc_id != windows.front().doc_id) throw Error("windows belong to different documents", "windows");
    ordered.push_back(&w);
  }
  std::sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) {
    if (a->window_index != b->window_index) return a->window_index < b->window_index;
    return a->probs < b->probs;
  });
  std::array<double, 2> sum{0.0, 0.0};
  for (const auto* w : ordered) {
    sum[0] += w->probs[0];
    sum[1] += w->probs[1];
  }
  const auto n = static_cast<double>(windows.size());
  DocumentVerdict v;
  v.probs = {sum[0] / n, sum[1] / n};
  v.label = v.probs[1] > v.probs[0] ? 1 : 0;
  return v;
}

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) throw Error("prediction and label counts differ", "labels");
  if (preds.empty()) throw Error("empty evaluation set", "data");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int p = preds[i];
    const int y = labels[i];
    if ((p != 0 && p != 1) || (y != 0 && y != 1)) throw Error("labels must be 0 or 1", "labels");
    if (p == 1 && y == 1) ++cm.tp;
    else if (p == 1) ++cm.fp;
    else if (y == 1) ++cm.fn;
    else ++cm.tn;
  }
  return cm;
}

namespace {

double f1_score(std::size_t tp, std::size_t fp, std::size_t fn) {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

}  // namespace

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw Error("empty evaluation set", "data");
  MetricsReport r;
  r.confusion = cm;
  r.n_documents = cm.total();
  const auto tp = static_cast<double>(cm.tp);
  const auto fp = static_cast<double>(cm.fp);
  const auto fn = static_cast<double>(cm.fn);
  const auto tn = static_cast<double>(cm.tn);
  r.accuracy = (tp + tn) / static_cast<double>(cm.total());
  r.f1 = f1_score(cm.tp, cm.fp, cm.fn);
  r.macro_f1 = 0.5 * (r.f1 + f1_score(cm.tn, cm.fn, cm.fp));
  const double a = tp + fp, b = tp + fn, c = tn + fp, d = tn + fn;
  if (a == 0.0 || b == 0.0 || c == 0.0 || d == 0.0) {
    r.mcc = 0.0;
  } else {
    // Square roots taken pairwise to keep the product in range.
    r.mcc = (tp * tn - fp * fn) / (std::sqrt(a * b) * std::sqrt(c * d));
    r.mcc = std::clamp(r.mcc, -1.0, 1.0);
  }
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  return {{"mcc", mcc},
          {"accuracy", accuracy},
          {"f1", f1},
          {"macro_f1", macro_f1},
          {"n_documents", n_documents},
          {"confusion", {{"tp", confusion.tp}, {"fp", confusion.fp}, {"fn", confusion.fn}, {"tn", confusion.tn}}}};
}

std::string MetricsReport::to_table(const std::string& row_name) const {
  const int width = std::max<int>(8, static_cast<int>(row_name.size()));
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-*s  %8s  %8s  %8s  %6s\n", width, "Model", "MCC", "Accuracy", "F1", "N");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-*s  %8.4f  %8.4f  %8.4f  %6zu\n", width, row_name.c_str(), mcc, accuracy, f1,
                n_documents);
  out += buf;
  return out;
}

}  // namespace misdetect
