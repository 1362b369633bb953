#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "misdetect/error.hpp"
#include "misdetect/eval.hpp"
#include "misdetect/model.hpp"
#include "misdetect/rng.hpp"
#include "misdetect/trainers.hpp"
#include "metrics_oracle.hpp"

using namespace misdetect;
using misdetect::testing::metrics_oracle;

namespace {

WindowLogits window(std::size_t index, double p1, const std::string& doc = "d") {
  WindowLogits w;
  w.doc_id = doc;
  w.window_index = index;
  w.probs = {1.0 - p1, p1};
  return w;
}

}  // namespace

TEST_CASE("aggregate_document examples") {
  const std::vector<WindowLogits> one{window(0, 0.7)};
  auto v = aggregate_document(one);
  CHECK(v.label == 1);
  CHECK(v.probs[0] == doctest::Approx(0.3));
  CHECK(v.probs[1] == doctest::Approx(0.7));

  const std::vector<WindowLogits> two{window(0, 0.4), window(1, 0.8)};
  v = aggregate_document(two);
  CHECK(v.label == 1);
  CHECK(v.probs[0] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(v.probs[1] == doctest::Approx(0.6).epsilon(1e-15));

  const std::vector<WindowLogits> tie{window(0, 0.5), window(1, 0.5)};
  CHECK(aggregate_document(tie).label == 0);

  CHECK_THROWS_AS(aggregate_document(std::vector<WindowLogits>{}), Error);
  const std::vector<WindowLogits> mixed{window(0, 0.5, "a"), window(1, 0.5, "b")};
  CHECK_THROWS_AS(aggregate_document(mixed), Error);
}

TEST_CASE("aggregate_document ignores window order") {
  SplitMix64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<WindowLogits> ws;
    const auto n = 1 + rng.below(20);
    for (std::uint64_t i = 0; i < n; ++i) {
      WindowLogits w;
      w.doc_id = "d";
      w.window_index = i;
      w.logits = {3 * rng.normal(), 3 * rng.normal()};
      w.probs = softmax2(w.logits);
      ws.push_back(w);
    }
    const auto ref = aggregate_document(ws);
    shuffle(std::span<WindowLogits>(ws), rng);
    const auto got = aggregate_document(ws);
    CHECK(got.label == ref.label);
    CHECK(got.probs == ref.probs);
  }
}

TEST_CASE("confusion counts") {
  const std::vector<int> a{1, 0};
  CHECK(confusion(a, a) == ConfusionMatrix{1, 0, 0, 1});
  const std::vector<int> ones{1, 1}, zeros{0, 0};
  CHECK(confusion(ones, zeros) == ConfusionMatrix{0, 2, 0, 0});
  CHECK_THROWS_AS(confusion(ones, std::vector<int>{0}), Error);
  CHECK_THROWS_AS(confusion(std::vector<int>{}, std::vector<int>{}), Error);

  SplitMix64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> p(500), y(500);
    std::array<std::array<std::size_t, 2>, 2> tally{};
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = static_cast<int>(rng.below(2));
      y[i] = static_cast<int>(rng.below(2));
      ++tally[p[i]][y[i]];
    }
    const auto cm = confusion(p, y);
    CHECK(cm.tp == tally[1][1]);
    CHECK(cm.fp == tally[1][0]);
    CHECK(cm.fn == tally[0][1]);
    CHECK(cm.tn == tally[0][0]);
  }
}

TEST_CASE("compute_metrics examples") {
  auto r = compute_metrics({50, 0, 0, 50});
  CHECK(r.mcc == 1.0);
  CHECK(r.accuracy == 1.0);
  CHECK(r.f1 == 1.0);
  CHECK(r.n_documents == 100);

  // Everything predicted positive on a mixed set.
  r = compute_metrics({30, 20, 0, 0});
  CHECK(r.mcc == 0.0);
  CHECK(r.accuracy == 0.6);

  // Nothing positive anywhere: F1 falls back to 0.
  r = compute_metrics({0, 0, 0, 9});
  CHECK(r.f1 == 0.0);
  CHECK(r.mcc == 0.0);

  // 40-digit values: 1750 / sqrt(6187500), 85 / 100, 90 / 105.
  r = compute_metrics({45, 10, 5, 40});
  CHECK(std::abs(r.mcc - 0.7035264706814484528) < 1e-15);
  CHECK(r.accuracy == 0.85);
  CHECK(std::abs(r.f1 - 0.8571428571428571429) < 1e-15);
  const std::vector<int> preds = [] {
    std::vector<int> v;
    v.insert(v.end(), 45, 1);
    v.insert(v.end(), 5, 0);
    v.insert(v.end(), 10, 1);
    v.insert(v.end(), 40, 0);
    return v;
  }();
  std::vector<int> labels(100, 0);
  std::fill(labels.begin(), labels.begin() + 50, 1);
  const auto o = metrics_oracle(preds, labels);
  CHECK(std::abs(r.mcc - o.mcc) < 1e-15);
  CHECK(std::abs(r.f1 - o.f1) < 1e-15);

  CHECK_THROWS_AS(compute_metrics({}), Error);
}

TEST_CASE("metrics agree with the high-precision oracle") {
  SplitMix64 rng(13);
  for (int trial = 0; trial < 500; ++trial) {
    const auto n = 1 + rng.below(200);
    // Skewed probabilities so degenerate matrices show up regularly.
    const double p_pos = trial % 5 == 0 ? 0.0 : rng.uniform();
    const double p_lab = trial % 7 == 0 ? 1.0 : rng.uniform();
    std::vector<int> p(n), y(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      p[i] = rng.uniform() < p_pos ? 1 : 0;
      y[i] = rng.uniform() < p_lab ? 1 : 0;
    }
    const auto r = compute_metrics(confusion(p, y));
    const auto o = metrics_oracle(p, y);
    CHECK(std::abs(r.mcc - o.mcc) <= 1e-12);
    CHECK(std::abs(r.accuracy - o.accuracy) <= 1e-12);
    CHECK(std::abs(r.f1 - o.f1) <= 1e-12);
  }
}

TEST_CASE("metric ranges and class-swap symmetry") {
  SplitMix64 rng(14);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::uint64_t scale = trial % 3 == 0 ? 4 : 1000000;
    ConfusionMatrix cm{rng.below(scale), rng.below(scale), rng.below(scale), rng.below(scale)};
    if (cm.total() == 0) cm.tn = 1;
    const auto r = compute_metrics(cm);
    CHECK(r.mcc >= -1.0);
    CHECK(r.mcc <= 1.0);
    CHECK(r.f1 >= 0.0);
    CHECK(r.f1 <= 1.0);
    CHECK(r.accuracy == static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total()));
    const auto s = compute_metrics({cm.tn, cm.fn, cm.fp, cm.tp});
    CHECK(std::abs(s.mcc) == doctest::Approx(std::abs(r.mcc)).epsilon(1e-14));
    CHECK(s.accuracy == r.accuracy);
    CHECK(s.macro_f1 == doctest::Approx(r.macro_f1).epsilon(1e-14));
  }
}

TEST_CASE("report serialization") {
  const auto r = compute_metrics({45, 10, 5, 40});
  const auto j = r.to_json();
  CHECK(j["confusion"]["tp"] == 45);
  CHECK(j["n_documents"] == 100);
  CHECK(j["mcc"].get<double>() == r.mcc);
  const auto table = r.to_table("finetune");
  CHECK(table.find("MCC") != std::string::npos);
  CHECK(table.find("Accuracy") != std::string::npos);
  CHECK(table.find("F1") != std::string::npos);
  CHECK(table.find("0.8500") != std::string::npos);
}

TEST_CASE("evaluate_pipeline end to end on a tiny model") {
  Dataset ds;
  ds.documents = {{"x", "alpha alpha alpha beta", 1}, {"y", "gamma gamma delta gamma", 0}};
  const auto vocab = build_vocab(ds.documents, 1, 100);
  EncoderConfig cfg;
  cfg.vocab_size = vocab.size();
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.d_ff = 16;
  cfg.max_positions = 8;

  Model model;
  model.encoder = EncoderParameters<float>::initialize(cfg, 3);
  model.window = WindowConfig{8};

  SUBCASE("single document with a constant classifier") {
    model.encoder.classifier_w.setZero();
    model.encoder.classifier_b << 0.0f, 4.0f;
    Dataset one;
    one.documents = {ds.documents[0]};
    std::vector<DocumentPrediction> preds;
    const auto r = evaluate_pipeline(model, one, vocab, &preds);
    CHECK(r.accuracy == 1.0);
    REQUIRE(preds.size() == 1);
    CHECK(preds[0].label == 1);
    CHECK(preds[0].n_windows == 1);
  }

  SUBCASE("a perfect head and its label-flipped mirror") {
    std::vector<std::vector<double>> feats;
    std::vector<int> labels;
    for (const auto& d : ds.documents) {
      feats.push_back(document_embedding(model.encoder, document_windows(vocab, d, model.window)));
      labels.push_back(*d.label);
    }
    model.head = fit_linear_head(feats, labels, 1000, 0.1, 1e-4);
    CHECK(evaluate_pipeline(model, ds, vocab).mcc == 1.0);
    auto flipped = ds;
    for (auto& d : flipped.documents) d.label = 1 - *d.label;
    const auto r = evaluate_pipeline(model, flipped, vocab);
    CHECK(r.mcc == -1.0);
    CHECK(r.accuracy == 0.0);
  }

  SUBCASE("errors") {
    CHECK_THROWS_WITH_AS(evaluate_pipeline(model, Dataset{}, vocab), doctest::Contains("empty evaluation set"), Error);
    auto unlabeled = ds;
    unlabeled.documents[1].label.reset();
    CHECK_THROWS_AS(evaluate_pipeline(model, unlabeled, vocab), Error);
  }
}
