#include "misdetect/trainers.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "misdetect/error.hpp"
#include "misdetect/rng.hpp"

namespace misdetect {
namespace {

// Stream identifiers mixed into the run seed.
constexpr std::uint64_t kStreamInit = 1;
constexpr std::uint64_t kStreamShuffle = 2;
constexpr std::uint64_t kStreamDropout = 3;
constexpr std::uint64_t kStreamPairs = 4;
constexpr std::uint64_t kStreamMask = 5;

ClipConfig clip_from_json(const nlohmann::json& j, ClipConfig c) {
  c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
  c.validate();
  return c;
}

void require_positive(std::size_t v, const char* field) {
  if (v == 0) throw Error(std::string(field) + " must be positive", field);
}

void check_both_classes(const Dataset& ds, const char* what) {
  const auto counts = ds.class_counts();
  if (counts[0] == 0 || counts[1] == 0) throw Error(std::string(what) + " needs documents of both classes", "data");
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void emit(const ProgressFn& progress, const char* fmt, auto... args) {
  if (!progress) return;
  char buf[256];
  std::snprintf(buf, sizeof buf, fmt, args...);
  progress(buf);
}

}  // namespace

std::vector<LabeledWindow> labeled_windows(const Dataset& ds, const Vocabulary& vocab, const WindowConfig& wcfg) {
  ds.require_labels("training");
  std::vector<LabeledWindow> out;
  for (const auto& doc : ds.documents) {
    for (auto& w : document_windows(vocab, doc, wcfg)) out.push_back({std::move(w), *doc.label});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configs

void FinetuneConfig::validate() const {
  require_positive(epochs, "epochs");
  require_positive(train_batch_size, "train_batch_size");
  require_positive(eval_batch_size, "eval_batch_size");
  adamw.validate();
  clip.validate();
  WindowConfig{max_seq_length}.validate();
}

nlohmann::json FinetuneConfig::to_json() const {
  auto j = adamw.to_json();
  j["epochs"] = epochs;
  j["train_batch_size"] = train_batch_size;
  j["eval_batch_size"] = eval_batch_size;
  j["optimizer"] = "AdamW";
  j["max_grad_norm"] = clip.max_grad_norm;
  j["max_seq_length"] = max_seq_length;
  j["seed"] = seed;
  return j;
}

FinetuneConfig FinetuneConfig::from_json(const nlohmann::json& j) {
  FinetuneConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.train_batch_size = j.value("train_batch_size", c.train_batch_size);
  c.eval_batch_size = j.value("eval_batch_size", c.eval_batch_size);
  c.adamw = AdamWConfig::from_json(j, c.adamw);
  c.clip = clip_from_json(j, c.clip);
  c.max_seq_length = j.value("max_seq_length", c.max_seq_length);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

void FewShotConfig::validate() const {
  require_positive(batch_size, "batch_size");
  require_positive(n_iterations, "n_iterations");
  require_positive(epochs, "epochs");
  require_positive(head_steps, "head_steps");
  if (loss != "cosine_similarity") throw Error("only the cosine_similarity loss is supported", "loss");
  if (!(head_lr > 0.0)) throw Error("head_lr must be positive", "head_lr");
  if (!(head_l2 >= 0.0)) throw Error("head_l2 must be non-negative", "head_l2");
  body_adamw.validate();
  clip.validate();
  WindowConfig{max_seq_length}.validate();
}

nlohmann::json FewShotConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"n_iterations", n_iterations},
          {"epochs", epochs},
          {"loss", loss},
          {"body_adamw", body_adamw.to_json()},
          {"max_grad_norm", clip.max_grad_norm},
          {"head_steps", head_steps},
          {"head_lr", head_lr},
          {"head_l2", head_l2},
          {"max_seq_length", max_seq_length},
          {"seed", seed}};
}

FewShotConfig FewShotConfig::from_json(const nlohmann::json& j) {
  FewShotConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.n_iterations = j.value("n_iterations", c.n_iterations);
  c.epochs = j.value("epochs", c.epochs);
  c.loss = j.value("loss", c.loss);
  if (j.contains("body_adamw")) c.body_adamw = AdamWConfig::from_json(j["body_adamw"], c.body_adamw);
  c.clip = clip_from_json(j, c.clip);
  c.head_steps = j.value("head_steps", c.head_steps);
  c.head_lr = j.value("head_lr", c.head_lr);
  c.head_l2 = j.value("head_l2", c.head_l2);
  c.max_seq_length = j.value("max_seq_length", c.max_seq_length);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

void MlmConfig::validate() const {
  if (!(mask_fraction >= 0.0 && mask_fraction <= 1.0)) throw Error("mask_fraction must lie in [0, 1]", "mask_fraction");
  require_positive(epochs, "epochs");
  require_positive(batch_size, "batch_size");
  adamw.validate();
  clip.validate();
  WindowConfig{max_seq_length}.validate();
}

nlohmann::json MlmConfig::to_json() const {
  auto j = adamw.to_json();
  j["mask_fraction"] = mask_fraction;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["max_grad_norm"] = clip.max_grad_norm;
  j["max_seq_length"] = max_seq_length;
  j["seed"] = seed;
  return j;
}

MlmConfig MlmConfig::from_json(const nlohmann::json& j) {
  MlmConfig c;
  c.mask_fraction = j.value("mask_fraction", c.mask_fraction);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.adamw = AdamWConfig::from_json(j, c.adamw);
  c.clip = clip_from_json(j, c.clip);
  c.max_seq_length = j.value("max_seq_length", c.max_seq_length);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json j{{"mode", mode},
                   {"seed", seed},
                   {"config", config},
                   {"epoch_losses", epoch_losses},
                   {"epochs", epoch_losses.size()},
                   {"wall_clock_seconds", wall_clock_seconds}};
  j["train_metrics"] = train_metrics ? train_metrics->to_json() : nlohmann::json(nullptr);
  j["val_metrics"] = val_metrics ? val_metrics->to_json() : nlohmann::json(nullptr);
  for (const auto& [k, v] : extra.items()) j[k] = v;
  return j;
}

// ---------------------------------------------------------------------------
// Fine-tuning

FinetuneResult finetune(const Dataset& train, const Dataset& val, const Vocabulary& vocab, EncoderConfig enc_cfg,
                        const FinetuneConfig& cfg, const EncoderParameters<float>* init, const ProgressFn& progress) {
  cfg.validate();
  if (train.empty()) throw Error("empty training set", "data");
  train.require_labels("training");
  check_both_classes(train, "fine-tuning");
  const auto start = std::chrono::steady_clock::now();

  enc_cfg.vocab_size = vocab.size();
  enc_cfg.max_positions = cfg.max_seq_length;
  const WindowConfig wcfg{cfg.max_seq_length};
  Model model{init ? *init : EncoderParameters<float>::initialize(enc_cfg, hash_keys({cfg.seed, kStreamInit})), wcfg,
              std::nullopt};
  if (!(model.encoder.config == enc_cfg)) throw Error("initial parameters do not match the encoder config", "init");

  auto windows = labeled_windows(train, vocab, wcfg);
  std::vector<std::size_t> order(windows.size());
  auto grads = EncoderParameters<float>::zeros(enc_cfg);
  AdamW<float> opt(cfg.adamw);

  TrainReport report;
  report.mode = "finetune";
  report.seed = cfg.seed;
  report.config = {{"finetune", cfg.to_json()}, {"encoder", enc_cfg.to_json()}};
  emit(progress, "fine-tuning on %zu windows from %zu documents", windows.size(), train.size());

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 rng(hash_keys({cfg.seed, kStreamShuffle, epoch}));
    shuffle(std::span<std::size_t>(order), rng);

    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.train_batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.train_batch_size);
      const double scale = 1.0 / static_cast<double>(end - b);
      grads.set_zero();
      for (std::size_t i = b; i < end; ++i) {
        const auto& lw = windows[order[i]];
        const auto seed = hash_keys({cfg.seed, kStreamDropout, step, i - b});
        epoch_loss += classify_loss_backward<float>(model.encoder, lw.window, lw.label, true, seed, scale, grads);
      }
      clip_global_norm(grads, cfg.clip);
      opt.step(model.encoder, grads);
      ++step;
    }
    epoch_loss /= static_cast<double>(order.size());
    if (!std::isfinite(epoch_loss)) throw DivergenceError("fine-tuning diverged (non-finite loss)", "loss");
    report.epoch_losses.push_back(epoch_loss);
    emit(progress, "epoch %zu/%zu  mean loss %.6f", epoch + 1, cfg.epochs, epoch_loss);
  }

  report.train_metrics = evaluate_pipeline(model, train, vocab);
  if (!val.empty()) report.val_metrics = evaluate_pipeline(model, val, vocab);
  report.extra["n_train_windows"] = windows.size();
  report.extra["optimizer_steps"] = step;
  report.wall_clock_seconds = seconds_since(start);
  return {std::move(model), std::move(report)};
}

// ---------------------------------------------------------------------------
// Few-shot

std::vector<ExamplePair> generate_pairs(std::span<const int> labels, std::size_t n_iterations, std::uint64_t seed) {
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw Error("labels must be 0 or 1", "label");
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  for (int c = 0; c < 2; ++c) {
    if (by_class[static_cast<std::size_t>(c)].size() < 2) {
      throw Error("few-shot training needs at least 2 examples of class " + std::to_string(c), "data");
    }
  }
  SplitMix64 rng(hash_keys({seed, kStreamPairs}));
  std::vector<ExamplePair> pairs;
  pairs.reserve(2 * labels.size() * n_iterations);
  for (std::size_t it = 0; it < n_iterations; ++it) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto& same = by_class[static_cast<std::size_t>(labels[i])];
      const auto& other = by_class[static_cast<std::size_t>(1 - labels[i])];
      // Draw from the same-class list with i removed.
      std::size_t j = same[rng.below(same.size() - 1)];
      if (j == i) j = same.back();
      pairs.push_back({i, j, 1});
      pairs.push_back({i, other[rng.below(other.size())], 0});
    }
  }
  shuffle(std::span<ExamplePair>(pairs), rng);
  return pairs;
}

LinearHead fit_linear_head(const std::vector<std::vector<double>>& features, std::span<const int> labels,
                           std::size_t steps, double lr, double l2) {
  if (features.empty() || features.size() != labels.size()) throw Error("head needs one label per feature", "data");
  const auto n = static_cast<Eigen::Index>(features.size());
  const auto d = static_cast<Eigen::Index>(features.front().size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(features[static_cast<std::size_t>(i)].size()) != d) {
      throw Error("feature vectors differ in length", "data");
    }
    x.row(i) = Eigen::Map<const Eigen::RowVectorXd>(features[static_cast<std::size_t>(i)].data(), d);
  }
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) y(i, labels[static_cast<std::size_t>(i)]) = 1.0;

  LinearHead head;
  head.weight = Eigen::MatrixXd::Zero(d, 2);
  Eigen::RowVector2d bias = Eigen::RowVector2d::Zero();
  for (std::size_t s = 0; s < steps; ++s) {
    Eigen::MatrixXd logits = x * head.weight;
    logits.rowwise() += bias;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m = logits.row(i).maxCoeff();
      logits.row(i) = (logits.row(i).array() - m).exp();
      logits.row(i) /= logits.row(i).sum();
    }
    const Eigen::MatrixXd d_logits = (logits - y) / static_cast<double>(n);
    head.weight -= lr * (x.transpose() * d_logits + 2.0 * l2 * head.weight);
    bias -= lr * d_logits.colwise().sum();
  }
  head.bias = {bias(0), bias(1)};
  if (!head.weight.allFinite() || !std::isfinite(bias(0)) || !std::isfinite(bias(1))) {
    throw DivergenceError("linear head fit diverged", "head_lr");
  }
  return head;
}

FewShotResult fewshot_train(const Dataset& examples, const Vocabulary& vocab, EncoderConfig enc_cfg,
                            const FewShotConfig& cfg, const EncoderParameters<float>* init, const ProgressFn& progress) {
  cfg.validate();
  if (examples.empty()) throw Error("empty training set", "data");
  examples.require_labels("few-shot training");
  const auto start = std::chrono::steady_clock::now();

  enc_cfg.vocab_size = vocab.size();
  enc_cfg.max_positions = cfg.max_seq_length;
  const WindowConfig wcfg{cfg.max_seq_length};
  Model model{init ? *init : EncoderParameters<float>::initialize(enc_cfg, hash_keys({cfg.seed, kStreamInit})), wcfg,
              std::nullopt};
  if (!(model.encoder.config == enc_cfg)) throw Error("initial parameters do not match the encoder config", "init");
  auto& enc = model.encoder;

  std::vector<int> labels;
  std::vector<std::vector<Window>> doc_windows;
  for (const auto& doc : examples.documents) {
    labels.push_back(*doc.label);
    doc_windows.push_back(document_windows(vocab, doc, wcfg));
  }
  const auto pairs = generate_pairs(labels, cfg.n_iterations, cfg.seed);
  emit(progress, "few-shot: %zu examples, %zu pairs", examples.size(), pairs.size());

  TrainReport report;
  report.mode = "fewshot";
  report.seed = cfg.seed;
  report.config = {{"fewshot", cfg.to_json()}, {"encoder", enc_cfg.to_json()}};

  auto grads = EncoderParameters<float>::zeros(enc_cfg);
  AdamW<float> opt(cfg.body_adamw);
  const std::size_t d = enc_cfg.d_model;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < pairs.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(pairs.size(), b + cfg.batch_size);
      // Embed each distinct document once, then route pair gradients back.
      std::vector<std::optional<std::vector<double>>> emb(examples.size());
      std::vector<std::vector<double>> d_emb(examples.size());
      for (std::size_t k = b; k < end; ++k) {
        for (const auto idx : {pairs[k].first, pairs[k].second}) {
          if (!emb[idx]) {
            emb[idx] = document_embedding(enc, doc_windows[idx]);
            d_emb[idx].assign(d, 0.0);
          }
        }
      }
      const double scale = 1.0 / static_cast<double>(end - b);
      std::vector<double> du(d), dv(d);
      for (std::size_t k = b; k < end; ++k) {
        const auto& pr = pairs[k];
        epoch_loss += cosine_similarity_loss_grad(*emb[pr.first], *emb[pr.second], pr.target, du, dv);
        for (std::size_t i = 0; i < d; ++i) {
          d_emb[pr.first][i] += scale * du[i];
          d_emb[pr.second][i] += scale * dv[i];
        }
      }
      grads.set_zero();
      std::vector<float> g(d);
      for (std::size_t idx = 0; idx < examples.size(); ++idx) {
        if (!emb[idx]) continue;
        const auto& wins = doc_windows[idx];
        for (std::size_t i = 0; i < d; ++i) g[i] = static_cast<float>(d_emb[idx][i] / static_cast<double>(wins.size()));
        for (const auto& w : wins) {
          ForwardCache<float> cache;
          forward_embed<float>(enc, w, &cache);
          embed_backward<float>(enc, cache, g, grads);
        }
      }
      clip_global_norm(grads, cfg.clip);
      opt.step(enc, grads);
    }
    epoch_loss /= static_cast<double>(pairs.size());
    if (!std::isfinite(epoch_loss)) throw DivergenceError("few-shot training diverged (non-finite loss)", "loss");
    report.epoch_losses.push_back(epoch_loss);
    emit(progress, "embedder epoch %zu/%zu  mean pair loss %.6f", epoch + 1, cfg.epochs, epoch_loss);
  }

  std::vector<std::vector<double>> features;
  for (const auto& wins : doc_windows) features.push_back(document_embedding(enc, wins));
  auto head = fit_linear_head(features, labels, cfg.head_steps, cfg.head_lr, cfg.head_l2);
  // Round to the checkpoint precision so in-memory and reloaded models agree.
  head.round_to_float();
  model.head = std::move(head);

  report.train_metrics = evaluate_pipeline(model, examples, vocab);
  report.extra["n_pairs"] = pairs.size();
  report.wall_clock_seconds = seconds_since(start);
  return {std::move(model), pairs.size(), std::move(report)};
}

// ---------------------------------------------------------------------------
// Masked-language-model pre-training

std::vector<std::size_t> choose_mask_positions(const Window& w, double fraction, std::uint64_t seed) {
  const std::size_t content = w.content_length;
  if (content == 0 || fraction <= 0.0) return {};
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(content))));
  std::vector<std::size_t> positions(content);
  std::iota(positions.begin(), positions.end(), std::size_t{1});
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(content - i));
    std::swap(positions[i], positions[j]);
  }
  positions.resize(k);
  std::sort(positions.begin(), positions.end());
  return positions;
}

MlmResult pretrain_mlm(const Dataset& corpus, const Vocabulary& vocab, EncoderConfig enc_cfg, const MlmConfig& cfg,
                       const ProgressFn& progress) {
  cfg.validate();
  if (corpus.empty()) throw Error("empty pre-training corpus", "data");
  const auto start = std::chrono::steady_clock::now();
  enc_cfg.vocab_size = vocab.size();
  enc_cfg.max_positions = cfg.max_seq_length;
  const WindowConfig wcfg{cfg.max_seq_length};
  auto params = EncoderParameters<float>::initialize(enc_cfg, hash_keys({cfg.seed, kStreamInit}));

  std::vector<Window> windows;
  for (const auto& doc : corpus.documents) {
    for (auto& w : document_windows(vocab, doc, wcfg)) windows.push_back(std::move(w));
  }
  std::vector<std::size_t> order(windows.size());
  auto grads = EncoderParameters<float>::zeros(enc_cfg);
  AdamW<float> opt(cfg.adamw);

  TrainReport report;
  report.mode = "mlm-pretrain";
  report.seed = cfg.seed;
  report.config = {{"mlm", cfg.to_json()}, {"encoder", enc_cfg.to_json()}};
  emit(progress, "MLM pre-training on %zu windows", windows.size());

  std::size_t step = 0;
  std::size_t applied = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 rng(hash_keys({cfg.seed, kStreamShuffle, epoch}));
    shuffle(std::span<std::size_t>(order), rng);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(end - b);
      grads.set_zero();
      bool any_masked = false;
      for (std::size_t i = b; i < end; ++i) {
        const auto& w = windows[order[i]];
        const auto positions = choose_mask_positions(w, cfg.mask_fraction, hash_keys({cfg.seed, kStreamMask, epoch, order[i]}));
        any_masked = any_masked || !positions.empty();
        const auto seed = hash_keys({cfg.seed, kStreamDropout, step, i - b});
        epoch_loss += mlm_loss_backward<float>(params, w, positions, true, seed, scale, grads);
      }
      // A batch without masked tokens has no objective; skip the update so
      // weight decay alone does not move the parameters.
      if (any_masked) {
        clip_global_norm(grads, cfg.clip);
        opt.step(params, grads);
        ++applied;
      }
      ++step;
    }
    epoch_loss /= static_cast<double>(std::max<std::size_t>(1, order.size()));
    if (!std::isfinite(epoch_loss)) throw DivergenceError("MLM pre-training diverged (non-finite loss)", "loss");
    report.epoch_losses.push_back(epoch_loss);
    emit(progress, "MLM epoch %zu/%zu  mean loss %.6f", epoch + 1, cfg.epochs, epoch_loss);
  }
  report.extra["n_windows"] = windows.size();
  report.extra["optimizer_steps"] = applied;
  report.wall_clock_seconds = seconds_since(start);
  return {std::move(params), std::move(report)};
}

Dataset take_shots_per_class(const Dataset& ds, std::size_t shots) {
  ds.require_labels("shot selection");
  Dataset out;
  out.class_names = ds.class_names;
  std::array<std::size_t, 2> taken{0, 0};
  for (const auto& d : ds.documents) {
    auto& t = taken[static_cast<std::size_t>(*d.label)];
    if (t < shots) {
      out.documents.push_back(d);
      ++t;
    }
  }
  return out;
}

}  // namespace misdetect
