#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "misdetect/corpus.hpp"
#include "misdetect/encoder.hpp"
#include "misdetect/eval.hpp"
#include "misdetect/model.hpp"
#include "misdetect/optim.hpp"
#include "misdetect/tokenizer.hpp"

namespace misdetect {

/// Optional progress sink; receives one human-readable line per event.
using ProgressFn = std::function<void(const std::string&)>;

struct FinetuneConfig {
  std::size_t epochs = 5;
  std::size_t train_batch_size = 8;
  std::size_t eval_batch_size = 8;
  AdamWConfig adamw{};
  ClipConfig clip{};
  std::size_t max_seq_length = 128;
  std::uint64_t seed = 42;

  void validate() const;
  nlohmann::json to_json() const;
  static FinetuneConfig from_json(const nlohmann::json& j);
};

struct FewShotConfig {
  std::size_t batch_size = 16;
  std::size_t n_iterations = 5;
  std::size_t epochs = 1;
  std::string loss = "cosine_similarity";
  // Embedder optimizer; the rate is the common sentence-transformers default.
  AdamWConfig body_adamw{2e-5, 0.9, 0.999, 1e-8, 0.01};
  ClipConfig clip{};
  std::size_t head_steps = 1000;
  double head_lr = 0.1;
  double head_l2 = 1e-4;
  std::size_t max_seq_length = 128;
  std::uint64_t seed = 42;

  void validate() const;
  nlohmann::json to_json() const;
  static FewShotConfig from_json(const nlohmann::json& j);
};

struct MlmConfig {
  double mask_fraction = 0.15;
  std::size_t epochs = 1;
  std::size_t batch_size = 8;
  AdamWConfig adamw{1e-4, 0.9, 0.999, 1e-8, 0.01};
  ClipConfig clip{};
  std::size_t max_seq_length = 128;
  std::uint64_t seed = 42;

  void validate() const;
  nlohmann::json to_json() const;
  static MlmConfig from_json(const nlohmann::json& j);
};

struct TrainReport {
  std::string mode;
  std::uint64_t seed = 0;
  nlohmann::json config;
  std::vector<double> epoch_losses;
  std::optional<MetricsReport> train_metrics;
  std::optional<MetricsReport> val_metrics;
  double wall_clock_seconds = 0.0;
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
};

struct LabeledWindow {
  Window window;
  int label = 0;
};

/// Windows of every document, in dataset order, each carrying its
/// document's label.
std::vector<LabeledWindow> labeled_windows(const Dataset& ds, const Vocabulary& vocab, const WindowConfig& wcfg);

struct FinetuneResult {
  Model model;
  TrainReport report;
};

/// Window-level fine-tuning: every window inherits its document's label,
/// windows are reshuffled each epoch, and each mini-batch takes one
/// clipped AdamW step on the mean cross-entropy. `init` replaces the seeded
/// random initialization (e.g. with MLM pre-trained weights).
FinetuneResult finetune(const Dataset& train, const Dataset& val, const Vocabulary& vocab, EncoderConfig enc_cfg,
                        const FinetuneConfig& cfg, const EncoderParameters<float>* init = nullptr,
                        const ProgressFn& progress = {});

/// One contrastive training pair of example indices.
struct ExamplePair {
  std::size_t first = 0;
  std::size_t second = 0;
  int target = 0;  ///< 1 when both share a class
};

/// For each iteration and each example (in dataset order) draws one
/// same-class and one other-class partner, never the example itself, then
/// shuffles the full list.
std::vector<ExamplePair> generate_pairs(std::span<const int> labels, std::size_t n_iterations, std::uint64_t seed);

struct FewShotResult {
  Model model;
  std::size_t n_pairs = 0;
  TrainReport report;
};

/// Contrastive embedder training on document pairs followed by a linear
/// head fitted on frozen document embeddings.
FewShotResult fewshot_train(const Dataset& examples, const Vocabulary& vocab, EncoderConfig enc_cfg,
                            const FewShotConfig& cfg, const EncoderParameters<float>* init = nullptr,
                            const ProgressFn& progress = {});

/// Full-batch gradient descent on mean cross-entropy + l2 * |W|^2.
LinearHead fit_linear_head(const std::vector<std::vector<double>>& features, std::span<const int> labels,
                           std::size_t steps, double lr, double l2);

/// Uniformly chooses floor(fraction * content_length) content positions
/// (at least one when content exists and fraction > 0), sorted ascending.
std::vector<std::size_t> choose_mask_positions(const Window& w, double fraction, std::uint64_t seed);

struct MlmResult {
  EncoderParameters<float> params;
  TrainReport report;
};

MlmResult pretrain_mlm(const Dataset& corpus, const Vocabulary& vocab, EncoderConfig enc_cfg, const MlmConfig& cfg,
                       const ProgressFn& progress = {});

/// Keeps the first `shots` documents of each class in dataset order.
Dataset take_shots_per_class(const Dataset& ds, std::size_t shots);

}  // namespace misdetect
