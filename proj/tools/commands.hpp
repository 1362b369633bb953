#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "misdetect/encoder.hpp"
#include "misdetect/trainers.hpp"

namespace misdetect::cli {

namespace fs = std::filesystem;

/// Everything one `train` invocation needs, read from a JSON file.
struct RunConfig {
  std::string mode = "finetune";  // finetune | fewshot | mlm-pretrain
  fs::path data;
  std::optional<fs::path> val_data;
  std::optional<fs::path> test_data;
  SplitSpec split{};
  std::optional<fs::path> vocab;
  std::size_t vocab_min_freq = 1;
  std::size_t vocab_max_size = 30000;
  std::optional<fs::path> init_checkpoint;
  bool compare_random_init = false;
  fs::path out = "run";
  std::uint64_t seed = 42;
  std::optional<std::size_t> shots_per_class;
  std::size_t max_seq_length = 128;
  EncoderConfig encoder{};
  FinetuneConfig finetune{};
  FewShotConfig fewshot{};
  MlmConfig mlm{};

  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  /// Pushes seed and max_seq_length into the mode configs and checks paths.
  void finalize();
};

struct TrainOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> data;
  std::optional<std::string> out;
  std::optional<std::size_t> shots_per_class;
};

int cmd_train(const fs::path& config_path, const TrainOverrides& overrides, bool quiet);

struct EvalOptions {
  fs::path checkpoint;
  fs::path vocab;
  fs::path data;
  std::optional<fs::path> out;
  std::string name = "model";
  bool flip_labels = false;
};

int cmd_evaluate(const EvalOptions& opt);

struct PredictOptions {
  fs::path checkpoint;
  fs::path vocab;
  fs::path data;
  std::optional<fs::path> out;
  bool dump_windows = false;
};

int cmd_predict(const PredictOptions& opt);

int cmd_build_vocab(const fs::path& data, std::size_t min_freq, std::size_t max_size, const fs::path& out);

int cmd_make_synthetic(std::size_t docs_per_class, std::uint64_t seed, std::size_t min_tokens,
                       std::size_t max_tokens, const std::string& prefix, const fs::path& out);

}  // namespace misdetect::cli
