#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "commands.hpp"
#include "misdetect/error.hpp"

namespace {

int report_error(const std::string& message, const std::string& field, int code) {
  nlohmann::json j = {{"error", message}, {"field", field}, {"exit_code", code}};
  std::cerr << j.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace misdetect::cli;
  CLI::App app{"Long-document misinformation classifier"};
  app.require_subcommand(1);

  std::string config_path;
  TrainOverrides overrides;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Train a model from a JSON run config");
  train->add_option("config", config_path, "Run config JSON")->required();
  train->add_option("--seed", overrides.seed, "Override the run seed");
  train->add_option("--data", overrides.data, "Override the labeled data path");
  train->add_option("--out", overrides.out, "Override the output directory");
  train->add_option("--shots-per-class", overrides.shots_per_class, "Few-shot examples kept per class");
  train->add_flag("--quiet", quiet, "No progress output");

  EvalOptions eval;
  std::string eval_out;
  auto* evaluate = app.add_subcommand("evaluate", "Score a labeled dataset");
  evaluate->add_option("--checkpoint", eval.checkpoint, "Checkpoint manifest")->required();
  evaluate->add_option("--vocab", eval.vocab, "Vocabulary JSON")->required();
  evaluate->add_option("--data", eval.data, "Labeled JSONL")->required();
  evaluate->add_option("--out", eval_out, "Directory for metrics.json and metrics.txt");
  evaluate->add_option("--name", eval.name, "Row label in the table");
  evaluate->add_flag("--flip-labels", eval.flip_labels, "Invert gold labels (debugging)");

  PredictOptions pred;
  std::string pred_out;
  auto* predict = app.add_subcommand("predict", "Write one JSON prediction per document");
  predict->add_option("--checkpoint", pred.checkpoint, "Checkpoint manifest")->required();
  predict->add_option("--vocab", pred.vocab, "Vocabulary JSON")->required();
  predict->add_option("--data", pred.data, "JSONL, labels optional")->required();
  predict->add_option("--out", pred_out, "Output JSONL (default stdout)");
  predict->add_flag("--dump-windows", pred.dump_windows, "Include per-window geometry and scores");

  std::string vocab_data, vocab_out;
  std::size_t min_freq = 1, max_size = 30000;
  auto* build_vocab = app.add_subcommand("build-vocab", "Build a vocabulary from training documents");
  build_vocab->add_option("--data", vocab_data, "JSONL")->required();
  build_vocab->add_option("--min-freq", min_freq, "Minimum token count")->capture_default_str();
  build_vocab->add_option("--max-size", max_size, "Maximum entries including specials")->capture_default_str();
  build_vocab->add_option("--out", vocab_out, "Vocabulary JSON")->required();

  std::size_t docs_per_class = 100, min_tokens = 300, max_tokens = 800;
  std::uint64_t synth_seed = 1;
  std::string prefix = "doc", synth_out;
  auto* synth = app.add_subcommand("make-synthetic", "Generate the two-class keyword corpus");
  synth->add_option("--docs-per-class", docs_per_class)->capture_default_str();
  synth->add_option("--seed", synth_seed)->capture_default_str();
  synth->add_option("--min-tokens", min_tokens)->capture_default_str();
  synth->add_option("--max-tokens", max_tokens)->capture_default_str();
  synth->add_option("--prefix", prefix)->capture_default_str();
  synth->add_option("--out", synth_out, "Output JSONL")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(e.what(), "arguments", 1);
  }

  try {
    if (*train) return cmd_train(config_path, overrides, quiet);
    if (*evaluate) {
      if (!eval_out.empty()) eval.out = eval_out;
      return cmd_evaluate(eval);
    }
    if (*predict) {
      if (!pred_out.empty()) pred.out = pred_out;
      return cmd_predict(pred);
    }
    if (*build_vocab) return cmd_build_vocab(vocab_data, min_freq, max_size, vocab_out);
    if (*synth) return cmd_make_synthetic(docs_per_class, synth_seed, min_tokens, max_tokens, prefix, synth_out);
  } catch (const misdetect::Error& e) {
    return report_error(e.what(), e.field(), 1);
  } catch (const nlohmann::json::exception& e) {
    return report_error(e.what(), "config", 1);
  } catch (const std::exception& e) {
    return report_error(e.what(), "", 2);
  }
  return 2;
}
