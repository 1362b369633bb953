#include "commands.hpp"

#include <fstream>
#include <iostream>
#include <set>

#include "misdetect/checkpoint.hpp"
#include "misdetect/corpus.hpp"
#include "misdetect/error.hpp"
#include "misdetect/model.hpp"
#include "misdetect/synthetic.hpp"
#include "misdetect/tokenizer.hpp"

namespace misdetect::cli {

namespace {

const std::set<std::string> kRunKeys = {"mode",  "data",          "val_data",        "test_data",
                                        "split", "vocab",         "vocab_min_freq",  "vocab_max_size",
                                        "out",   "seed",          "shots_per_class", "max_seq_length",
                                        "encoder", "finetune",    "fewshot",         "mlm",
                                        "init_checkpoint", "compare_random_init"};

nlohmann::json read_json_file(const fs::path& path, const std::string& field) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string(), field);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(path.string() + ": " + e.what(), field);
  }
}

void write_json_file(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string(), "out");
  out << j.dump(2) << '\n';
}

void require_file(const fs::path& p, const std::string& field) {
  if (!fs::is_regular_file(p)) throw Error(field + " file not found: " + p.string(), field);
}

std::optional<fs::path> optional_path(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return fs::path(j[key].get<std::string>());
}

nlohmann::json path_or_null(const std::optional<fs::path>& p) {
  return p ? nlohmann::json(p->string()) : nlohmann::json(nullptr);
}

ProgressFn printer(bool quiet) {
  if (quiet) return {};
  return [](const std::string& line) { std::cout << line << std::endl; };
}

struct LoadedModel {
  Model model;
  Vocabulary vocab;
};

LoadedModel load_model(const fs::path& checkpoint, const fs::path& vocab) {
  require_file(checkpoint, "checkpoint");
  require_file(vocab, "vocab");
  LoadedModel lm{model_from_checkpoint(load_checkpoint(checkpoint)), Vocabulary::load(vocab)};
  if (lm.vocab.size() != lm.model.encoder.config.vocab_size) {
    throw Error("vocabulary has " + std::to_string(lm.vocab.size()) + " entries but the checkpoint expects " +
                    std::to_string(lm.model.encoder.config.vocab_size),
                "vocab");
  }
  return lm;
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error("run config must be a JSON object", "config");
  for (const auto& [k, v] : j.items()) {
    if (!kRunKeys.count(k)) throw Error("unknown config key '" + k + "'", k);
  }
  RunConfig c;
  c.mode = j.value("mode", c.mode);
  if (c.mode != "finetune" && c.mode != "fewshot" && c.mode != "mlm-pretrain") {
    throw Error("mode must be finetune, fewshot or mlm-pretrain", "mode");
  }
  if (!j.contains("data")) throw Error("config needs a data path", "data");
  c.data = j["data"].get<std::string>();
  c.val_data = optional_path(j, "val_data");
  c.test_data = optional_path(j, "test_data");
  if (j.contains("split")) {
    const auto& s = j["split"];
    c.split.train_fraction = s.value("train", c.split.train_fraction);
    c.split.val_fraction = s.value("val", c.split.val_fraction);
    c.split.test_fraction = s.value("test", c.split.test_fraction);
  }
  c.vocab = optional_path(j, "vocab");
  c.vocab_min_freq = j.value("vocab_min_freq", c.vocab_min_freq);
  c.vocab_max_size = j.value("vocab_max_size", c.vocab_max_size);
  c.init_checkpoint = optional_path(j, "init_checkpoint");
  c.compare_random_init = j.value("compare_random_init", c.compare_random_init);
  c.out = j.value("out", c.out.string());
  c.seed = j.value("seed", c.seed);
  if (j.contains("shots_per_class") && !j["shots_per_class"].is_null()) {
    c.shots_per_class = j["shots_per_class"].get<std::size_t>();
  }
  c.max_seq_length = j.value("max_seq_length", c.max_seq_length);
  if (j.contains("encoder")) c.encoder = EncoderConfig::from_json(j["encoder"]);
  if (j.contains("finetune")) c.finetune = FinetuneConfig::from_json(j["finetune"]);
  if (j.contains("fewshot")) c.fewshot = FewShotConfig::from_json(j["fewshot"]);
  if (j.contains("mlm")) c.mlm = MlmConfig::from_json(j["mlm"]);
  return c;
}

nlohmann::json RunConfig::to_json() const {
  auto enc = encoder.to_json();
  return {{"mode", mode},
          {"data", data.string()},
          {"val_data", path_or_null(val_data)},
          {"test_data", path_or_null(test_data)},
          {"split", {{"train", split.train_fraction}, {"val", split.val_fraction}, {"test", split.test_fraction}}},
          {"vocab", path_or_null(vocab)},
          {"vocab_min_freq", vocab_min_freq},
          {"vocab_max_size", vocab_max_size},
          {"init_checkpoint", path_or_null(init_checkpoint)},
          {"compare_random_init", compare_random_init},
          {"out", out.string()},
          {"seed", seed},
          {"shots_per_class", shots_per_class ? nlohmann::json(*shots_per_class) : nlohmann::json(nullptr)},
          {"max_seq_length", max_seq_length},
          {"encoder", enc},
          {"finetune", finetune.to_json()},
          {"fewshot", fewshot.to_json()},
          {"mlm", mlm.to_json()}};
}

void RunConfig::finalize() {
  split.seed = seed;
  finetune.seed = fewshot.seed = mlm.seed = seed;
  finetune.max_seq_length = fewshot.max_seq_length = mlm.max_seq_length = max_seq_length;
  finetune.validate();
  fewshot.validate();
  mlm.validate();
  split.validate();
  if (vocab_min_freq == 0) throw Error("vocab_min_freq must be positive", "vocab_min_freq");
  if (shots_per_class && *shots_per_class == 0) throw Error("shots_per_class must be positive", "shots_per_class");
  require_file(data, "data");
  if (val_data) require_file(*val_data, "val_data");
  if (test_data) require_file(*test_data, "test_data");
  if (vocab) require_file(*vocab, "vocab");
  if (init_checkpoint) require_file(*init_checkpoint, "init_checkpoint");
  if (out.empty()) throw Error("output directory must be set", "out");
}

int cmd_train(const fs::path& config_path, const TrainOverrides& overrides, bool quiet) {
  require_file(config_path, "config");
  auto cfg = RunConfig::from_json(read_json_file(config_path, "config"));
  if (overrides.seed) cfg.seed = *overrides.seed;
  if (overrides.data) cfg.data = *overrides.data;
  if (overrides.out) cfg.out = *overrides.out;
  if (overrides.shots_per_class) cfg.shots_per_class = *overrides.shots_per_class;
  cfg.finalize();
  const auto progress = printer(quiet);

  fs::create_directories(cfg.out);
  write_json_file(cfg.to_json(), cfg.out / "config.json");

  const auto all = load_jsonl(cfg.data);
  Dataset train, val, test;
  nlohmann::json split_info = nullptr;
  if (cfg.mode == "mlm-pretrain") {
    train = all;
  } else if (cfg.val_data) {
    train = all;
    val = load_jsonl(*cfg.val_data);
    if (cfg.test_data) test = load_jsonl(*cfg.test_data);
  } else {
    auto s = split_stratified(all, cfg.split);
    split_info = split_report(s);
    write_json_file(split_info, cfg.out / "split.json");
    write_jsonl(s.train, cfg.out / "train.jsonl");
    write_jsonl(s.val, cfg.out / "val.jsonl");
    write_jsonl(s.test, cfg.out / "test.jsonl");
    train = std::move(s.train);
    val = std::move(s.val);
    test = std::move(s.test);
    if (cfg.test_data) test = load_jsonl(*cfg.test_data);
  }

  const auto vocab =
      cfg.vocab ? Vocabulary::load(*cfg.vocab) : build_vocab(train.documents, cfg.vocab_min_freq, cfg.vocab_max_size);
  vocab.save(cfg.out / "vocab.json");

  std::optional<EncoderParameters<float>> init;
  if (cfg.init_checkpoint) init = model_from_checkpoint(load_checkpoint(*cfg.init_checkpoint)).encoder;
  const auto* init_ptr = init ? &*init : nullptr;

  Model model;
  TrainReport report;
  if (cfg.mode == "finetune") {
    auto r = finetune(train, val, vocab, cfg.encoder, cfg.finetune, init_ptr, progress);
    if (init && cfg.compare_random_init) {
      auto base = finetune(train, val, vocab, cfg.encoder, cfg.finetune, nullptr, progress);
      r.report.extra["random_init_val_metrics"] =
          base.report.val_metrics ? base.report.val_metrics->to_json() : nlohmann::json(nullptr);
    }
    model = std::move(r.model);
    report = std::move(r.report);
  } else if (cfg.mode == "fewshot") {
    const auto examples = cfg.shots_per_class ? take_shots_per_class(train, *cfg.shots_per_class) : train;
    auto r = fewshot_train(examples, vocab, cfg.encoder, cfg.fewshot, init_ptr, progress);
    model = std::move(r.model);
    report = std::move(r.report);
    report.extra["n_examples"] = examples.size();
    if (!val.empty()) report.val_metrics = evaluate_pipeline(model, val, vocab);
  } else {
    auto r = pretrain_mlm(train, vocab, cfg.encoder, cfg.mlm, progress);
    model.encoder = std::move(r.params);
    model.window = WindowConfig{cfg.max_seq_length};
    report = std::move(r.report);
  }
  if (!test.empty()) report.extra["test_metrics"] = evaluate_pipeline(model, test, vocab).to_json();
  report.extra["split"] = split_info;

  save_checkpoint(model_to_checkpoint(model, {{"mode", cfg.mode}, {"seed", cfg.seed}}), cfg.out / "checkpoint.json");
  write_json_file(report.to_json(), cfg.out / "report.json");

  if (!quiet) {
    if (report.val_metrics) std::cout << report.val_metrics->to_table(cfg.mode + " (val)");
    std::cout << "wrote " << (cfg.out / "checkpoint.json").string() << " and " << (cfg.out / "report.json").string()
              << '\n';
  }
  return 0;
}

int cmd_evaluate(const EvalOptions& opt) {
  require_file(opt.data, "data");
  const auto lm = load_model(opt.checkpoint, opt.vocab);
  auto ds = load_jsonl(opt.data);
  ds.require_labels("evaluation");
  if (opt.flip_labels) {
    for (auto& d : ds.documents) d.label = 1 - *d.label;
  }
  const auto report = evaluate_pipeline(lm.model, ds, lm.vocab);
  const auto table = report.to_table(opt.name);
  std::cout << table;
  if (opt.out) {
    fs::create_directories(*opt.out);
    write_json_file(report.to_json(), *opt.out / "metrics.json");
    std::ofstream(*opt.out / "metrics.txt") << table;
  }
  return 0;
}

int cmd_predict(const PredictOptions& opt) {
  require_file(opt.data, "data");
  const auto lm = load_model(opt.checkpoint, opt.vocab);
  const auto ds = load_jsonl(opt.data);
  std::ofstream file;
  if (opt.out) {
    file.open(*opt.out);
    if (!file) throw Error("cannot write " + opt.out->string(), "out");
  }
  std::ostream& out = opt.out ? file : std::cout;
  for (const auto& doc : ds.documents) {
    const auto p = predict_document(lm.model, lm.vocab, doc);
    nlohmann::json line = {{"id", p.id}, {"label", p.label}, {"probs", p.probs}, {"n_windows", p.n_windows}};
    if (opt.dump_windows) {
      auto& arr = line["windows"] = nlohmann::json::array();
      for (const auto& w : document_windows(lm.vocab, doc, lm.model.window)) {
        nlohmann::json wj = {{"index", w.index}, {"content_start", w.content_start},
                             {"content_length", w.content_length}};
        // Only the CLS head scores windows; few-shot heads see whole documents.
        if (!lm.model.head) wj["probs"] = forward_classify<float>(lm.model.encoder, w, false, 0).probs;
        arr.push_back(std::move(wj));
      }
    }
    out << line.dump() << '\n';
  }
  return 0;
}

int cmd_build_vocab(const fs::path& data, std::size_t min_freq, std::size_t max_size, const fs::path& out) {
  require_file(data, "data");
  const auto ds = load_jsonl(data);
  const auto v = build_vocab(ds.documents, min_freq, max_size);
  v.save(out);
  std::cout << "vocabulary of " << v.size() << " entries written to " << out.string() << '\n';
  return 0;
}

int cmd_make_synthetic(std::size_t docs_per_class, std::uint64_t seed, std::size_t min_tokens,
                       std::size_t max_tokens, const std::string& prefix, const fs::path& out) {
  SyntheticSpec spec;
  spec.min_tokens = min_tokens;
  spec.max_tokens = max_tokens;
  const auto ds = make_synthetic(spec, docs_per_class, seed, prefix);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_jsonl(ds, out);
  std::cout << ds.size() << " documents written to " << out.string() << '\n';
  return 0;
}

}  // namespace misdetect::cli
