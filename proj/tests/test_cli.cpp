#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Scratch directory shared by every case; runs happen inside it.
const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "misdetect_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Result run(const std::string& args) {
  const auto out = workdir() / "stdout.txt";
  const auto err = workdir() / "stderr.txt";
  const std::string cmd = "cd '" + workdir().string() + "' && '" MISDETECT_BIN "' " + args + " > '" + out.string() +
                          "' 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

void write(const std::string& name, const std::string& content) { std::ofstream(workdir() / name) << content; }

// A small few-shot run: quick, and accurate enough to overfit its split.
const std::string kConfig = R"({
  "mode": "fewshot",
  "data": "synthetic.jsonl",
  "out": "run_a",
  "seed": 11,
  "max_seq_length": 128,
  "encoder": {"d_model": 32, "n_heads": 2, "n_layers": 1, "d_ff": 64}
})";

void ensure_trained() {
  static bool done = false;
  if (done) return;
  REQUIRE(run("make-synthetic --docs-per-class 10 --min-tokens 150 --max-tokens 300 --seed 3 --out synthetic.jsonl")
              .code == 0);
  write("config.json", kConfig);
  const auto r = run("train config.json --quiet");
  INFO(r.err);
  REQUIRE(r.code == 0);
  done = true;
}

std::string eval_args(const std::string& data) {
  return "evaluate --checkpoint run_a/checkpoint.json --vocab run_a/vocab.json --data " + data;
}

}  // namespace

TEST_CASE("train writes checkpoint, vocab, config echo and report") {
  ensure_trained();
  for (const char* f : {"checkpoint.json", "checkpoint.bin", "vocab.json", "config.json", "report.json", "split.json",
                        "train.jsonl", "val.jsonl", "test.jsonl"}) {
    CHECK_MESSAGE(fs::exists(workdir() / "run_a" / f), f);
  }
  const auto report = nlohmann::json::parse(slurp(workdir() / "run_a" / "report.json"));
  CHECK(report["seed"] == 11);
  CHECK(report["mode"] == "fewshot");
  CHECK(report["n_pairs"] == 2 * 16 * 5);
  const auto echo = nlohmann::json::parse(slurp(workdir() / "run_a" / "config.json"));
  CHECK(echo["seed"] == 11);
  CHECK(echo["fewshot"]["batch_size"] == 16);
}

TEST_CASE("override flags reach the run") {
  ensure_trained();
  const auto r = run("train config.json --quiet --seed 12 --out run_seed12 --shots-per-class 2");
  INFO(r.err);
  REQUIRE(r.code == 0);
  const auto report = nlohmann::json::parse(slurp(workdir() / "run_seed12" / "report.json"));
  CHECK(report["seed"] == 12);
  CHECK(report["n_examples"] == 4);
  CHECK(report["n_pairs"] == 2 * 4 * 5);
}

TEST_CASE("identical configs give byte-identical checkpoints") {
  ensure_trained();
  REQUIRE(run("train config.json --quiet --out run_b").code == 0);
  CHECK(slurp(workdir() / "run_a" / "checkpoint.bin") == slurp(workdir() / "run_b" / "checkpoint.bin"));
  CHECK(slurp(workdir() / "run_a" / "checkpoint.json") == slurp(workdir() / "run_b" / "checkpoint.json"));
  CHECK(slurp(workdir() / "run_a" / "vocab.json") == slurp(workdir() / "run_b" / "vocab.json"));
}

TEST_CASE("evaluate: overfit split, flipped labels, output files") {
  ensure_trained();
  const auto plain = run(eval_args("run_a/train.jsonl") + " --out eval_train --name fewshot");
  INFO(plain.err);
  REQUIRE(plain.code == 0);
  CHECK(plain.out.find("MCC") != std::string::npos);
  CHECK(plain.out.find("fewshot") != std::string::npos);
  const auto m = nlohmann::json::parse(slurp(workdir() / "eval_train" / "metrics.json"));
  CHECK(m["accuracy"] == 1.0);
  CHECK(fs::exists(workdir() / "eval_train" / "metrics.txt"));

  REQUIRE(run(eval_args("run_a/test.jsonl") + " --out eval_test").code == 0);
  REQUIRE(run(eval_args("run_a/test.jsonl") + " --out eval_flip --flip-labels").code == 0);
  const auto a = nlohmann::json::parse(slurp(workdir() / "eval_test" / "metrics.json"));
  const auto b = nlohmann::json::parse(slurp(workdir() / "eval_flip" / "metrics.json"));
  CHECK(b["mcc"].get<double>() == doctest::Approx(-a["mcc"].get<double>()));
  CHECK(b["accuracy"].get<double>() == doctest::Approx(1.0 - a["accuracy"].get<double>()));
}

TEST_CASE("predict keeps order and counts windows") {
  ensure_trained();
  std::string long_text;
  for (int i = 0; i < 512; ++i) long_text += (i ? " w" : "w") + std::to_string(i);
  write("predict.jsonl", "{\"id\":\"short\",\"text\":\"a few words\"}\n"
                         "{\"id\":\"long\",\"text\":\"" + long_text + "\"}\n"
                         "{\"id\":\"third\",\"text\":\"\"}\n");
  const auto r = run("predict --checkpoint run_a/checkpoint.json --vocab run_a/vocab.json --data predict.jsonl "
                     "--out predictions.jsonl --dump-windows");
  INFO(r.err);
  REQUIRE(r.code == 0);
  std::ifstream in(workdir() / "predictions.jsonl");
  std::vector<nlohmann::json> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(nlohmann::json::parse(line));
  REQUIRE(lines.size() == 3);
  CHECK(lines[0]["id"] == "short");
  CHECK(lines[1]["id"] == "long");
  CHECK(lines[2]["id"] == "third");
  CHECK(lines[0]["n_windows"] == 1);
  CHECK(lines[1]["n_windows"] == 16);
  CHECK(lines[1]["windows"].size() == 16);
  CHECK(lines[1]["windows"][15]["content_start"] == 512 - 126);
  for (const auto& l : lines) {
    const double p0 = l["probs"][0], p1 = l["probs"][1];
    CHECK(p0 + p1 == doctest::Approx(1.0));
    CHECK(l["label"] == (p1 > p0 ? 1 : 0));
  }
}

TEST_CASE("user errors exit 1 with a JSON diagnostic naming the field") {
  ensure_trained();
  auto field_of = [](const Result& r) { return nlohmann::json::parse(r.err)["field"].get<std::string>(); };

  auto r = run("train config.json --quiet --data missing.jsonl --out run_missing");
  CHECK(r.code == 1);
  CHECK(field_of(r) == "data");

  write("empty.jsonl", "");
  r = run(eval_args("empty.jsonl"));
  CHECK(r.code == 1);
  CHECK(nlohmann::json::parse(r.err)["error"] == "empty evaluation set");

  write("bad_key.json", R"({"data": "synthetic.jsonl", "epochs": 3})");
  r = run("train bad_key.json --quiet");
  CHECK(r.code == 1);
  CHECK(field_of(r) == "epochs");

  write("bad_mode.json", R"({"data": "synthetic.jsonl", "mode": "distill"})");
  r = run("train bad_mode.json --quiet");
  CHECK(r.code == 1);
  CHECK(field_of(r) == "mode");

  write("not_json.json", "{");
  r = run("train not_json.json --quiet");
  CHECK(r.code == 1);
  CHECK(field_of(r) == "config");

  write("small_vocab.jsonl", "{\"id\":\"a\",\"text\":\"one two\",\"label\":0}\n");
  REQUIRE(run("build-vocab --data small_vocab.jsonl --out small_vocab.json").code == 0);
  r = run("evaluate --checkpoint run_a/checkpoint.json --vocab small_vocab.json --data run_a/test.jsonl");
  CHECK(r.code == 1);
  CHECK(field_of(r) == "vocab");

  r = run("evaluate --checkpoint run_a/checkpoint.json");
  CHECK(r.code == 1);

  write("unlabeled.jsonl", "{\"id\":\"a\",\"text\":\"x\"}\n");
  r = run(eval_args("unlabeled.jsonl"));
  CHECK(r.code == 1);
}
