#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"
#include "teaser/config_io.hpp"
#include "test_util.hpp"

using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "teaser");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = teaser::cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::vector<json> read_jsonl(const std::filesystem::path& p) {
  std::vector<json> out;
  std::istringstream in(slurp(p));
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

// Writes the tiny task and training configs and returns their paths.
std::pair<std::string, std::string> write_configs(const TempDir& dir) {
  spit(dir / "task.json", teaser::to_json(tiny_task_config()).dump());
  spit(dir / "train.json", teaser::to_json(tiny_train_config()).dump());
  return {(dir / "task.json").string(), (dir / "train.json").string()};
}

} // namespace

TEST_CASE("usage errors") {
  CHECK(run({}).code == teaser::cli::kExitUsage);
  CHECK(run({"frobnicate"}).code == teaser::cli::kExitUsage);
  CHECK(run({"train", "--data", "x"}).code == teaser::cli::kExitUsage);  // --galleries missing
  CHECK(run({"ablate", "--study", "L"}).code == teaser::cli::kExitUsage);
  CHECK(run({"gradcheck", "--seeds", "0"}).code == teaser::cli::kExitUsage);
  const Run r = run({"--bogus-flag"});
  CHECK(r.code == teaser::cli::kExitUsage);
  CHECK_FALSE(r.err.empty());
}

TEST_CASE("help lists the subcommands and global flags") {
  const Run r = run({"--help"});
  CHECK(r.code == teaser::cli::kExitOk);
  for (const char* word : {"synth-data", "build-gallery", "train", "generate", "eval", "gradcheck", "ablate",
                           "--seed", "--threads", "--quiet", "--out-dir"})
    CHECK_MESSAGE(r.out.find(word) != std::string::npos, word);
  const Run sub = run({"build-gallery", "--help"});
  CHECK(sub.code == teaser::cli::kExitOk);
  CHECK(sub.out.find("--rare-dist") != std::string::npos);
}

TEST_CASE("data errors exit with code 2") {
  TempDir dir("cli_err");
  spit(dir / "corpus.jsonl", "{\"id\": 0, \"text\": \"a\"\n");
  spit(dir / "c.emb", "nope");
  const Run r = run({"build-gallery", "--corpus", (dir / "corpus.jsonl").string(), "--embeddings",
                     (dir / "c.emb").string(), "--out", (dir / "g").string()});
  CHECK(r.code == teaser::cli::kExitData);
  CHECK(r.err.find("corpus.jsonl") != std::string::npos);
  CHECK(run({"generate", "--checkpoint", (dir / "missing").string(), "--galleries", (dir / "missing").string(),
             "--features", (dir / "missing.json").string()})
            .code == teaser::cli::kExitData);
}

TEST_CASE("gradcheck command prints the worst error") {
  const Run r = run({"gradcheck", "--seeds", "1"});
  CHECK(r.out.find("max relative error") != std::string::npos);
  CHECK(r.out.find("matmul") != std::string::npos);
  CHECK((r.code == teaser::cli::kExitOk || r.code == teaser::cli::kExitNumeric));
  CHECK(run({"--quiet", "gradcheck", "--seeds", "1", "--tolerance", "1e-30"}).code == teaser::cli::kExitNumeric);
}

TEST_CASE("end-to-end pipeline through the command line") {
  TempDir dir("cli_pipeline");
  const auto [task, train] = write_configs(dir);
  const std::string data = (dir / "data").string(), gal = (dir / "gal").string();

  REQUIRE(run({"--quiet", "synth-data", "--config", task, "--out", data}).code == 0);
  for (const char* f : {"train_corpus.jsonl", "train_corpus.emb", "test_features.json", "labels.json",
                        "test_references.jsonl", "synthetic_config.json"})
    CHECK_MESSAGE(std::filesystem::exists(dir / "data" / f), f);

  REQUIRE(run({"--quiet", "build-gallery", "--corpus", data + "/train_corpus.jsonl", "--embeddings",
               data + "/train_corpus.emb", "--clusters", "10", "--labels", data + "/labels.json", "--out", gal})
              .code == 0);
  CHECK(std::filesystem::exists(dir / "gal" / "rare_gallery.json"));

  const Run tr = run({"--quiet", "--seed", "3", "train", "--data", data, "--galleries", gal, "--config", train,
                      "--epochs", "2", "--out", (dir / "ckpt").string()});
  REQUIRE_MESSAGE(tr.code == 0, tr.err);
  const json history = json::parse(slurp(dir / "ckpt" / "history.json"));
  CHECK(history.at("epochs").size() == 2);
  const json manifest = json::parse(slurp(dir / "ckpt" / "manifest.json"));
  CHECK(manifest.at("metadata").at("epochs") == 2);
  CHECK(manifest.at("metadata").at("seed") == 3);
  CHECK(manifest.at("model").at("D") == 16);

  const Run gen = run({"--quiet", "generate", "--checkpoint", (dir / "ckpt").string(), "--galleries", gal,
                       "--features", data + "/test_features.json", "--labels", data + "/labels.json", "--tau-c", "0.3",
                       "--tau-r", "0.3", "--out", (dir / "gen.jsonl").string()});
  REQUIRE_MESSAGE(gen.code == 0, gen.err);
  const auto reports = read_jsonl(dir / "gen.jsonl");
  CHECK(reports.size() == tiny_task_config().n_test);
  for (const auto& r : reports) {
    CHECK(r.at("sentences").size() == r.at("entries").size());
    for (const auto& e : r.at("entries")) CHECK(e.at("selection_prob").get<double>() > 0.3);
  }

  const Run ev = run({"--quiet", "eval", "--generated", (dir / "gen.jsonl").string(), "--references",
                      data + "/test_references.jsonl", "--labels", data + "/labels.json", "--out",
                      (dir / "metrics.json").string()});
  REQUIRE_MESSAGE(ev.code == 0, ev.err);
  const json m = json::parse(slurp(dir / "metrics.json"));
  CHECK(m.at("studies") == tiny_task_config().n_test);
  for (const char* k : {"bleu1", "bleu4", "rouge_l", "precision", "recall", "f1"}) {
    CHECK(m.at(k).get<double>() >= 0.0);
    CHECK(m.at(k).get<double>() <= 1.0);
  }
  // Without labels the clinical efficacy fields are null.
  REQUIRE(run({"--quiet", "eval", "--generated", (dir / "gen.jsonl").string(), "--references",
               data + "/test_references.jsonl", "--out", (dir / "m2.json").string()})
              .code == 0);
  CHECK(json::parse(slurp(dir / "m2.json")).at("f1").is_null());

  // A second training run with the same seed reproduces the checkpoint bytes.
  REQUIRE(run({"--quiet", "--seed", "3", "train", "--data", data, "--galleries", gal, "--config", train, "--epochs",
               "2", "--out", (dir / "ckpt2").string()})
              .code == 0);
  CHECK(same_tree(dir / "ckpt", dir / "ckpt2"));
}

TEST_CASE("ablation command writes a table per study") {
  TempDir dir("cli_ablate");
  const auto [task, train] = write_configs(dir);
  const std::string data = (dir / "data").string();
  REQUIRE(run({"--quiet", "synth-data", "--config", task, "--out", data}).code == 0);
  const Run r = run({"--quiet", "--out-dir", dir.path().string(), "ablate", "--study", "components", "--data", data,
                     "--config", train, "--epochs", "1"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json j = json::parse(slurp(dir / "ablation_components.json"));
  std::string names;
  for (const auto& row : j.at("summary")) names += row.at("name").get<std::string>() + ";";
  CHECK(names.find("w/o TCL") != std::string::npos);
  CHECK(names.find("w/o Abstractor") != std::string::npos);
  CHECK(names.find("w/o rare queries") != std::string::npos);
  CHECK(slurp(dir / "ablation_components.txt").find("F1") != std::string::npos);
}
