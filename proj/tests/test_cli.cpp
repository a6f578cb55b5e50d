#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "flare/cli.hpp"
#include "flare/hash.hpp"

using namespace flare;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run flare_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "flare");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("flare-cli-" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

nlohmann::json read(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(flare_cli({}).code == cli::kExitUsage);
  CHECK(flare_cli({"bogus"}).code == cli::kExitUsage);
  CHECK(flare_cli({"synth"}).code == cli::kExitUsage);
  CHECK(flare_cli({"mutate-eval", "--bundle", "b", "--checkpoint", "c", "--level", "5"}).code == cli::kExitUsage);
  CHECK(flare_cli({"train", "--bundle", "b"}).code == cli::kExitUsage);
  CHECK(flare_cli({"--help"}).code == cli::kExitOk);
  CHECK(flare_cli({"--version"}).out.find(cli::kVersion) != std::string::npos);
}

TEST_CASE("runtime errors exit 1") {
  TempDir dir("errors");
  const auto r = flare_cli({"--workdir", dir.path.string(), "eval", "--bundle", "missing.json", "--checkpoint", "x"});
  CHECK(r.code == cli::kExitFailure);
  CHECK(r.err.find("error:") != std::string::npos);
  CHECK(flare_cli({"--workdir", dir.path.string(), "synth", "--structure", "category", "--jump-levels", "9", "--out",
                   "b.json"})
            .code == cli::kExitFailure);
}

TEST_CASE("train settings resolve as defaults < preset < config < flags") {
  TempDir dir("precedence");
  {
    std::ofstream cfg(dir.path / "cfg.json");
    cfg << R"({"lr": 0.005, "batch": 16, "loss": {"alpha": 0.7}})";
  }
  auto dry = [&](std::vector<std::string> extra) {
    std::vector<std::string> args = {"--workdir", dir.path.string(), "train", "--bundle", "unused.json", "--dry-run"};
    args.insert(args.end(), extra.begin(), extra.end());
    const auto r = flare_cli(args);
    REQUIRE(r.code == cli::kExitOk);
    return nlohmann::json::parse(r.out);
  };
  const auto preset = dry({"--preset", "synthetic-id"});
  CHECK(preset.at("preset") == "synthetic-id");
  CHECK(preset.at("lr") == 2e-3);
  const auto config = dry({"--preset", "synthetic-id", "--config", "cfg.json"});
  CHECK(config.at("lr") == 0.005);
  CHECK(config.at("batch") == 16);
  CHECK(config.at("loss").at("alpha") == 0.7);
  CHECK(config.at("total_steps") == preset.at("total_steps"));
  const auto flags = dry({"--preset", "synthetic-id", "--config", "cfg.json", "--lr", "0.1", "--no-contrastive"});
  CHECK(flags.at("lr") == 0.1);
  CHECK(flags.at("batch") == 16);
  CHECK(flags.at("loss").at("contrastive_enabled") == false);
}

TEST_CASE("synth, train and eval from the command line") {
  TempDir dir("pipeline");
  const auto wd = dir.path.string();
  REQUIRE(flare_cli({"--workdir", wd, "synth", "--structure", "category", "--items", "48", "--users", "60", "--out",
                     "corpus.json"})
              .code == cli::kExitOk);
  const auto bundle = read(dir.path / "corpus.json");
  CHECK(bundle.at("meta").at("manifest").at("command") == "synth");
  const auto args = bundle.at("meta").at("manifest").at("arguments");
  CHECK(args.at(0) == "synth");
  CHECK(std::find(args.begin(), args.end(), wd) == args.end());

  const auto train = flare_cli({"--workdir", wd, "train", "--bundle", "corpus.json", "--preset",
                                "synthetic-critique", "--steps", "4", "--batch", "8", "--checkpoint-every", "2",
                                "--out", "run"});
  REQUIRE(train.code == cli::kExitOk);
  CHECK(fs::exists(dir.path / "run" / "final.ckpt"));
  CHECK(fs::exists(dir.path / "run" / "checkpoints" / "step-0000002.ckpt"));
  const auto manifest = read(dir.path / "run" / "manifest.json");
  CHECK(manifest.at("inputs").at("bundle").at("sha256") == sha256_file(dir.path / "corpus.json"));
  CHECK(manifest.at("outputs").at("final.ckpt") == sha256_file(dir.path / "run" / "final.ckpt"));
  std::ifstream log(dir.path / "run" / "train_log.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(log, line);) ++lines;
  CHECK(lines == 4);

  const auto eval = flare_cli({"--workdir", wd, "eval", "--bundle", "corpus.json", "--checkpoint", "run/final.ckpt",
                               "--critique", "precise", "--queries", "--out", "report.json", "--csv", "report.csv"});
  REQUIRE(eval.code == cli::kExitOk);
  const auto report = read(dir.path / "report.json");
  CHECK(report.at("n_queries") == 60);
  CHECK(report.at("queries").size() == 60);
  CHECK(report.at("manifest").at("inputs").at("checkpoint").at("sha256") ==
        sha256_file(dir.path / "run" / "final.ckpt"));
  CHECK(eval.out.find("cat_ndcg@10") != std::string::npos);

  const auto mutate = flare_cli({"--workdir", wd, "mutate-eval", "--bundle", "corpus.json", "--checkpoint",
                                 "run/final.ckpt", "--level", "2", "--min-items", "1"});
  CHECK(mutate.code == cli::kExitOk);
}

TEST_CASE("grad-check subcommand") {
  const auto r = flare_cli({"grad-check"});
  CHECK(r.code == cli::kExitOk);
  CHECK(r.out.find("PASS") != std::string::npos);
}
