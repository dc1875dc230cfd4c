#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "ccica/dataset_io.hpp"
#include "ccica/error.hpp"

using namespace ccica;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("ccica_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Runs the CLI and returns its exit status; stdout goes to `capture` when given.
int run_cli(const std::string& args, const fs::path& capture = {}) {
  std::string cmd = std::string(CCICA_CLI_PATH) + " " + args;
  cmd += capture.empty() ? " > /dev/null 2>&1" : " > '" + capture.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

std::size_t count_train_rows(const fs::path& csv) {
  std::ifstream in(csv);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);)
    if (line.ends_with(",train")) ++n;
  return n;
}

}  // namespace

TEST_CASE("content hash follows the git blob convention", "[io]") {
  CHECK(content_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  CHECK(content_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("dataset CSV round trip is exact", "[io]") {
  GenerationConfig cfg;
  cfg.domains = 3;
  cfg.train_per_domain = 40;
  cfg.test_per_domain = 10;
  cfg.seed = 4;
  const auto gen = generate(cfg);
  const auto dir = scratch("roundtrip");
  write_dataset_csv((dir / "dataset.csv").string(), gen.data);
  const Dataset back = read_dataset_csv((dir / "dataset.csv").string(), 2);
  CHECK(back == gen.data);
  CHECK(file_content_hash((dir / "dataset.csv").string()) == content_hash(dataset_csv(gen.data)));

  write_sidecar((dir / "dataset.json").string(), gen);
  const Sidecar side = read_sidecar((dir / "dataset.json").string());
  CHECK(side.specs == gen.specs);
  CHECK(side.config.seed == 4);
  REQUIRE(side.mixing.weights.size() == 2);
  CHECK(side.mixing.weights[0] == gen.mixing.weights[0]);
  CHECK(side.mixing.weights[1] == gen.mixing.weights[1]);
  CHECK(read_scenario_specs((dir / "dataset.json").string()) == gen.specs);
  fs::remove_all(dir);
}

TEST_CASE("scenario specs JSON", "[io]") {
  const std::string text = R"({"domains": [
    {"domain": 0, "changing": [{"family": "gaussian", "mean": 0.5, "variance": 0.2}]},
    {"domain": 1, "changing": [{"family": "mixed-gaussian", "scale": 0.7, "shift": -1.0}]}]})";
  const auto specs = parse_specs_json(text);
  REQUIRE(specs.size() == 2);
  CHECK(specs[0].changing[0].mean == 0.5);
  CHECK(specs[1].changing[0].family == LatentFamily::mixed_gaussian);
  CHECK(parse_specs_json(specs_json(specs)) == specs);

  CHECK_THROWS_AS(parse_specs_json("{"), ConfigError);
  CHECK_THROWS_AS(parse_specs_json(R"({"domains": [{"domain": 0, "changing": [{"family": "cauchy"}]}]})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_specs_json(R"({"domains": [{"domain": 0, "changing": [{"family": "gaussian", "mean": 0, "variance": -1}]}]})"),
                  ConfigError);
  CHECK_THROWS_AS(read_file("/nonexistent/ccica"), ConfigError);
}

TEST_CASE("CLI generate is deterministic", "[io][cli]") {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  REQUIRE(run_cli("generate --seed 3 --out " + a.string(), a / "stdout.txt") == 0);
  REQUIRE(run_cli("generate --seed 3 --out " + b.string(), b / "stdout.txt") == 0);
  CHECK(fs::exists(a / "dataset.csv"));
  CHECK(fs::exists(a / "dataset.json"));
  CHECK(file_content_hash((a / "dataset.csv").string()) == file_content_hash((b / "dataset.csv").string()));
  CHECK(read_file((a / "stdout.txt").string()).find(file_content_hash((a / "dataset.csv").string())) !=
        std::string::npos);
  CHECK(count_train_rows(a / "dataset.csv") == 10000 * 5);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("CLI rejects invalid configurations", "[io][cli]") {
  const auto dir = scratch("bad");
  write_text(dir / "bad.json", R"({"generation": {"n": 2, "n_s": 3}})");
  CHECK(run_cli("generate --config " + (dir / "bad.json").string() + " --out " + dir.string()) == 2);
  write_text(dir / "typo.json", R"({"generaton": {}})");
  CHECK(run_cli("experiment --config " + (dir / "typo.json").string() + " --out " + dir.string()) == 2);
  CHECK(run_cli("train --regime sideways --out " + dir.string()) == 2);
  CHECK(run_cli("no-such-command") != 0);
  fs::remove_all(dir);
}

TEST_CASE("CLI train, eval and ident-check", "[io][cli]") {
  const auto dir = scratch("pipeline");
  write_text(dir / "cfg.json", R"({
    "generation": {"domains": 2, "train_per_domain": 200, "test_per_domain": 120},
    "training": {"epochs_per_domain": 2, "batch_size": 64, "hidden": 8},
    "evaluation": {"regressor_epochs": 20}})");
  const std::string cfg = " --config " + (dir / "cfg.json").string();
  REQUIRE(run_cli("generate --seed 1 --out " + (dir / "data").string() + cfg) == 0);
  REQUIRE(run_cli("train --seed 1 --regime baseline --data " + (dir / "data").string() + " --out " +
                  (dir / "run").string() + cfg) == 0);
  CHECK(fs::exists(dir / "run" / "train_log.csv"));
  CHECK(fs::exists(dir / "run" / "run_manifest.json"));
  fs::path ckpt;
  for (const auto& e : fs::directory_iterator(dir / "run" / "checkpoints")) ckpt = e.path();
  REQUIRE_FALSE(ckpt.empty());
  REQUIRE(run_cli("eval --checkpoint " + ckpt.string() + " --data " + (dir / "data").string() + " --out " +
                  (dir / "eval").string()) == 0);
  CHECK(read_file((dir / "eval" / "mcc_report.json").string()).find("\"mcc\"") != std::string::npos);

  REQUIRE(run_cli("ident-check --preset degenerate-partial --kind lemma1 --points 40 --out " +
                  (dir / "ident").string()) == 0);
  const std::string report = read_file((dir / "ident" / "ident_report.json").string());
  CHECK(report.find("\"full_rank_fraction\"") != std::string::npos);
  fs::remove_all(dir);
}
