#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

#include "recad/errors.hpp"
#include "recad/experiment.hpp"

using namespace recad;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.seeds = {1};
  cfg.train_steps = 12000;
  cfg.test_steps = 3000;
  cfg.gvar_epochs = 2;
  cfg.hidden = 16;
  cfg.recourse_epochs = 2;
  cfg.baseline_epochs = 1;
  cfg.models = {"recad", "var", "null"};
  return cfg;
}

}  // namespace

TEST_CASE("config text round trips") {
  ExperimentConfig cfg;
  cfg.dataset = DatasetKind::LotkaVolterra;
  cfg.anomaly = AnomalyKind::StructuralSeq;
  cfg.seeds = {3, 9};
  cfg.lambda_grid = {0.01, 0.1, 0.3, 1.0};
  cfg.models = {"recad", "lstm"};
  cfg.lv_eta = 2.75e-5;
  cfg.ablations = true;
  const std::string text = format_experiment_config(cfg);
  const auto back = parse_experiment_config(text);
  CHECK(format_experiment_config(back) == text);
  CHECK(back.dataset == DatasetKind::LotkaVolterra);
  CHECK(back.seeds == cfg.seeds);
  CHECK(back.lambda_grid == cfg.lambda_grid);
  CHECK(back.lv_eta == cfg.lv_eta);
  CHECK(back.ablations);

  const auto parsed = parse_experiment_config("schema: 1\n# comment\ndataset: linear\nseeds: 4, 5\n");
  CHECK(parsed.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK(parsed.train_steps == 20000);
}

TEST_CASE("config errors") {
  CHECK_THROWS(parse_experiment_config("dataset: linear\n"));
  CHECK_THROWS(parse_experiment_config("schema: 1\nwidth: 3\n"));
  CHECK_THROWS(parse_experiment_config("schema: 1\nquantile: 1.5\n"));
  CHECK_THROWS(parse_experiment_config("schema: 1\nmodels: recad, arima\n"));
  ExperimentConfig cfg = tiny_config();
  CHECK_THROWS_AS(lambda_sweep(cfg, {0.01, 0.1, 0.01}), InvalidArgument);
}

TEST_CASE("content hash is the git blob id") {
  CHECK(content_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(content_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST_CASE("tiny experiment runs end to end and reruns byte for byte") {
  const ExperimentConfig cfg = tiny_config();
  const auto a = run_experiment(cfg);
  REQUIRE(a.seeds.size() == 1);
  REQUIRE_MESSAGE(a.seeds[0].ok, a.seeds[0].failure);
  REQUIRE(a.seeds[0].detection.has_value());
  CHECK(a.seeds[0].models.size() == 3);
  for (const auto& m : a.seeds[0].models) {
    CHECK(m.flipping_ratio >= 0.0);
    CHECK(m.flipping_ratio <= 1.0);
    CHECK(m.action_step <= 10.0);
  }
  CHECK(a.seeds[0].models[2].flipping_ratio == 0.0);

  const fs::path dir = fs::temp_directory_path() / "recad_experiment_test";
  fs::remove_all(dir);
  const auto tables_a = write_experiment(a, dir / "a");
  const auto tables_b = write_experiment(run_experiment(cfg), dir / "b");
  REQUIRE(tables_a.size() == tables_b.size());
  for (std::size_t i = 0; i < tables_a.size(); ++i) CHECK(slurp(tables_a[i]) == slurp(tables_b[i]));
  CHECK(fs::exists(dir / "a" / "manifest.json"));
  CHECK(fs::exists(dir / "a" / "reports" / "seed_1.json"));
  fs::remove_all(dir);
}

TEST_CASE("failed seeds are recorded and tables still emitted") {
  ExperimentConfig cfg = tiny_config();
  // 10% of 2000 training steps leaves too few calibration scores.
  cfg.train_steps = 2000;
  const auto r = run_experiment(cfg);
  REQUIRE(r.seeds.size() == 1);
  CHECK_FALSE(r.seeds[0].ok);
  CHECK(r.seeds[0].failure.find("calibrate-detector") != std::string::npos);
  const fs::path dir = fs::temp_directory_path() / "recad_failed_test";
  fs::remove_all(dir);
  write_experiment(r, dir);
  CHECK(slurp(dir / "tables" / "per_seed.csv").find("1,failed") != std::string::npos);
  CHECK(slurp(dir / "manifest.json").find("seeds_failed") != std::string::npos);
  fs::remove_all(dir);
}
