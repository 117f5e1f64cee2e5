#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "doctest.h"
#include "dro/baselines.hpp"
#include "dro/bench.hpp"
#include "dro/errors.hpp"
#include "dro/model.hpp"
#include "json.hpp"
#include "test_util.hpp"

using dro::DatasetMatrix;
using dro::ExperimentConfig;
using dro::Mat;
using dro::ProblemSpec;
using dro::Trace;
using dro::UncertaintySpec;
using dro::Vec;

namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("dro_bench_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  return path.string();
}

std::string error_message(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

const char* kBaseConfig = R"json({
  "problem": {
    "synthetic": {"n": 12, "d": 3, "noise_sigma": 0.2, "seed": 7},
    "loss": "squared_error",
    "uncertainty": {"kind": "cvar", "theta": 0.5, "penalty": "chi2"},
    "mu": 1.0,
    "nu": 1.0
  },
  "optimizers": [
    {"name": "drago", "b": 3},
    {"name": "sgd_biased", "batch": 3, "learning_rate": 0.01}
  ],
  "seeds": [1, 2],
  "T_max": 30
})json";

}  // namespace

TEST_SUITE("bench") {

TEST_CASE("load_dataset reads features and regression targets") {
  const fs::path dir = scratch_dir("load_reg");
  const std::string path = write_file(
      dir / "data.csv", "f0,f1,target\n1,2,3\n4,5,6\n7,8,9\n");
  const DatasetMatrix data = dro::load_dataset(path, false);
  CHECK(data.n() == 3);
  CHECK(data.d() == 2);
  CHECK_FALSE(data.classification());
  Mat want(3, 2);
  want << 1, 2, 4, 5, 7, 8;
  CHECK((data.features - want).lpNorm<Eigen::Infinity>() == 0.0);
  Vec targets(3);
  targets << 3, 6, 9;
  CHECK((data.targets - targets).lpNorm<Eigen::Infinity>() == 0.0);
  fs::remove_all(dir);
}

TEST_CASE("load_dataset reads classification labels") {
  const fs::path dir = scratch_dir("load_cls");
  const std::string path =
      write_file(dir / "data.csv", "f0,label\n0.5,1\n-0.25,0\n");
  const DatasetMatrix data = dro::load_dataset(path, false);
  CHECK(data.classification());
  CHECK(data.classes[0] == 1);
  CHECK(data.classes[1] == 0);
  fs::remove_all(dir);
}

TEST_CASE("load_dataset tolerates CRLF line endings and blank lines") {
  const fs::path dir = scratch_dir("load_crlf");
  const std::string path = write_file(
      dir / "data.csv", "f0,target\r\n1,2\r\n\r\n3,4\r\n   \n");
  const DatasetMatrix data = dro::load_dataset(path, false);
  CHECK(data.n() == 2);
  CHECK(data.features(1, 0) == 3.0);
  fs::remove_all(dir);
}

TEST_CASE("load_dataset reports malformed input with line numbers") {
  const fs::path dir = scratch_dir("load_bad");
  const auto expect_error = [&](const std::string& name,
                                const std::string& content,
                                const std::string& needle) {
    const std::string path = write_file(dir / name, content);
    CHECK_THROWS_AS(dro::load_dataset(path, false), dro::config_error);
    const std::string msg =
        error_message([&] { dro::load_dataset(path, false); });
    CHECK(msg.find(needle) != std::string::npos);
  };
  expect_error("empty.csv", "", "empty file");
  expect_error("headeronly.csv", "f0,target\n", "no data rows");
  expect_error("badheader.csv", "f0,f1,value\n1,2,3\n", "last column");
  expect_error("badcell.csv", "f0,target\n1,x\n", ":2: cell 'x'");
  expect_error("badcount.csv", "f0,f1,target\n1,2\n", ":2: expected 3");
  expect_error("fraclabel.csv", "f0,label\n1,2.5\n", "nonnegative integer");
  expect_error("neglabel.csv", "f0,label\n1,-1\n", "nonnegative integer");
  expect_error("onecol.csv", "target\n1\n", "at least one feature");
  CHECK_THROWS_AS(dro::load_dataset((dir / "absent.csv").string(), false),
                  dro::config_error);
  fs::remove_all(dir);
}

TEST_CASE("standardize_features centers, scales, and zeroes constants") {
  DatasetMatrix data;
  data.features.resize(4, 3);
  data.features << 1, 5, 2, 2, 5, 4, 3, 5, 6, 4, 5, 8;
  data.targets = Vec::Zero(4);
  dro::standardize_features(data);
  for (Eigen::Index j : {Eigen::Index{0}, Eigen::Index{2}}) {
    const double mean = data.features.col(j).mean();
    const double var =
        (data.features.col(j).array() - mean).square().mean();
    CHECK(std::abs(mean) <= 1e-14);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(data.features.col(1).isZero(0.0));  // constant column

  // load_dataset applies the same transform when asked.
  const fs::path dir = scratch_dir("standardize");
  const std::string path = write_file(
      dir / "data.csv", "f0,target\n1,0\n2,0\n3,0\n");
  const DatasetMatrix loaded = dro::load_dataset(path, true);
  CHECK(std::abs(loaded.features.col(0).mean()) <= 1e-14);
  fs::remove_all(dir);
}

TEST_CASE("synthesize_problem is deterministic in the seed") {
  const DatasetMatrix a = dro::synthesize_problem(20, 4, 0.3, 123);
  const DatasetMatrix b = dro::synthesize_problem(20, 4, 0.3, 123);
  const DatasetMatrix c = dro::synthesize_problem(20, 4, 0.3, 124);
  CHECK((a.features - b.features).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((a.targets - b.targets).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((a.features - c.features).lpNorm<Eigen::Infinity>() > 0.0);
}

TEST_CASE("synthesize_problem with zero noise is exactly linear") {
  const DatasetMatrix data = dro::synthesize_problem(30, 3, 0.0, 5);
  const Vec w_ls = data.features.colPivHouseholderQr().solve(data.targets);
  CHECK((data.features * w_ls - data.targets).lpNorm<Eigen::Infinity>() <=
        1e-10);
}

TEST_CASE("synthesized noise has roughly the requested variance") {
  const double sigma = 0.5;
  double mean_var = 0.0;
  const int seeds = 10;
  for (int s = 0; s < seeds; ++s) {
    const DatasetMatrix data = dro::synthesize_problem(
        200, 3, sigma, static_cast<std::uint64_t>(1000 + s));
    const Vec w_ls = data.features.colPivHouseholderQr().solve(data.targets);
    mean_var += (data.features * w_ls - data.targets).squaredNorm() / 200.0;
  }
  mean_var /= seeds;
  CHECK(mean_var > 0.5 * sigma * sigma);
  CHECK(mean_var < 2.0 * sigma * sigma);
}

TEST_CASE("normalized_gap on a one-dimensional quadratic") {
  // P(w) = 0.5 (w - 2)^2 + 0.5 w^2: start value P(0) = 2, optimum P(1) = 1.
  ProblemSpec spec;
  spec.data.features = Mat::Ones(1, 1);
  spec.data.targets = Vec::Constant(1, 2.0);
  spec.uncertainty = UncertaintySpec::cvar(1.0);
  spec.mu = 1.0;
  spec.nu = 1.0;
  const dro::Constants c = dro::estimate_constants(spec);
  spec.loss.G = c.G;
  spec.loss.L = c.L;

  CHECK(dro::normalized_gap(spec, Vec::Zero(1), 1.0, 2.0) == 1.0);
  CHECK(dro::normalized_gap(spec, Vec::Constant(1, 1.0), 1.0, 2.0) == 0.0);
  CHECK(dro::normalized_gap(spec, Vec::Constant(1, 0.5), 1.0, 2.0) ==
        doctest::Approx(0.25).epsilon(1e-13));
  // A reference a hair above the optimum clamps meaningless negatives to 0.
  CHECK(dro::normalized_gap(spec, Vec::Constant(1, 1.0), 1.0 + 1e-13, 2.0) ==
        0.0);
  CHECK_THROWS_AS(dro::normalized_gap(spec, Vec::Zero(1), 2.0, 2.0),
                  dro::numeric_error);
}

TEST_CASE("parse_config fills defaults and hashes deterministically") {
  const ExperimentConfig cfg = dro::parse_config_json(kBaseConfig, {});
  CHECK(cfg.data.use_synthetic);
  CHECK(cfg.data.synthetic.n == 12);
  CHECK(cfg.data.synthetic.d == 3);
  CHECK(cfg.loss == "squared_error");
  CHECK(cfg.set_kind == "cvar");
  CHECK(cfg.theta == 0.5);
  CHECK(cfg.mu == 1.0);
  REQUIRE(cfg.optimizers.size() == 2);
  CHECK(cfg.optimizers[0].name == "drago");
  CHECK(cfg.optimizers[0].b == 3);
  CHECK(cfg.optimizers[1].name == "sgd_biased");
  CHECK(cfg.optimizers[1].batch == 3);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2});
  CHECK(cfg.T_max == 30);
  CHECK(cfg.gap_target == -1.0);
  CHECK(cfg.eval_every == 0);
  CHECK(cfg.out_dir == "out");
  CHECK(cfg.jobs == 1);
  CHECK(cfg.reference.enabled);
  CHECK(cfg.hash.size() == 16);
  CHECK(dro::parse_config_json(kBaseConfig, {}).hash == cfg.hash);
}

TEST_CASE("parse_config applies dotted overrides") {
  const ExperimentConfig base = dro::parse_config_json(kBaseConfig, {});
  const ExperimentConfig cfg = dro::parse_config_json(
      kBaseConfig, {"problem.mu=2.5", "problem.uncertainty.theta=0.9",
                    "optimizers.0.b=6", "optimizers.1.learning_rate=auto",
                    "out_dir=elsewhere"});
  CHECK(cfg.mu == 2.5);
  CHECK(cfg.theta == 0.9);
  CHECK(cfg.optimizers[0].b == 6);
  CHECK(cfg.optimizers[1].learning_rate == 0.0);  // "auto" -> tuned later
  CHECK(cfg.out_dir == "elsewhere");
  CHECK(cfg.hash != base.hash);

  CHECK_THROWS_AS(
      dro::parse_config_json(kBaseConfig, {"optimizers.7.b=2"}),
      dro::config_error);
  CHECK_THROWS_AS(dro::parse_config_json(kBaseConfig, {"no_equals_sign"}),
                  dro::config_error);
}

TEST_CASE("parse_config supports the unregularized drago block") {
  nlohmann::json j = nlohmann::json::parse(kBaseConfig);
  j["optimizers"][0]["unregularized"] = {{"mu1", 1.0}, {"nu1", 0.5}};
  const ExperimentConfig cfg = dro::parse_config_json(j.dump(), {});
  CHECK(cfg.optimizers[0].unregularized);
  CHECK(cfg.optimizers[0].mu1 == 1.0);
  CHECK(cfg.optimizers[0].mu2 == 0.0);
  CHECK(cfg.optimizers[0].nu1 == 0.5);
}

TEST_CASE("parse_config rejects malformed configurations") {
  CHECK_THROWS_AS(dro::parse_config_json("not json at all", {}),
                  dro::config_error);
  CHECK_THROWS_AS(dro::parse_config_json("[1,2,3]", {}), dro::config_error);

  nlohmann::json j = nlohmann::json::parse(kBaseConfig);

  nlohmann::json bad = j;
  bad["optimizers"][0]["name"] = "newton";
  CHECK_THROWS_AS(dro::parse_config_json(bad.dump(), {}), dro::config_error);

  bad = j;
  bad["seeds"] = nlohmann::json::array();
  CHECK_THROWS_AS(dro::parse_config_json(bad.dump(), {}), dro::config_error);

  bad = j;
  bad.erase("T_max");
  CHECK_THROWS_AS(dro::parse_config_json(bad.dump(), {}), dro::config_error);

  bad = j;
  bad["eval_every"] = 0;
  CHECK_THROWS_AS(dro::parse_config_json(bad.dump(), {}), dro::config_error);

  bad = j;
  bad["problem"]["uncertainty"]["kind"] = "ellipse";
  CHECK_THROWS_AS(dro::parse_config_json(bad.dump(), {}), dro::config_error);

  bad = j;
  bad["problem"]["dataset"] = {{"path", "x.csv"}};
  CHECK_THROWS_AS(dro::parse_config_json(bad.dump(), {}), dro::config_error);

  bad = j;
  bad["problem"].erase("nu");
  CHECK_THROWS_AS(dro::parse_config_json(bad.dump(), {}), dro::config_error);
}

TEST_CASE("parse_config_file matches the in-memory parse") {
  const fs::path dir = scratch_dir("cfg_file");
  const std::string path = write_file(dir / "config.json", kBaseConfig);
  const ExperimentConfig from_file = dro::parse_config_file(path, {});
  const ExperimentConfig from_text = dro::parse_config_json(kBaseConfig, {});
  CHECK(from_file.hash == from_text.hash);
  CHECK_THROWS_AS(dro::parse_config_file((dir / "absent.json").string(), {}),
                  dro::config_error);
  fs::remove_all(dir);
}

TEST_CASE("build_problem assembles dimensions and honors overrides") {
  ExperimentConfig cfg = dro::parse_config_json(kBaseConfig, {});
  const ProblemSpec spec = dro::build_problem(cfg);
  CHECK(spec.n() == 12);
  CHECK(spec.p() == 3);
  CHECK(spec.mu == 1.0);
  CHECK(spec.loss.G > 0.0);
  CHECK(spec.loss.L > 0.0);

  const ExperimentConfig with_overrides = dro::parse_config_json(
      kBaseConfig, {"problem.G_override=5.0", "problem.L_override=7.0"});
  const ProblemSpec forced = dro::build_problem(with_overrides);
  CHECK(forced.loss.G == 5.0);
  CHECK(forced.loss.L == 7.0);

  nlohmann::json j = nlohmann::json::parse(kBaseConfig);
  j["problem"]["uncertainty"] = {{"kind", "spectral"},
                                 {"sigma", {0.2, 0.3, 0.5}}};
  const ExperimentConfig mismatched =
      dro::parse_config_json(j.dump(), {});  // 3 atoms for n = 12
  CHECK_THROWS_AS(dro::build_problem(mismatched), dro::invalid_input);
}

TEST_CASE("trace JSONL round-trips exactly") {
  const ProblemSpec spec = testutil::make_problem(
      6, 2, UncertaintySpec::cvar(0.5), 1.0, 1.0, 91);
  dro::BaselineConfig cfg;
  const Trace trace = dro::full_batch_gd_run(spec, cfg, 7);

  const fs::path dir = scratch_dir("jsonl");
  const std::string path = (dir / "trace.jsonl").string();
  dro::write_trace_jsonl(trace, path);
  const Trace loaded = dro::read_trace_jsonl(path);
  CHECK(loaded.optimizer == trace.optimizer);
  CHECK(loaded.seed == trace.seed);
  CHECK(loaded.G == trace.G);
  CHECK(loaded.L == trace.L);
  CHECK(loaded.kappa_q == trace.kappa_q);
  CHECK(loaded.learning_rate == trace.learning_rate);
  CHECK(loaded.status == trace.status);
  REQUIRE(loaded.rows.size() == trace.rows.size());
  for (std::size_t k = 0; k < trace.rows.size(); ++k) {
    CHECK(loaded.rows[k].iteration == trace.rows[k].iteration);
    CHECK(loaded.rows[k].cumulative_queries ==
          trace.rows[k].cumulative_queries);
    CHECK(loaded.rows[k].objective == trace.rows[k].objective);
    CHECK(loaded.rows[k].normalized_gap == trace.rows[k].normalized_gap);
    CHECK(loaded.rows[k].eval_queries == trace.rows[k].eval_queries);
  }

  write_file(dir / "bad.jsonl", "{\"type\":\"row\"}\n");
  CHECK_THROWS_AS(dro::read_trace_jsonl((dir / "bad.jsonl").string()),
                  dro::config_error);
  CHECK_THROWS_AS(dro::read_trace_jsonl((dir / "absent.jsonl").string()),
                  dro::config_error);
  fs::remove_all(dir);
}

TEST_CASE("trace filenames are stable and descriptive") {
  CHECK(dro::trace_filename(0, "drago", 3) == "trace_0_drago_seed3.jsonl");
  CHECK(dro::trace_filename(2, "lsvrg", 10) == "trace_2_lsvrg_seed10.jsonl");
}

TEST_CASE("run_experiment with no optimizers is an empty success") {
  nlohmann::json j = nlohmann::json::parse(kBaseConfig);
  j["optimizers"] = nlohmann::json::array();
  const fs::path dir = scratch_dir("empty_run");
  j["out_dir"] = dir.string();
  ExperimentConfig cfg = dro::parse_config_json(j.dump(), {});
  const dro::ExperimentResult result = dro::run_experiment(cfg);
  CHECK(result.traces.empty());
  const nlohmann::json summary = nlohmann::json::parse(result.summary_json);
  CHECK(summary.at("n_runs").get<int>() == 0);
  fs::remove_all(dir);
}

TEST_CASE("run_experiment writes traces, plot table, and summary") {
  nlohmann::json j = nlohmann::json::parse(kBaseConfig);
  const fs::path dir = scratch_dir("full_run");
  j["out_dir"] = dir.string();
  j["jobs"] = 2;
  ExperimentConfig cfg = dro::parse_config_json(j.dump(), {});
  const dro::ExperimentResult result = dro::run_experiment(cfg);
  REQUIRE(result.traces.size() == 4);  // 2 optimizers x 2 seeds
  for (const Trace& trace : result.traces) {
    CHECK(trace.status == "ok");
    REQUIRE(!trace.rows.empty());
    CHECK(trace.rows.front().normalized_gap == 1.0);
    CHECK(trace.config_hash == cfg.hash);
  }
  CHECK(fs::exists(dir / "summary.json"));
  CHECK(fs::exists(dir / "plot_table.csv"));
  CHECK(fs::exists(dir / "trace_0_drago_seed1.jsonl"));
  CHECK(fs::exists(dir / "trace_1_sgd_biased_seed2.jsonl"));

  std::ifstream csv(dir / "plot_table.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "optimizer,seed,x_kind,x,gap");

  const nlohmann::json summary = nlohmann::json::parse(result.summary_json);
  CHECK(summary.at("n_runs").get<int>() == 4);
  CHECK(summary.at("config_hash").get<std::string>() == cfg.hash);
  CHECK(summary.at("optimizers").contains("drago"));
  CHECK(summary.at("optimizers").contains("sgd_biased"));
  fs::remove_all(dir);
}

TEST_CASE("run_experiment is deterministic") {
  nlohmann::json j = nlohmann::json::parse(kBaseConfig);
  const fs::path dir_a = scratch_dir("det_a");
  const fs::path dir_b = scratch_dir("det_b");
  j["out_dir"] = dir_a.string();
  const dro::ExperimentResult a =
      dro::run_experiment(dro::parse_config_json(j.dump(), {}));
  j["out_dir"] = dir_b.string();
  const dro::ExperimentResult b =
      dro::run_experiment(dro::parse_config_json(j.dump(), {}));
  REQUIRE(a.traces.size() == b.traces.size());
  for (std::size_t k = 0; k < a.traces.size(); ++k) {
    REQUIRE(a.traces[k].rows.size() == b.traces[k].rows.size());
    CHECK(a.traces[k].rows.back().objective ==
          b.traces[k].rows.back().objective);
  }
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("run_experiment isolates per-run failures") {
  nlohmann::json j = nlohmann::json::parse(kBaseConfig);
  j["problem"]["uncertainty"] = {{"kind", "chi2_ball"}, {"rho", 0.5}};
  j["optimizers"] = {{{"name", "lsvrg"}, {"learning_rate", 0.01}},
                     {{"name", "drago"}, {"b", 3}}};
  j["seeds"] = {1};
  const fs::path dir = scratch_dir("fail_iso");
  j["out_dir"] = dir.string();
  const dro::ExperimentResult result =
      dro::run_experiment(dro::parse_config_json(j.dump(), {}));
  REQUIRE(result.traces.size() == 2);
  CHECK(result.traces[0].status.rfind("failed:", 0) == 0);
  CHECK(result.traces[1].status == "ok");
  fs::remove_all(dir);
}

TEST_CASE("run_experiment without a reference reports gap -1") {
  nlohmann::json j = nlohmann::json::parse(kBaseConfig);
  j["reference"] = {{"enabled", false}};
  j["optimizers"] = {{{"name", "drago"}, {"b", 3}}};
  j["seeds"] = {1};
  const fs::path dir = scratch_dir("no_ref");
  j["out_dir"] = dir.string();
  const dro::ExperimentResult result =
      dro::run_experiment(dro::parse_config_json(j.dump(), {}));
  REQUIRE(result.traces.size() == 1);
  for (const dro::TraceRow& row : result.traces[0].rows) {
    CHECK(row.normalized_gap == -1.0);
  }
  fs::remove_all(dir);
}

}  // TEST_SUITE
