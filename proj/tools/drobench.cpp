// drobench: run DRO benchmark experiments, compute references, and recompute
// normalized gaps from stored traces.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dro/baselines.hpp"
#include "dro/bench.hpp"
#include "dro/errors.hpp"

namespace {

using nlohmann::json;

std::vector<std::string> build_overrides(
    const std::vector<std::string>& explicit_overrides,
    const std::string& seeds_csv, int jobs, const std::string& out_dir) {
  std::vector<std::string> overrides = explicit_overrides;
  if (!seeds_csv.empty()) {
    json arr = json::array();
    std::stringstream ss(seeds_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        arr.push_back(std::stoull(item));
      } catch (const std::exception&) {
        throw dro::config_error("--seeds entry '" + item +
                                "' is not a nonnegative integer");
      }
    }
    overrides.push_back("seeds=" + arr.dump());
  }
  if (jobs > 0) overrides.push_back("jobs=" + std::to_string(jobs));
  if (!out_dir.empty()) {
    overrides.push_back("out_dir=" + json(out_dir).dump());
  }
  return overrides;
}

int cmd_run(const std::string& config_path,
            const std::vector<std::string>& overrides) {
  const dro::ExperimentConfig config =
      dro::parse_config_file(config_path, overrides);
  const dro::ExperimentResult result = dro::run_experiment(config);
  std::cout << "wrote " << result.traces.size() << " trace(s) to "
            << config.out_dir << "\n"
            << result.summary_json << "\n";
  return 0;
}

int cmd_reference(const std::string& config_path,
                  const std::vector<std::string>& overrides,
                  const std::string& out_path) {
  const dro::ExperimentConfig config =
      dro::parse_config_file(config_path, overrides);
  const dro::ProblemSpec problem = dro::build_problem(config);
  dro::ReferenceOptions opts;
  opts.tol = config.reference.tol;
  opts.max_iters = config.reference.max_iters;
  opts.use_lbfgs = config.reference.use_lbfgs;
  const dro::Reference ref = dro::reference_solve(problem, opts);
  json out;
  out["value"] = ref.value;
  out["w_star"] = std::vector<double>(ref.w_star.data(),
                                      ref.w_star.data() + ref.w_star.size());
  const std::string text = out.dump(2);
  if (out_path.empty()) {
    std::cout << text << "\n";
  } else {
    std::ofstream f(out_path);
    if (!f) throw dro::config_error("cannot write reference file: " + out_path);
    f << text << "\n";
  }
  return 0;
}

int cmd_gap(const std::string& trace_path, const std::string& reference_path,
            const std::string& out_path) {
  dro::Trace trace = dro::read_trace_jsonl(trace_path);
  std::ifstream in(reference_path);
  if (!in) {
    throw dro::config_error("cannot open reference file: " + reference_path);
  }
  json ref;
  try {
    in >> ref;
  } catch (const json::exception& e) {
    throw dro::config_error(reference_path + ": invalid JSON: " + e.what());
  }
  if (!ref.contains("value") || !ref["value"].is_number()) {
    throw dro::config_error(reference_path + ": needs a numeric 'value'");
  }
  const double star = ref["value"].get<double>();
  if (trace.rows.empty()) {
    throw dro::config_error(trace_path + ": trace has no rows");
  }
  const double denom = trace.rows.front().objective - star;
  if (!(denom > 1e-15)) {
    throw dro::numeric_error(
        "degenerate start: gap denominator (initial minus optimal value) is "
        "not above 1e-15");
  }
  for (dro::TraceRow& row : trace.rows) {
    double gap = (row.objective - star) / denom;
    if (gap < 0.0 && gap >= -1e-12) gap = 0.0;
    row.normalized_gap = gap;
  }
  const std::string target = out_path.empty() ? trace_path : out_path;
  dro::write_trace_jsonl(trace, target);
  std::cout << "recomputed " << trace.rows.size() << " gap value(s) -> "
            << target << "\n";
  return 0;
}

int cmd_fetch_synthetic(const std::string& spec, const std::string& out_path) {
  Eigen::Index n = 0;
  Eigen::Index d = 0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::size_t eq = item.find('=');
    if (eq == std::string::npos) {
      throw dro::config_error("synthetic spec entry '" + item +
                              "' is not of the form key=value");
    }
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    try {
      if (key == "n") {
        n = static_cast<Eigen::Index>(std::stoll(value));
      } else if (key == "d") {
        d = static_cast<Eigen::Index>(std::stoll(value));
      } else if (key == "noise_sigma") {
        noise_sigma = std::stod(value);
      } else if (key == "seed") {
        seed = std::stoull(value);
      } else {
        throw dro::config_error("unknown synthetic spec key '" + key +
                                "' (known: n, d, noise_sigma, seed)");
      }
    } catch (const dro::config_error&) {
      throw;
    } catch (const std::exception&) {
      throw dro::config_error("synthetic spec value '" + value +
                              "' for key '" + key + "' is not numeric");
    }
  }
  const dro::DatasetMatrix data =
      dro::synthesize_problem(n, d, noise_sigma, seed);

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw dro::config_error("cannot write csv file: " + out_path);
    out = &file;
  }
  char buf[32];
  for (Eigen::Index j = 0; j < data.d(); ++j) {
    *out << 'f' << j << ',';
  }
  *out << "target\n";
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    for (Eigen::Index j = 0; j < data.d(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", data.features(i, j));
      *out << buf << ',';
    }
    std::snprintf(buf, sizeof buf, "%.17g", data.targets[i]);
    *out << buf << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DRO benchmark harness"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string seeds_csv;
  int jobs = 0;
  std::string out_arg;

  CLI::App* run = app.add_subcommand("run", "run an experiment config");
  run->add_option("config", config_path, "experiment config (JSON)")
      ->required();
  run->add_option("--override", overrides, "config override key=value");
  run->add_option("--seeds", seeds_csv, "comma-separated seed list");
  run->add_option("--jobs", jobs, "parallel runs");
  run->add_option("--out", out_arg, "output directory");

  std::string ref_config;
  std::vector<std::string> ref_overrides;
  std::string ref_out;
  CLI::App* reference =
      app.add_subcommand("reference", "solve a config's problem to high "
                                      "accuracy and emit w_star and value");
  reference->add_option("config", ref_config, "experiment config (JSON)")
      ->required();
  reference->add_option("--override", ref_overrides,
                        "config override key=value");
  reference->add_option("--out", ref_out, "write JSON here (default stdout)");

  std::string gap_trace;
  std::string gap_reference;
  std::string gap_out;
  CLI::App* gap = app.add_subcommand(
      "gap", "recompute a trace's normalized gaps from stored objectives");
  gap->add_option("trace", gap_trace, "trace file (JSONL)")->required();
  gap->add_option("reference", gap_reference, "reference file (JSON)")
      ->required();
  gap->add_option("--out", gap_out, "write here (default: rewrite in place)");

  CLI::App* datasets = app.add_subcommand("datasets", "dataset utilities");
  datasets->require_subcommand(1);
  std::string synth_spec;
  std::string synth_out;
  CLI::App* fetch = datasets->add_subcommand(
      "fetch-synthetic", "generate a synthetic regression CSV");
  fetch->add_option("spec", synth_spec,
                    "k=v spec, e.g. n=100,d=10,noise_sigma=0.1,seed=0")
      ->required();
  fetch->add_option("--out", synth_out, "write CSV here (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      return cmd_run(config_path,
                     build_overrides(overrides, seeds_csv, jobs, out_arg));
    }
    if (reference->parsed()) {
      return cmd_reference(ref_config,
                           build_overrides(ref_overrides, "", 0, ""), ref_out);
    }
    if (gap->parsed()) {
      return cmd_gap(gap_trace, gap_reference, gap_out);
    }
    if (datasets->parsed() && fetch->parsed()) {
      return cmd_fetch_synthetic(synth_spec, synth_out);
    }
  } catch (const dro::config_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const dro::invalid_input& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const dro::numeric_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
