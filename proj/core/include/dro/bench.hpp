#ifndef DRO_BENCH_HPP
#define DRO_BENCH_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "dro/model.hpp"
#include "dro/trace.hpp"

namespace dro {

// Loads a CSV dataset: a header row, feature columns, and a final column
// named "target" (regression, real) or "label" (classification, integer
// >= 0). standardize maps each feature column to mean 0, variance 1
// (population convention); constant columns become all zeros. Malformed
// input raises config_error with the offending line number.
DatasetMatrix load_dataset(const std::string& path, bool standardize);

// Standardizes feature columns in place (mean 0, variance 1, constant
// columns zeroed). Exposed separately so synthetic and loaded data share one
// code path.
void standardize_features(DatasetMatrix& data);

// Synthetic regression data: X and w_true standard normal, y = X w_true +
// noise_sigma * eps. Deterministic in seed.
DatasetMatrix synthesize_problem(Eigen::Index n, Eigen::Index d,
                                 double noise_sigma, std::uint64_t seed);

// Normalized suboptimality (the plotted quantity):
//   (P(w) - w_star_value) / (w0_value - w_star_value),
// where P is the primal objective. Tiny negatives (>= -1e-12) clamp to 0.
// Throws numeric_error when the denominator is <= 1e-15.
double normalized_gap(const ProblemSpec& problem, const Vec& w,
                      double w_star_value, double w0_value);

struct SyntheticSpec {
  Eigen::Index n = 0;
  Eigen::Index d = 0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

struct DatasetSource {
  bool use_synthetic = false;
  std::string path;          // CSV path when not synthetic
  bool standardize = true;   // applies to loaded datasets
  SyntheticSpec synthetic;
};

struct OptimizerEntry {
  std::string name;  // "drago", "full_batch_gd", "sgd_biased", "lsvrg"
  // drago parameters
  Eigen::Index b = 1;
  double alpha = 0.0;        // <= 0: default_alpha(problem, b, alpha_scale)
  double alpha_scale = 1.0;
  std::string memory = "full";  // "full" | "compact"
  bool unregularized = false;
  double mu1 = 0.0, mu2 = 0.0, nu1 = 0.0;
  // baseline parameters
  Eigen::Index batch = 64;      // sgd_biased
  Eigen::Index epoch_len = 0;   // lsvrg; <= 0 -> n
  double learning_rate = 0.0;   // <= 0: tuned via auto_learning_rate
                                // (full_batch_gd: smoothness default)
};

struct ReferenceConfig {
  bool enabled = true;
  double tol = 1e-10;
  std::int64_t max_iters = 10'000'000;
  bool use_lbfgs = false;
};

struct ExperimentConfig {
  DatasetSource data;
  std::string loss = "squared_error";  // "squared_error" | "cross_entropy"
  int classes = 0;                     // cross-entropy class count
  std::string set_kind = "cvar";       // "cvar" | "spectral" | "chi2_ball"
  double theta = 1.0;
  std::vector<double> sigma;           // spectral spectrum (ascending)
  double rho = 0.0;
  std::string penalty = "chi2";        // "chi2" | "kl"
  double mu = 0.0;
  double nu = 0.0;
  double G_override = 0.0;             // > 0 replaces the estimated G
  double L_override = 0.0;             // > 0 replaces the estimated L
  std::vector<OptimizerEntry> optimizers;
  std::vector<std::uint64_t> seeds;
  std::int64_t T_max = 0;
  double gap_target = -1.0;            // < 0: disabled
  std::int64_t eval_every = 0;         // 0: one data pass per optimizer
  std::string out_dir = "out";
  int jobs = 1;
  ReferenceConfig reference;
  std::string canonical_json;          // config after overrides, normalized
  std::string hash;                    // stable hex hash of canonical_json
};

// Parses a config from JSON text or a file, applies --override key=val
// entries (dotted paths, numeric segments index arrays, values parsed as
// JSON when possible), validates the result, and fills canonical_json/hash.
// All failures raise config_error.
ExperimentConfig parse_config_json(const std::string& json_text,
                                   const std::vector<std::string>& overrides);
ExperimentConfig parse_config_file(const std::string& path,
                                   const std::vector<std::string>& overrides);

// Assembles the ProblemSpec: loads or synthesizes the dataset, builds the
// uncertainty set, and fills loss constants via estimate_constants (honoring
// G/L overrides).
ProblemSpec build_problem(const ExperimentConfig& config);

struct ExperimentResult {
  std::vector<Trace> traces;   // one per (optimizer entry, seed)
  std::string summary_json;    // the summary written to out_dir/summary.json
};

// Runs every (optimizer, seed) pair (up to `jobs` in parallel), computing
// the reference once when the problem admits one (mu > 0, nu > 0, and
// reference.enabled). Each run's failure is recorded in its trace status
// without aborting siblings. Writes per-run JSONL traces, a long-format CSV
// plot table, and a summary JSON into out_dir.
ExperimentResult run_experiment(const ExperimentConfig& config);

// JSONL trace persistence: a metadata object on the first line, one row
// object per subsequent line.
void write_trace_jsonl(const Trace& trace, const std::string& path);
Trace read_trace_jsonl(const std::string& path);

// Stable per-run trace filename: trace_<entry>_<name>_seed<seed>.jsonl.
std::string trace_filename(std::size_t entry_index, const std::string& name,
                           std::uint64_t seed);

}  // namespace dro

#endif  // DRO_BENCH_HPP
