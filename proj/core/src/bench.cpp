#include "dro/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dro/baselines.hpp"
#include "dro/drago.hpp"
#include "dro/dualprox.hpp"
#include "dro/errors.hpp"
#include "dro/rng.hpp"

#include "json.hpp"

namespace dro {

namespace {

using nlohmann::json;

// Philox stream ids for dataset synthesis (drago uses 1-2, baselines 6-7).
constexpr std::uint64_t kStreamFeatures = 3;
constexpr std::uint64_t kStreamTrueWeights = 4;
constexpr std::uint64_t kStreamNoise = 5;

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_cell(const std::string& cell, const std::string& path,
                  std::size_t line_no) {
  const std::string t = trim(cell);
  if (t.empty()) {
    throw config_error(path + ":" + std::to_string(line_no) + ": empty cell");
  }
  char* end = nullptr;
  const double value = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size() || !std::isfinite(value)) {
    throw config_error(path + ":" + std::to_string(line_no) +
                       ": cell '" + t + "' is not a finite number");
  }
  return value;
}

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[h & 0xF];
    h >>= 4;
  }
  return out;
}

}  // namespace

DatasetMatrix load_dataset(const std::string& path, bool standardize) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open dataset file: " + path);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) {
    throw config_error(path + ": empty file");
  }
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 2) {
    throw config_error(path + ":1: need at least one feature column and a "
                       "target/label column");
  }
  const std::string& last = header.back();
  bool classification = false;
  if (last == "label") {
    classification = true;
  } else if (last != "target") {
    throw config_error(path + ":1: last column must be named 'target' "
                       "(regression) or 'label' (classification), got '" +
                       last + "'");
  }
  const std::size_t cols = header.size();
  const auto d = static_cast<Eigen::Index>(cols - 1);

  std::vector<std::vector<double>> feature_rows;
  std::vector<double> targets;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != cols) {
      throw config_error(path + ":" + std::to_string(line_no) + ": expected " +
                         std::to_string(cols) + " cells, got " +
                         std::to_string(cells.size()));
    }
    std::vector<double> row(cols - 1);
    for (std::size_t c = 0; c + 1 < cols; ++c) {
      row[c] = parse_cell(cells[c], path, line_no);
    }
    const double y = parse_cell(cells.back(), path, line_no);
    if (classification) {
      if (y < 0.0 || y != std::floor(y) || y > 2147483647.0) {
        throw config_error(path + ":" + std::to_string(line_no) +
                           ": label '" + cells.back() +
                           "' is not a nonnegative integer");
      }
      labels.push_back(static_cast<int>(y));
    } else {
      targets.push_back(y);
    }
    feature_rows.push_back(std::move(row));
  }
  if (feature_rows.empty()) {
    throw config_error(path + ": no data rows");
  }

  DatasetMatrix data;
  const auto n = static_cast<Eigen::Index>(feature_rows.size());
  data.features.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      data.features(i, j) = feature_rows[static_cast<std::size_t>(i)]
                                        [static_cast<std::size_t>(j)];
    }
  }
  if (classification) {
    data.classes.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      data.classes[i] = labels[static_cast<std::size_t>(i)];
    }
  } else {
    data.targets.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      data.targets[i] = targets[static_cast<std::size_t>(i)];
    }
  }
  if (standardize) standardize_features(data);
  return data;
}

void standardize_features(DatasetMatrix& data) {
  const Eigen::Index n = data.features.rows();
  if (n == 0) return;
  for (Eigen::Index j = 0; j < data.features.cols(); ++j) {
    auto col = data.features.col(j);
    const double mean = col.mean();
    const double var = (col.array() - mean).square().sum() /
                       static_cast<double>(n);
    if (var <= 1e-24) {
      col.setZero();  // constant column: no information, avoid 0-division
    } else {
      col = (col.array() - mean) / std::sqrt(var);
    }
  }
}

DatasetMatrix synthesize_problem(Eigen::Index n, Eigen::Index d,
                                 double noise_sigma, std::uint64_t seed) {
  if (n < 1 || d < 1) throw invalid_input("synthetic data needs n, d >= 1");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw invalid_input("noise_sigma must be nonnegative and finite");
  }
  PhiloxRng rng_x(seed, kStreamFeatures);
  PhiloxRng rng_w(seed, kStreamTrueWeights);
  PhiloxRng rng_e(seed, kStreamNoise);
  DatasetMatrix data;
  data.features.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) data.features(i, j) = rng_x.normal();
  }
  Vec w_true(d);
  for (Eigen::Index j = 0; j < d; ++j) w_true[j] = rng_w.normal();
  data.targets = data.features * w_true;
  if (noise_sigma > 0.0) {
    for (Eigen::Index i = 0; i < n; ++i) {
      data.targets[i] += noise_sigma * rng_e.normal();
    }
  }
  return data;
}

double normalized_gap(const ProblemSpec& problem, const Vec& w,
                      double w_star_value, double w0_value) {
  const double denom = w0_value - w_star_value;
  if (!(denom > 1e-15)) {
    throw numeric_error(
        "degenerate start: gap denominator (initial minus optimal value) is "
        "not above 1e-15");
  }
  const Vec losses = all_losses(problem, w);
  const Vec q = max_oracle(losses, problem.uncertainty, problem.nu);
  double value = losses.dot(q) + 0.5 * problem.mu * w.squaredNorm();
  if (problem.nu > 0.0) {
    value -= problem.nu *
             penalty_value(q, problem.uncertainty.penalty_kind);
  }
  double gap = (value - w_star_value) / denom;
  if (gap < 0.0 && gap >= -1e-12) gap = 0.0;
  return gap;
}

namespace {

[[noreturn]] void bad_config(const std::string& message) {
  throw config_error("config error: " + message);
}

const json* find_key(const json& j, const char* key) {
  const auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

double require_number(const json& j, const char* key,
                      const std::string& where) {
  const json* v = find_key(j, key);
  if (v == nullptr || !v->is_number()) {
    bad_config(where + " needs a numeric '" + key + "'");
  }
  return v->get<double>();
}

double number_or(const json& j, const char* key, double fallback) {
  const json* v = find_key(j, key);
  if (v == nullptr) return fallback;
  if (!v->is_number()) bad_config(std::string("'") + key + "' must be numeric");
  return v->get<double>();
}

std::int64_t integer_or(const json& j, const char* key, std::int64_t fallback) {
  const json* v = find_key(j, key);
  if (v == nullptr) return fallback;
  if (!v->is_number_integer()) {
    bad_config(std::string("'") + key + "' must be an integer");
  }
  return v->get<std::int64_t>();
}

bool bool_or(const json& j, const char* key, bool fallback) {
  const json* v = find_key(j, key);
  if (v == nullptr) return fallback;
  if (!v->is_boolean()) bad_config(std::string("'") + key + "' must be a bool");
  return v->get<bool>();
}

std::string string_or(const json& j, const char* key,
                      const std::string& fallback) {
  const json* v = find_key(j, key);
  if (v == nullptr) return fallback;
  if (!v->is_string()) {
    bad_config(std::string("'") + key + "' must be a string");
  }
  return v->get<std::string>();
}

// Accepts a positive number or the string "auto" (-> 0, meaning "derive").
double rate_or_auto(const json& j, const char* key, const std::string& where) {
  const json* v = find_key(j, key);
  if (v == nullptr) return 0.0;
  if (v->is_string()) {
    if (v->get<std::string>() == "auto") return 0.0;
    bad_config(where + ": '" + key + "' must be a positive number or \"auto\"");
  }
  if (!v->is_number()) {
    bad_config(where + ": '" + key + "' must be a positive number or \"auto\"");
  }
  const double value = v->get<double>();
  if (!(value > 0.0)) {
    bad_config(where + ": '" + key + "' must be positive (or \"auto\")");
  }
  return value;
}

void apply_override(json& root, const std::string& spec) {
  const std::size_t eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    bad_config("override '" + spec + "' is not of the form key=value");
  }
  const std::string path = spec.substr(0, eq);
  const std::string value_text = spec.substr(eq + 1);
  json value;
  try {
    value = json::parse(value_text);
  } catch (const json::exception&) {
    value = value_text;  // unquoted strings pass through verbatim
  }

  std::vector<std::string> segments;
  std::stringstream ss(path);
  std::string seg;
  while (std::getline(ss, seg, '.')) segments.push_back(seg);
  if (segments.empty()) bad_config("override '" + spec + "' has an empty path");

  json* cur = &root;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const std::string& name = segments[s];
    const bool last = s + 1 == segments.size();
    if (cur->is_array()) {
      if (name.empty() ||
          name.find_first_not_of("0123456789") != std::string::npos) {
        bad_config("override path '" + path + "': '" + name +
                   "' is not an array index");
      }
      const auto idx = static_cast<std::size_t>(std::stoull(name));
      if (idx >= cur->size()) {
        bad_config("override path '" + path + "': index " + name +
                   " is out of range");
      }
      if (last) {
        (*cur)[idx] = value;
      } else {
        cur = &(*cur)[idx];
      }
    } else if (cur->is_object() || cur->is_null()) {
      if (last) {
        (*cur)[name] = value;
      } else {
        cur = &(*cur)[name];
      }
    } else {
      bad_config("override path '" + path + "' descends into a scalar");
    }
  }
}

OptimizerEntry parse_optimizer(const json& j, std::size_t index) {
  const std::string where = "optimizers[" + std::to_string(index) + "]";
  if (!j.is_object()) bad_config(where + " must be an object");
  OptimizerEntry entry;
  entry.name = string_or(j, "name", "");
  if (entry.name == "sgd") entry.name = "sgd_biased";
  if (entry.name != "drago" && entry.name != "full_batch_gd" &&
      entry.name != "sgd_biased" && entry.name != "lsvrg") {
    bad_config(where + ": unknown optimizer '" + entry.name + "'");
  }
  entry.b = integer_or(j, "b", 1);
  if (entry.b < 1) bad_config(where + ": 'b' must be >= 1");
  entry.alpha = rate_or_auto(j, "alpha", where);
  entry.alpha_scale = number_or(j, "alpha_scale", 1.0);
  if (!(entry.alpha_scale > 0.0)) {
    bad_config(where + ": 'alpha_scale' must be positive");
  }
  entry.memory = string_or(j, "memory", "full");
  if (entry.memory != "full" && entry.memory != "compact") {
    bad_config(where + ": 'memory' must be \"full\" or \"compact\"");
  }
  if (const json* u = find_key(j, "unregularized")) {
    if (!u->is_object()) {
      bad_config(where + ": 'unregularized' must be an object");
    }
    entry.unregularized = true;
    entry.mu1 = number_or(*u, "mu1", 0.0);
    entry.mu2 = number_or(*u, "mu2", 0.0);
    entry.nu1 = number_or(*u, "nu1", 0.0);
    if (entry.mu1 < 0.0 || entry.mu2 < 0.0 || entry.nu1 < 0.0) {
      bad_config(where + ": mu1, mu2, nu1 must be nonnegative");
    }
  }
  entry.batch = integer_or(j, "batch", 64);
  if (entry.batch < 1) bad_config(where + ": 'batch' must be >= 1");
  entry.epoch_len = integer_or(j, "epoch_len", 0);
  entry.learning_rate = rate_or_auto(j, "learning_rate", where);
  return entry;
}

ExperimentConfig decode_config(json j) {
  ExperimentConfig cfg;
  const json* problem = find_key(j, "problem");
  if (problem == nullptr || !problem->is_object()) {
    bad_config("top-level 'problem' object is required");
  }
  const json* synthetic = find_key(*problem, "synthetic");
  const json* dataset = find_key(*problem, "dataset");
  if ((synthetic != nullptr) == (dataset != nullptr)) {
    bad_config("problem needs exactly one of 'dataset' or 'synthetic'");
  }
  if (synthetic != nullptr) {
    cfg.data.use_synthetic = true;
    cfg.data.synthetic.n =
        static_cast<Eigen::Index>(require_number(*synthetic, "n", "synthetic"));
    cfg.data.synthetic.d =
        static_cast<Eigen::Index>(require_number(*synthetic, "d", "synthetic"));
    cfg.data.synthetic.noise_sigma =
        number_or(*synthetic, "noise_sigma", 0.0);
    cfg.data.synthetic.seed = static_cast<std::uint64_t>(
        integer_or(*synthetic, "seed", 0));
    if (cfg.data.synthetic.n < 1 || cfg.data.synthetic.d < 1) {
      bad_config("synthetic 'n' and 'd' must be >= 1");
    }
  } else {
    cfg.data.path = string_or(*dataset, "path", "");
    if (cfg.data.path.empty()) bad_config("dataset 'path' is required");
    cfg.data.standardize = bool_or(*dataset, "standardize", true);
  }

  cfg.loss = string_or(*problem, "loss", "squared_error");
  if (cfg.loss != "squared_error" && cfg.loss != "cross_entropy") {
    bad_config("unknown loss '" + cfg.loss + "'");
  }
  cfg.classes = static_cast<int>(integer_or(*problem, "classes", 0));
  if (cfg.loss == "cross_entropy" && cfg.classes < 2) {
    bad_config("cross_entropy needs 'classes' >= 2");
  }

  const json* unc = find_key(*problem, "uncertainty");
  if (unc == nullptr || !unc->is_object()) {
    bad_config("problem 'uncertainty' object is required");
  }
  cfg.set_kind = string_or(*unc, "kind", "");
  cfg.penalty = string_or(*unc, "penalty", "chi2");
  if (cfg.penalty != "chi2" && cfg.penalty != "kl") {
    bad_config("uncertainty 'penalty' must be \"chi2\" or \"kl\"");
  }
  if (cfg.set_kind == "cvar") {
    cfg.theta = require_number(*unc, "theta", "cvar uncertainty");
  } else if (cfg.set_kind == "spectral") {
    const json* sigma = find_key(*unc, "sigma");
    if (sigma == nullptr || !sigma->is_array() || sigma->empty()) {
      bad_config("spectral uncertainty needs a nonempty 'sigma' array");
    }
    for (const auto& v : *sigma) {
      if (!v.is_number()) bad_config("'sigma' entries must be numeric");
      cfg.sigma.push_back(v.get<double>());
    }
  } else if (cfg.set_kind == "chi2_ball") {
    cfg.rho = require_number(*unc, "rho", "chi2_ball uncertainty");
  } else {
    bad_config("uncertainty 'kind' must be cvar, spectral, or chi2_ball");
  }

  cfg.mu = require_number(*problem, "mu", "problem");
  cfg.nu = require_number(*problem, "nu", "problem");
  if (cfg.mu < 0.0 || cfg.nu < 0.0) bad_config("mu and nu must be >= 0");
  cfg.G_override = number_or(*problem, "G_override", 0.0);
  cfg.L_override = number_or(*problem, "L_override", 0.0);

  const json* optimizers = find_key(j, "optimizers");
  if (optimizers != nullptr) {
    if (!optimizers->is_array()) bad_config("'optimizers' must be an array");
    for (std::size_t i = 0; i < optimizers->size(); ++i) {
      cfg.optimizers.push_back(parse_optimizer((*optimizers)[i], i));
    }
  }

  const json* seeds = find_key(j, "seeds");
  if (seeds == nullptr || !seeds->is_array() || seeds->empty()) {
    bad_config("a nonempty 'seeds' array is required");
  }
  for (const auto& s : *seeds) {
    if (!s.is_number_integer() || s.get<std::int64_t>() < 0) {
      bad_config("'seeds' entries must be nonnegative integers");
    }
    cfg.seeds.push_back(s.get<std::uint64_t>());
  }

  cfg.T_max = integer_or(j, "T_max", -1);
  if (cfg.T_max < 0) bad_config("'T_max' (>= 0) is required");
  cfg.gap_target = number_or(j, "gap_target", -1.0);
  cfg.eval_every = integer_or(j, "eval_every", 0);
  if (find_key(j, "eval_every") != nullptr && cfg.eval_every < 1) {
    bad_config("'eval_every' must be >= 1 when given");
  }
  cfg.out_dir = string_or(j, "out_dir", "out");
  cfg.jobs = static_cast<int>(integer_or(j, "jobs", 1));
  if (cfg.jobs < 1) bad_config("'jobs' must be >= 1");
  if (const json* ref = find_key(j, "reference")) {
    if (!ref->is_object()) bad_config("'reference' must be an object");
    cfg.reference.enabled = bool_or(*ref, "enabled", true);
    cfg.reference.tol = number_or(*ref, "tol", 1e-10);
    cfg.reference.max_iters = integer_or(*ref, "max_iters", 10'000'000);
    cfg.reference.use_lbfgs = bool_or(*ref, "lbfgs", false);
    if (!(cfg.reference.tol > 0.0)) bad_config("reference 'tol' must be > 0");
    if (cfg.reference.max_iters < 1) {
      bad_config("reference 'max_iters' must be >= 1");
    }
  }

  cfg.canonical_json = j.dump();
  cfg.hash = fnv1a_hex(cfg.canonical_json);
  return cfg;
}

}  // namespace

ExperimentConfig parse_config_json(const std::string& json_text,
                                   const std::vector<std::string>& overrides) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw config_error(std::string("config parse error: ") + e.what());
  }
  if (!j.is_object()) bad_config("top level must be a JSON object");
  for (const std::string& o : overrides) apply_override(j, o);
  return decode_config(std::move(j));
}

ExperimentConfig parse_config_file(const std::string& path,
                                   const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_json(buffer.str(), overrides);
}

ProblemSpec build_problem(const ExperimentConfig& config) {
  ProblemSpec spec;
  if (config.data.use_synthetic) {
    spec.data = synthesize_problem(
        config.data.synthetic.n, config.data.synthetic.d,
        config.data.synthetic.noise_sigma, config.data.synthetic.seed);
  } else {
    spec.data = load_dataset(config.data.path, config.data.standardize);
  }
  spec.loss.kind = config.loss == "squared_error"
                       ? LossKind::kSquaredError
                       : LossKind::kMultinomialCrossEntropy;
  spec.loss.num_classes = config.classes;
  const PenaltyKind penalty =
      config.penalty == "kl" ? PenaltyKind::kKL : PenaltyKind::kChi2Half;
  if (config.set_kind == "cvar") {
    spec.uncertainty = UncertaintySpec::cvar(config.theta, penalty);
  } else if (config.set_kind == "spectral") {
    Vec sigma(static_cast<Eigen::Index>(config.sigma.size()));
    for (Eigen::Index i = 0; i < sigma.size(); ++i) {
      sigma[i] = config.sigma[static_cast<std::size_t>(i)];
    }
    spec.uncertainty = UncertaintySpec::spectral(sigma, penalty);
  } else {
    spec.uncertainty = UncertaintySpec::chi2_ball(config.rho);
  }
  spec.mu = config.mu;
  spec.nu = config.nu;
  const Constants constants = estimate_constants(spec);
  spec.loss.G = config.G_override > 0.0 ? config.G_override : constants.G;
  spec.loss.L = config.L_override > 0.0 ? config.L_override : constants.L;
  spec.validate();
  return spec;
}

void write_trace_jsonl(const Trace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw config_error("cannot write trace file: " + path);
  json meta = {{"type", "meta"},
               {"optimizer", trace.optimizer},
               {"seed", trace.seed},
               {"config_hash", trace.config_hash},
               {"G", trace.G},
               {"L", trace.L},
               {"kappa_q", trace.kappa_q},
               {"alpha", trace.alpha},
               {"learning_rate", trace.learning_rate},
               {"status", trace.status}};
  out << meta.dump() << '\n';
  for (const TraceRow& row : trace.rows) {
    json r = {{"type", "row"},
              {"iteration", row.iteration},
              {"cumulative_queries", row.cumulative_queries},
              {"wall_seconds", row.wall_seconds},
              {"objective", row.objective},
              {"normalized_gap", row.normalized_gap},
              {"eval_queries", row.eval_queries}};
    out << r.dump() << '\n';
  }
  if (!out) throw config_error("failed writing trace file: " + path);
}

Trace read_trace_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open trace file: " + path);
  Trace trace;
  std::string line;
  std::size_t line_no = 0;
  bool saw_meta = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw config_error(path + ":" + std::to_string(line_no) +
                         ": invalid JSON: " + e.what());
    }
    const std::string type = string_or(j, "type", "");
    if (!saw_meta) {
      if (type != "meta") {
        throw config_error(path + ":" + std::to_string(line_no) +
                           ": first line must be the meta object");
      }
      trace.optimizer = string_or(j, "optimizer", "");
      trace.seed = static_cast<std::uint64_t>(integer_or(j, "seed", 0));
      trace.config_hash = string_or(j, "config_hash", "");
      trace.G = number_or(j, "G", 0.0);
      trace.L = number_or(j, "L", 0.0);
      trace.kappa_q = number_or(j, "kappa_q", 0.0);
      trace.alpha = number_or(j, "alpha", 0.0);
      trace.learning_rate = number_or(j, "learning_rate", 0.0);
      trace.status = string_or(j, "status", "ok");
      saw_meta = true;
      continue;
    }
    if (type != "row") {
      throw config_error(path + ":" + std::to_string(line_no) +
                         ": expected a row object");
    }
    TraceRow row;
    row.iteration = integer_or(j, "iteration", 0);
    row.cumulative_queries = integer_or(j, "cumulative_queries", 0);
    row.wall_seconds = number_or(j, "wall_seconds", 0.0);
    row.objective = number_or(j, "objective", 0.0);
    row.normalized_gap = number_or(j, "normalized_gap", -1.0);
    row.eval_queries = integer_or(j, "eval_queries", 0);
    trace.rows.push_back(row);
  }
  if (!saw_meta) throw config_error(path + ": missing meta line");
  return trace;
}

std::string trace_filename(std::size_t entry_index, const std::string& name,
                           std::uint64_t seed) {
  return "trace_" + std::to_string(entry_index) + "_" + name + "_seed" +
         std::to_string(seed) + ".jsonl";
}

namespace {

struct ResolvedEntry {
  OptimizerEntry entry;
  double learning_rate = 0.0;      // baselines
  std::optional<Schedule> schedule;  // drago
  std::string failure;             // nonempty: all runs fail with this reason
};

Trace run_task(const ProblemSpec& problem, const ExperimentConfig& config,
               const ResolvedEntry& resolved, std::uint64_t seed,
               const Reference* reference) {
  const OptimizerEntry& entry = resolved.entry;
  if (entry.name == "drago") {
    DragoRunConfig rc;
    rc.b = entry.b;
    rc.T_max = config.T_max;
    rc.gap_target = config.gap_target;
    rc.eval_every = config.eval_every;
    rc.seed = seed;
    rc.memory =
        entry.memory == "compact" ? MemoryMode::kCompact : MemoryMode::kFull;
    return drago_run(problem, *resolved.schedule, rc, reference);
  }
  BaselineConfig bc;
  bc.batch = entry.batch;
  bc.epoch_len = entry.epoch_len;
  bc.learning_rate = resolved.learning_rate;
  bc.seed = seed;
  bc.eval_every = config.eval_every;
  if (entry.name == "full_batch_gd") {
    bc.kind = BaselineKind::kFullBatchGD;
    return full_batch_gd_run(problem, bc, config.T_max, reference);
  }
  if (entry.name == "sgd_biased") {
    bc.kind = BaselineKind::kBiasedSGD;
    return sgd_biased_run(problem, bc, config.T_max, reference);
  }
  bc.kind = BaselineKind::kLSVRG;
  return lsvrg_run(problem, bc, config.T_max, reference);
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2]
                    : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  const ProblemSpec problem = build_problem(config);
  std::optional<Reference> reference;
  if (config.reference.enabled && problem.mu > 0.0 && problem.nu > 0.0) {
    ReferenceOptions opts;
    opts.tol = config.reference.tol;
    opts.max_iters = config.reference.max_iters;
    opts.use_lbfgs = config.reference.use_lbfgs;
    reference = reference_solve(problem, opts);
  }
  const Reference* ref_ptr = reference ? &*reference : nullptr;

  // Resolve per-entry runtime parameters up front; learning-rate tuning and
  // default_alpha failures disable the entry's runs without touching others.
  std::vector<ResolvedEntry> resolved;
  resolved.reserve(config.optimizers.size());
  for (const OptimizerEntry& entry : config.optimizers) {
    ResolvedEntry r;
    r.entry = entry;
    try {
      if (entry.name == "drago") {
        const Eigen::Index b = resolve_block_size(problem.n(), entry.b);
        const Eigen::Index M = problem.n() / b;
        if (entry.unregularized) {
          r.schedule = Schedule::unregularized(entry.mu1, entry.mu2, entry.nu1);
        } else {
          const double alpha =
              entry.alpha > 0.0
                  ? entry.alpha
                  : default_alpha(problem, entry.b, entry.alpha_scale);
          r.schedule = Schedule::regularized(alpha, M);
        }
      } else if (entry.name == "full_batch_gd") {
        r.learning_rate = entry.learning_rate;  // 0 -> smoothness default
      } else {
        if (entry.learning_rate > 0.0) {
          r.learning_rate = entry.learning_rate;
        } else {
          BaselineConfig tune;
          tune.kind = entry.name == "lsvrg" ? BaselineKind::kLSVRG
                                            : BaselineKind::kBiasedSGD;
          tune.batch = entry.batch;
          tune.epoch_len = entry.epoch_len;
          r.learning_rate =
              auto_learning_rate(problem, tune, config.T_max, config.seeds);
        }
      }
    } catch (const std::exception& e) {
      r.failure = e.what();
    }
    resolved.push_back(std::move(r));
  }

  struct Task {
    std::size_t entry_index;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (std::size_t e = 0; e < resolved.size(); ++e) {
    for (const std::uint64_t seed : config.seeds) tasks.push_back({e, seed});
  }

  std::vector<Trace> traces(tasks.size());
  const auto run_one = [&](std::size_t task_index) {
    const Task& task = tasks[task_index];
    const ResolvedEntry& r = resolved[task.entry_index];
    Trace trace;
    if (!r.failure.empty()) {
      trace.optimizer = r.entry.name;
      trace.seed = task.seed;
      trace.G = problem.loss.G;
      trace.L = problem.loss.L;
      trace.kappa_q = kappa_q(problem.uncertainty, problem.n());
      trace.status = "failed: " + r.failure;
    } else {
      try {
        trace = run_task(problem, config, r, task.seed, ref_ptr);
      } catch (const std::exception& e) {
        trace = Trace{};
        trace.optimizer = r.entry.name;
        trace.seed = task.seed;
        trace.G = problem.loss.G;
        trace.L = problem.loss.L;
        trace.kappa_q = kappa_q(problem.uncertainty, problem.n());
        trace.status = std::string("failed: ") + e.what();
      }
    }
    trace.config_hash = config.hash;
    traces[task_index] = std::move(trace);
  };

  const std::size_t jobs = std::min<std::size_t>(
      static_cast<std::size_t>(std::max(config.jobs, 1)),
      std::max<std::size_t>(tasks.size(), 1));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < tasks.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(jobs);
    for (std::size_t t = 0; t < jobs; ++t) {
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= tasks.size()) break;
          run_one(i);
        }
      });
    }
    for (std::thread& t : pool) t.join();
  }

  // Outputs: one JSONL per run, the long-format plot table, and the summary.
  const std::filesystem::path out_dir(config.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    throw config_error("cannot create output directory: " + config.out_dir);
  }
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const std::string name = trace_filename(
        tasks[i].entry_index, resolved[tasks[i].entry_index].entry.name,
        tasks[i].seed);
    write_trace_jsonl(traces[i], (out_dir / name).string());
  }

  // Disambiguate repeated optimizer names in the plot table and summary.
  std::vector<std::string> labels(resolved.size());
  for (std::size_t e = 0; e < resolved.size(); ++e) {
    const std::string& name = resolved[e].entry.name;
    std::size_t count = 0;
    for (const ResolvedEntry& other : resolved) {
      if (other.entry.name == name) ++count;
    }
    labels[e] =
        count > 1 ? name + "#" + std::to_string(e) : name;
  }

  {
    std::ofstream csv(out_dir / "plot_table.csv");
    if (!csv) throw config_error("cannot write plot_table.csv");
    csv << "optimizer,seed,x_kind,x,gap\n";
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      const std::string& label = labels[tasks[i].entry_index];
      for (const TraceRow& row : traces[i].rows) {
        csv << label << ',' << tasks[i].seed << ",queries,"
            << row.cumulative_queries << ',' << row.normalized_gap << '\n';
        csv << label << ',' << tasks[i].seed << ",seconds,"
            << row.wall_seconds << ',' << row.normalized_gap << '\n';
      }
    }
  }

  json summary;
  summary["config_hash"] = config.hash;
  summary["gap_target"] = config.gap_target;
  summary["n_runs"] = tasks.size();
  summary["runs"] = json::array();
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const Trace& t = traces[i];
    json run;
    run["entry"] = tasks[i].entry_index;
    run["optimizer"] = labels[tasks[i].entry_index];
    run["seed"] = tasks[i].seed;
    run["status"] = t.status;
    if (!t.rows.empty()) {
      const TraceRow& last = t.rows.back();
      run["final_objective"] = last.objective;
      run["final_queries"] = last.cumulative_queries;
      if (last.normalized_gap >= 0.0) run["final_gap"] = last.normalized_gap;
    }
    if (config.gap_target >= 0.0) {
      for (const TraceRow& row : t.rows) {
        if (row.normalized_gap >= 0.0 &&
            row.normalized_gap <= config.gap_target) {
          run["queries_to_target"] = row.cumulative_queries;
          break;
        }
      }
    }
    summary["runs"].push_back(std::move(run));
  }
  summary["optimizers"] = json::object();
  for (std::size_t e = 0; e < resolved.size(); ++e) {
    std::vector<double> final_gaps;
    std::vector<double> to_target;
    std::size_t ok_runs = 0;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (tasks[i].entry_index != e) continue;
      const Trace& t = traces[i];
      if (t.status == "ok") ++ok_runs;
      if (!t.rows.empty() && t.rows.back().normalized_gap >= 0.0) {
        final_gaps.push_back(t.rows.back().normalized_gap);
      }
      if (config.gap_target >= 0.0) {
        for (const TraceRow& row : t.rows) {
          if (row.normalized_gap >= 0.0 &&
              row.normalized_gap <= config.gap_target) {
            to_target.push_back(static_cast<double>(row.cumulative_queries));
            break;
          }
        }
      }
    }
    json o;
    o["runs_ok"] = ok_runs;
    if (!final_gaps.empty()) o["median_final_gap"] = median(final_gaps);
    if (!to_target.empty()) {
      o["median_queries_to_target"] = median(to_target);
      o["runs_reaching_target"] = to_target.size();
    }
    summary["optimizers"][labels[e]] = std::move(o);
  }

  ExperimentResult result;
  result.traces = std::move(traces);
  result.summary_json = summary.dump(2);
  std::ofstream summary_out(out_dir / "summary.json");
  if (!summary_out) throw config_error("cannot write summary.json");
  summary_out << result.summary_json << '\n';
  return result;
}

}  // namespace dro
