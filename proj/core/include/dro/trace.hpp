#ifndef DRO_TRACE_HPP
#define DRO_TRACE_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace dro {

// One evaluation point along an optimizer run. cumulative_queries counts
// optimizer oracle queries only; the n queries spent evaluating the gap are
// accounted separately in eval_queries so gaps can be recomputed offline.
struct TraceRow {
  std::int64_t iteration = 0;
  std::int64_t cumulative_queries = 0;
  double wall_seconds = 0.0;
  double objective = 0.0;       // primal value max_q L(w, q), raw
  double normalized_gap = 0.0;  // (objective - ref) / (initial - ref); -1 if
                                // no reference was available
  std::int64_t eval_queries = 0;
};

struct Trace {
  std::string optimizer;
  std::uint64_t seed = 0;
  std::string config_hash;
  // Constants of the run, recorded for reproducibility.
  double G = 0.0;
  double L = 0.0;
  double kappa_q = 0.0;
  double alpha = 0.0;          // DRAGO learning rate (0 for baselines)
  double learning_rate = 0.0;  // baseline step size (0 for DRAGO)
  std::string status = "ok";   // "ok" | "diverged" | "failed: <reason>"
  std::vector<TraceRow> rows;
};

}  // namespace dro

#endif  // DRO_TRACE_HPP
