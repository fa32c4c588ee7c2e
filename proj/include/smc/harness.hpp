#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "smc/functions.hpp"
#include "smc/model.hpp"
#include "smc/oracles.hpp"
#include "smc/smoothers.hpp"

namespace smc {

/// One configured statistical claim to verify against a replicate table.
struct CheckSpec {
  std::string claim;  // rmse-slope | exceedance | normality | variance-order
                      // | time-uniformity
  std::string method;
  std::string method_low;  // variance-order: the comparison method
  std::string h_name;
  int s = 1;
  double epsilon = 0.05;                      // exceedance
  double band_lo = -0.65, band_hi = -0.35;    // rmse-slope
  double max_skew = 0.3, max_kurtosis = 0.6;  // normality
  double level = 0.05;                        // variance-order
  double factor = 1.5;                        // time-uniformity
  std::string baseline_config, baseline_table;  // time-uniformity inputs
};

struct ExperimentConfig {
  StateSpaceModel model;
  PseudoPrior prior;
  std::string proposal_spec = "default";  // or "matched"
  std::vector<SmoothMethod> methods;
  std::vector<int> particle_counts;  // strictly increasing
  int replicates = 2;
  std::vector<TestFunction> test_functions;
  std::uint64_t master_seed = 0;
  bool record_timing = false;
  bool include_endpoints = false;  // table rows cover interior times only
  std::size_t max_table_bytes = std::size_t{4} << 30;
  std::string output_table = "table.csv";
  std::string output_report = "report.json";
  std::vector<CheckSpec> checks;
};

ExperimentConfig load_config_string(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

struct ReplicateRow {
  std::string method;
  int n = 0;
  int s = 0;
  std::uint64_t seed = 0;
  std::string h_name;
  double estimate = 0;
  std::int64_t wall_time_ns = 0;
};

struct ReplicateTable {
  std::vector<ReplicateRow> rows;

  void write_csv(std::ostream& out) const;
  static ReplicateTable read_csv(std::istream& in);
  void save(const std::string& path) const;
  static ReplicateTable load(const std::string& path);
};

/// Worker count: SMC_THREADS when set, hardware concurrency otherwise.
int harness_thread_count();

/// Runs smooth_all for every (method, particle count, replicate) cell and
/// records the estimate of every configured test function at every
/// recorded time. Deterministic given the master seed; cells execute on a
/// bounded worker pool and are merged in cell order. A cell that throws is
/// recorded as NaN rows and the run continues.
ReplicateTable run_replicates(const ExperimentConfig& config,
                              int num_threads = 0);

/// Exact per-(time, function) smoothing expectations from the model
/// oracles (RTS moments for the linear-Gaussian model, exact marginals for
/// the finite HMM).
using TruthTable = std::map<std::pair<int, std::string>, double>;
TruthTable oracle_truth(const StateSpaceModel& model, const PseudoPrior& prior);
TruthTable oracle_truth(const StateSpaceModel& model, const PseudoPrior& prior,
                        const std::vector<TestFunction>& hs);

struct SlopeResult {
  double slope = 0;
  double ci_lo = 0, ci_hi = 0;  // bootstrap percentile interval
  int grid_size = 0;
  int replicates = 0;
};

/// OLS slope of log RMSE against log N. Requires at least four particle
/// counts with fifty replicates each; throws std::domain_error when every
/// error vanishes (a constant function, not a rate).
SlopeResult rmse_slope(const ReplicateTable& table, const TruthTable& truth,
                       const std::string& method, const std::string& h_name,
                       int s, std::uint64_t bootstrap_seed = 7,
                       int bootstrap_reps = 500);

struct ExceedanceResult {
  std::vector<std::pair<int, double>> frequency;  // per particle count
  bool non_increasing = false;  // within binomial two-sigma bands
  int replicates = 0;
};

ExceedanceResult exceedance_curve(const ReplicateTable& table,
                                  const TruthTable& truth,
                                  const std::string& method,
                                  const std::string& h_name, int s,
                                  double epsilon);

struct NormalityResult {
  double skewness = 0;
  double excess_kurtosis = 0;
  bool pass = false;
  int n = 0;
  int replicates = 0;
};

/// Moments of the standardized replicate errors at the largest particle
/// count present for the method. Requires at least 200 replicates.
NormalityResult normality_check(const ReplicateTable& table,
                                const TruthTable& truth,
                                const std::string& method,
                                const std::string& h_name, int s,
                                double max_skew = 0.3,
                                double max_kurtosis = 0.6);

struct VarianceOrderResult {
  double ratio = 0;   // var(method) / var(method_low)
  double margin = 0;  // one-sided acceptance threshold for the ratio
  bool pass = false;
  int n = 0;
  int replicates = 0;
};

/// One-sided comparison var(method) >= var(method_low) up to sampling
/// noise of the two variance estimates (log-variance normal approximation
/// with a kurtosis correction).
VarianceOrderResult variance_compare(const ReplicateTable& table,
                                     const TruthTable& truth,
                                     const std::string& method,
                                     const std::string& method_low,
                                     const std::string& h_name, int s, int n,
                                     double level = 0.05);

struct UniformityResult {
  double max_rmse_short = 0;
  double max_rmse_long = 0;
  double ratio = 0;
  bool pass = false;
};

/// Max-over-time RMSE comparison between a short and a long horizon on a
/// mixing-certified model.
UniformityResult time_uniformity(const ReplicateTable& short_table,
                                 const TruthTable& short_truth,
                                 const ReplicateTable& long_table,
                                 const TruthTable& long_truth,
                                 const std::string& method,
                                 const std::string& h_name, double factor,
                                 const MixingCertificate& certificate);

struct ClaimResult {
  std::string claim;
  double statistic = 0;
  double threshold = 0;
  bool pass = false;
};

/// Evaluates every configured check against the table.
std::vector<ClaimResult> run_checks(const ExperimentConfig& config,
                                    const ReplicateTable& table);

void write_report_json(std::ostream& out,
                       const std::vector<ClaimResult>& claims);

}  // namespace smc
