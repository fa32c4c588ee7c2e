#include "smc/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "smc/errors.hpp"
#include "smc/stats.hpp"

namespace smc {

namespace {

PseudoPrior prior_from_spec(const StateSpaceModel& model,
                            const std::string& spec) {
  if (spec == "prior") return prior_marginal_pseudo_prior(model);
  throw std::invalid_argument("unknown gamma spec: " + spec);
}

CheckSpec check_from_json(const nlohmann::json& j) {
  CheckSpec c;
  c.claim = j.at("claim").get<std::string>();
  if (j.contains("method")) c.method = j["method"].get<std::string>();
  if (j.contains("method_low")) c.method_low = j["method_low"].get<std::string>();
  if (j.contains("h")) c.h_name = j["h"].get<std::string>();
  if (j.contains("s")) c.s = j["s"].get<int>();
  if (j.contains("epsilon")) c.epsilon = j["epsilon"].get<double>();
  if (j.contains("band")) {
    c.band_lo = j["band"][0].get<double>();
    c.band_hi = j["band"][1].get<double>();
  }
  if (j.contains("max_skew")) c.max_skew = j["max_skew"].get<double>();
  if (j.contains("max_kurtosis"))
    c.max_kurtosis = j["max_kurtosis"].get<double>();
  if (j.contains("level")) c.level = j["level"].get<double>();
  if (j.contains("factor")) c.factor = j["factor"].get<double>();
  if (j.contains("baseline_config"))
    c.baseline_config = j["baseline_config"].get<std::string>();
  if (j.contains("baseline_table"))
    c.baseline_table = j["baseline_table"].get<std::string>();
  return c;
}

std::vector<const ReplicateRow*> select_rows(const ReplicateTable& table,
                                             const std::string& method,
                                             const std::string& h_name, int s,
                                             std::optional<int> n = {}) {
  std::vector<const ReplicateRow*> out;
  for (const auto& row : table.rows) {
    if (row.method != method || row.h_name != h_name || row.s != s) continue;
    if (n && row.n != *n) continue;
    if (std::isnan(row.estimate)) continue;
    out.push_back(&row);
  }
  return out;
}

double truth_at(const TruthTable& truth, int s, const std::string& h_name) {
  const auto it = truth.find({s, h_name});
  if (it == truth.end())
    throw std::invalid_argument("no oracle value for s=" + std::to_string(s) +
                                " h=" + h_name);
  return it->second;
}

std::vector<int> distinct_counts(const std::vector<const ReplicateRow*>& rows) {
  std::vector<int> ns;
  for (const auto* r : rows) ns.push_back(r->n);
  std::sort(ns.begin(), ns.end());
  ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
  return ns;
}

}  // namespace

ExperimentConfig load_config_string(const std::string& text) {
  const auto doc = nlohmann::json::parse(text);
  ExperimentConfig c;
  c.model = model_from_json_string(doc.at("model").dump());
  c.prior = prior_from_spec(c.model, doc.value("gamma", std::string("prior")));
  c.proposal_spec = doc.value("proposals", std::string("default"));
  if (c.proposal_spec != "default" && c.proposal_spec != "matched")
    throw std::invalid_argument("unknown proposal spec: " + c.proposal_spec);
  for (const auto& m : doc.at("methods"))
    c.methods.push_back(smooth_method_from_string(m.get<std::string>()));
  c.particle_counts = doc.at("particle_counts").get<std::vector<int>>();
  for (std::size_t i = 1; i < c.particle_counts.size(); ++i)
    if (c.particle_counts[i] <= c.particle_counts[i - 1])
      throw std::invalid_argument("particle_counts must be strictly increasing");
  c.replicates = doc.at("replicates").get<int>();
  if (c.replicates < 1)
    throw std::invalid_argument("replicates must be at least 1");
  for (const auto& h : doc.at("test_functions"))
    c.test_functions.push_back(test_function(h.get<std::string>()));
  c.master_seed = doc.at("master_seed").get<std::uint64_t>();
  c.record_timing = doc.value("record_timing", false);
  c.include_endpoints = doc.value("include_endpoints", false);
  if (doc.contains("max_table_gib"))
    c.max_table_bytes = static_cast<std::size_t>(
        doc["max_table_gib"].get<double>() * (std::size_t{1} << 30));
  c.output_table = doc.value("output_table", std::string("table.csv"));
  c.output_report = doc.value("output_report", std::string("report.json"));
  if (doc.contains("checks"))
    for (const auto& j : doc["checks"]) c.checks.push_back(check_from_json(j));
  // Fail early on invalid method/proposal pairings rather than inside the
  // worker pool.
  for (SmoothMethod m : c.methods)
    if (m == SmoothMethod::product && c.model.kind == ModelKind::custom)
      throw std::invalid_argument("product method requires a canonical model");
  return c;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_config_string(buf.str());
}

void ReplicateTable::write_csv(std::ostream& out) const {
  out << "method,N,s,seed,h_name,estimate,wall_time_ns\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.estimate);
    out << r.method << ',' << r.n << ',' << r.s << ',' << r.seed << ','
        << r.h_name << ',' << buf << ',' << r.wall_time_ns << '\n';
  }
}

ReplicateTable ReplicateTable::read_csv(std::istream& in) {
  ReplicateTable table;
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("replicate table: empty input");
  if (line != "method,N,s,seed,h_name,estimate,wall_time_ns")
    throw std::runtime_error("replicate table: unexpected header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    ReplicateRow r;
    std::string field;
    std::getline(ss, r.method, ',');
    std::getline(ss, field, ',');
    r.n = std::stoi(field);
    std::getline(ss, field, ',');
    r.s = std::stoi(field);
    std::getline(ss, field, ',');
    r.seed = std::stoull(field);
    std::getline(ss, r.h_name, ',');
    std::getline(ss, field, ',');
    r.estimate = std::strtod(field.c_str(), nullptr);
    std::getline(ss, field, ',');
    r.wall_time_ns = std::stoll(field);
    table.rows.push_back(std::move(r));
  }
  return table;
}

void ReplicateTable::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write table: " + path);
  write_csv(out);
}

ReplicateTable ReplicateTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open table: " + path);
  return read_csv(in);
}

int harness_thread_count() {
  if (const char* env = std::getenv("SMC_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

ReplicateTable run_replicates(const ExperimentConfig& config, int num_threads) {
  if (num_threads <= 0) num_threads = harness_thread_count();
  const int T = config.model.horizon;
  const int s_lo = config.include_endpoints ? 0 : 1;
  const int s_hi = config.include_endpoints ? T : T - 1;

  struct Cell {
    std::size_t method_index, n_index;
    int replicate;
  };
  std::vector<Cell> cells;
  for (std::size_t mi = 0; mi < config.methods.size(); ++mi)
    for (std::size_t ni = 0; ni < config.particle_counts.size(); ++ni)
      for (int r = 0; r < config.replicates; ++r) cells.push_back({mi, ni, r});

  std::vector<std::vector<ReplicateRow>> results(cells.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&]() {
    const ProposalBundle proposals =
        config.proposal_spec == "matched"
            ? matched_proposals(config.model, config.prior)
            : default_proposals(config.model, config.prior);
    SmoothOptions options;
    options.max_table_bytes = config.max_table_bytes;
    options.record_timing = config.record_timing;
    options.compute_endpoints = config.include_endpoints;
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= cells.size()) return;
      const Cell& cell = cells[k];
      const SmoothMethod method = config.methods[cell.method_index];
      const int n = config.particle_counts[cell.n_index];
      // Methods at the same (N, replicate) share a run seed: the filter
      // passes are a pure function of (proposals, N, seed), so every
      // method combines the same two particle populations and method
      // comparisons isolate the combiner noise.
      const std::uint64_t rep_seed =
          derive_key(config.master_seed,
                     static_cast<std::uint64_t>(cell.replicate));
      const std::uint64_t run_seed = derive_key(rep_seed, cell.n_index);
      auto& rows = results[k];
      try {
        const SmoothResult smooth = smooth_all(config.model, config.prior,
                                               proposals, method, n, run_seed,
                                               options);
        for (const auto& marginal : smooth.marginals) {
          const int s = marginal.time();
          if (s < s_lo || s > s_hi) continue;
          const auto values = marginal.estimate_all(config.test_functions);
          for (std::size_t hi_ = 0; hi_ < values.size(); ++hi_) {
            ReplicateRow row;
            row.method = to_string(method);
            row.n = n;
            row.s = s;
            row.seed = rep_seed;
            row.h_name = config.test_functions[hi_].name;
            row.estimate = values[hi_];
            row.wall_time_ns = config.record_timing
                                   ? smooth.combine_ns[static_cast<std::size_t>(s)]
                                   : 0;
            rows.push_back(std::move(row));
          }
        }
      } catch (const std::exception& e) {
        std::cerr << "replicate cell failed (method=" << to_string(method)
                  << " N=" << n << " rep=" << cell.replicate
                  << "): " << e.what() << '\n';
        rows.clear();
        for (int s = s_lo; s <= s_hi; ++s)
          for (const auto& h : config.test_functions)
            rows.push_back({to_string(method), n, s, rep_seed, h.name,
                            std::numeric_limits<double>::quiet_NaN(), 0});
      }
    }
  };

  const int pool = std::min<int>(num_threads, static_cast<int>(cells.size()));
  std::vector<std::thread> threads;
  for (int i = 0; i < std::max(1, pool); ++i) threads.emplace_back(worker);
  for (auto& t : threads) t.join();

  ReplicateTable table;
  for (auto& rows : results)
    for (auto& row : rows) table.rows.push_back(std::move(row));
  return table;
}

TruthTable oracle_truth(const StateSpaceModel& model,
                        const PseudoPrior& prior) {
  return oracle_truth(model, prior,
                      {test_function("ind0"), test_function("id_clip10")});
}

TruthTable oracle_truth(const StateSpaceModel& model, const PseudoPrior& prior,
                        const std::vector<TestFunction>& hs) {
  TruthTable truth;
  const int T = model.horizon;
  if (model.kind == ModelKind::finite_hmm) {
    const auto exact = hmm_exact(model, prior);
    for (int s = 0; s <= T; ++s) {
      const auto& probs = exact.smoother[static_cast<std::size_t>(s)].probs;
      for (const auto& h : hs) {
        double v = 0;
        for (std::size_t k = 0; k < probs.size(); ++k)
          v += probs[k] * h(static_cast<double>(k));
        truth[{s, h.name}] = v;
      }
    }
    return truth;
  }
  if (model.kind == ModelKind::lgssm) {
    const auto kr = kalman_rts(model);
    for (int s = 0; s <= T; ++s) {
      const auto& g = kr.smoother[static_cast<std::size_t>(s)];
      for (const auto& h : hs)
        truth[{s, h.name}] = h.gaussian_expectation(g.mean, std::sqrt(g.variance));
    }
    return truth;
  }
  throw std::invalid_argument("oracle truth requires a canonical model");
}

SlopeResult rmse_slope(const ReplicateTable& table, const TruthTable& truth,
                       const std::string& method, const std::string& h_name,
                       int s, std::uint64_t bootstrap_seed,
                       int bootstrap_reps) {
  const auto rows = select_rows(table, method, h_name, s);
  const auto counts = distinct_counts(rows);
  if (counts.size() < 4)
    throw std::invalid_argument("rmse_slope needs at least 4 particle counts");
  const double tv = truth_at(truth, s, h_name);

  std::vector<std::vector<double>> errors(counts.size());
  for (const auto* r : rows) {
    const auto it = std::lower_bound(counts.begin(), counts.end(), r->n);
    errors[static_cast<std::size_t>(it - counts.begin())].push_back(
        r->estimate - tv);
  }
  int min_reps = std::numeric_limits<int>::max();
  for (const auto& e : errors) min_reps = std::min<int>(min_reps, e.size());
  if (min_reps < 50)
    throw std::invalid_argument("rmse_slope needs at least 50 replicates per N");

  std::vector<double> logn(counts.size()), logr(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double r = rms(errors[i]);
    if (r == 0.0)
      throw std::domain_error(
          "rmse_slope: degenerate zero error (constant estimates)");
    logn[i] = std::log(static_cast<double>(counts[i]));
    logr[i] = std::log(r);
  }

  SlopeResult out;
  out.slope = ols_fit(logn, logr).slope;
  out.grid_size = static_cast<int>(counts.size());
  out.replicates = min_reps;

  // Percentile bootstrap over replicates within each particle count.
  std::vector<double> slopes;
  slopes.reserve(static_cast<std::size_t>(bootstrap_reps));
  RandomStream rng(bootstrap_seed);
  for (int b = 0; b < bootstrap_reps; ++b) {
    std::vector<double> lr(counts.size());
    bool ok = true;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      const auto& e = errors[i];
      double ss = 0;
      for (std::size_t k = 0; k < e.size(); ++k) {
        const double v =
            e[static_cast<std::size_t>(rng.next_u64() % e.size())];
        ss += v * v;
      }
      if (ss == 0) {
        ok = false;
        break;
      }
      lr[i] = 0.5 * std::log(ss / static_cast<double>(e.size()));
    }
    if (ok) slopes.push_back(ols_fit(logn, lr).slope);
  }
  std::sort(slopes.begin(), slopes.end());
  if (!slopes.empty()) {
    out.ci_lo = slopes[static_cast<std::size_t>(0.025 * (slopes.size() - 1))];
    out.ci_hi = slopes[static_cast<std::size_t>(0.975 * (slopes.size() - 1))];
  }
  return out;
}

ExceedanceResult exceedance_curve(const ReplicateTable& table,
                                  const TruthTable& truth,
                                  const std::string& method,
                                  const std::string& h_name, int s,
                                  double epsilon) {
  if (epsilon < 0) throw std::invalid_argument("epsilon must be nonnegative");
  const auto rows = select_rows(table, method, h_name, s);
  const auto counts = distinct_counts(rows);
  if (counts.empty())
    throw std::invalid_argument("exceedance_curve: no matching rows");
  const double tv = truth_at(truth, s, h_name);

  ExceedanceResult out;
  std::vector<int> exceed(counts.size(), 0), total(counts.size(), 0);
  for (const auto* r : rows) {
    const auto it = std::lower_bound(counts.begin(), counts.end(), r->n);
    const std::size_t i = static_cast<std::size_t>(it - counts.begin());
    ++total[i];
    if (std::abs(r->estimate - tv) > epsilon) ++exceed[i];
  }
  out.replicates = *std::min_element(total.begin(), total.end());
  for (std::size_t i = 0; i < counts.size(); ++i)
    out.frequency.emplace_back(counts[i],
                               static_cast<double>(exceed[i]) / total[i]);

  out.non_increasing = true;
  for (std::size_t i = 0; i + 1 < counts.size(); ++i) {
    const double p0 = out.frequency[i].second, p1 = out.frequency[i + 1].second;
    const double band =
        2.0 * std::sqrt((p0 * (1 - p0) + p1 * (1 - p1)) /
                        static_cast<double>(out.replicates));
    if (p1 > p0 + band) out.non_increasing = false;
  }
  return out;
}

NormalityResult normality_check(const ReplicateTable& table,
                                const TruthTable& truth,
                                const std::string& method,
                                const std::string& h_name, int s,
                                double max_skew, double max_kurtosis) {
  const auto rows = select_rows(table, method, h_name, s);
  const auto counts = distinct_counts(rows);
  if (counts.empty())
    throw std::invalid_argument("normality_check: no matching rows");
  const int n = counts.back();
  const double tv = truth_at(truth, s, h_name);
  std::vector<double> errors;
  for (const auto* r : rows)
    if (r->n == n) errors.push_back(r->estimate - tv);
  if (static_cast<int>(errors.size()) < 200)
    throw std::invalid_argument("normality_check needs at least 200 replicates");

  const auto m = sample_moments(errors);
  NormalityResult out;
  out.skewness = m.skewness;
  out.excess_kurtosis = m.excess_kurtosis;
  out.n = n;
  out.replicates = m.count;
  out.pass = std::abs(m.skewness) < max_skew &&
             std::abs(m.excess_kurtosis) < max_kurtosis;
  return out;
}

VarianceOrderResult variance_compare(const ReplicateTable& table,
                                     const TruthTable& truth,
                                     const std::string& method,
                                     const std::string& method_low,
                                     const std::string& h_name, int s, int n,
                                     double level) {
  (void)truth;
  const auto rows_hi = select_rows(table, method, h_name, s, n);
  const auto rows_lo = select_rows(table, method_low, h_name, s, n);
  if (rows_hi.size() < 200 || rows_lo.size() < 200)
    throw std::invalid_argument(
        "variance_compare needs at least 200 replicates per method");
  if (rows_hi.size() != rows_lo.size())
    throw std::invalid_argument("variance_compare: mismatched configurations");

  auto values = [](const std::vector<const ReplicateRow*>& rows) {
    std::vector<double> v;
    v.reserve(rows.size());
    for (const auto* r : rows) v.push_back(r->estimate);
    return v;
  };
  const auto mh = sample_moments(values(rows_hi));
  const auto ml = sample_moments(values(rows_lo));

  VarianceOrderResult out;
  out.n = n;
  out.replicates = static_cast<int>(rows_hi.size());
  out.ratio = mh.variance / ml.variance;
  // var(log s^2) ~ 2/(R-1) + excess kurtosis / R for each sample.
  const double vh = 2.0 / (mh.count - 1.0) +
                    std::max(0.0, mh.excess_kurtosis) / mh.count;
  const double vl = 2.0 / (ml.count - 1.0) +
                    std::max(0.0, ml.excess_kurtosis) / ml.count;
  const double z = normal_quantile(level);
  out.margin = std::exp(z * std::sqrt(vh + vl));
  out.pass = out.ratio >= out.margin;
  return out;
}

UniformityResult time_uniformity(const ReplicateTable& short_table,
                                 const TruthTable& short_truth,
                                 const ReplicateTable& long_table,
                                 const TruthTable& long_truth,
                                 const std::string& method,
                                 const std::string& h_name, double factor,
                                 const MixingCertificate& certificate) {
  if (!(certificate.trans_min > 0) || !(certificate.backward_step_min > 0) ||
      !(certificate.prior_min > 0) || !(certificate.step_potential_min > 0))
    throw MixingViolation("time_uniformity requires a valid mixing certificate");

  auto max_rmse = [&](const ReplicateTable& table, const TruthTable& truth) {
    std::map<int, std::vector<double>> by_s;
    for (const auto& row : table.rows) {
      if (row.method != method || row.h_name != h_name) continue;
      if (std::isnan(row.estimate)) continue;
      by_s[row.s].push_back(row.estimate - truth_at(truth, row.s, h_name));
    }
    if (by_s.empty())
      throw std::invalid_argument("time_uniformity: no matching rows");
    double worst = 0;
    for (const auto& [s, errors] : by_s) worst = std::max(worst, rms(errors));
    return worst;
  };

  UniformityResult out;
  out.max_rmse_short = max_rmse(short_table, short_truth);
  out.max_rmse_long = max_rmse(long_table, long_truth);
  out.ratio = out.max_rmse_long / out.max_rmse_short;
  out.pass = out.ratio <= factor;
  return out;
}

namespace {

std::string range_tag(const ReplicateTable& table, const std::string& method) {
  std::vector<int> ns;
  int reps = 0;
  std::map<int, int> per_n;
  for (const auto& row : table.rows)
    if (row.method == method) ++per_n[row.n];
  for (const auto& [n, c] : per_n) {
    ns.push_back(n);
    reps = std::max(reps, c);
  }
  if (ns.empty()) return "N=?:R=?";
  std::ostringstream os;
  os << "N=" << ns.front();
  if (ns.size() > 1) os << ".." << ns.back();
  os << ":R=" << reps;
  return os.str();
}

}  // namespace

std::vector<ClaimResult> run_checks(const ExperimentConfig& config,
                                    const ReplicateTable& table) {
  std::vector<ClaimResult> claims;
  const TruthTable truth =
      oracle_truth(config.model, config.prior, config.test_functions);

  for (const auto& check : config.checks) {
    ClaimResult result;
    std::ostringstream id;
    id << check.claim << ':' << check.method;
    if (!check.h_name.empty()) id << ":h=" << check.h_name;
    id << ":s=" << check.s << ':' << range_tag(table, check.method);
    try {
      if (check.claim == "rmse-slope") {
        const auto r = rmse_slope(table, truth, check.method, check.h_name,
                                  check.s, config.master_seed ^ 0x5105);
        result.statistic = r.slope;
        result.threshold = check.band_lo;
        result.pass = r.slope >= check.band_lo && r.slope <= check.band_hi;
      } else if (check.claim == "exceedance") {
        const auto r = exceedance_curve(table, truth, check.method,
                                        check.h_name, check.s, check.epsilon);
        result.statistic = r.non_increasing ? 1.0 : 0.0;
        result.threshold = 1.0;
        result.pass = r.non_increasing;
      } else if (check.claim == "normality") {
        const auto r = normality_check(table, truth, check.method, check.h_name,
                                       check.s, check.max_skew,
                                       check.max_kurtosis);
        result.statistic = std::max(std::abs(r.skewness) / check.max_skew,
                                    std::abs(r.excess_kurtosis) /
                                        check.max_kurtosis);
        result.threshold = 1.0;
        result.pass = r.pass;
      } else if (check.claim == "variance-order") {
        int n = 0;
        for (const auto& row : table.rows)
          if (row.method == check.method) n = std::max(n, row.n);
        const auto r = variance_compare(table, truth, check.method,
                                        check.method_low, check.h_name,
                                        check.s, n, check.level);
        result.statistic = r.ratio;
        result.threshold = r.margin;
        result.pass = r.pass;
      } else if (check.claim == "time-uniformity") {
        const auto baseline_config = load_config_file(check.baseline_config);
        const auto baseline_table = ReplicateTable::load(check.baseline_table);
        const auto baseline_truth =
            oracle_truth(baseline_config.model, baseline_config.prior,
                         baseline_config.test_functions);
        const auto certificate = check_mixing(config.model, config.prior);
        const auto r = time_uniformity(baseline_table, baseline_truth, table,
                                       truth, check.method, check.h_name,
                                       check.factor, certificate);
        result.statistic = r.ratio;
        result.threshold = check.factor;
        result.pass = r.pass;
      } else {
        throw std::invalid_argument("unknown claim: " + check.claim);
      }
    } catch (const std::exception& e) {
      std::cerr << "check '" << id.str() << "' failed to evaluate: " << e.what()
                << '\n';
      result.statistic = std::numeric_limits<double>::quiet_NaN();
      result.threshold = 0;
      result.pass = false;
    }
    result.claim = id.str();
    claims.push_back(std::move(result));
  }
  return claims;
}

void write_report_json(std::ostream& out,
                       const std::vector<ClaimResult>& claims) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& c : claims) {
    doc.push_back({{"claim", c.claim},
                   {"statistic", c.statistic},
                   {"threshold", c.threshold},
                   {"pass", c.pass}});
  }
  out << doc.dump(2) << '\n';
}

}  // namespace smc
