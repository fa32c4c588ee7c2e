#include <doctest.h>

#include <cmath>
#include <sstream>

#include "smc/errors.hpp"
#include "smc/harness.hpp"
#include "smc/random.hpp"

using namespace smc;

namespace {

const char* kHmmConfig = R"({
  "model": {
    "kind": "hmm",
    "transition": [[0.9, 0.1], [0.2, 0.8]],
    "emission": [[0.7, 0.3], [0.4, 0.6]],
    "init": [0.5, 0.5],
    "observations": [0, 1, 0]
  },
  "gamma": "prior",
  "methods": ["bdm-f", "fwt-lin"],
  "particle_counts": [64, 128],
  "replicates": 3,
  "test_functions": ["ind0"],
  "master_seed": 2026
})";

// Synthetic tables for the statistic checks.
ReplicateTable synthetic_table(const std::vector<int>& ns, int reps,
                               const std::string& method, int s,
                               const std::string& h,
                               const std::function<double(int, int)>& value) {
  ReplicateTable t;
  for (int n : ns)
    for (int r = 0; r < reps; ++r)
      t.rows.push_back({method, n, s, static_cast<std::uint64_t>(r), h,
                        value(n, r), 0});
  return t;
}

TruthTable zero_truth(const std::string& h, int s) {
  TruthTable t;
  t[{s, h}] = 0.0;
  return t;
}

}  // namespace

TEST_CASE("config parsing and validation") {
  const auto config = load_config_string(kHmmConfig);
  CHECK(config.methods.size() == 2);
  CHECK(config.particle_counts == std::vector<int>{64, 128});
  CHECK(config.replicates == 3);
  CHECK(config.test_functions.size() == 1);
  CHECK(!config.record_timing);

  auto bad = std::string(kHmmConfig);
  const auto pos = bad.find("[64, 128]");
  bad.replace(pos, 9, "[128, 64]");
  CHECK_THROWS_AS((void)load_config_string(bad), std::invalid_argument);
}

TEST_CASE("replicate runs count rows and are deterministic") {
  auto config = load_config_string(kHmmConfig);
  config.methods = {SmoothMethod::bdm_f};
  config.particle_counts = {64};
  config.replicates = 1;
  const auto table = run_replicates(config, 2);
  // interior times only: T - 1 rows per test function
  CHECK(table.rows.size() ==
        static_cast<std::size_t>(config.model.horizon - 1));

  auto config2 = load_config_string(kHmmConfig);
  const auto a = run_replicates(config2, 2);
  const auto b = run_replicates(config2, 1);
  REQUIRE(a.rows.size() == b.rows.size());
  std::ostringstream sa, sb;
  a.write_csv(sa);
  b.write_csv(sb);
  CHECK(sa.str() == sb.str());
}

TEST_CASE("replicate estimates concentrate on the oracle value") {
  auto config = load_config_string(kHmmConfig);
  config.methods = {SmoothMethod::bdm_f};
  config.particle_counts = {4096};
  config.replicates = 40;
  const auto table = run_replicates(config, 2);
  const auto truth = oracle_truth(config.model, config.prior,
                                  config.test_functions);
  double mean = 0;
  int count = 0;
  for (const auto& row : table.rows)
    if (row.s == 1) {
      mean += row.estimate;
      ++count;
    }
  mean /= count;
  const double tv = truth.at({1, "ind0"});
  CHECK(std::abs(mean - tv) < 0.01);
}

TEST_CASE("csv round-trips") {
  auto config = load_config_string(kHmmConfig);
  config.replicates = 2;
  const auto table = run_replicates(config, 2);
  std::ostringstream out;
  table.write_csv(out);
  std::istringstream in(out.str());
  const auto back = ReplicateTable::read_csv(in);
  REQUIRE(back.rows.size() == table.rows.size());
  for (std::size_t i = 0; i < back.rows.size(); ++i) {
    CHECK(back.rows[i].method == table.rows[i].method);
    CHECK(back.rows[i].n == table.rows[i].n);
    CHECK(back.rows[i].s == table.rows[i].s);
    CHECK(back.rows[i].seed == table.rows[i].seed);
    CHECK(back.rows[i].h_name == table.rows[i].h_name);
    CHECK(back.rows[i].estimate == table.rows[i].estimate);
  }
}

TEST_CASE("rmse slope recovers an exact power law") {
  const std::vector<int> ns = {128, 256, 512, 1024, 2048};
  // error magnitude exactly N^{-1/2}, alternating sign across replicates
  const auto table = synthetic_table(
      ns, 50, "m", 1, "h", [](int n, int r) {
        return (r % 2 == 0 ? 1.0 : -1.0) / std::sqrt(static_cast<double>(n));
      });
  const auto res = rmse_slope(table, zero_truth("h", 1), "m", "h", 1);
  CHECK(res.slope == doctest::Approx(-0.5).epsilon(1e-9));
  CHECK(res.grid_size == 5);
}

TEST_CASE("rmse slope rejects degenerate and thin inputs") {
  const std::vector<int> ns = {128, 256, 512, 1024};
  const auto zero_table =
      synthetic_table(ns, 50, "m", 1, "h", [](int, int) { return 0.0; });
  CHECK_THROWS_AS(
      (void)rmse_slope(zero_table, zero_truth("h", 1), "m", "h", 1),
      std::domain_error);

  const auto thin = synthetic_table({128, 256, 512}, 50, "m", 1, "h",
                                    [](int, int) { return 1.0; });
  CHECK_THROWS_AS((void)rmse_slope(thin, zero_truth("h", 1), "m", "h", 1),
                  std::invalid_argument);
  const auto few = synthetic_table(ns, 10, "m", 1, "h",
                                   [](int, int) { return 1.0; });
  CHECK_THROWS_AS((void)rmse_slope(few, zero_truth("h", 1), "m", "h", 1),
                  std::invalid_argument);
}

TEST_CASE("exceedance frequencies and verdicts") {
  const std::vector<int> ns = {128, 256, 512};
  const auto table = synthetic_table(
      ns, 100, "m", 1, "h", [](int n, int r) {
        // a fraction ~ 64/n of replicates exceed 0.5
        return (r * n < 6400) ? 1.0 : 0.0;
      });
  const auto truth = zero_truth("h", 1);

  SUBCASE("large epsilon sees nothing") {
    const auto res = exceedance_curve(table, truth, "m", "h", 1, 2.0);
    for (const auto& [n, f] : res.frequency) CHECK(f == 0.0);
    CHECK(res.non_increasing);
  }
  SUBCASE("zero epsilon sees everything nonzero") {
    const auto all = synthetic_table(ns, 100, "m", 1, "h",
                                     [](int, int r) { return 1e-9 * (r + 1); });
    const auto res = exceedance_curve(all, truth, "m", "h", 1, 0.0);
    for (const auto& [n, f] : res.frequency) CHECK(f == 1.0);
  }
  SUBCASE("negative epsilon is rejected") {
    CHECK_THROWS_AS((void)exceedance_curve(table, truth, "m", "h", 1, -0.1),
                    std::invalid_argument);
  }
  SUBCASE("decaying curve is non-increasing") {
    const auto res = exceedance_curve(table, truth, "m", "h", 1, 0.5);
    CHECK(res.non_increasing);
    CHECK(res.frequency.front().second > res.frequency.back().second);
  }
  SUBCASE("growing curve is flagged") {
    const auto grow = synthetic_table(
        ns, 100, "m", 1, "h",
        [](int n, int r) { return (r * 128 < n * 40) ? 1.0 : 0.0; });
    const auto res = exceedance_curve(grow, truth, "m", "h", 1, 0.5);
    CHECK(!res.non_increasing);
  }
}

TEST_CASE("normality verdicts separate gaussian from exponential") {
  RandomStream rng(5150);
  const std::vector<int> ns = {4096};
  auto gauss = synthetic_table(ns, 100000, "m", 1, "h", [&](int, int) {
    return 0.01 * rng.normal();
  });
  const auto truth = zero_truth("h", 1);
  const auto good = normality_check(gauss, truth, "m", "h", 1);
  CHECK(good.pass);
  CHECK(std::abs(good.skewness) < 0.05);

  auto expo = synthetic_table(ns, 100000, "m", 1, "h", [&](int, int) {
    return -std::log(rng.uniform());
  });
  const auto bad = normality_check(expo, truth, "m", "h", 1);
  CHECK(!bad.pass);
  CHECK(bad.skewness > 1.5);

  auto thin = synthetic_table(ns, 100, "m", 1, "h", [&](int, int) {
    return rng.normal();
  });
  CHECK_THROWS_AS((void)normality_check(thin, truth, "m", "h", 1),
                  std::invalid_argument);
}

TEST_CASE("variance ordering verdicts") {
  RandomStream rng(8080);
  ReplicateTable table;
  for (int r = 0; r < 500; ++r) {
    table.rows.push_back({"hi", 1024, 1, static_cast<std::uint64_t>(r), "h",
                          std::sqrt(2.0) * rng.normal(), 0});
    table.rows.push_back({"lo", 1024, 1, static_cast<std::uint64_t>(r), "h",
                          rng.normal(), 0});
  }
  const auto truth = zero_truth("h", 1);
  const auto res = variance_compare(table, truth, "hi", "lo", "h", 1, 1024);
  CHECK(res.ratio == doctest::Approx(2.0).epsilon(0.35));
  CHECK(res.pass);

  // identical populations: ratio near one, still a pass under the margin
  ReplicateTable same;
  for (int r = 0; r < 500; ++r) {
    const double v = rng.normal();
    same.rows.push_back({"hi", 1024, 1, static_cast<std::uint64_t>(r), "h", v, 0});
    same.rows.push_back({"lo", 1024, 1, static_cast<std::uint64_t>(r), "h", v, 0});
  }
  const auto res2 = variance_compare(same, truth, "hi", "lo", "h", 1, 1024);
  CHECK(res2.ratio == doctest::Approx(1.0));
  CHECK(res2.pass);

  // reversed ordering by a wide factor fails
  ReplicateTable rev;
  for (int r = 0; r < 500; ++r) {
    rev.rows.push_back({"hi", 1024, 1, static_cast<std::uint64_t>(r), "h",
                        0.25 * rng.normal(), 0});
    rev.rows.push_back({"lo", 1024, 1, static_cast<std::uint64_t>(r), "h",
                        rng.normal(), 0});
  }
  CHECK(!variance_compare(rev, truth, "hi", "lo", "h", 1, 1024).pass);
}

TEST_CASE("time uniformity compares max errors across horizons") {
  const auto model = make_finite_hmm({{0.9, 0.1}, {0.2, 0.8}},
                                     {{0.7, 0.3}, {0.4, 0.6}}, {0.5, 0.5},
                                     {0.0, 1.0, 0.0});
  const auto prior = prior_marginal_pseudo_prior(model);
  const auto cert = check_mixing(model, prior);

  RandomStream rng(2121);
  auto table_with_noise = [&](int smax, double scale) {
    ReplicateTable t;
    for (int s = 0; s <= smax; ++s)
      for (int r = 0; r < 100; ++r)
        t.rows.push_back({"m", 1024, s, static_cast<std::uint64_t>(r), "h",
                          scale * rng.normal(), 0});
    return t;
  };
  auto truth_for = [](int smax) {
    TruthTable t;
    for (int s = 0; s <= smax; ++s) t[{s, "h"}] = 0.0;
    return t;
  };

  SUBCASE("equal horizons give ratio one") {
    const auto t1 = table_with_noise(5, 0.1);
    const auto res = time_uniformity(t1, truth_for(5), t1, truth_for(5), "m",
                                     "h", 1.5, cert);
    CHECK(res.ratio == doctest::Approx(1.0));
    CHECK(res.pass);
  }
  SUBCASE("linear error growth fails") {
    const auto short_t = table_with_noise(5, 0.1);
    ReplicateTable long_t;
    for (int s = 0; s <= 20; ++s)
      for (int r = 0; r < 100; ++r)
        long_t.rows.push_back({"m", 1024, s, static_cast<std::uint64_t>(r),
                               "h", 0.05 * (1 + s) * rng.normal(), 0});
    const auto res = time_uniformity(short_t, truth_for(5), long_t,
                                     truth_for(20), "m", "h", 1.5, cert);
    CHECK(!res.pass);
  }
}

TEST_CASE("report json carries the four fields per claim") {
  std::vector<ClaimResult> claims = {{"a", 1.5, 1.0, true},
                                     {"b", 0.2, 0.3, false}};
  std::ostringstream out;
  write_report_json(out, claims);
  const auto text = out.str();
  CHECK(text.find("\"claim\": \"a\"") != std::string::npos);
  CHECK(text.find("\"statistic\"") != std::string::npos);
  CHECK(text.find("\"threshold\"") != std::string::npos);
  CHECK(text.find("\"pass\": false") != std::string::npos);
}

TEST_CASE("configured checks run end to end") {
  auto config = load_config_string(kHmmConfig);
  config.methods = {SmoothMethod::fwt_lin};
  config.particle_counts = {128, 256, 512, 1024};
  config.replicates = 60;
  CheckSpec slope;
  slope.claim = "rmse-slope";
  slope.method = "fwt-lin";
  slope.h_name = "ind0";
  slope.s = 1;
  CheckSpec exceed;
  exceed.claim = "exceedance";
  exceed.method = "fwt-lin";
  exceed.h_name = "ind0";
  exceed.s = 1;
  exceed.epsilon = 0.05;
  config.checks = {slope, exceed};

  const auto table = run_replicates(config, 2);
  const auto claims = run_checks(config, table);
  REQUIRE(claims.size() == 2);
  for (const auto& c : claims) {
    CHECK(c.claim.find("R=60") != std::string::npos);
    CHECK(c.claim.find("N=128..1024") != std::string::npos);
  }
  CHECK(claims[1].pass);  // exceedance decays on this fixture
}
