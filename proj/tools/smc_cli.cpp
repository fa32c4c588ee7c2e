#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "smc/harness.hpp"

namespace {

int write_report(const std::string& path,
                 const std::vector<smc::ClaimResult>& claims) {
  std::ofstream out(path);
  if (!out) {
    std::cerr << "cannot write report: " << path << '\n';
    return 1;
  }
  smc::write_report_json(out, claims);
  bool all_pass = true;
  for (const auto& c : claims) {
    std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.claim
              << " statistic=" << c.statistic << " threshold=" << c.threshold
              << '\n';
    all_pass = all_pass && c.pass;
  }
  return all_pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-filter marginal smoothing experiments"};
  app.require_subcommand(1);

  std::string config_path, table_path, report_path, out_path;

  auto* run = app.add_subcommand("run",
                                 "run replicates, write the table CSV and "
                                 "evaluate the configured checks");
  run->add_option("config", config_path, "experiment config JSON")->required();
  run->add_option("--table", table_path, "override the output table path");
  run->add_option("--report", report_path, "override the output report path");

  auto* verify = app.add_subcommand(
      "verify", "re-run the configured statistics on an existing table");
  verify->add_option("table", table_path, "replicate table CSV")->required();
  verify->add_option("config", config_path, "experiment config JSON")
      ->required();
  verify->add_option("--report", report_path, "override the report path");

  auto* oracle =
      app.add_subcommand("oracle", "emit exact oracle values as a CSV");
  oracle->add_option("config", config_path, "experiment config JSON")
      ->required();
  oracle->add_option("--out", out_path, "oracle CSV path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      auto config = smc::load_config_file(config_path);
      if (!table_path.empty()) config.output_table = table_path;
      if (!report_path.empty()) config.output_report = report_path;
      const auto table = smc::run_replicates(config);
      table.save(config.output_table);
      std::cout << "wrote " << table.rows.size() << " rows to "
                << config.output_table << '\n';
      const auto claims = smc::run_checks(config, table);
      return write_report(config.output_report, claims);
    }
    if (verify->parsed()) {
      auto config = smc::load_config_file(config_path);
      if (!report_path.empty()) config.output_report = report_path;
      const auto table = smc::ReplicateTable::load(table_path);
      const auto claims = smc::run_checks(config, table);
      return write_report(config.output_report, claims);
    }
    if (oracle->parsed()) {
      const auto config = smc::load_config_file(config_path);
      const auto truth =
          smc::oracle_truth(config.model, config.prior, config.test_functions);
      smc::ReplicateTable table;
      const int T = config.model.horizon;
      const int s_lo = config.include_endpoints ? 0 : 1;
      const int s_hi = config.include_endpoints ? T : T - 1;
      for (int s = s_lo; s <= s_hi; ++s)
        for (const auto& h : config.test_functions)
          table.rows.push_back(
              {"oracle", 0, s, 0, h.name, truth.at({s, h.name}), 0});
      if (out_path.empty()) {
        table.write_csv(std::cout);
      } else {
        table.save(out_path);
        std::cout << "wrote " << table.rows.size() << " oracle rows to "
                  << out_path << '\n';
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
