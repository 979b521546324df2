#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "conormal/error.hpp"
#include "conormal/report.hpp"
#include "conormal/scenario.hpp"

namespace {

constexpr int kExitUsage = 2;

std::map<std::string, double> parse_tolerances(const std::vector<std::string>& items) {
  std::map<std::string, double> out;
  for (const auto& item : items) {
    auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw conormal::SchemaError("--tol", "expected NAME=VALUE, got " + item);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item.substr(eq + 1), &used);
    } catch (const std::exception&) {
      throw conormal::SchemaError("--tol", "bad value in " + item);
    }
    if (used != item.size() - eq - 1) throw conormal::SchemaError("--tol", "bad value in " + item);
    out[item.substr(0, eq)] = v;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Run a conormal scenario and write its report"};
  std::string scenario_path, out_dir, format = "json";
  std::optional<std::uint64_t> seed;
  std::vector<double> hbar;
  std::optional<std::size_t> grid, quad_order;
  std::vector<std::string> tols;
  bool timing = false;

  app.add_option("--scenario", scenario_path, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "Directory for report and artifacts (default: report on stdout)");
  app.add_option("--seed", seed, "Override the scenario seed");
  app.add_option("--hbar", hbar, "Override every hbar list, comma separated")->delimiter(',');
  app.add_option("--grid", grid, "Override grid points per axis")->check(CLI::PositiveNumber);
  app.add_option("--quad-order", quad_order, "Override the Gauss-Legendre order")->check(CLI::PositiveNumber);
  app.add_option("--tol", tols, "Override a named tolerance, NAME=VALUE");
  app.add_option("--format", format, "Report format")->check(CLI::IsMember({"json", "csv"}));
  app.add_flag("--timing", timing, "Record wall time per task");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    conormal::Scenario sc = conormal::Scenario::load(scenario_path);
    conormal::RunOptions opt;
    opt.seed = seed;
    if (!hbar.empty()) opt.hbar = hbar;
    opt.grid = grid;
    opt.quad_order = quad_order;
    opt.tolerances = parse_tolerances(tols);
    opt.timing = timing;
    if (!out_dir.empty()) opt.out_dir = out_dir;

    conormal::RunResult res = conormal::run_scenario(sc, opt);
    const std::string text = format == "csv" ? conormal::to_csv(res.reports) : conormal::serialize(res.document);
    if (opt.out_dir) {
      std::filesystem::create_directories(*opt.out_dir);
      auto path = *opt.out_dir / (format == "csv" ? "report.csv" : "report.json");
      std::ofstream os(path, std::ios::binary);
      if (!os) {
        std::cerr << "cannot write " << path << "\n";
        return 1;
      }
      os << text;
      for (const auto& r : res.reports) {
        std::cerr << (r.pass() ? "PASS " : "FAIL ") << r.task << " (" << r.kind << ")";
        if (r.error) std::cerr << ": " << *r.error;
        std::cerr << "\n";
      }
    } else {
      std::cout << text;
    }
    return res.exit_code();
  } catch (const conormal::SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
