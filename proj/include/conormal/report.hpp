#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace conormal {

using Json = nlohmann::ordered_json;

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

/// Non-finite values become the strings "inf", "-inf", "nan"; JSON has no literal for them.
Json json_number(double v);

struct Check {
  std::string name;
  std::string module;
  double value = 0.0;
  double tolerance = 0.0;
  std::string comparison;  // "<=", "<", ">=", ">", "=="
  bool pass = false;
};

Check check_le(std::string name, std::string module, double value, double tol);
Check check_lt(std::string name, std::string module, double value, double tol);
Check check_ge(std::string name, std::string module, double value, double bound);
Check check_gt(std::string name, std::string module, double value, double bound);
Check check_eq(std::string name, std::string module, double value, double expected);

struct Report {
  std::string task;
  std::string kind;
  std::uint64_t seed = 0;
  Json inputs = Json::object();
  Json results = Json::object();
  std::vector<Check> checks;
  std::vector<std::string> artifacts;
  std::vector<std::string> notes;
  std::optional<double> wall_time_ms;
  /// Set when the task itself failed (module error) rather than a check.
  std::optional<std::string> error;

  bool pass() const;
  void add(Check c) { checks.push_back(std::move(c)); }
};

Json to_json(const Report& r);
/// One row per check: task,kind,check,module,value,tolerance,comparison,pass.
std::string to_csv(const std::vector<Report>& reports);

}  // namespace conormal
