#include "conormal/report.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace conormal {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

Json json_number(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

namespace {

Check make(std::string name, std::string module, double value, double tol, const char* cmp, bool pass) {
  return {std::move(name), std::move(module), value, tol, cmp, pass};
}

}  // namespace

Check check_le(std::string name, std::string module, double value, double tol) {
  return make(std::move(name), std::move(module), value, tol, "<=", value <= tol);
}
Check check_lt(std::string name, std::string module, double value, double tol) {
  return make(std::move(name), std::move(module), value, tol, "<", value < tol);
}
Check check_ge(std::string name, std::string module, double value, double bound) {
  return make(std::move(name), std::move(module), value, bound, ">=", value >= bound);
}
Check check_gt(std::string name, std::string module, double value, double bound) {
  return make(std::move(name), std::move(module), value, bound, ">", value > bound);
}
Check check_eq(std::string name, std::string module, double value, double expected) {
  return make(std::move(name), std::move(module), value, expected, "==", value == expected);
}

bool Report::pass() const {
  if (error) return false;
  for (const auto& c : checks)
    if (!c.pass) return false;
  return true;
}

Json to_json(const Report& r) {
  Json j;
  j["task"] = r.task;
  j["kind"] = r.kind;
  j["seed"] = r.seed;
  j["inputs"] = r.inputs;
  j["results"] = r.results;
  Json checks = Json::array();
  for (const auto& c : r.checks) {
    Json cj;
    cj["name"] = c.name;
    cj["module"] = c.module;
    cj["value"] = json_number(c.value);
    cj["tolerance"] = json_number(c.tolerance);
    cj["comparison"] = c.comparison;
    cj["pass"] = c.pass;
    checks.push_back(std::move(cj));
  }
  j["checks"] = std::move(checks);
  if (!r.artifacts.empty()) j["artifacts"] = r.artifacts;
  if (!r.notes.empty()) j["notes"] = r.notes;
  if (r.error) j["error"] = *r.error;
  if (r.wall_time_ms) j["wall_time_ms"] = *r.wall_time_ms;
  j["pass"] = r.pass();
  return j;
}

std::string to_csv(const std::vector<Report>& reports) {
  std::ostringstream os;
  os << "task,kind,check,module,value,tolerance,comparison,pass\n";
  for (const auto& r : reports)
    for (const auto& c : r.checks)
      os << r.task << ',' << r.kind << ',' << c.name << ',' << c.module << ',' << format_double(c.value) << ','
         << format_double(c.tolerance) << ',' << c.comparison << ',' << (c.pass ? "true" : "false") << '\n';
  return os.str();
}

}  // namespace conormal
