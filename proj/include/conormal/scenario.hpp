#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "conormal/geometry.hpp"
#include "conormal/quantize.hpp"
#include "conormal/relations.hpp"
#include "conormal/report.hpp"

namespace conormal {

/// Named tolerances; overrides must name a known entry.
class Tolerances {
 public:
  Tolerances();
  double get(const std::string& name) const;
  /// Throws SchemaError for unknown names or non-positive values.
  void set(const std::string& name, double value, const std::string& path = "tolerances");
  const std::map<std::string, double>& all() const { return values_; }

 private:
  std::map<std::string, double> values_;
};

struct SubmanifoldDecl {
  std::string name;
  std::string type;  // constraints | graph | product_point
  std::optional<std::string> space;
  std::optional<std::string> source, target;
  ConstraintSubmanifold z;
  std::optional<GraphSubmanifold> graph;
  std::optional<Eigen::VectorXd> star;
  bool star_on_target = true;
  bool simply_connected = false;
  /// Coordinates twists on this submanifold are written in.
  std::vector<std::string> twist_vars() const;
};

struct TwistDecl {
  std::string name;
  std::string submanifold;
  ScalarExpr expr;
};

struct AmplitudeDecl {
  std::string name;
  std::string expression;
  std::map<std::string, Interval> support;
  int cutoff_power = 4;
};

struct TaskDecl {
  std::string name;
  std::string kind;
  Json params;
  std::string path;
};

struct Scenario {
  std::string name = "scenario";
  std::uint64_t seed = 0;
  Tolerances tolerances;
  std::map<std::string, EuclideanPatch> spaces;
  std::map<std::string, SubmanifoldDecl> submanifolds;
  std::map<std::string, TwistDecl> twists;
  std::map<std::string, CanonicalRelation> relations;
  std::map<std::string, AmplitudeDecl> amplitudes;
  std::vector<TaskDecl> tasks;

  /// Throws SchemaError naming the offending field.
  static Scenario from_json(const Json& doc);
  static Scenario load(const std::filesystem::path& path);
};

/// Task kinds the runner understands.
const std::vector<std::string>& task_kinds();

/// Parses the expression against vars; errors name amplitudes.NAME.expression.
Amplitude build_amplitude(const AmplitudeDecl& decl, const std::vector<std::string>& vars);

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::vector<double>> hbar;
  std::optional<std::size_t> grid;
  std::optional<std::size_t> quad_order;
  std::map<std::string, double> tolerances;
  /// Artifacts are written here; without it they are skipped.
  std::optional<std::filesystem::path> out_dir;
  bool timing = false;
};

struct RunResult {
  std::vector<Report> reports;
  Json document;
  bool pass = true;
  int exit_code() const { return pass ? 0 : 1; }
};

RunResult run_scenario(const Scenario& scenario, const RunOptions& options = {});

/// Pretty-printed document with a trailing newline.
std::string serialize(const Json& doc);

}  // namespace conormal
