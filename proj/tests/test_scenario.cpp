#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "conormal/error.hpp"
#include "conormal/scenario.hpp"
#include "oracles.hpp"

using namespace conormal;
namespace fs = std::filesystem;

namespace {

const fs::path kScenarios = fs::path(CONORMAL_SOURCE_DIR) / "scenarios";

Json two_graphs() {
  return Json::parse(R"({
    "seed": 5,
    "spaces": {"X1": {"coords": ["x1"], "box": [[-1, 1]]}, "X2": {"coords": ["x2"], "box": [[-3, 3]]},
               "X3": {"coords": ["x3"], "box": [[-3, 3]]}},
    "submanifolds": {
      "Z1": {"type": "graph", "source": "X1", "target": "X2", "map": ["2*x1 - 0.5*x1^2"]},
      "Z2": {"type": "graph", "source": "X2", "target": "X3", "map": ["x2 + 1"]},
      "C": {"type": "constraints", "source": "X1", "target": "X2", "constraints": ["x1^2 + x2^2 - 1"]}
    },
    "twists": {"f1": {"submanifold": "Z1", "expression": "x1^2"},
               "f2": {"submanifold": "Z2", "expression": "x2^2"}},
    "relations": {"G1": {"submanifold": "Z1", "twist": "f1"}, "G2": {"submanifold": "Z2", "twist": "f2"},
                  "C": {"submanifold": "C"}},
    "tasks": []
  })");
}

std::string schema_path(const Json& doc) {
  try {
    Scenario::from_json(doc);
  } catch (const SchemaError& e) {
    return e.path();
  }
  return "";
}

int run_cli(const std::string& args) {
  std::string cmd = std::string(CONORMAL_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("conormal_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("an empty task list passes with an empty report") {
  Scenario sc = Scenario::from_json(Json::parse(R"({"tasks": []})"));
  RunResult res = run_scenario(sc);
  CHECK(res.exit_code() == 0);
  CHECK(res.reports.empty());
  CHECK(res.document["reports"].empty());
  CHECK(res.document["pass"] == true);
}

TEST_CASE("schema errors name the offending field") {
  Json doc = two_graphs();
  doc["twists"]["f1"]["expression"] = "x1^^2";
  CHECK(schema_path(doc) == "$.twists.f1.expression");

  doc = two_graphs();
  doc["twists"]["f1"]["expression"] = "x3 + 1";
  CHECK(schema_path(doc) == "$.twists.f1.expression");

  doc = two_graphs();
  doc["relations"]["G1"]["twist"] = "nope";
  CHECK(schema_path(doc) == "$.relations.G1.twist");

  doc = two_graphs();
  doc["submanifolds"]["Z1"]["source"] = "X9";
  CHECK(schema_path(doc) == "$.submanifolds.Z1.source");

  doc = two_graphs();
  doc["tasks"] = Json::parse(R"([{"kind": "compose", "first": "G1", "second": "Gx", "as": "G"}])");
  CHECK(schema_path(doc) == "$.tasks[0].second");

  doc = two_graphs();
  doc["tasks"] = Json::parse(R"([{"kind": "teleport"}])");
  CHECK(schema_path(doc) == "$.tasks[0].kind");

  doc = two_graphs();
  doc["tasks"] = Json::parse(R"([{"kind": "lagrangian-check", "relation": "G1", "sample": 3}])");
  CHECK(schema_path(doc) == "$.tasks[0].sample");

  doc = two_graphs();
  doc["tasks"] = Json::parse(R"([{"kind": "compose", "first": "G1", "second": "G2"}])");
  CHECK(schema_path(doc) == "$.tasks[0].as");

  doc = two_graphs();
  doc["tolerances"] = {{"lagrangain", 1e-3}};
  CHECK(schema_path(doc) == "$.tolerances.lagrangain");

  doc = two_graphs();
  doc["amplitudes"] = Json::parse(R"({"a": {"expression": "1 +", "support": {"s1": [-1, 1]}}})");
  CHECK(schema_path(doc) == "$.amplitudes.a.expression");

  doc = two_graphs();
  doc["spaces"]["X1"]["box"] = Json::parse("[[1, -1]]");
  CHECK(schema_path(doc) == "$.spaces.X1.box[0]");
}

TEST_CASE("relations composed in a task are available to later tasks") {
  Json doc = two_graphs();
  doc["tasks"] = Json::parse(R"([
    {"name": "c", "kind": "compose", "first": "G1", "second": "G2", "as": "G"},
    {"name": "v", "kind": "verify-compose", "first": "G1", "second": "G2", "candidate": "G"},
    {"name": "r", "kind": "verify-compose", "first": "G1", "second": "G2", "candidate": "G", "twist": "reconstruct"}
  ])");
  RunResult res = run_scenario(Scenario::from_json(doc));
  REQUIRE(res.reports.size() == 3);
  CHECK(res.pass);
  CHECK(res.reports[2].results["twist_source"] == "reconstructed");
}

TEST_CASE("the bundled twisted graphs record g = g2 after g1") {
  Scenario sc = Scenario::load(kScenarios / "twisted_graphs.json");
  CHECK(sc.name == "twisted_graphs");
  RunResult res = run_scenario(sc);
  CHECK(res.exit_code() == 0);
  REQUIRE(res.reports.size() >= 2);
  const Report& comp = res.reports[0];
  REQUIRE(comp.kind == "compose");
  // the recorded map, parsed back, against the hand-composed closed form
  ScalarExpr g = parse(comp.results["map"][0].get<std::string>(), {"x1"});
  ScalarExpr f = parse(comp.results["twist"].get<std::string>(), {"x1"});
  for (double x : {-0.9, -0.3, 0.0, 0.4, 1.0}) {
    double g1 = x + 0.2 * x * x;
    CHECK(g.eval(oracle::vec({x})) == doctest::Approx(0.5 * g1 - 0.1 * g1 * g1 * g1).epsilon(1e-14));
    CHECK(f.eval(oracle::vec({x})) == doctest::Approx(x * x + std::sin(g1)).epsilon(1e-14));
  }
  const Report& ver = res.reports[1];
  CHECK(ver.kind == "verify-compose");
  CHECK(ver.pass());
  CHECK(ver.results["verdict"] == "transverse");
  CHECK(ver.results["fiber_dim_e"] == 0);
  for (const auto& r : res.reports) CHECK(r.pass());
}

TEST_CASE("reports are byte-identical for identical inputs and seed") {
  for (const char* name : {"twisted_graphs.json", "lagrangian.json", "compositions.json", "reconstruction.json"}) {
    Scenario sc = Scenario::load(kScenarios / name);
    std::string a = serialize(run_scenario(sc).document);
    std::string b = serialize(run_scenario(sc).document);
    CHECK(a == b);
    CHECK(to_csv(run_scenario(sc).reports) == to_csv(run_scenario(sc).reports));
  }
  Scenario sc = Scenario::load(kScenarios / "lagrangian.json");
  RunOptions other;
  other.seed = 7;
  CHECK(serialize(run_scenario(sc).document) != serialize(run_scenario(sc, other).document));
  CHECK(run_scenario(sc, other).document["seed"] == 7);
}

TEST_CASE("module errors become task errors and later tasks still run") {
  Json doc = two_graphs();
  doc["tasks"] = Json::parse(R"([
    {"name": "bad", "kind": "compose", "first": "C", "second": "G2", "as": "X"},
    {"name": "good", "kind": "lagrangian-check", "relation": "C", "samples": 20}
  ])");
  RunResult res = run_scenario(Scenario::from_json(doc));
  REQUIRE(res.reports.size() == 2);
  CHECK(res.exit_code() == 1);
  REQUIRE(res.reports[0].error.has_value());
  CHECK(res.reports[0].error->find("task 'bad'") != std::string::npos);
  CHECK_FALSE(res.reports[0].pass());
  CHECK(res.reports[1].pass());
  CHECK(res.document["reports"][0].contains("error"));
}

TEST_CASE("negative controls are checked as expected failures") {
  Json doc = two_graphs();
  doc["tasks"] = Json::parse(R"([
    {"name": "c", "kind": "compose", "first": "G1", "second": "G2", "as": "G"},
    {"name": "off", "kind": "verify-compose", "first": "G1", "second": "G2", "candidate": "G", "perturb": "0.1*x1"},
    {"name": "ctl", "kind": "verify-compose", "first": "G1", "second": "G2", "candidate": "G", "perturb": "0.1*x1",
     "expect": "fail"}
  ])");
  RunResult res = run_scenario(Scenario::from_json(doc));
  CHECK_FALSE(res.reports[1].pass());
  CHECK(res.reports[2].pass());
  CHECK(res.exit_code() == 1);
}

TEST_CASE("overrides of tolerances and timing") {
  Json doc = two_graphs();
  doc["tasks"] = Json::parse(R"([{"name": "l", "kind": "lagrangian-check", "relation": "G1", "samples": 10}])");
  Scenario sc = Scenario::from_json(doc);
  RunOptions opt;
  opt.tolerances["lagrangian"] = 1e-30;
  RunResult tight = run_scenario(sc, opt);
  CHECK(tight.document["tolerances"]["lagrangian"] == 1e-30);
  opt.tolerances = {{"bogus", 1.0}};
  CHECK_THROWS_AS(run_scenario(sc, opt), SchemaError);
  CHECK_FALSE(run_scenario(sc).document["reports"][0].contains("wall_time_ms"));
  RunOptions timed;
  timed.timing = true;
  CHECK(run_scenario(sc, timed).document["reports"][0].contains("wall_time_ms"));
}

TEST_CASE("artifacts are written only with an output directory") {
  Json doc = two_graphs();
  doc["tasks"] = Json::parse(R"([{"name": "h", "kind": "hormander-dump", "relation": "G1", "samples": 5,
                                  "csv": "dump.csv"}])");
  Scenario sc = Scenario::from_json(doc);
  RunResult none = run_scenario(sc);
  CHECK(none.reports[0].artifacts.empty());
  CHECK(none.reports[0].notes.size() == 1);
  RunOptions opt;
  opt.out_dir = temp_dir("artifacts");
  RunResult res = run_scenario(sc, opt);
  REQUIRE(res.reports[0].artifacts.size() == 1);
  std::ifstream in(*opt.out_dir / "dump.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("x1,x2,s1,vert_residual", 0) == 0);

  doc["tasks"][0]["csv"] = "../escape.csv";
  CHECK(schema_path(doc).empty());
  CHECK_THROWS_AS(run_scenario(Scenario::from_json(doc)), SchemaError);
}

TEST_CASE("command line exit codes") {
  fs::path dir = temp_dir("cli");
  const std::string example = (kScenarios / "twisted_graphs.json").string();
  CHECK(run_cli("--scenario " + example + " --out " + dir.string()) == 0);
  CHECK(fs::exists(dir / "report.json"));
  CHECK(run_cli("--scenario " + example + " --out " + dir.string() + " --format csv") == 0);
  std::ifstream csv(dir / "report.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "task,kind,check,module,value,tolerance,comparison,pass");

  CHECK(run_cli("--scenario " + example + " --tol composition=1e-30") == 1);
  CHECK(run_cli("--scenario " + example + " --tol nothing=1") == 2);
  CHECK(run_cli("--scenario " + example + " --format xml") == 2);
  CHECK(run_cli("--out " + dir.string()) == 2);

  std::ofstream bad(dir / "bad.json");
  bad << R"({"spaces": {"X": {"coords": ["x"]}}, "submanifolds": {"Z": {"space": "X", "constraints": ["x +"]}}})";
  bad.close();
  CHECK(run_cli("--scenario " + (dir / "bad.json").string()) == 2);
}
