#include "conormal/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "conormal/error.hpp"
#include "conormal/hormander.hpp"
#include "conormal/rng.hpp"
#include "conormal/symbols.hpp"

namespace conormal {

namespace {

using Eigen::Index;
using Eigen::VectorXd;

Index idx(std::size_t n) { return static_cast<Index>(n); }

// Path-aware view of a JSON value; every failure names the field.
class Field {
 public:
  Field(const Json& j, std::string path) : j_(&j), path_(std::move(path)) {}

  const std::string& path() const { return path_; }
  const Json& json() const { return *j_; }

  [[noreturn]] void fail(const std::string& what) const { throw SchemaError(path_, what); }

  void expect_object() const {
    if (!j_->is_object()) fail("expected an object");
  }
  void expect_array() const {
    if (!j_->is_array()) fail("expected an array");
  }
  bool has(const std::string& key) const { return j_->is_object() && j_->contains(key); }
  Field at(const std::string& key) const {
    expect_object();
    if (!j_->contains(key)) throw SchemaError(child(key), "required field is missing");
    return Field((*j_)[key], child(key));
  }
  std::optional<Field> opt(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return Field((*j_)[key], child(key));
  }
  std::size_t size() const {
    expect_array();
    return j_->size();
  }
  Field operator[](std::size_t i) const {
    expect_array();
    if (i >= j_->size()) fail("index " + std::to_string(i) + " out of range");
    return Field((*j_)[i], path_ + "[" + std::to_string(i) + "]");
  }
  std::vector<std::string> keys() const {
    expect_object();
    std::vector<std::string> out;
    for (auto it = j_->begin(); it != j_->end(); ++it) out.push_back(it.key());
    return out;
  }
  void only(std::initializer_list<const char*> allowed) const {
    for (const auto& k : keys())
      if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
        throw SchemaError(child(k), "unknown field");
  }

  std::string str() const {
    if (!j_->is_string()) fail("expected a string");
    return j_->get<std::string>();
  }
  double num() const {
    if (!j_->is_number()) fail("expected a number");
    return j_->get<double>();
  }
  std::int64_t integer() const {
    if (j_->is_number_integer()) return j_->get<std::int64_t>();
    if (j_->is_number_float()) {
      double v = j_->get<double>();
      if (std::isfinite(v) && v == std::floor(v) && std::abs(v) < 9.0e15) return static_cast<std::int64_t>(v);
    }
    fail("expected an integer");
  }
  std::size_t count() const {
    std::int64_t v = integer();
    if (v <= 0) fail("expected a positive integer");
    return static_cast<std::size_t>(v);
  }
  bool boolean() const {
    if (!j_->is_boolean()) fail("expected true or false");
    return j_->get<bool>();
  }
  std::vector<std::string> strings() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < size(); ++i) out.push_back((*this)[i].str());
    return out;
  }
  std::vector<double> numbers() const {
    std::vector<double> out;
    for (std::size_t i = 0; i < size(); ++i) out.push_back((*this)[i].num());
    return out;
  }
  VectorXd vector(std::optional<std::size_t> dim = std::nullopt) const {
    auto v = numbers();
    if (dim && v.size() != *dim)
      fail("expected " + std::to_string(*dim) + " components, got " + std::to_string(v.size()));
    return Eigen::Map<const VectorXd>(v.data(), idx(v.size()));
  }
  Interval interval() const {
    auto v = numbers();
    if (v.size() != 2) fail("expected [lo, hi]");
    if (!(v[0] < v[1])) fail("expected lo < hi");
    return {v[0], v[1]};
  }
  Rational rational() const {
    if (j_->is_number_integer()) return Rational(j_->get<std::int64_t>());
    try {
      if (j_->is_string()) return Rational::parse(j_->get<std::string>());
      if (j_->is_number()) return Rational::parse(format_double(j_->get<double>()));
    } catch (const Error& e) {
      fail(e.what());
    }
    fail("expected a rational such as \"1/2\"");
  }

  std::string str_or(const std::string& key, const std::string& dflt) const {
    auto f = opt(key);
    return f ? f->str() : dflt;
  }
  double num_or(const std::string& key, double dflt) const {
    auto f = opt(key);
    return f ? f->num() : dflt;
  }
  std::size_t count_or(const std::string& key, std::size_t dflt) const {
    auto f = opt(key);
    return f ? f->count() : dflt;
  }

 private:
  std::string child(const std::string& key) const { return path_ + "." + key; }

  const Json* j_;
  std::string path_;
};

ScalarExpr parse_expr(const Field& f, const std::vector<std::string>& vars) {
  std::string text = f.str();
  try {
    return ScalarExpr::parse(text, vars);
  } catch (const Error& e) {
    throw SchemaError(f.path(), e.what());
  }
}

Json json_vec(const VectorXd& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(json_number(v[i]));
  return a;
}

Json json_complex(std::complex<double> z) { return Json::array({json_number(z.real()), json_number(z.imag())}); }

std::vector<std::string> with_hbar(std::vector<std::string> vars) {
  vars.push_back("hbar");
  return vars;
}

std::vector<std::string> kernel_vars(const CanonicalRelation& g) {
  return with_hbar(concat_vars(g.product().coords(), kernel_fiber_names(g)));
}

VectorXd uniform_vec(CounterRng& rng, std::size_t n, double range) {
  VectorXd v(idx(n));
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(-range, range);
  return v;
}

double max_abs(const Eigen::MatrixXcd& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

struct KindSpec {
  std::vector<const char*> required;
  std::vector<const char*> optional;
};

const std::map<std::string, KindSpec>& kind_specs() {
  static const std::map<std::string, KindSpec> specs = {
      {"lagrangian-check", {{"relation"}, {"samples", "fiber_range", "covector_scale"}}},
      {"compose", {{"first", "second", "as"}, {"method", "expect", "expect_twist"}}},
      {"verify-compose", {{"first", "second", "candidate"}, {"twist", "perturb", "expect", "expect_e", "samples"}}},
      {"hormander-dump", {{"relation"}, {"samples", "fiber_range", "csv"}}},
      {"quantize", {{"relation", "amplitude", "hbar", "grid"}, {"r", "quad_order", "as", "dump"}}},
      {"apply", {{"operator", "function"}, {"csv"}}},
      {"compose-operators", {{"first", "second", "as"}, {"e"}}},
      {"compare-kernels", {{"first", "second", "amplitudes", "hbar", "grid"}, {"r", "quad_order", "e"}}},
      {"symbol", {{"relation", "amplitude", "points"}, {"chart", "basepoint", "csv"}}},
      {"symbol-compose", {{"first", "second", "amplitudes", "points"}, {"draws", "stationary_phase"}}},
      {"reconstruct-twist", {{"submanifold", "twist", "basepoint"}, {"paths", "fan", "random", "truth"}}},
  };
  return specs;
}

void check_task_fields(const Field& t, const std::string& kind) {
  const KindSpec& spec = kind_specs().at(kind);
  for (const auto& k : t.keys()) {
    if (k == "name" || k == "kind") continue;
    auto in = [&](const std::vector<const char*>& v) {
      return std::any_of(v.begin(), v.end(), [&](const char* a) { return k == a; });
    };
    if (!in(spec.required) && !in(spec.optional)) throw SchemaError(t.path() + "." + k, "unknown field");
  }
  for (const char* r : spec.required) t.at(r);
}

std::string plain_file_name(const Field& f) {
  std::string name = f.str();
  if (name.empty() || name.find('/') != std::string::npos || name.find('\\') != std::string::npos || name == "." ||
      name == "..")
    f.fail("expected a plain file name");
  return name;
}

}  // namespace

Tolerances::Tolerances()
    : values_{{"lagrangian", 1e-8},        {"composition", 1e-9}, {"perturbation", 1e-3},
              {"independence", 1e-12},     {"cancellation", 1e-9}, {"reconstruction", 1e-6},
              {"path_independence", 1e-8}, {"embedding", 1e-12},  {"fourier", 1e-6},
              {"fubini", 1e-3},            {"stationary_phase", 0.05}, {"symbol", 1e-10},
              {"linearity", 1e-14},        {"map", 1e-12}} {}

double Tolerances::get(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw PreconditionError("unknown tolerance '" + name + "'");
  return it->second;
}

void Tolerances::set(const std::string& name, double value, const std::string& path) {
  if (!values_.count(name)) throw SchemaError(path + "." + name, "unknown tolerance");
  if (!(value > 0.0) || !std::isfinite(value)) throw SchemaError(path + "." + name, "tolerance must be positive");
  values_[name] = value;
}

std::vector<std::string> SubmanifoldDecl::twist_vars() const {
  if (graph) return graph->domain().coords();
  return z.ambient().coords();
}

const std::vector<std::string>& task_kinds() {
  static const std::vector<std::string> kinds = [] {
    std::vector<std::string> out;
    for (const auto& [k, _] : kind_specs()) out.push_back(k);
    return out;
  }();
  return kinds;
}

Amplitude build_amplitude(const AmplitudeDecl& decl, const std::vector<std::string>& vars) {
  const std::string path = "amplitudes." + decl.name;
  Amplitude a;
  try {
    a.expr = ScalarExpr::parse(decl.expression, vars);
  } catch (const Error& e) {
    throw SchemaError(path + ".expression", e.what());
  }
  for (const auto& [v, _] : decl.support)
    if (std::find(vars.begin(), vars.end(), v) == vars.end())
      throw SchemaError(path + ".support." + v, "variable is not available here");
  a.support = decl.support;
  a.cutoff_power = decl.cutoff_power;
  return a;
}

Scenario Scenario::from_json(const Json& doc) {
  Field root(doc, "$");
  root.expect_object();
  root.only({"name", "description", "seed", "tolerances", "spaces", "submanifolds", "twists", "relations",
             "amplitudes", "tasks"});
  Scenario sc;
  sc.name = root.str_or("name", "scenario");
  if (auto s = root.opt("seed")) {
    std::int64_t v = s->integer();
    if (v < 0) s->fail("expected a non-negative integer");
    sc.seed = static_cast<std::uint64_t>(v);
  }
  if (auto t = root.opt("tolerances"))
    for (const auto& k : t->keys()) sc.tolerances.set(k, t->at(k).num(), t->path());

  if (auto spaces = root.opt("spaces")) {
    for (const auto& name : spaces->keys()) {
      Field s = spaces->at(name);
      s.only({"coords", "box"});
      auto coords = s.at("coords").strings();
      std::optional<std::vector<Interval>> box;
      if (auto b = s.opt("box")) {
        box.emplace();
        for (std::size_t i = 0; i < b->size(); ++i) box->push_back((*b)[i].interval());
      }
      try {
        sc.spaces.emplace(name, EuclideanPatch(name, coords, box));
      } catch (const Error& e) {
        s.fail(e.what());
      }
    }
  }
  auto space = [&](const Field& f) -> const EuclideanPatch& {
    auto it = sc.spaces.find(f.str());
    if (it == sc.spaces.end()) f.fail("unknown space '" + f.str() + "'");
    return it->second;
  };

  if (auto subs = root.opt("submanifolds")) {
    for (const auto& name : subs->keys()) {
      Field s = subs->at(name);
      s.only({"type", "space", "source", "target", "constraints", "map", "point", "side", "simply_connected"});
      SubmanifoldDecl d;
      d.name = name;
      d.type = s.str_or("type", "constraints");
      try {
        if (d.type == "constraints") {
          EuclideanPatch ambient;
          if (auto sp = s.opt("space")) {
            if (s.has("source") || s.has("target")) s.fail("give either space or source and target");
            d.space = sp->str();
            ambient = space(*sp);
          } else {
            d.source = s.at("source").str();
            d.target = s.at("target").str();
            ambient = EuclideanPatch::product(space(s.at("source")), space(s.at("target")));
          }
          Field cons = s.at("constraints");
          std::vector<ScalarExpr> exprs;
          for (std::size_t i = 0; i < cons.size(); ++i) exprs.push_back(parse_expr(cons[i], ambient.coords()));
          d.z = ConstraintSubmanifold(ambient, exprs);
        } else if (d.type == "graph") {
          d.source = s.at("source").str();
          d.target = s.at("target").str();
          const EuclideanPatch& src = space(s.at("source"));
          Field map = s.at("map");
          std::vector<ScalarExpr> comps;
          for (std::size_t i = 0; i < map.size(); ++i) comps.push_back(parse_expr(map[i], src.coords()));
          d.graph = GraphSubmanifold(src, space(s.at("target")), VectorExpr(comps));
          d.z = d.graph->to_constraints();
        } else if (d.type == "product_point") {
          d.source = s.at("source").str();
          d.target = s.at("target").str();
          const EuclideanPatch& src = space(s.at("source"));
          const EuclideanPatch& tgt = space(s.at("target"));
          std::string side = s.str_or("side", "target");
          if (side != "target" && side != "source") s.at("side").fail("expected \"source\" or \"target\"");
          d.star_on_target = side == "target";
          d.star = s.at("point").vector(d.star_on_target ? tgt.dim() : src.dim());
          EuclideanPatch prod = EuclideanPatch::product(src, tgt);
          d.z = CanonicalRelation::point_factor(src, tgt, *d.star, d.star_on_target,
                                                ScalarExpr::constant(0.0, prod.coords()))
                    .base();
        } else {
          s.at("type").fail("expected constraints, graph or product_point");
        }
      } catch (const SchemaError&) {
        throw;
      } catch (const Error& e) {
        s.fail(e.what());
      }
      d.simply_connected = s.opt("simply_connected") ? s.at("simply_connected").boolean() : d.type != "constraints";
      sc.submanifolds.emplace(name, std::move(d));
    }
  }
  auto submanifold = [&](const Field& f) -> const SubmanifoldDecl& {
    auto it = sc.submanifolds.find(f.str());
    if (it == sc.submanifolds.end()) f.fail("unknown submanifold '" + f.str() + "'");
    return it->second;
  };

  if (auto twists = root.opt("twists")) {
    for (const auto& name : twists->keys()) {
      Field t = twists->at(name);
      t.only({"submanifold", "expression"});
      const SubmanifoldDecl& d = submanifold(t.at("submanifold"));
      sc.twists.emplace(name, TwistDecl{name, d.name, parse_expr(t.at("expression"), d.twist_vars())});
    }
  }

  if (auto rels = root.opt("relations")) {
    for (const auto& name : rels->keys()) {
      Field r = rels->at(name);
      r.only({"submanifold", "twist"});
      const SubmanifoldDecl& d = submanifold(r.at("submanifold"));
      if (d.space) r.at("submanifold").fail("relations need a submanifold of a product of two spaces");
      ScalarExpr f = ScalarExpr::constant(0.0, d.twist_vars());
      if (auto tf = r.opt("twist")) {
        auto it = sc.twists.find(tf->str());
        if (it == sc.twists.end()) tf->fail("unknown twist '" + tf->str() + "'");
        if (it->second.submanifold != d.name) tf->fail("twist is declared on another submanifold");
        f = it->second.expr;
      }
      const EuclideanPatch& src = sc.spaces.at(*d.source);
      const EuclideanPatch& tgt = sc.spaces.at(*d.target);
      try {
        CanonicalRelation rel;
        if (d.graph)
          rel = CanonicalRelation::from_graph(*d.graph, f);
        else if (d.star)
          rel = CanonicalRelation::point_factor(src, tgt, *d.star, d.star_on_target, f);
        else
          rel = CanonicalRelation(src, tgt, d.z, f);
        rel.declared_simply_connected = d.simply_connected;
        sc.relations.emplace(name, std::move(rel));
      } catch (const Error& e) {
        r.fail(e.what());
      }
    }
  }

  if (auto amps = root.opt("amplitudes")) {
    for (const auto& name : amps->keys()) {
      Field a = amps->at(name);
      a.only({"expression", "support", "cutoff_power"});
      AmplitudeDecl d;
      d.name = name;
      d.expression = a.at("expression").str();
      if (auto sup = a.opt("support"))
        for (const auto& v : sup->keys()) d.support[v] = sup->at(v).interval();
      if (auto cp = a.opt("cutoff_power")) {
        std::int64_t p = cp->integer();
        if (p < 0) cp->fail("expected a non-negative integer");
        d.cutoff_power = static_cast<int>(p);
      }
      // syntax is checked now, names once the variables are known
      try {
        (void)ScalarExpr::parse(d.expression, std::vector<std::string>{});
      } catch (const UnknownIdentifier&) {
      } catch (const Error& e) {
        throw SchemaError(a.path() + ".expression", e.what());
      }
      sc.amplitudes.emplace(name, std::move(d));
    }
  }

  std::set<std::string> relation_names, operator_names, task_names;
  for (const auto& [n, _] : sc.relations) relation_names.insert(n);
  if (auto tasks = root.opt("tasks")) {
    for (std::size_t i = 0; i < tasks->size(); ++i) {
      Field t = (*tasks)[i];
      t.expect_object();
      std::string kind = t.at("kind").str();
      if (!kind_specs().count(kind)) t.at("kind").fail("unknown task kind '" + kind + "'");
      check_task_fields(t, kind);
      std::string name = t.str_or("name", kind + "-" + std::to_string(i));
      if (!task_names.insert(name).second) t.at("name").fail("duplicate task name");
      auto need = [&](const char* key, const std::set<std::string>& pool, const char* what) {
        if (auto f = t.opt(key))
          if (!pool.count(f->str())) f->fail(std::string("unknown ") + what + " '" + f->str() + "'");
      };
      auto need_amp = [&](const Field& f) {
        if (!sc.amplitudes.count(f.str())) f.fail("unknown amplitude '" + f.str() + "'");
      };
      if (kind == "apply" || kind == "compose-operators") {
        need("operator", operator_names, "operator");
        if (kind == "compose-operators") {
          need("first", operator_names, "operator");
          need("second", operator_names, "operator");
        }
      } else {
        for (const char* key : {"relation", "first", "second", "candidate"}) need(key, relation_names, "relation");
      }
      if (kind == "reconstruct-twist") submanifold(t.at("submanifold"));
      if (auto a = t.opt("amplitude")) need_amp(*a);
      if (auto a = t.opt("amplitudes")) {
        if (a->size() != 2) a->fail("expected two amplitude names");
        need_amp((*a)[0]);
        need_amp((*a)[1]);
      }
      if (kind == "compose") relation_names.insert(t.at("as").str());
      if (kind == "quantize") operator_names.insert(t.str_or("as", name));
      if (kind == "compose-operators") operator_names.insert(t.at("as").str());
      sc.tasks.push_back(TaskDecl{name, kind, t.json(), t.path()});
    }
  }
  return sc;
}

Scenario Scenario::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError(path.string(), "cannot open scenario file");
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(path.string(), e.what());
  }
  Scenario sc = from_json(doc);
  if (!doc.contains("name")) sc.name = path.stem().string();
  return sc;
}

namespace {

struct Operator {
  std::string relation;
  std::vector<DiscretizedFIO> fios;
};

struct Context {
  const Scenario& sc;
  const RunOptions& opt;
  const Tolerances& tol;
  std::map<std::string, CanonicalRelation>& relations;
  std::map<std::string, Operator>& operators;
  CounterRng rng;
  Field p;
  Report& rep;

  double t(const std::string& name) const { return tol.get(name); }

  const CanonicalRelation& relation(const char* key) const { return relations.at(p.at(key).str()); }
  const Operator& op(const char* key) const { return operators.at(p.at(key).str()); }
  const AmplitudeDecl& amplitude(const Field& f) const { return sc.amplitudes.at(f.str()); }

  std::vector<double> hbars(const Field& f) const {
    std::vector<double> h = opt.hbar ? *opt.hbar : f.numbers();
    if (h.empty()) f.fail("expected at least one value of hbar");
    for (double v : h)
      if (!(v > 0.0)) f.fail("hbar must be positive");
    return h;
  }
  std::size_t grid(const Field& f) const { return opt.grid ? *opt.grid : f.count(); }
  QuadratureOptions quad() const {
    QuadratureOptions q;
    if (auto f = p.opt("quad_order")) q.order = f->count();
    if (opt.quad_order) q.order = *opt.quad_order;
    return q;
  }
  void artifact(const std::string& file, const std::string& content) const {
    if (!opt.out_dir) {
      rep.notes.push_back("artifact " + file + " skipped: no output directory");
      return;
    }
    std::filesystem::create_directories(*opt.out_dir);
    std::ofstream os(*opt.out_dir / file, std::ios::binary);
    if (!os) throw PreconditionError("cannot write " + (*opt.out_dir / file).string());
    os << content;
    rep.artifacts.push_back(file);
  }
};

Grid uniform_grid(const EuclideanPatch& patch, std::size_t n) {
  return Grid(patch, std::vector<std::size_t>(patch.dim(), n));
}

std::string tagged(const std::string& name, std::size_t i) { return name + "[" + std::to_string(i) + "]"; }

void run_lagrangian(Context& c) {
  const CanonicalRelation& g = c.relation("relation");
  const std::size_t n = c.p.count_or("samples", 100);
  const double range = c.p.num_or("fiber_range", 2.0);
  std::optional<ScalarExpr> scale;
  if (auto f = c.p.opt("covector_scale")) scale = parse_expr(*f, g.product().coords());
  CounterRng rng = c.rng.split(0);
  auto zs = g.base().sample(rng, n);
  double worst = 0.0;
  int rank_min = std::numeric_limits<int>::max();
  for (const auto& z : zs) {
    VectorXd s = uniform_vec(rng, g.fiber_dim(), range);
    LagrangianCheck lc = lagrangian_residual(g, z, s, scale ? &*scale : nullptr);
    worst = std::max(worst, lc.residual);
    rank_min = std::min(rank_min, lc.rank);
  }
  const int dim = static_cast<int>(g.n_source() + g.n_target());
  c.rep.results["samples"] = zs.size();
  c.rep.results["dimension"] = dim;
  c.rep.results["rank_min"] = rank_min;
  c.rep.results["residual_max"] = json_number(worst);
  c.rep.add(check_eq("rank_min", "relations", rank_min, dim));
  if (scale) {
    c.rep.notes.push_back("negative control: covectors rescaled by " + scale->to_string());
    c.rep.add(check_gt("lagrangian_residual_max", "relations", worst, c.t("perturbation")));
  } else {
    c.rep.add(check_le("lagrangian_residual_max", "relations", worst, c.t("lagrangian")));
  }
}

void run_compose(Context& c) {
  const CanonicalRelation& a = c.relation("first");
  const CanonicalRelation& b = c.relation("second");
  const std::string method = c.p.str_or("method", "graphs");
  const std::string as = c.p.at("as").str();
  CanonicalRelation r;
  if (method == "graphs") {
    if (!a.graph() || !b.graph()) throw PreconditionError("graph composition needs two graph relations");
    r = compose_graphs(a, b);
    Json map = Json::array();
    for (const auto& comp : r.graph()->map().components()) map.push_back(comp.to_string());
    c.rep.results["map"] = map;
    c.rep.results["twist"] = r.graph_twist()->to_string();
    CounterRng rng = c.rng.split(0);
    double map_res = 0.0, twist_res = 0.0;
    for (int i = 0; i < 64; ++i) {
      VectorXd x = a.source().random_point(rng);
      VectorXd gx = a.graph()->map().eval(x);
      map_res = std::max(map_res, (r.graph()->map().eval(x) - b.graph()->map().eval(gx)).cwiseAbs().maxCoeff());
      double want = a.graph_twist()->eval(x) + b.graph_twist()->eval(gx);
      twist_res = std::max(twist_res, std::abs(r.graph_twist()->eval(x) - want));
    }
    c.rep.add(check_le("map_vs_g2_after_g1", "relations", map_res, c.t("map")));
    c.rep.add(check_le("twist_vs_f1_plus_f2_after_g1", "relations", twist_res, c.t("map")));
  } else if (method == "endpoint") {
    r = compose_endpoint(a, b);
    c.rep.results["twist"] = r.twist().extension.to_string();
  } else if (method == "exact") {
    const std::string expect = c.p.str_or("expect", "pass");
    if (expect == "cancellation-failed") {
      bool raised = false;
      try {
        (void)compose_exact_graphs(a, b, c.rng.split(0), 64, c.t("cancellation"));
      } catch (const CancellationFailed& e) {
        raised = true;
        c.rep.results["error"] = e.what();
      }
      c.rep.notes.push_back("negative control: the x2 terms are expected not to cancel");
      c.rep.add(check_eq("cancellation_failed_raised", "relations", raised ? 1.0 : 0.0, 1.0));
      return;
    }
    if (expect != "pass") c.p.at("expect").fail("expected pass or cancellation-failed");
    ExactComposition ex = compose_exact_graphs(a, b, c.rng.split(0), 64, c.t("cancellation"));
    r = ex.relation;
    c.rep.results["twist"] = r.twist().extension.to_string();
    c.rep.results["reference_x2"] = json_vec(ex.reference_x2);
    c.rep.add(check_le("independence_residual", "relations", ex.independence_residual, c.t("independence")));
    c.rep.add(check_le("cancellation_residual", "relations", ex.cancellation_residual, c.t("cancellation")));
  } else {
    c.p.at("method").fail("expected graphs, endpoint or exact");
  }
  if (auto et = c.p.opt("expect_twist")) {
    ScalarExpr want = parse_expr(*et, r.product().coords());
    CounterRng rng = c.rng.split(1);
    double dev = 0.0;
    for (int i = 0; i < 64; ++i) {
      VectorXd w = r.product().random_point(rng);
      dev = std::max(dev, std::abs(r.twist().value(w) - want.eval(w)));
    }
    c.rep.add(check_le("twist_vs_expected", "relations", dev, c.t("map")));
  }
  Json cons = Json::array();
  for (const auto& u : r.base().constraints()) cons.push_back(u.to_string());
  c.rep.results["constraints"] = cons;
  c.rep.results["as"] = as;
  c.relations[as] = r;
}

void run_verify(Context& c) {
  const CanonicalRelation& a = c.relation("first");
  const CanonicalRelation& b = c.relation("second");
  const CanonicalRelation& cand = c.relation("candidate");
  const std::string mode = c.p.str_or("twist", "candidate");
  std::optional<ScalarExpr> f;
  if (mode == "candidate")
    f = cand.twist().extension;
  else if (mode != "reconstruct")
    c.p.at("twist").fail("expected candidate or reconstruct");
  if (auto pf = c.p.opt("perturb")) {
    if (!f) pf->fail("a reconstructed twist cannot be perturbed");
    f = *f + parse_expr(*pf, cand.product().coords());
  }
  const std::string expect = c.p.str_or("expect", "pass");
  if (expect != "pass" && expect != "fail") c.p.at("expect").fail("expected pass or fail");

  CompositionOptions o;
  o.samples = c.p.count_or("samples", 32);
  o.tol = c.t("composition");
  CompositionReport vr = verify_composition(a, b, cand.base(), f, c.rng.split(0), o);

  auto uniq = [](std::vector<int> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return Json(v);
  };
  Json& res = c.rep.results;
  res["verdict"] = to_string(vr.verdict);
  res["fiber_dim_e"] = vr.fiber_dim_e;
  res["star_points"] = vr.star_points.size();
  res["tangent_condition_rank"] = uniq(vr.tangent_condition_rank);
  res["kernel_dim"] = uniq(vr.kernel_dim);
  res["submersion_rank"] = uniq(vr.submersion_rank);
  res["subset_residual"] = json_number(vr.subset_residual);
  res["superset_residual"] = json_number(vr.superset_residual);
  res["superset_unsolved"] = vr.superset_unsolved;
  res["twist_source"] = vr.twist_source;
  if (vr.fitted_twist) res["fitted_twist"] = vr.fitted_twist->to_string();
  res["reasons"] = vr.reasons;

  if (expect == "pass") {
    c.rep.add(check_le("subset_residual", "relations", vr.subset_residual, c.t("composition")));
    c.rep.add(check_le("superset_residual", "relations", vr.superset_residual, c.t("composition")));
    c.rep.add(check_eq("verdict_not_failed", "relations", vr.verdict == Verdict::Failed ? 0.0 : 1.0, 1.0));
  } else {
    c.rep.notes.push_back("negative control: the candidate is expected to be rejected");
    c.rep.add(check_gt("max_inclusion_residual", "relations", std::max(vr.subset_residual, vr.superset_residual),
                       c.t("perturbation")));
  }
  if (auto e = c.p.opt("expect_e")) c.rep.add(check_eq("fiber_dim_e", "relations", vr.fiber_dim_e, e->integer()));
}

void run_hormander(Context& c) {
  const CanonicalRelation& g = c.relation("relation");
  const std::size_t n = c.p.count_or("samples", 100);
  const double range = c.p.num_or("fiber_range", 2.0);
  HormanderDescription desc = build_description(g.base(), g.twist(), c.rng.split(1).next_u64());
  CounterRng rng = c.rng.split(0);
  auto zs = g.base().sample(rng, n);
  std::vector<CriticalPointRecord> records;
  std::vector<std::pair<VectorXd, VectorXd>> samples;
  double vert = 0.0, embed = 0.0, memb = 0.0, maslov_dev = 0.0;
  int sig_max = 0;
  for (const auto& z : zs) {
    VectorXd s = uniform_vec(rng, g.fiber_dim(), range);
    CriticalPointRecord rec = critical_point_record(desc, z, s, c.t("embedding"));
    CotangentPoint want = conormal_point(g.base(), g.twist(), z, s);
    vert = std::max(vert, rec.vert_residual);
    embed = std::max(embed, (rec.lambda_image.base - want.base).cwiseAbs().maxCoeff());
    embed = std::max(embed, (rec.lambda_image.covector - want.covector).cwiseAbs().maxCoeff());
    memb = std::max(memb, member(g, relation_point(g, z, s)).residual());
    sig_max = std::max(sig_max, std::abs(rec.fiber_signature));
    maslov_dev = std::max(maslov_dev, std::abs(rec.maslov_value - std::complex<double>(1.0, 0.0)));
    samples.emplace_back(z, s);
    records.push_back(std::move(rec));
  }
  TransversalityReport tr = transversality_check(desc, samples);
  int rank_min = tr.ranks.empty() ? 0 : *std::min_element(tr.ranks.begin(), tr.ranks.end());
  Json& res = c.rep.results;
  res["phase"] = desc.phi.to_string();
  res["fiber_names"] = desc.fiber_names;
  res["samples"] = records.size();
  res["vert_residual_max"] = json_number(vert);
  res["embedding_residual_max"] = json_number(embed);
  res["membership_residual_max"] = json_number(memb);
  res["fiber_signature_max_abs"] = sig_max;
  res["maslov_deviation_max"] = json_number(maslov_dev);
  res["transversality_rank_min"] = rank_min;
  c.rep.add(check_le("vert_residual_max", "hormander", vert, c.t("embedding")));
  c.rep.add(check_le("embedding_vs_conormal_point", "hormander", embed, c.t("embedding")));
  c.rep.add(check_le("lambda_image_on_relation", "hormander", memb, c.t("lagrangian")));
  c.rep.add(check_eq("transversality_rank_min", "hormander", rank_min, static_cast<double>(g.fiber_dim())));
  c.rep.add(check_eq("fiber_signature_max_abs", "hormander", sig_max, 0.0));
  c.rep.add(check_eq("maslov_deviation_max", "hormander", maslov_dev, 0.0));
  if (auto f = c.p.opt("csv")) {
    std::ostringstream os;
    write_description_csv(os, desc, records);
    c.artifact(plain_file_name(*f), os.str());
  }
}

void run_quantize(Context& c, const std::string& task_name) {
  const CanonicalRelation& g = c.relation("relation");
  Amplitude a = build_amplitude(c.amplitude(c.p.at("amplitude")), kernel_vars(g));
  Rational r = c.p.opt("r") ? c.p.at("r").rational() : Rational(0);
  std::vector<double> hbars = c.hbars(c.p.at("hbar"));
  Field gf = c.p.at("grid");
  std::size_t ns, nt;
  if (gf.json().is_object()) {
    gf.only({"source", "target"});
    ns = c.grid(gf.at("source"));
    nt = c.grid(gf.at("target"));
  } else {
    ns = nt = c.grid(gf);
  }
  Grid src = uniform_grid(g.source(), ns), dst = uniform_grid(g.target(), nt);
  QuadratureOptions q = c.quad();
  std::string dump;
  if (auto d = c.p.opt("dump")) {
    dump = d->str();
    if (dump != "binary" && dump != "csv") d->fail("expected binary or csv");
  }
  const Rational want_m = r + half(static_cast<std::int64_t>(g.n_target()));
  Operator op{c.p.at("relation").str(), {}};
  Json per = Json::array();
  for (std::size_t i = 0; i < hbars.size(); ++i) {
    DiscretizedFIO f = oscillatory_kernel(g, a, r, hbars[i], src, dst, q);
    per.push_back({{"hbar", json_number(hbars[i])},
                   {"order_m", f.order_m.to_string()},
                   {"prefactor_exponent", f.prefactor_exponent().to_string()},
                   {"k", f.k},
                   {"max_abs", json_number(max_abs(f.kernel))}});
    c.rep.add(check_eq(tagged("order_m", i), "quantize", f.order_m.to_double(), want_m.to_double()));
    c.rep.add(check_eq(tagged("finite", i), "quantize", f.kernel.allFinite() ? 1.0 : 0.0, 1.0));
    if (!dump.empty()) {
      std::ostringstream os;
      const std::string file = task_name + "_" + std::to_string(i) + (dump == "csv" ? ".csv" : ".bin");
      if (dump == "csv")
        write_kernel_csv(os, f);
      else
        write_kernel_binary(os, f);
      c.artifact(file, os.str());
    }
    op.fios.push_back(std::move(f));
  }
  c.rep.results["grid"] = {{"source", ns}, {"target", nt}};
  c.rep.results["quad_order"] = q.order;
  c.rep.results["kernels"] = per;
  const std::string as = c.p.str_or("as", task_name);
  c.rep.results["as"] = as;
  c.operators[as] = std::move(op);
}

void run_apply(Context& c, const std::string& task_name) {
  const Operator& op = c.op("operator");
  const CanonicalRelation& g = c.relations.at(op.relation);
  ScalarExpr u = parse_expr(c.p.at("function"), g.source().coords());
  CounterRng rng = c.rng.split(0);
  const std::complex<double> alpha(0.7, -0.2), beta(-1.3, 0.4);
  Json per = Json::array();
  std::ostringstream csv;
  csv << "hbar,j";
  for (const auto& n : g.target().coords()) csv << ',' << n;
  csv << ",re,im\n";
  for (std::size_t i = 0; i < op.fios.size(); ++i) {
    const DiscretizedFIO& f = op.fios[i];
    const Index n = idx(f.source.size());
    Eigen::VectorXcd gu(n), gv(n);
    for (Index j = 0; j < n; ++j) {
      gu[j] = u.eval(VectorXd(f.source.node(static_cast<std::size_t>(j))));
      gv[j] = std::complex<double>(rng.uniform(-1, 1), rng.uniform(-1, 1));
    }
    Eigen::VectorXcd fu = conormal::apply(f, gu), fv = conormal::apply(f, gv);
    Eigen::VectorXcd mix = conormal::apply(f, Eigen::VectorXcd(alpha * gu + beta * gv));
    double scale = std::abs(alpha) * max_abs(fu) + std::abs(beta) * max_abs(fv);
    double lin = scale > 0.0 ? max_abs(mix - alpha * fu - beta * fv) / scale : max_abs(mix);
    per.push_back({{"hbar", json_number(f.hbar)},
                   {"output_max_abs", json_number(max_abs(fu))},
                   {"output_l2", json_number(std::sqrt(f.target.cell_volume()) * fu.norm())}});
    c.rep.add(check_le(tagged("linearity", i), "quantize", lin, c.t("linearity")));
    for (Index j = 0; j < fu.size(); ++j) {
      VectorXd x = f.target.node(static_cast<std::size_t>(j));
      csv << format_double(f.hbar) << ',' << j;
      for (Index d = 0; d < x.size(); ++d) csv << ',' << format_double(x[d]);
      csv << ',' << format_double(fu[j].real()) << ',' << format_double(fu[j].imag()) << '\n';
    }
  }
  c.rep.results["outputs"] = per;
  if (auto fcsv = c.p.opt("csv")) c.artifact(plain_file_name(*fcsv), csv.str());
  (void)task_name;
}

void run_compose_operators(Context& c) {
  const Operator& f2 = c.op("second");
  const Operator& f1 = c.op("first");
  if (f1.fios.size() != f2.fios.size()) c.p.at("second").fail("operators were built for different hbar lists");
  const int e = c.p.opt("e") ? static_cast<int>(c.p.at("e").integer()) : 0;
  Operator out{f1.relation, {}};
  Json per = Json::array();
  for (std::size_t i = 0; i < f1.fios.size(); ++i) {
    DiscretizedFIO k = compose_numeric(f2.fios[i], f1.fios[i], e);
    Rational want = f1.fios[i].order_m + f2.fios[i].order_m - half(e);
    per.push_back({{"hbar", json_number(k.hbar)}, {"order_m", k.order_m.to_string()}});
    c.rep.add(check_eq(tagged("order_m", i), "quantize", k.order_m.to_double(), want.to_double()));
    out.fios.push_back(std::move(k));
  }
  c.rep.results["e"] = e;
  c.rep.results["kernels"] = per;
  c.operators[c.p.at("as").str()] = std::move(out);
}

std::pair<Rational, Rational> rational_pair(const Context& c) {
  if (!c.p.opt("r")) return {Rational(0), Rational(0)};
  Field f = c.p.at("r");
  if (f.size() != 2) f.fail("expected two orders");
  return {f[0].rational(), f[1].rational()};
}

void run_compare_kernels(Context& c) {
  const CanonicalRelation& a = c.relation("first");
  const CanonicalRelation& b = c.relation("second");
  if (!(a.target() == b.source())) throw PreconditionError("the middle spaces of the two relations differ");
  Field amps = c.p.at("amplitudes");
  Amplitude a1 = build_amplitude(c.amplitude(amps[0]), kernel_vars(a));
  Amplitude a2 = build_amplitude(c.amplitude(amps[1]), kernel_vars(b));
  auto [sn, tn] = composed_fiber_names(a, b);
  std::map<std::string, std::string> m1, m2;
  auto f1 = kernel_fiber_names(a), f2 = kernel_fiber_names(b);
  for (std::size_t i = 0; i < f1.size(); ++i) m1[f1[i]] = sn[i];
  for (std::size_t i = 0; i < f2.size(); ++i) m2[f2[i]] = tn[i];
  Amplitude joint = Amplitude::product(a1.renamed(m1), a2.renamed(m2));
  auto [r1, r2] = rational_pair(c);
  const int e = c.p.opt("e") ? static_cast<int>(c.p.at("e").integer()) : 0;
  const std::int64_t n2 = static_cast<std::int64_t>(a.n_target());
  const Rational rd = r1 + r2 + half(n2);
  std::vector<double> hbars = c.hbars(c.p.at("hbar"));
  const std::size_t n = c.grid(c.p.at("grid"));
  Grid g1 = uniform_grid(a.source(), n), g2 = uniform_grid(a.target(), n), g3 = uniform_grid(b.target(), n);
  QuadratureOptions q = c.quad();
  Json per = Json::array();
  for (std::size_t i = 0; i < hbars.size(); ++i) {
    DiscretizedFIO k1 = oscillatory_kernel(a, a1, r1, hbars[i], g1, g2, q);
    DiscretizedFIO k2 = oscillatory_kernel(b, a2, r2, hbars[i], g2, g3, q);
    DiscretizedFIO num = compose_numeric(k2, k1, e);
    DirectKernelInfo info;
    DiscretizedFIO direct = composed_kernel_direct(a, b, joint, rd, hbars[i], g1, g2, g3, q, &info);
    double rel = relative_l2(direct.kernel, num.kernel);
    Rational want = k1.order_m + k2.order_m - half(e);
    per.push_back({{"hbar", json_number(hbars[i])},
                   {"relative_l2", json_number(rel)},
                   {"m1", k1.order_m.to_string()},
                   {"m2", k2.order_m.to_string()},
                   {"m_numeric", num.order_m.to_string()},
                   {"m_direct", direct.order_m.to_string()},
                   {"prefactor_exponent_direct", direct.prefactor_exponent().to_string()},
                   {"factorized", info.factorized},
                   {"max_panels", info.max_panels}});
    c.rep.add(check_le(tagged("fubini_relative_l2", i), "quantize", rel, c.t("fubini")));
    c.rep.add(check_eq(tagged("order_numeric", i), "quantize", num.order_m.to_double(), want.to_double()));
    c.rep.add(check_eq(tagged("order_direct", i), "quantize", direct.order_m.to_double(), num.order_m.to_double()));
    c.rep.add(check_eq(tagged("prefactor_exponent", i), "quantize", direct.prefactor_exponent().to_double(),
                       (k1.prefactor_exponent() + k2.prefactor_exponent()).to_double()));
  }
  c.rep.results["e"] = e;
  c.rep.results["grid"] = n;
  c.rep.results["quad_order"] = q.order;
  c.rep.results["kernels"] = per;
}

std::vector<VectorXd> point_list(const Field& f, std::size_t dim) {
  std::vector<VectorXd> out;
  for (std::size_t i = 0; i < f.size(); ++i) out.push_back(f[i].vector(dim));
  if (out.empty()) f.fail("expected at least one point");
  return out;
}

void run_symbol(Context& c) {
  const CanonicalRelation& g = c.relation("relation");
  Amplitude a = build_amplitude(c.amplitude(c.p.at("amplitude")), kernel_vars(g));
  HormanderDescription desc = build_description(g.base(), g.twist(), c.rng.split(1).next_u64());
  const std::string kind = c.p.str_or("chart", g.graph() ? "graph" : "tangent");
  ConormalChart chart;
  std::vector<std::string> names;
  if (kind == "graph") {
    if (!g.graph()) c.p.at("chart").fail("the relation is not a graph");
    chart = graph_chart(g);
    names = g.source().coords();
  } else if (kind == "tangent") {
    VectorXd z0 = c.p.at("basepoint").vector(g.product().dim());
    auto on = g.base().project(z0);
    if (!on) throw PreconditionError("basepoint cannot be projected onto Z");
    chart = tangent_chart(g, *on);
    for (std::size_t i = 0; i < chart.base_dim; ++i) names.push_back("p" + std::to_string(i + 1));
  } else {
    c.p.at("chart").fail("expected graph or tangent");
  }
  for (const auto& s : desc.fiber_names) names.push_back(s);
  auto points = point_list(c.p.at("points"), chart.base_dim + g.fiber_dim());
  SymbolSection sigma = symbol_of(a, desc, chart, points);
  Json vals = Json::array();
  for (const auto& q : points) vals.push_back({{"point", json_vec(q)}, {"coefficient", json_number(sigma.density.coeff(q))}});
  c.rep.results["chart"] = kind;
  c.rep.results["maslov"] = json_complex(sigma.maslov);
  c.rep.results["values"] = vals;
  c.rep.add(check_eq("maslov_deviation", "symbols", std::abs(sigma.maslov - std::complex<double>(1.0, 0.0)), 0.0));
  if (auto f = c.p.opt("csv")) {
    std::ostringstream os;
    write_symbol_csv(os, sigma, names, points);
    c.artifact(plain_file_name(*f), os.str());
  }
}

void run_symbol_compose(Context& c) {
  const CanonicalRelation& a = c.relation("first");
  const CanonicalRelation& b = c.relation("second");
  if (!a.graph() || !b.graph()) throw PreconditionError("symbol composition needs two graph relations");
  Field amps = c.p.at("amplitudes");
  Amplitude a1 = build_amplitude(c.amplitude(amps[0]), kernel_vars(a));
  Amplitude a2 = build_amplitude(c.amplitude(amps[1]), kernel_vars(b));
  CanonicalRelation comp = compose_graphs(a, b);
  Parametrization composite = graph_chart(comp).parametrization();
  ChainLift lift = graph_chain_lift(a, b);
  auto points = point_list(c.p.at("points"), a.n_source() + b.n_target());
  std::vector<VectorXd> l1, l2;
  for (const auto& q : points) {
    ChainPoints cp = lift(q);
    l1.push_back(cp.p1);
    l2.push_back(cp.p2);
  }
  SymbolSection s1 = symbol_of(a1, build_description(a.base(), a.twist(), c.rng.split(1).next_u64()),
                               graph_chart(a), l1);
  SymbolSection s2 = symbol_of(a2, build_description(b.base(), b.twist(), c.rng.split(2).next_u64()),
                               graph_chart(b), l2);
  SymbolSection sc = compose_symbols(s1, s2, composite, lift, c.rng.split(3));
  const std::size_t draws = c.p.count_or("draws", 100);
  auto rel_err = [](double have, double want) {
    return want != 0.0 ? std::abs(have - want) / std::abs(want) : std::abs(have);
  };
  double product_err = 0.0, choice_err = 0.0;
  Json vals = Json::array();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const VectorXd& q = points[i];
    double want = s1.density.coeff(l1[i]) * s2.density.coeff(l2[i]);
    double ref = sc.density.coeff(q);
    product_err = std::max(product_err, rel_err(ref, want));
    for (std::size_t d = 0; d < draws; ++d) {
      CounterRng r = c.rng.split(1000 + 1000 * i + d);
      double v = compose_half_densities(s1.density, l1[i], s2.density, l2[i], composite, q, r).value;
      choice_err = std::max(choice_err, rel_err(v, ref));
    }
    vals.push_back({{"point", json_vec(q)}, {"coefficient", json_number(ref)}, {"product", json_number(want)}});
  }
  const std::complex<double> maslov = sc.maslov;
  c.rep.results["maslov"] = json_complex(maslov);
  c.rep.results["values"] = vals;
  c.rep.results["draws"] = draws;
  c.rep.add(check_le("composition_vs_product", "symbols", product_err, c.t("symbol")));
  c.rep.add(check_le("choice_invariance", "symbols", choice_err, c.t("symbol")));
  c.rep.add(check_eq("maslov_product_deviation", "symbols", std::abs(maslov - s1.maslov * s2.maslov), 0.0));

  auto spf = c.p.opt("stationary_phase");
  if (!spf) return;
  const Field& sp = *spf;
  sp.expect_object();
  sp.only({"source_point", "covector", "hbar", "grid", "r", "quad_order", "width"});
  VectorXd xs = sp.at("source_point").vector(a.n_source());
  VectorXd t0 = sp.at("covector").vector(b.n_target());
  std::vector<double> hbars = c.hbars(sp.at("hbar"));
  const std::size_t n = c.grid(sp.at("grid"));
  Rational r1(0), r2(0);
  if (auto rf = sp.opt("r")) {
    if (rf->size() != 2) rf->fail("expected two orders");
    r1 = (*rf)[0].rational();
    r2 = (*rf)[1].rational();
  }
  QuadratureOptions q;
  if (auto f = sp.opt("quad_order")) q.order = f->count();
  if (c.opt.quad_order) q.order = *c.opt.quad_order;
  const double w = sp.num_or("width", 0.02);
  std::vector<Interval> box;
  for (Index i = 0; i < xs.size(); ++i) box.push_back({xs[i] - 0.5 * w, xs[i] + 0.5 * w});
  Grid src(a.source(), std::vector<std::size_t>(a.n_source(), 1), box);
  Grid mid = uniform_grid(a.target(), n), dst = uniform_grid(b.target(), n);
  VectorXd qs(xs.size() + t0.size());
  qs << xs, t0;
  const double want = std::abs(sc.density.coeff(qs));
  std::vector<DiscretizedFIO> kernels;
  Json per = Json::array();
  std::vector<double> errs;
  double unit_dev = 0.0;
  for (double h : hbars) {
    DiscretizedFIO k1 = oscillatory_kernel(a, a1, r1, h, src, mid, q);
    DiscretizedFIO k2 = oscillatory_kernel(b, a2, r2, h, mid, dst, q);
    DiscretizedFIO k = compose_numeric(k2, k1, 0);
    StationaryPhaseSample s = stationary_phase_coefficient(k, comp, t0);
    double err = rel_err(s.modulus, want);
    errs.push_back(err);
    unit_dev = std::max(unit_dev, std::abs(std::abs(s.unit_factor) - 1.0));
    per.push_back({{"hbar", json_number(h)},
                   {"modulus", json_number(s.modulus)},
                   {"relative_error", json_number(err)},
                   {"unit_factor", json_complex(s.unit_factor)}});
    kernels.push_back(std::move(k));
  }
  bool monotone = true;
  for (std::size_t i = 1; i < errs.size(); ++i) monotone = monotone && errs[i] < errs[i - 1];
  Json spr = {{"symbol_modulus", json_number(want)}, {"grid", n}, {"samples", per}};
  if (kernels.size() >= 2) {
    try {
      StationaryPhaseFit fit = stationary_phase_leading(kernels, comp, t0);
      spr["fit"] = {{"c0", json_number(fit.c0)},
                    {"c1", json_number(fit.c1)},
                    {"leading", json_number(fit.leading)},
                    {"fit_residual", json_number(fit.fit_residual)}};
    } catch (const FitFailed& e) {
      c.rep.notes.push_back(std::string("linear fit in hbar rejected: ") + e.what());
    }
  }
  c.rep.results["stationary_phase"] = spr;
  c.rep.notes.push_back("unit_factor is the kernel phase left after removing exp(i f(x*)/hbar)");
  c.rep.add(check_eq("stationary_phase_monotone", "symbols", monotone ? 1.0 : 0.0, 1.0));
  c.rep.add(check_lt("stationary_phase_final_error", "symbols", errs.back(), c.t("stationary_phase")));
  c.rep.add(check_le("unit_factor_modulus_deviation", "symbols", unit_dev, 1e-12));
}

void run_reconstruct(Context& c) {
  Field sf = c.p.at("submanifold");
  const SubmanifoldDecl& d = c.sc.submanifolds.at(sf.str());
  if (!d.space) sf.fail("expected a submanifold declared inside a single space");
  const ConstraintSubmanifold& z = d.z;
  const auto& vars = z.ambient().coords();
  Field tf = c.p.at("twist");
  ScalarExpr f;
  if (auto it = c.sc.twists.find(tf.str()); it != c.sc.twists.end()) {
    if (it->second.submanifold != d.name) tf.fail("twist is declared on another submanifold");
    f = it->second.expr;
  } else {
    f = parse_expr(tf, vars);
  }
  ScalarExpr truth = c.p.opt("truth") ? parse_expr(c.p.at("truth"), vars) : f;
  auto onto = [&](const Field& at, const VectorXd& x) {
    auto p = z.project(x);
    if (!p) at.fail("point cannot be projected onto the submanifold");
    return *p;
  };
  Field bf = c.p.at("basepoint");
  VectorXd z0 = onto(bf, bf.vector(z.ambient().dim()));
  const std::size_t m = z.ambient().dim();

  std::vector<std::vector<VectorXd>> paths;
  if (auto pf = c.p.opt("paths")) {
    for (std::size_t i = 0; i < pf->size(); ++i) {
      std::vector<VectorXd> path{z0};
      Field pi = (*pf)[i];
      for (std::size_t j = 0; j < pi.size(); ++j) path.push_back(onto(pi[j], pi[j].vector(m)));
      paths.push_back(std::move(path));
    }
  }
  if (auto ff = c.p.opt("fan")) {
    ff->only({"vias", "from", "to", "count"});
    VectorXd from = ff->at("from").vector(m), to = ff->at("to").vector(m);
    const std::size_t count = ff->at("count").count();
    Field vf = ff->at("vias");
    for (std::size_t v = 0; v < vf.size(); ++v) {
      std::vector<VectorXd> via{z0};
      Field vv = vf[v];
      for (std::size_t j = 0; j < vv.size(); ++j) via.push_back(onto(vv[j], vv[j].vector(m)));
      for (std::size_t i = 0; i < count; ++i) {
        double s = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
        std::vector<VectorXd> path = via;
        path.push_back(onto(ff->at("from"), from + s * (to - from)));
        paths.push_back(std::move(path));
      }
    }
  }
  if (auto rf = c.p.opt("random")) {
    rf->only({"count", "vertices", "end"});
    const std::size_t count = rf->at("count").count();
    const std::size_t verts = rf->count_or("vertices", 2);
    VectorXd end = onto(rf->at("end"), rf->at("end").vector(m));
    CounterRng rng = c.rng.split(5);
    for (std::size_t i = 0; i < count; ++i) {
      std::vector<VectorXd> path{z0};
      for (const auto& x : z.sample(rng, verts)) path.push_back(x);
      path.push_back(end);
      paths.push_back(std::move(path));
    }
  }
  if (paths.empty()) c.p.fail("give paths, fan or random");

  TwistReconstruction rec = reconstruct_twist(LagrangianFamily::conormal(z, TwistFunction{f}), z0, paths,
                                              c.rng.split(0));
  double err = 0.0;
  std::size_t vertices = 0;
  const double t0 = truth.eval(z0);
  for (std::size_t p = 0; p < paths.size(); ++p)
    for (std::size_t i = 0; i < paths[p].size(); ++i) {
      err = std::max(err, std::abs(rec.values[p][i] - (truth.eval(paths[p][i]) - t0)));
      ++vertices;
    }
  Json& res = c.rep.results;
  res["paths"] = paths.size();
  res["vertices"] = vertices;
  res["basepoint"] = json_vec(z0);
  res["reconstruction_error_max"] = json_number(err);
  res["horizontality_residual"] = json_number(rec.horizontality_residual);
  res["holonomy"] = json_number(rec.holonomy);
  res["simply_connected"] = d.simply_connected;
  c.rep.add(check_le("reconstruction_error_max", "relations", err, c.t("reconstruction")));
  if (d.simply_connected)
    c.rep.add(check_le("path_independence", "relations", rec.holonomy, c.t("path_independence")));
  else
    c.rep.notes.push_back("Z is not declared simply connected; holonomy is reported, not checked");
}

}  // namespace

RunResult run_scenario(const Scenario& scenario, const RunOptions& options) {
  Tolerances tol = scenario.tolerances;
  for (const auto& [k, v] : options.tolerances) tol.set(k, v, "--tol");
  const std::uint64_t seed = options.seed.value_or(scenario.seed);
  const CounterRng root(seed);
  std::map<std::string, CanonicalRelation> relations = scenario.relations;
  std::map<std::string, Operator> operators;

  RunResult out;
  for (std::size_t i = 0; i < scenario.tasks.size(); ++i) {
    const TaskDecl& task = scenario.tasks[i];
    Report rep;
    rep.task = task.name;
    rep.kind = task.kind;
    rep.seed = seed;
    rep.inputs = task.params;
    Context c{scenario, options, tol, relations, operators, root.split(i), Field(task.params, task.path), rep};
    const auto start = std::chrono::steady_clock::now();
    try {
      const std::string& k = task.kind;
      if (k == "lagrangian-check") run_lagrangian(c);
      else if (k == "compose") run_compose(c);
      else if (k == "verify-compose") run_verify(c);
      else if (k == "hormander-dump") run_hormander(c);
      else if (k == "quantize") run_quantize(c, task.name);
      else if (k == "apply") run_apply(c, task.name);
      else if (k == "compose-operators") run_compose_operators(c);
      else if (k == "compare-kernels") run_compare_kernels(c);
      else if (k == "symbol") run_symbol(c);
      else if (k == "symbol-compose") run_symbol_compose(c);
      else if (k == "reconstruct-twist") run_reconstruct(c);
    } catch (const SchemaError&) {
      throw;
    } catch (const std::exception& e) {
      rep.error = TaskError(task.name, e.what()).what();
    }
    if (options.timing)
      rep.wall_time_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    out.pass = out.pass && rep.pass();
    out.reports.push_back(std::move(rep));
  }

  Json doc;
  doc["scenario"] = scenario.name;
  doc["seed"] = seed;
  Json tj = Json::object();
  for (const auto& [k, v] : tol.all()) tj[k] = json_number(v);
  doc["tolerances"] = tj;
  doc["pass"] = out.pass;
  Json reps = Json::array();
  for (const auto& r : out.reports) reps.push_back(to_json(r));
  doc["reports"] = reps;
  out.document = std::move(doc);
  return out;
}

std::string serialize(const Json& doc) { return doc.dump(2) + "\n"; }

}  // namespace conormal
