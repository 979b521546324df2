#include <doctest.h>

#include <cmath>

#include "conormal/error.hpp"
#include "conormal/relations.hpp"
#include "oracles.hpp"

using namespace conormal;
using oracle::vec;

namespace {

EuclideanPatch X1() { return oracle::line("X1", "x1", -1, 1); }
EuclideanPatch X2() { return oracle::line("X2", "x2", -3, 3); }
EuclideanPatch X3() { return oracle::line("X3", "x3", -7, 7); }

CanonicalRelation graph(const EuclideanPatch& a, const EuclideanPatch& b, const std::string& g, const std::string& f) {
  GraphSubmanifold gr(a, b, VectorExpr::parse({g}, a.coords()));
  return CanonicalRelation::from_graph(gr, parse(f, a.coords()));
}

CanonicalRelation identity_relation() {
  EuclideanPatch x = oracle::line("X", "x"), y = oracle::line("Y", "y");
  return graph(x, y, "x", "0");
}

// Independent composition of 1D graphs: given x1 and the covector eta3 over x3, walk back through
// the two graphs using the defining formula (-xi - f', eta) vanishing on (1, g').
struct GraphChainOracle {
  std::function<double(double)> g1, dg1, f1p, g2, dg2, f2p;
  RelationPoint point(double x1, double eta3) const {
    double x2 = g1(x1);
    double xi2 = dg2(x2) * eta3 - f2p(x2);  // Gamma2: -xi2 - f2' + eta3 g2' = 0
    double xi1 = dg1(x1) * xi2 - f1p(x1);
    return {vec({x1}), vec({xi1}), vec({g2(x2)}), vec({eta3})};
  }
};

GraphChainOracle example_chain() {
  return {[](double x) { return 2 * x; },      [](double) { return 2.0; }, [](double x) { return 2 * x; },
          [](double y) { return y + 1; },      [](double) { return 1.0; }, [](double y) { return std::cos(y); }};
}

}  // namespace

TEST_CASE("relation points of the identity and of a linear graph") {
  auto id = identity_relation();
  CounterRng rng(1);
  for (int i = 0; i < 20; ++i) {
    double x = rng.uniform(-1, 1), s = rng.uniform(-3, 3);
    auto p = relation_point(id, vec({x, x}), vec({s}));
    CHECK(p.x == p.y);
    CHECK(p.xi == p.eta);
    CHECK(member(id, p).inside);
    RelationPoint bad{p.x, p.xi, p.y, 2.0 * p.eta};
    if (std::abs(s) > 1e-3) CHECK_FALSE(member(id, bad).inside);
  }
  auto g = graph(oracle::line("X", "x"), oracle::line("Y", "y", -2, 2), "2*x", "0");
  for (int i = 0; i < 20; ++i) {
    double x = rng.uniform(-1, 1), eta = rng.uniform(-3, 3);
    RelationPoint p{vec({x}), vec({2 * eta}), vec({2 * x}), vec({eta})};
    auto m = member(g, p);
    CHECK(m.residual() < 1e-10);
    auto q = relation_point(g, vec({x, 2 * x}), vec({eta}));
    CHECK(oracle::max_abs(q.xi - p.xi) < 1e-15);
  }
}

TEST_CASE("twisting shifts the covector blocks by (-d_X f, d_Y f)") {
  EuclideanPatch prod = oracle::box("P", {"a", "b"});
  auto z = ConstraintSubmanifold::parse(prod, {"b - a^3"});
  CanonicalRelation g0(oracle::line("A", "a"), oracle::line("B", "b"), z, parse("0", {"a", "b"}));
  ScalarExpr f = parse("sin(a) + a*b^2", {"a", "b"});
  CanonicalRelation gf(oracle::line("A", "a"), oracle::line("B", "b"), z, f);
  CounterRng rng(3);
  for (const auto& p : z.sample(rng, 20)) {
    Eigen::VectorXd s = vec({rng.uniform(-1, 1)});
    auto a = relation_point(g0, p, s), b = relation_point(gf, p, s);
    Eigen::VectorXd df = f.gradient(p);
    CHECK(std::abs((b.xi - a.xi)[0] + df[0]) <= 1e-15);
    CHECK(std::abs((b.eta - a.eta)[0] - df[1]) <= 1e-15);
  }
}

TEST_CASE("Lagrangian residuals and the negative control") {
  auto plane = CanonicalRelation(oracle::line("A", "x1"), oracle::line("B", "x2"),
                                 ConstraintSubmanifold::parse(oracle::box("P", {"x1", "x2"}), {"x2"}),
                                 parse("0", {"x1", "x2"}));
  CHECK(lagrangian_residual(plane, vec({0.3, 0.0}), vec({2.0})).residual == 0.0);

  EuclideanPatch prod = oracle::box("P", {"x", "y"}, -2, 2);
  auto circ = ConstraintSubmanifold::parse(prod, {"x^2 + y^2 - 1"});
  CanonicalRelation c(oracle::line("A", "x", -2, 2), oracle::line("B", "y", -2, 2), circ, parse("x", {"x", "y"}));
  CounterRng rng(4);
  for (const auto& p : circ.sample(rng, 100)) {
    auto lr = lagrangian_residual(c, p, vec({rng.uniform(-2, 2)}));
    CHECK(lr.residual < 1e-8);
    CHECK(lr.rank == 2);
  }

  // scaling the covector by 1 + x breaks closedness of the twist once dim Z >= 2
  EuclideanPatch r3 = oracle::box("R3", {"x", "y", "w"}, -2, 2);
  auto sphere = ConstraintSubmanifold::parse(r3, {"x^2 + y^2 + w^2 - 1"});
  CanonicalRelation sp(oracle::box("A", {"x", "y"}, -2, 2), oracle::line("B", "w", -2, 2), sphere,
                       parse("y", {"x", "y", "w"}));
  ScalarExpr scale = parse("1 + x", {"x", "y", "w"});
  int controls = 0;
  for (const auto& p : sphere.sample(rng, 100)) {
    Eigen::VectorXd s = vec({rng.uniform(-2, 2)});
    CHECK(lagrangian_residual(sp, p, s).residual < 1e-8);
    if (std::abs(p[2]) < 0.2) continue;
    ++controls;
    CHECK(lagrangian_residual(sp, p, s, &scale).residual > 1e-3);
  }
  CHECK(controls > 30);
}

TEST_CASE("compose_graphs: g = g2 o g1, f = f1 + f2 o g1, checked by the chain oracle") {
  EuclideanPatch a = oracle::line("X1", "x1"), b = oracle::line("X2", "x2", -3, 3), c = oracle::line("X3", "x3", -4, 4);
  auto r1 = graph(a, b, "2*x1", "x1^2");
  auto r2 = graph(b, c, "x2 + 1", "sin(x2)");
  auto comp = compose_graphs(r1, r2);
  CHECK(comp.graph()->map()[0].eval(vec({0.25})) == doctest::Approx(1.5));
  CHECK(comp.graph_twist()->eval(vec({0.25})) == doctest::Approx(0.0625 + std::sin(0.5)).epsilon(1e-15));

  auto orc = example_chain();
  CounterRng rng(5);
  for (int i = 0; i < 100; ++i) {
    auto p = orc.point(rng.uniform(-1, 1), rng.uniform(-3, 3));
    CHECK(member(comp, p).residual() < 1e-10);
  }
  // converse: composite points factor through Gamma1 and Gamma2 with x2 = g1(x1)
  for (int i = 0; i < 100; ++i) {
    double x1 = rng.uniform(-1, 1), eta = rng.uniform(-3, 3);
    auto p = relation_point(comp, vec({x1, 2 * x1 + 1}), vec({eta}));
    double x2 = 2 * x1, xi2 = eta - std::cos(x2);
    CHECK(member(r2, RelationPoint{vec({x2}), vec({xi2}), p.y, p.eta}).residual() < 1e-10);
    CHECK(member(r1, RelationPoint{p.x, p.xi, vec({x2}), vec({xi2})}).residual() < 1e-10);
  }
  // the printed variant f1 + f2 o g2 is rejected by the same oracle
  auto wrong = graph(a, c, "2*x1 + 1", "x1^2 + sin(x1 + 1)");
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) worst = std::max(worst, member(wrong, orc.point(rng.uniform(-1, 1), 0.5)).residual());
  CHECK(worst > 1e-2);
}

TEST_CASE("compose_graphs special cases and associativity") {
  EuclideanPatch a = oracle::line("X1", "x1"), b = oracle::line("X2", "x2", -3, 3), c = oracle::line("X3", "x3", -4, 4);
  auto id = graph(a, b, "x1", "0");
  auto r2 = graph(b, c, "x2^3 - x2", "exp(x2)");
  auto same = compose_graphs(id, r2);
  CounterRng rng(6);
  for (int i = 0; i < 30; ++i) {
    double x = rng.uniform(-1, 1), eta = rng.uniform(-2, 2);
    auto p = relation_point(r2, vec({x, x * x * x - x}), vec({eta}));
    RelationPoint q{p.x, p.xi, p.y, p.eta};
    CHECK(member(same, q).residual() < 1e-12);
  }
  auto untw = compose_graphs(graph(a, b, "2*x1", "0"), graph(b, c, "x2 + 1", "0"));
  for (double x : {-0.7, 0.1, 0.8}) CHECK(untw.graph_twist()->eval(vec({x})) == 0.0);

  EuclideanPatch d = oracle::line("X4", "x4", -9, 9);
  auto s1 = graph(a, b, "x1 + x1^2", "x1^3");
  auto s2 = graph(b, c, "sin(x2)", "x2^2");
  auto s3 = graph(c, d, "2*x3 - 1", "cos(x3)");
  auto left = compose_graphs(compose_graphs(s1, s2), s3);
  auto right = compose_graphs(s1, compose_graphs(s2, s3));
  for (int i = 0; i < 100; ++i) {
    RelationPoint probe{vec({rng.uniform(-1, 1)}), vec({rng.uniform(-3, 3)}), vec({rng.uniform(-3, 3)}),
                        vec({rng.uniform(-3, 3)})};
    if (i % 2 == 0) probe = relation_point(left, left.graph()->point(probe.x), probe.eta);
    auto ml = member(left, probe), mr = member(right, probe);
    CHECK(ml.inside == mr.inside);
    CHECK(std::abs(ml.residual() - mr.residual()) < 1e-9);
  }
}

TEST_CASE("compose_endpoint") {
  EuclideanPatch a = oracle::line("X1", "x1"), b = oracle::line("X2", "x2"), c = oracle::line("X3", "x3");
  auto r1 = CanonicalRelation::point_factor(a, b, vec({0.0}), true, parse("x1^2", {"x1", "x2"}));
  auto r2 = CanonicalRelation::point_factor(b, c, vec({0.0}), false, parse("cos(x3)", {"x2", "x3"}));
  auto comp = compose_endpoint(r1, r2);
  CHECK(comp.fiber_dim() == 0);
  CounterRng rng(7);
  for (int i = 0; i < 50; ++i) {
    double x1 = rng.uniform(-1, 1), x3 = rng.uniform(-1, 1);
    auto p = relation_point(comp, vec({x1, x3}), Eigen::VectorXd());
    CHECK(p.xi[0] == doctest::Approx(-2 * x1).epsilon(1e-15));
    CHECK(p.eta[0] == doctest::Approx(-std::sin(x3)).epsilon(1e-15));
    CHECK(member(comp, p).residual() < 1e-12);
  }
  auto untw = compose_endpoint(CanonicalRelation::point_factor(a, b, vec({0.0}), true, parse("0", {"x1", "x2"})),
                               CanonicalRelation::point_factor(b, c, vec({0.0}), false, parse("0", {"x2", "x3"})));
  CHECK(untw.twist().extension.eval(vec({0.3, 0.4})) == 0.0);
  auto off = CanonicalRelation::point_factor(b, c, vec({0.5}), false, parse("0", {"x2", "x3"}));
  CHECK_THROWS_AS(compose_endpoint(r1, off), PreconditionError);
}

TEST_CASE("compose_exact_graphs") {
  EuclideanPatch a = oracle::line("X1", "x1", 0.5, 2), b = oracle::line("X2", "x2"), c = oracle::line("X3", "x3");
  auto r1 = CanonicalRelation::exact(a, b, parse("x1 + x2", {"x1", "x2"}));
  auto r2 = CanonicalRelation::exact(b, c, parse("-x2 + x3", {"x2", "x3"}));
  auto ex = compose_exact_graphs(r1, r2, CounterRng(8));
  CHECK(ex.independence_residual < 1e-12);
  CounterRng rng(9);
  for (int i = 0; i < 20; ++i) {
    double x1 = rng.uniform(0.5, 2), x3 = rng.uniform(-1, 1);
    CHECK(ex.relation.twist().value(vec({x1, x3})) == doctest::Approx(x1 + x3).epsilon(1e-15));
  }
  auto bad = CanonicalRelation::exact(a, b, parse("x1*x2", {"x1", "x2"}));
  CHECK_THROWS_AS(compose_exact_graphs(bad, r2, CounterRng(8)), CancellationFailed);
  auto z1 = CanonicalRelation::exact(a, b, parse("0", {"x1", "x2"}));
  auto z2 = CanonicalRelation::exact(b, c, parse("0", {"x2", "x3"}));
  CHECK(compose_exact_graphs(z1, z2, CounterRng(1)).relation.twist().value(vec({1.0, 0.0})) == 0.0);
}

TEST_CASE("verify_composition on graph chains") {
  EuclideanPatch a = X1(), b = X2(), c = X3();
  auto r1 = graph(a, b, "2*x1", "x1^2");
  auto r2 = graph(b, c, "x2 + 1", "sin(x2)");
  auto comp = compose_graphs(r1, r2);
  auto rep = verify_composition(r1, r2, comp.base(), comp.twist().extension, CounterRng(10));
  CHECK(rep.verdict == Verdict::Transverse);
  CHECK(rep.fiber_dim_e == 0);
  CHECK(rep.subset_residual < 1e-9);
  CHECK(rep.superset_residual < 1e-9);
  CHECK(rep.star_points.size() == 32);

  auto off = comp.twist().extension + parse("x1", comp.product().coords());
  auto bad = verify_composition(r1, r2, comp.base(), off, CounterRng(10));
  CHECK(bad.verdict == Verdict::Failed);
  // d_X f shifts by 1 against the unit tangent (1, 2) / sqrt(5) of the composite base
  CHECK(bad.subset_residual == doctest::Approx(1.0 / std::sqrt(5.0)).epsilon(1e-9));

  // untwisted compositions stay untwisted
  auto u1 = graph(a, b, "x1 + x1^3", "0");
  auto u2 = graph(b, c, "2*x2", "0");
  auto ucomp = compose_graphs(u1, u2);
  auto zero = parse("0", ucomp.product().coords());
  CHECK(verify_composition(u1, u2, ucomp.base(), zero, CounterRng(11)).verdict != Verdict::Failed);
  auto tilt = parse("0.5*x1 - 0.25*x3", ucomp.product().coords());
  auto tr = verify_composition(u1, u2, ucomp.base(), tilt, CounterRng(11));
  CHECK(tr.verdict == Verdict::Failed);
  CHECK(std::max(tr.subset_residual, tr.superset_residual) > 1e-3);
}

TEST_CASE("verify_composition on the endpoint and exact examples") {
  EuclideanPatch a = oracle::line("X1", "x1"), b = oracle::line("X2", "x2"), c = oracle::line("X3", "x3");
  auto r1 = CanonicalRelation::point_factor(a, b, vec({0.0}), true, parse("x1^2", {"x1", "x2"}));
  auto r2 = CanonicalRelation::point_factor(b, c, vec({0.0}), false, parse("cos(x3)", {"x2", "x3"}));
  auto comp = compose_endpoint(r1, r2);
  auto rep = verify_composition(r1, r2, comp.base(), comp.twist().extension, CounterRng(12));
  CHECK(rep.verdict == Verdict::Clean);
  // the middle covector is unconstrained, so the fiber of the star set is a copy of the X2 cotangent fiber
  CHECK(rep.fiber_dim_e == 1);
  CHECK(rep.subset_residual < 1e-9);
  CHECK(rep.superset_residual < 1e-9);
  auto off = comp.twist().extension + parse("x1", comp.product().coords());
  CHECK(verify_composition(r1, r2, comp.base(), off, CounterRng(12)).subset_residual > 1e-3);

  auto e1 = CanonicalRelation::exact(a, b, parse("x1 + x2", {"x1", "x2"}));
  auto e2 = CanonicalRelation::exact(b, c, parse("-x2 + x3", {"x2", "x3"}));
  auto ex = compose_exact_graphs(e1, e2, CounterRng(13));
  auto erep = verify_composition(e1, e2, ex.relation.base(), ex.relation.twist().extension, CounterRng(13));
  CHECK(erep.verdict == Verdict::Clean);
  CHECK(erep.fiber_dim_e == 1);
  CHECK(erep.subset_residual < 1e-9);
  CHECK(erep.superset_residual < 1e-9);
}

TEST_CASE("twist reconstruction along polylines") {
  EuclideanPatch p = oracle::box("P", {"x1", "x2"});
  auto z = ConstraintSubmanifold::parse(p, {"x2"});
  TwistFunction f{parse("x1^2", {"x1", "x2"})};
  auto fam = LagrangianFamily::conormal(z, f);
  Eigen::VectorXd z0 = vec({-0.5, 0.0});
  std::vector<std::vector<Eigen::VectorXd>> paths;
  for (int i = 0; i < 100; ++i) {
    double t = -1.0 + 2.0 * i / 99.0;
    paths.push_back({z0, vec({0.9, 0.0}), vec({t, 0.0})});
  }
  auto rec = reconstruct_twist(fam, z0, paths, CounterRng(14));
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    double t = -1.0 + 2.0 * i / 99.0;
    worst = std::max(worst, std::abs(rec.values[static_cast<std::size_t>(i)].back() - (t * t - 0.25)));
  }
  CHECK(worst < 1e-8);
  CHECK(rec.holonomy < 1e-8);

  TwistFunction zero = TwistFunction::zero(p);
  auto rz = reconstruct_twist(LagrangianFamily::conormal(z, zero), z0, paths, CounterRng(14));
  for (const auto& path : rz.values)
    for (double v : path) CHECK(v == 0.0);

  // homotopic paths on the circle arc
  EuclideanPatch q = oracle::box("Q", {"x", "y"}, -2, 2);
  auto circ = ConstraintSubmanifold::parse(q, {"x^2 + y^2 - 1"});
  TwistFunction g{parse("x*y + y^3", {"x", "y"})};
  auto cf = LagrangianFamily::conormal(circ, g);
  Eigen::VectorXd start = vec({1.0, 0.0}), end = vec({0.0, 1.0});
  std::vector<std::vector<Eigen::VectorXd>> two = {
      {start, vec({std::cos(0.3), std::sin(0.3)}), end},
      {start, vec({std::cos(0.9), std::sin(0.9)}), vec({std::cos(1.2), std::sin(1.2)}), end}};
  auto rc = reconstruct_twist(cf, start, two, CounterRng(15));
  CHECK(std::abs(rc.values[0].back() - rc.values[1].back()) < 1e-8);
  CHECK(std::abs(rc.values[0].back() - 1.0) < 1e-8);
  CHECK(rc.holonomy < 1e-8);
}

TEST_CASE("non-horizontal families are rejected") {
  EuclideanPatch p = oracle::box("P", {"x1", "x2"});
  auto z = ConstraintSubmanifold::parse(p, {"x2"});
  LagrangianFamily fam = LagrangianFamily::conormal(z, TwistFunction::zero(p));
  // covector with a fiber-dependent tangential part
  fam.covector = [](const Eigen::VectorXd&, const Eigen::VectorXd& s) { return vec({s[0], s[0]}); };
  fam.vertical = [](const Eigen::VectorXd&, const Eigen::VectorXd&) {
    return Eigen::MatrixXd((Eigen::MatrixXd(2, 1) << 1.0, 1.0).finished());
  };
  std::vector<std::vector<Eigen::VectorXd>> paths = {{vec({0.0, 0.0}), vec({0.5, 0.0})}};
  CHECK_THROWS_AS(reconstruct_twist(fam, vec({0.0, 0.0}), paths, CounterRng(1)), NotHorizontal);
}

TEST_CASE("reconstruction reproduces the composed twist") {
  EuclideanPatch a = X1(), b = X2(), c = X3();
  auto r1 = graph(a, b, "2*x1 + 0.3*x1^3", "x1^2");
  auto r2 = graph(b, c, "x2 + 1", "sin(x2)");
  auto comp = compose_graphs(r1, r2);
  auto fam = LagrangianFamily::composite(r1, r2, comp.base());
  Eigen::VectorXd z0 = comp.graph()->point(vec({-0.4}));
  std::vector<std::vector<Eigen::VectorXd>> paths;
  std::vector<double> xs;
  for (int i = 0; i < 20; ++i) {
    double x = -0.9 + 1.8 * i / 19.0;
    xs.push_back(x);
    paths.push_back({z0, comp.graph()->point(vec({x}))});
  }
  auto rec = reconstruct_twist(fam, z0, paths, CounterRng(16));
  const ScalarExpr& f = *comp.graph_twist();
  for (std::size_t i = 0; i < xs.size(); ++i)
    CHECK(std::abs(rec.values[i].back() - (f.eval(vec({xs[i]})) - f.eval(vec({-0.4})))) < 1e-6);

  // the fitted twist is a quartic, exact for a polynomial chain
  auto p1 = graph(a, b, "2*x1 - 0.5*x1^2", "x1^2 - x1");
  auto p2 = graph(b, c, "x2 + 1", "x2^2");
  auto pc = compose_graphs(p1, p2);
  auto fitted = verify_composition(p1, p2, pc.base(), std::nullopt, CounterRng(17));
  CHECK(fitted.twist_source == "reconstructed");
  CHECK(fitted.verdict == Verdict::Transverse);
  CHECK(fitted.subset_residual < 1e-8);
  CHECK(fitted.superset_residual < 1e-8);
}

TEST_CASE("polynomial fits recover polynomials") {
  CounterRng rng(18);
  std::vector<Eigen::VectorXd> pts;
  std::vector<double> vals;
  for (int i = 0; i < 60; ++i) {
    Eigen::VectorXd x = vec({rng.uniform(-1, 1), rng.uniform(-1, 1)});
    pts.push_back(x);
    vals.push_back(1.5 - x[0] + 2 * x[0] * x[1] - x[1] * x[1] * x[1]);
  }
  auto p = fit_polynomial(pts, vals, {"u", "v"}, 3);
  for (int i = 0; i < 10; ++i) {
    Eigen::VectorXd x = vec({rng.uniform(-1, 1), rng.uniform(-1, 1)});
    CHECK(std::abs(p.eval(x) - (1.5 - x[0] + 2 * x[0] * x[1] - x[1] * x[1] * x[1])) < 1e-9);
  }
}
