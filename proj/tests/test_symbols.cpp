#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "conormal/error.hpp"
#include "conormal/hormander.hpp"
#include "conormal/quantize.hpp"
#include "conormal/relations.hpp"
#include "conormal/symbols.hpp"
#include "oracles.hpp"

using namespace conormal;
using oracle::vec;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

CanonicalRelation graph1(const std::string& from, const std::string& to, const std::string& g, const std::string& f,
                         double lo = -1.0, double hi = 1.0) {
  EuclideanPatch a = oracle::line("X" + from.substr(1), from), b = oracle::line("X" + to.substr(1), to, lo, hi);
  return CanonicalRelation::from_graph(GraphSubmanifold(a, b, VectorExpr::parse({g}, {from})), parse(f, {from}));
}

SymbolSection symbol_for(const CanonicalRelation& gamma, const Amplitude& a) {
  auto desc = build_description(gamma.base(), gamma.twist());
  auto chart = graph_chart(gamma);
  std::vector<Eigen::VectorXd> samples;
  const auto n = static_cast<Eigen::Index>(gamma.n_source() + gamma.fiber_dim());
  for (int i = 0; i < 3; ++i) samples.push_back(Eigen::VectorXd::Constant(n, 0.1 * i));
  return symbol_of(a, desc, chart, samples);
}

Amplitude s_bump(const std::string& expr, const std::vector<std::string>& vars, const std::vector<std::string>& fibers) {
  Amplitude a{parse(expr, vars), {}, 4};
  for (const auto& f : fibers) a.support[f] = {-2.0, 2.0};
  return a;
}

Eigen::MatrixXd random_matrix(CounterRng& rng, Eigen::Index r, Eigen::Index c) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(-1, 1);
  return m;
}

}  // namespace

TEST_CASE("symbols of simple amplitudes") {
  auto id = graph1("x1", "x2", "x1", "0");
  Amplitude one{parse("1", {}), {{"s1", {-1.0, 1.0}}}, 4};
  auto sigma = symbol_for(id, one);
  CHECK(sigma.maslov == std::complex<double>(1.0, 0.0));
  CHECK(sigma.density.coeff(vec({0.3, 0.0})) == doctest::Approx(kTwoPi).epsilon(1e-14));
  for (double s : {-0.8, -0.2, 0.5}) {
    double want = kTwoPi * Amplitude::bump(s, 4);
    CHECK(sigma.density.coeff(vec({0.1, s})) == doctest::Approx(want).epsilon(1e-14));
  }
  CHECK(sigma.density.coeff(vec({0.1, 1.5})) == 0.0);

  Amplitude vanishing{parse("hbar*(1 + x1)", {"x1", "hbar"}), {{"s1", {-1.0, 1.0}}}, 4};
  CHECK(symbol_for(id, vanishing).density.coeff(vec({0.3, 0.2})) == 0.0);

  CHECK(symbol_normalization(2, 1) == doctest::Approx(kTwoPi).epsilon(1e-15));
  CHECK(symbol_normalization(4, 0) == doctest::Approx(kTwoPi).epsilon(1e-15));

  // a quadratic-in-s phase has a degenerate vertical differential
  auto deg = HormanderDescription::from_phase(id.product(), {"s1"}, "s1*(x2 - x1)^2");
  CHECK_THROWS_AS(symbol_of(one, deg, graph_chart(id), {vec({0.2, 0.5})}), NotTransverse);
}

TEST_CASE("graph and tangent charts give the same half-density") {
  auto gamma = graph1("x1", "x2", "0.6*x1 + 0.3*x1^2", "x1^3", -2, 2);
  Amplitude a = s_bump("1 + 0.5*x1 - 0.25*x2 + 0.1*s1", {"x1", "x2", "s1"}, {"s1"});
  auto desc = build_description(gamma.base(), gamma.twist());
  auto gc = graph_chart(gamma);
  CHECK(gc.leray(vec({0.2})) == doctest::Approx(1.0).epsilon(1e-14));
  auto sg = symbol_of(a, desc, gc, {vec({0.0, 0.0})});
  CounterRng rng(1);
  for (int i = 0; i < 20; ++i) {
    double x = rng.uniform(-0.8, 0.8), s = rng.uniform(-1.5, 1.5);
    Eigen::VectorXd z0 = vec({x, 0.6 * x + 0.3 * x * x});
    auto tc = tangent_chart(gamma, z0);
    auto st = symbol_of(a, desc, tc, {vec({0.0, s})});
    Eigen::VectorXd pg = vec({x, s}), pt = vec({0.0, s});
    CHECK(oracle::max_abs(sg.density.param.value(pg) - st.density.param.value(pt)) < 1e-12);
    Eigen::MatrixXd v = sg.density.param.jacobian(pg) * random_matrix(rng, 2, 2);
    double a1 = sg.density.evaluate(pg, v), a2 = st.density.evaluate(pt, v);
    CHECK(std::abs(a1 - a2) <= 1e-10 * std::abs(a1));
  }
}

TEST_CASE("half-densities transform covariantly") {
  EuclideanPatch a = oracle::box("X1", {"x1", "y1"}), b = oracle::box("X2", {"x2", "y2"}, -3, 3);
  auto gamma = CanonicalRelation::from_graph(
      GraphSubmanifold(a, b, VectorExpr::parse({"x1 + 0.3*y1^2", "y1 - 0.2*x1*y1"}, {"x1", "y1"})),
      parse("x1*y1", {"x1", "y1"}));
  auto sigma = symbol_for(gamma, s_bump("2 + x1*y2 - s1*s2", {"x1", "y2", "s1", "s2"}, {"s1", "s2"}));
  const HalfDensity& rho = sigma.density;
  const std::vector<std::string> q = {"q1", "q2", "q3", "q4"};
  std::vector<CoordinateChange> changes = {
      CoordinateChange::from_expressions(
          VectorExpr::parse({"2*q1 - q2 + 0.1", "q1 + q2", "0.5*q3 + q4", "q4 - 0.3*q1"}, q)),
      CoordinateChange::from_expressions(
          VectorExpr::parse({"q1 + 0.1*q1^2", "q2 - 0.2*q1*q2", "q3 + 0.15*q4^2", "q4 + 0.1*q3*q1"}, q)),
  };
  CounterRng rng(2);
  for (const auto& ch : changes) {
    auto moved = reparametrize(rho, ch);
    for (int i = 0; i < 25; ++i) {
      Eigen::VectorXd qq(4);
      for (int j = 0; j < 4; ++j) qq[j] = rng.uniform(-0.4, 0.4);
      Eigen::VectorXd p = ch.value(qq);
      Eigen::MatrixXd v = rho.param.jacobian(p) * random_matrix(rng, 4, 4);
      double lhs = rho.evaluate(p, v), rhs = moved.evaluate(qq, v);
      CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1e-300, std::abs(lhs)));
    }
  }
  // non-tangent vectors are rejected
  Eigen::MatrixXd junk = Eigen::MatrixXd::Identity(8, 4);
  CHECK_THROWS_AS(rho.evaluate(vec({0.1, 0.1, 0.2, 0.2}), junk), PreconditionError);
}

TEST_CASE("composition of half-densities along graph chains") {
  auto r1 = graph1("x1", "x2", "0.8*x1 + 0.1*x1^2", "x1^2", -2, 2);
  auto r2 = graph1("x2", "x3", "0.5*x2 - 0.2*x2^3", "sin(x2)", -2, 2);
  auto comp = compose_graphs(r1, r2);
  auto s1 = symbol_for(r1, s_bump("1 + 0.5*x1*x2", {"x1", "x2"}, {"s1"}));
  auto s2 = symbol_for(r2, s_bump("exp(-x3^2) + 0.2*s1", {"x3", "s1"}, {"s1"}));
  auto composite = graph_chart(comp).parametrization();
  auto lift = graph_chain_lift(r1, r2);
  CounterRng rng(3);
  for (int i = 0; i < 30; ++i) {
    Eigen::VectorXd q = vec({rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)});
    auto pts = lift(q);
    auto h = compose_half_densities(s1.density, pts.p1, s2.density, pts.p2, composite, q, CounterRng(40 + i));
    double want = s1.density.coeff(pts.p1) * s2.density.coeff(pts.p2);
    CHECK(std::abs(h.value - want) <= 1e-10 * std::abs(want));
    CHECK(h.delta_rank == 2);
    CHECK(h.kernel_dim == 2);
    CHECK(h.lift_residual < 1e-12);
  }

  // independent of the random choices
  Eigen::VectorXd q = vec({0.3, -0.4});
  auto pts = lift(q);
  double ref = compose_half_densities(s1.density, pts.p1, s2.density, pts.p2, composite, q, CounterRng(0)).value;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    double v = compose_half_densities(s1.density, pts.p1, s2.density, pts.p2, composite, q, CounterRng(seed)).value;
    worst = std::max(worst, std::abs(v - ref) / std::abs(ref));
  }
  CHECK(worst < 1e-10);

  // linear in each factor
  HalfDensity a = s1.density, b = s1.density, sum = s1.density;
  a.coeff = [](const Eigen::VectorXd& p) { return 1.0 + p[0]; };
  b.coeff = [](const Eigen::VectorXd& p) { return std::cos(p[1]); };
  sum.coeff = [](const Eigen::VectorXd& p) { return 2.5 * (1.0 + p[0]) - 0.5 * std::cos(p[1]); };
  auto val = [&](const HalfDensity& r) {
    return compose_half_densities(r, pts.p1, s2.density, pts.p2, composite, q, CounterRng(9)).value;
  };
  CHECK(std::abs(val(sum) - (2.5 * val(a) - 0.5 * val(b))) <= 1e-12 * std::abs(val(sum)));

  // mismatched points
  Eigen::VectorXd off = pts.p2;
  off[1] += 0.1;
  CHECK_THROWS_AS(compose_half_densities(s1.density, pts.p1, s2.density, off, composite, q, CounterRng(1)),
                  PreconditionError);
}

TEST_CASE("composition in two dimensions and with the identity") {
  EuclideanPatch a = oracle::box("X1", {"a1", "a2"}), b = oracle::box("X2", {"b1", "b2"}, -3, 3),
                 c = oracle::box("X3", {"c1", "c2"}, -5, 5);
  auto r1 = CanonicalRelation::from_graph(
      GraphSubmanifold(a, b, VectorExpr::parse({"a1 + 0.2*a2^2", "a2 - 0.3*a1"}, {"a1", "a2"})),
      parse("a1*a2", {"a1", "a2"}));
  auto r2 = CanonicalRelation::from_graph(
      GraphSubmanifold(b, c, VectorExpr::parse({"b1*(1 + 0.1*b2)", "b2 + sin(b1)"}, {"b1", "b2"})),
      parse("b2^2", {"b1", "b2"}));
  auto comp = compose_graphs(r1, r2);
  auto s1 = symbol_for(r1, s_bump("1 + a1*b2", {"a1", "b2"}, {"s1", "s2"}));
  auto s2 = symbol_for(r2, s_bump("2 - s1*c2", {"s1", "c2"}, {"s1", "s2"}));
  auto sc = compose_symbols(s1, s2, graph_chart(comp).parametrization(), graph_chain_lift(r1, r2), CounterRng(4));
  CHECK(sc.maslov == std::complex<double>(1.0, 0.0));
  auto lift = graph_chain_lift(r1, r2);
  CounterRng rng(5);
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd q(4);
    for (int j = 0; j < 4; ++j) q[j] = rng.uniform(-0.5, 0.5);
    auto pts = lift(q);
    double want = s1.density.coeff(pts.p1) * s2.density.coeff(pts.p2);
    CHECK(std::abs(sc.density.coeff(q) - want) <= 1e-10 * std::abs(want));
  }

  // composing with the identity graph leaves the symbol unchanged up to the identity's coefficient
  auto id = CanonicalRelation::from_graph(GraphSubmanifold(a, oracle::box("Y", {"y1", "y2"}),
                                                           VectorExpr::parse({"a1", "a2"}, {"a1", "a2"})),
                                          parse("0", {"a1", "a2"}));
  auto r = CanonicalRelation::from_graph(
      GraphSubmanifold(oracle::box("Y", {"y1", "y2"}), c, VectorExpr::parse({"y1 - y2^2", "2*y2"}, {"y1", "y2"})),
      parse("y1", {"y1", "y2"}));
  Amplitude unit{parse("1", {}), {}, 0};
  auto sid = symbol_for(id, unit);
  auto sr = symbol_for(r, s_bump("1 + y1 - s2", {"y1", "s2"}, {"s1", "s2"}));
  auto cid = compose_graphs(id, r);
  auto sc2 = compose_symbols(sid, sr, graph_chart(cid).parametrization(), graph_chain_lift(id, r), CounterRng(6));
  auto lift2 = graph_chain_lift(id, r);
  for (int i = 0; i < 10; ++i) {
    Eigen::VectorXd q(4);
    for (int j = 0; j < 4; ++j) q[j] = rng.uniform(-0.5, 0.5);
    auto pts = lift2(q);
    CHECK(pts.p2 == q);
    const double id_coeff = std::pow(kTwoPi, 2.0);
    CHECK(std::abs(sc2.density.coeff(q) - id_coeff * sr.density.coeff(q)) <= 1e-10 * std::abs(sc2.density.coeff(q)));
  }
}

TEST_CASE("symbol composition is associative") {
  auto r1 = graph1("x1", "x2", "0.8*x1 + 0.1", "x1^2", -2, 2);
  auto r2 = graph1("x2", "x3", "x2 - 0.2*x2^2", "0.5*x2", -3, 3);
  auto r3 = graph1("x3", "x4", "0.7*x3 + 0.1*x3^3", "cos(x3)", -3, 3);
  auto s1 = symbol_for(r1, s_bump("1 + x2", {"x2"}, {"s1"}));
  auto s2 = symbol_for(r2, s_bump("2 + x2*s1", {"x2", "s1"}, {"s1"}));
  auto s3 = symbol_for(r3, s_bump("exp(x4/3)", {"x4"}, {"s1"}));
  auto c12 = compose_graphs(r1, r2), c23 = compose_graphs(r2, r3);
  auto left_rel = compose_graphs(c12, r3), right_rel = compose_graphs(r1, c23);
  auto s12 = compose_symbols(s1, s2, graph_chart(c12).parametrization(), graph_chain_lift(r1, r2), CounterRng(7));
  auto s23 = compose_symbols(s2, s3, graph_chart(c23).parametrization(), graph_chain_lift(r2, r3), CounterRng(8));
  auto left = compose_symbols(s12, s3, graph_chart(left_rel).parametrization(), graph_chain_lift(c12, r3),
                              CounterRng(9));
  auto right = compose_symbols(s1, s23, graph_chart(right_rel).parametrization(), graph_chain_lift(r1, c23),
                               CounterRng(10));
  CounterRng rng(11);
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd q = vec({rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)});
    CHECK(oracle::max_abs(graph_chart(left_rel).parametrization().value(q) -
                          graph_chart(right_rel).parametrization().value(q)) < 1e-12);
    double l = left.density.coeff(q), r = right.density.coeff(q);
    CHECK(std::abs(l - r) <= 1e-8 * std::abs(l));
  }
}

TEST_CASE("endpoint compositions are not transverse") {
  EuclideanPatch a = oracle::line("X1", "x1"), b = oracle::line("X2", "x2"), c = oracle::line("X3", "x3");
  auto r1 = CanonicalRelation::point_factor(a, b, vec({0.0}), true, parse("x1^2", {"x1", "x2"}));
  auto r2 = CanonicalRelation::point_factor(b, c, vec({0.0}), false, parse("cos(x3)", {"x2", "x3"}));
  auto comp = compose_endpoint(r1, r2);
  auto t1 = tangent_chart(r1, vec({0.0, 0.0}));
  auto t2 = tangent_chart(r2, vec({0.0, 0.0}));
  auto tc = tangent_chart(comp, vec({0.0, 0.0}));
  Amplitude one{parse("1", {}), {}, 0};
  auto s1 = symbol_of(one, build_description(r1.base(), r1.twist()), t1, {vec({0.0, 0.0})});
  auto s2 = symbol_of(one, build_description(r2.base(), r2.twist()), t2, {vec({0.0, 0.0})});
  // chart directions can carry either sign
  const double d1 = t1.z(vec({1.0}))[0], d2 = t2.z(vec({1.0}))[1];
  const double x1 = 0.3, x3 = -0.2, eta = 0.7;
  // eta on the first relation meets xi on the second, where the fiber variable enters with a minus
  Eigen::VectorXd p1 = vec({x1 / d1, eta}), p2 = vec({x3 / d2, -eta});
  Eigen::VectorXd v1 = s1.density.param.value(p1), v2 = s2.density.param.value(p2);
  REQUIRE(std::abs(v1[2] - v2[0]) < 1e-12);
  REQUIRE(std::abs(v1[3] - v2[1]) < 1e-12);
  // the composite chart is affine: solve for the parameters over (x1, x3)
  Eigen::VectorXd qc = vec({0.0, 0.0});
  for (int it = 0; it < 3; ++it) {
    Eigen::VectorXd val = tc.parametrization().value(qc);
    qc += tc.dz(qc).fullPivLu().solve(vec({x1 - val[0], x3 - val[2]}));
  }
  CHECK_THROWS_AS(compose_half_densities(s1.density, p1, s2.density, p2, tc.parametrization(), qc, CounterRng(1)),
                  NotTransverse);
}

TEST_CASE("stationary phase recovers the symbol of a single relation") {
  auto gamma = graph1("x1", "x2", "0.5*x1 + 0.2*x1^2", "x1^3");
  Amplitude a{parse("1 + 0.5*x2 + 0.3*x1*s1", {"x1", "x2", "s1"}), {{"s1", {-1.0, 1.0}}, {"x2", {-0.95, 0.95}}}, 4};
  const double xs = 0.3, t0 = 0.3;
  Grid src(gamma.source(), {1}, std::vector<Interval>{{xs - 0.01, xs + 0.01}});
  Grid dst(gamma.target(), {512});
  std::vector<DiscretizedFIO> kernels;
  for (double hbar : {0.1, 0.05, 0.025}) kernels.push_back(oscillatory_kernel(gamma, a, Rational(0), hbar, src, dst));
  auto sigma = symbol_for(gamma, a);
  const double want = std::abs(sigma.density.coeff(vec({xs, t0})));
  const double gx = 0.5 * xs + 0.2 * xs * xs;
  CHECK(want == doctest::Approx(kTwoPi * (1 + 0.5 * gx + 0.3 * xs * t0) * Amplitude::bump(t0, 4) *
                                Amplitude::bump(gx / 0.95, 4))
                    .epsilon(1e-12));
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& k : kernels) {
    auto sp = stationary_phase_coefficient(k, gamma, vec({t0}));
    double err = std::abs(sp.modulus - want) / want;
    CHECK(err < prev);
    prev = err;
    CHECK(std::abs(std::abs(sp.unit_factor) - 1.0) < 1e-12);
  }
  CHECK(prev < 0.05);
  auto fit = stationary_phase_leading(kernels, gamma, vec({t0}));
  CHECK(std::abs(fit.leading - want) / want < 0.05);
  CHECK(fit.drift.size() == 3);
  CHECK(fit.drift[2] < fit.drift[0]);

  Amplitude zero{parse("0", {}), {{"s1", {-1.0, 1.0}}}, 4};
  std::vector<DiscretizedFIO> zs;
  for (double hbar : {0.1, 0.05}) zs.push_back(oscillatory_kernel(gamma, zero, Rational(0), hbar, src, dst));
  auto zf = stationary_phase_leading(zs, gamma, vec({t0}));
  CHECK(zf.leading == 0.0);
  CHECK(zf.c0 == 0.0);

  Grid wide(gamma.source(), {4});
  CHECK_THROWS_AS(stationary_phase_coefficient(oscillatory_kernel(gamma, a, Rational(0), 0.1, wide, dst), gamma,
                                               vec({t0})),
                  PreconditionError);
  CHECK_THROWS_AS(stationary_phase_leading({kernels[0]}, gamma, vec({t0})), PreconditionError);
}

TEST_CASE("symbol CSV") {
  auto id = graph1("x1", "x2", "x1", "0");
  auto sigma = symbol_for(id, Amplitude{parse("1", {}), {{"s1", {-1.0, 1.0}}}, 4});
  std::ostringstream os;
  write_symbol_csv(os, sigma, {"x1", "s1"}, {vec({0.0, 0.0}), vec({0.5, 0.5})});
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "x1,s1,coefficient,maslov_re,maslov_im");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 2);
}
