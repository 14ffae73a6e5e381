#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "fillscape/metricfield.hpp"
#include "fillscape/represent.hpp"
#include "fillscape/rng.hpp"

using namespace fillscape;
using namespace fillscape::represent;
using Eigen::Vector2d;
using Eigen::VectorXd;

namespace {

constexpr double kPi = 3.14159265358979323846;

double poincare_distance(const Vector2d& a, const Vector2d& b) {
  double num = 2 * (a - b).squaredNorm();
  double den = (1 - a.squaredNorm()) * (1 - b.squaredNorm());
  return std::acosh(1 + num / den);
}

double moment_gap(const SampledSphere& s) {
  int n = s.ambient();
  double worst = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0;
      for (int k = 0; k < s.count(); ++k)
        acc += s.weights[k] * s.nodes(k, i) * s.nodes(k, j);
      worst = std::max(worst, std::abs(n * acc - (i == j ? 1.0 : 0.0)));
    }
  return worst;
}

}  // namespace

TEST_CASE("sphere quadrature second moments are exact") {
  CHECK(moment_gap(sphere_circle(512)) < 1e-10);
  CHECK(moment_gap(sphere_circle(64)) < 1e-10);
  SampledSphere s2 = sphere_s2(512);
  CHECK(moment_gap(s2) < 1e-10);
  CHECK(std::abs(s2.weights.sum() - 1.0) < 1e-13);
  CHECK(s2.weights.minCoeff() > 0);
  // antipodal symmetry kills first moments
  VectorXd first = s2.nodes.transpose() * s2.weights;
  CHECK(first.cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("scalar product restricts to the euclidean one on the linear image") {
  for (int which = 0; which < 2; ++which) {
    SampledSphere s = which == 0 ? sphere_circle(512) : sphere_s2(512);
    int n = s.ambient();
    Embedding e1 = busemann_embed_euclidean(VectorXd::Unit(n, 0), s);
    Embedding e2 = busemann_embed_euclidean(VectorXd::Unit(n, 1), s);
    CHECK(std::abs(scalar_product_e(e1, e2, s)) < 1e-12);
    CHECK(scalar_product_e(e1, e1, s) == doctest::Approx(1.0).epsilon(1e-12));
    // direct quadrature identity, computed from scratch
    double acc = 0;
    for (int k = 0; k < s.count(); ++k)
      acc += s.weights[k] * s.nodes(k, 0) * s.nodes(k, 0);
    CHECK(n * acc == doctest::Approx(1.0).epsilon(1e-12));

    Rng rng(13 + which);
    for (int t = 0; t < 1000; ++t) {
      VectorXd x = rng.gaussian(n), y = rng.gaussian(n);
      double lhs = scalar_product_e(busemann_embed_euclidean(x, s),
                                    busemann_embed_euclidean(y, s), s);
      CHECK(std::abs(lhs - x.dot(y)) <= 1e-9 * std::max(1.0, x.norm() * y.norm()));
    }
  }
  Embedding z(VectorXd::Zero(16));
  SampledSphere s16 = sphere_circle(16);
  Embedding u(VectorXd::Ones(16));
  CHECK(scalar_product_e(u, z, s16) == 0.0);
  CHECK_THROWS_AS(scalar_product_e(u, Embedding(VectorXd::Ones(8)), s16),
                  ArgumentError);
}

TEST_CASE("scalar-product norm is dominated by sqrt(n) sup norm") {
  SampledSphere s = sphere_circle(64);
  Rng rng(17);
  for (int t = 0; t < 200; ++t) {
    Embedding u(rng.gaussian(64));
    CHECK(norm_e(u, s) <= std::sqrt(2.0) * u.sup_norm + 1e-12);
  }
}

TEST_CASE("project_flat is a linear retraction onto the image") {
  SampledSphere s = sphere_circle(128);
  Rng rng(19);
  for (int t = 0; t < 50; ++t) {
    VectorXd x = rng.gaussian(2);
    VectorXd back = project_flat(busemann_embed_euclidean(x, s), s);
    CHECK((back - x).cwiseAbs().maxCoeff() < 1e-13);
  }
  // pattern orthogonal to the image maps to zero
  VectorXd pattern(128);
  for (int k = 0; k < 128; ++k) pattern[k] = s.nodes(k, 0) * s.nodes(k, 1);
  CHECK(project_flat(Embedding(pattern), s).cwiseAbs().maxCoeff() < 1e-14);
  // linearity
  Embedding u(rng.gaussian(128)), v(rng.gaussian(128));
  VectorXd lhs = project_flat(Embedding(2.5 * u.values - 0.75 * v.values), s);
  VectorXd rhs = 2.5 * project_flat(u, s) - 0.75 * project_flat(v, s);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("boundary distance representation on the flat disc") {
  using metricfield::MetricField;
  MetricField disc = MetricField::euclidean(1.0);
  auto params = boundary_params(16);
  Embedding center = bdr_embed(disc, {0, 0}, params);
  for (int k = 0; k < 16; ++k)
    CHECK(center.values[k] == doctest::Approx(1.0).epsilon(1e-8));

  // at a boundary node: own coordinate zero, others chord lengths
  Vector2d b0(1, 0);
  Embedding at0 = bdr_embed(disc, b0, params);
  CHECK(at0.values[0] == 0.0);
  for (int k = 1; k < 16; ++k) {
    Vector2d bk(std::cos(params[k]), std::sin(params[k]));
    CHECK(at0.values[k] == doctest::Approx((bk - b0).norm()).epsilon(1e-6));
  }
}

TEST_CASE("boundary representation preserves distances up to the covering gap") {
  using metricfield::MetricField;
  MetricField disc = MetricField::euclidean(1.0);
  const int p = 32;
  auto params = boundary_params(p);
  metricfield::DistanceOptions o;
  o.fan = 64;
  Rng rng(23);
  int tested = 0;
  for (int t = 0; t < 60 && tested < 12; ++t) {
    Vector2d x(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8));
    Vector2d y(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8));
    if (x.norm() > 0.8 || y.norm() > 0.8 || (x - y).norm() < 0.5) continue;
    ++tested;
    Embedding ex = bdr_embed(disc, x, params, 1e-9, o);
    Embedding ey = bdr_embed(disc, y, params, 1e-9, o);
    double sup = (ex.values - ey.values).cwiseAbs().maxCoeff();
    double d = (x - y).norm();
    // covering deficit from the chart geometry, in closed form
    double best = 0;
    for (int k = 0; k < p; ++k) {
      Vector2d bk(std::cos(params[k]), std::sin(params[k]));
      best = std::max(best, std::abs((x - bk).norm() - (y - bk).norm()));
    }
    double delta = (d - best) / d;
    CHECK(sup / d >= 1 - delta - 1e-6);
    CHECK(sup / d <= 1 + 1e-6);
    CHECK(delta < 0.05);
  }
  CHECK(tested >= 8);
}

TEST_CASE("euclidean linear representation basics") {
  SampledSphere s = sphere_circle(256);
  Embedding z = busemann_embed_euclidean(VectorXd::Zero(2), s);
  CHECK(z.sup_norm == 0.0);
  Embedding e1 = busemann_embed_euclidean(VectorXd::Unit(2, 0), s);
  for (int k = 0; k < 16; ++k) CHECK(e1.values[k] == s.nodes(k, 0));
  Rng rng(29);
  double cover = 1.0 / std::cos(kPi / 256);  // circumscribed direction gap
  for (int t = 0; t < 100; ++t) {
    VectorXd x = rng.gaussian(2), y = rng.gaussian(2);
    Embedding ex = busemann_embed_euclidean(x, s);
    Embedding ey = busemann_embed_euclidean(y, s);
    double sup = (ex.values - ey.values).cwiseAbs().maxCoeff();
    double d = (x - y).norm();
    if (d < 1e-9) continue;
    CHECK(sup <= d * (1 + 1e-12));
    CHECK(sup >= d / cover - 1e-12);
  }
}

TEST_CASE("hyperbolic horocycle coordinates against the defining limit") {
  SampledSphere s = sphere_circle(64);
  Embedding origin = busemann_embed_hyperbolic({0, 0}, s);
  CHECK(origin.sup_norm < 1e-14);

  // along the ray toward node k the coordinate equals minus arclength
  for (int k : {0, 5, 31}) {
    Vector2d sk = s.nodes.row(k).transpose();
    for (double t : {0.3, 0.8, 1.7}) {
      Vector2d x = std::tanh(t / 2) * sk;
      Embedding e = busemann_embed_hyperbolic(x, s);
      CHECK(e.values[k] == doctest::Approx(-t).epsilon(1e-12));
      // oracle: truncation of lim d(x, gamma(T)) - T at T = 20; the far
      // conformal factor 1 - tanh(T/2)^2 is evaluated as sech(T/2)^2 to
      // dodge cancellation, the formula is otherwise the plain one
      double T = 20;
      Vector2d far = std::tanh(T / 2) * sk;
      double sech2 = 1.0 / (std::cosh(T / 2) * std::cosh(T / 2));
      double oracle =
          std::acosh(1 + 2 * (x - far).squaredNorm() /
                             ((1 - x.squaredNorm()) * sech2)) -
          T;
      CHECK(std::abs(e.values[k] - oracle) < 1e-8);
    }
  }

  // coordinates are 1-Lipschitz and the sup recovers the distance
  Rng rng(31);
  for (int t = 0; t < 100; ++t) {
    Vector2d x = 0.7 * Vector2d(rng.uniform(-1, 1), rng.uniform(-1, 1));
    Vector2d y = 0.7 * Vector2d(rng.uniform(-1, 1), rng.uniform(-1, 1));
    double d = poincare_distance(x, y);
    if (d < 0.2) continue;
    Embedding ex = busemann_embed_hyperbolic(x, s);
    Embedding ey = busemann_embed_hyperbolic(y, s);
    double sup = (ex.values - ey.values).cwiseAbs().maxCoeff();
    CHECK(sup <= d + 1e-10);
    CHECK(sup >= d * (1 - 0.02));  // 64 nodes cover the ideal boundary densely
  }
  CHECK_THROWS_AS(busemann_embed_hyperbolic({1.2, 0}, s), ChartError);
}

TEST_CASE("hyperbolic projection is a retraction") {
  SampledSphere s = sphere_circle(256);
  Rng rng(37);
  for (int t = 0; t < 50; ++t) {
    double r = 0.8 * std::sqrt(rng.uniform01());
    double a = rng.uniform(0, 2 * kPi);
    Vector2d x(r * std::cos(a), r * std::sin(a));
    Embedding phi = busemann_embed_hyperbolic(x, s);
    Vector2d back = project_hyperbolic(phi, s, 1e-11);
    CHECK((back - x).norm() < 1e-6);
    // adding a constant does not move the minimizer
    Embedding shifted(phi.values.array() + rng.uniform(-3, 3));
    Vector2d back2 = project_hyperbolic(shifted, s, 1e-11);
    CHECK((back2 - x).norm() < 1e-6);
  }
  Embedding zero(VectorXd::Zero(256));
  CHECK(project_hyperbolic(zero, s, 1e-12).norm() < 1e-9);
}

TEST_CASE("hyperbolic projection agrees with the closed-form minimizer") {
  SampledSphere s = sphere_circle(128);
  Rng rng(41);
  for (int t = 0; t < 20; ++t) {
    Embedding phi(rng.gaussian(128) * 0.4);
    Vector2d got = project_hyperbolic(phi, s, 1e-12);
    // independent argmin of sum c_k |x - s_k|^2 / (1 - |x|^2)
    VectorXd c(128);
    for (int k = 0; k < 128; ++k)
      c[k] = s.weights[k] * std::exp(-2 * phi.values[k]);
    c /= c.sum();
    Vector2d b = Vector2d::Zero();
    for (int k = 0; k < 128; ++k) b += c[k] * s.nodes.row(k).transpose();
    double beta = b.norm();
    Vector2d ref = Vector2d::Zero();
    if (beta > 1e-14) ref = (1 - std::sqrt(1 - beta * beta)) / beta * b.normalized();
    CHECK((got - ref).norm() < 1e-8);
  }
}

TEST_CASE("jacobian probe: contraction off the image, equality on it") {
  SampledSphere s = sphere_circle(256);
  JacobianFitReport rep = jacobian_bound_probe(s, 100, 10.0, 7);
  CHECK(rep.violations == 0);
  CHECK(rep.fitted_c > 0);
  for (const auto& smp : rep.samples) CHECK(smp.jacobian <= 1.0 + 1e-10);

  // a sample exactly on the image has J = 1
  Rng rng(43);
  VectorXd x = rng.gaussian(2);
  VectorXd u = s.nodes * x;
  auto fmap = [&](const VectorXd& w) {
    VectorXd y = project_flat(Embedding(w), s);
    Embedding q(w - s.nodes * y);
    double r2 = scalar_product_e(q, q, s);
    return VectorXd(y / (1 + rep.lambda * r2));
  };
  Eigen::MatrixXd D(2, 2);
  double delta = 1e-5;
  for (int d = 0; d < 2; ++d) {
    VectorXd dir = s.nodes * VectorXd::Unit(2, d);
    D.col(d) = (fmap(u + delta * dir) - fmap(u - delta * dir)) / (2 * delta);
  }
  double J = std::sqrt((D * D.transpose()).determinant());
  CHECK(J == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("jacobian probe scaling relation") {
  // With the linear projection the residual is homogeneous, so doubling
  // the input while quartering lambda leaves the differential unchanged.
  SampledSphere s = sphere_circle(64);
  Rng rng(47);
  VectorXd u = rng.gaussian(64);
  auto jac_at = [&](const VectorXd& w, double lam) {
    auto fmap = [&](const VectorXd& ww) {
      VectorXd y = project_flat(Embedding(ww), s);
      Embedding q(ww - s.nodes * y);
      double r2 = scalar_product_e(q, q, s);
      return VectorXd(y / (1 + lam * r2));
    };
    VectorXd x = project_flat(Embedding(w), s);
    VectorXd q = w - s.nodes * x;
    double r2 = scalar_product_e(Embedding(q), Embedding(q), s);
    std::vector<VectorXd> dirs;
    for (int d = 0; d < 2; ++d) dirs.push_back(s.nodes * VectorXd::Unit(2, d));
    dirs.push_back(q / std::sqrt(r2));
    Eigen::MatrixXd D(2, 3);
    double delta = 1e-6;
    for (int j = 0; j < 3; ++j)
      D.col(j) = (fmap(w + delta * dirs[j]) - fmap(w - delta * dirs[j])) / (2 * delta);
    return std::sqrt((D * D.transpose()).determinant());
  };
  // residual scales exactly quadratically
  VectorXd x1 = project_flat(Embedding(u), s);
  Embedding q1(u - s.nodes * x1);
  VectorXd u2 = 2 * u;
  VectorXd x2 = project_flat(Embedding(u2), s);
  Embedding q2(u2 - s.nodes * x2);
  double r1 = scalar_product_e(q1, q1, s), r2 = scalar_product_e(q2, q2, s);
  CHECK(r2 == doctest::Approx(4 * r1).epsilon(1e-12));
  CHECK(jac_at(u2, 0.25 * 0.08) == doctest::Approx(jac_at(u, 0.08)).epsilon(1e-4));
}

TEST_CASE("directions orthogonal to the active block do not move the map") {
  SampledSphere s = sphere_circle(64);
  Rng rng(53);
  VectorXd u = rng.gaussian(64);
  VectorXd x = project_flat(Embedding(u), s);
  VectorXd q = u - s.nodes * x;
  // build a direction orthogonal (in the scalar product) to the image and q
  VectorXd d = rng.gaussian(64);
  VectorXd dx = project_flat(Embedding(d), s);
  d -= s.nodes * dx;
  Embedding qe(q);
  double qq = scalar_product_e(qe, qe, s);
  d -= scalar_product_e(Embedding(d), qe, s) / qq * q;
  auto fmap = [&](const VectorXd& w) {
    VectorXd y = project_flat(Embedding(w), s);
    Embedding r(w - s.nodes * y);
    double rr = scalar_product_e(r, r, s);
    return VectorXd(y / (1 + 0.05 * rr));
  };
  double delta = 1e-6;
  VectorXd diff = (fmap(u + delta * d) - fmap(u - delta * d)) / (2 * delta);
  CHECK(diff.cwiseAbs().maxCoeff() < 1e-7 * (1 + d.norm()));
}

TEST_CASE("sphere and embedding csv round trips") {
  SampledSphere s = sphere_s2(64);
  std::stringstream ss;
  write_sphere_csv(s, ss);
  SampledSphere back = sphere_from_csv(ss);
  CHECK(back.dim == 2);
  CHECK((back.nodes - s.nodes).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((back.weights - s.weights).cwiseAbs().maxCoeff() < 1e-12);

  std::vector<Embedding> batch = {Embedding(VectorXd::Ones(4)),
                                  Embedding(VectorXd::Zero(4))};
  std::stringstream es;
  write_embeddings_csv(batch, es);
  std::string dumped = es.str();
  CHECK(std::count(dumped.begin(), dumped.end(), '\n') == 2);
}
