#include "fillscape/represent.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "fillscape/parallel.hpp"
#include "fillscape/rng.hpp"

namespace fillscape::represent {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

SampledSphere sphere_circle(int m) {
  if (m < 4) throw ArgumentError("sphere_circle: need at least 4 nodes");
  SampledSphere s;
  s.dim = 1;
  s.nodes.resize(m, 2);
  for (int k = 0; k < m; ++k) {
    double t = 2 * kPi * k / m;
    s.nodes.row(k) << std::cos(t), std::sin(t);
  }
  s.weights = Eigen::VectorXd::Constant(m, 1.0 / m);
  return s;
}

SampledSphere sphere_s2(int m) {
  if (m < 24 || m % 2 != 0)
    throw ArgumentError("sphere_s2: need an even node count >= 24");
  const int P = m / 2;
  Eigen::MatrixXd base(P, 3);
  const double ga = kPi * (3.0 - std::sqrt(5.0));  // golden angle
  for (int i = 0; i < P; ++i) {
    double z = 1.0 - (2.0 * i + 1.0) / P;
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    double phi = ga * i;
    base.row(i) << r * std::cos(phi), r * std::sin(phi), z;
  }
  // Least-norm correction of the pair weights: exact second moments and
  // total mass one. Antipodal symmetry kills the odd moments exactly.
  Eigen::VectorXd w = Eigen::VectorXd::Constant(P, 1.0 / m);
  Eigen::MatrixXd C(6, P);
  for (int i = 0; i < P; ++i) {
    double x = base(i, 0), y = base(i, 1), z = base(i, 2);
    C.col(i) << 2 * x * x, 2 * y * y, 2 * x * y, 2 * x * z, 2 * y * z, 2;
  }
  Eigen::VectorXd rhs(6);
  rhs << 1.0 / 3, 1.0 / 3, 0, 0, 0, 1;
  Eigen::VectorXd gap = rhs - C * w;
  Eigen::VectorXd delta = C.transpose() * (C * C.transpose()).ldlt().solve(gap);
  w += delta;
  if (w.minCoeff() <= 0)
    throw ConvergenceError("sphere_s2: weight correction lost positivity");
  SampledSphere s;
  s.dim = 2;
  s.nodes.resize(m, 3);
  s.weights.resize(m);
  for (int i = 0; i < P; ++i) {
    s.nodes.row(2 * i) = base.row(i);
    s.nodes.row(2 * i + 1) = -base.row(i);
    s.weights[2 * i] = w[i];
    s.weights[2 * i + 1] = w[i];
  }
  return s;
}

SampledSphere sphere_from_csv(std::istream& is) {
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  if (rows.empty()) throw ArgumentError("sphere csv: no rows");
  size_t cols = rows[0].size();
  if (cols < 3) throw ArgumentError("sphere csv: expected coordinates + weight");
  SampledSphere s;
  s.dim = int(cols) - 2;
  s.nodes.resize(rows.size(), cols - 1);
  s.weights.resize(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols) throw ArgumentError("sphere csv: ragged rows");
    for (size_t c = 0; c + 1 < cols; ++c) s.nodes(i, c) = rows[i][c];
    double nn = s.nodes.row(i).norm();
    if (std::abs(nn - 1.0) > 1e-9)
      throw ArgumentError("sphere csv: node not on the unit sphere");
    s.weights[i] = rows[i][cols - 1];
  }
  s.weights /= s.weights.sum();
  return s;
}

void write_sphere_csv(const SampledSphere& sphere, std::ostream& os) {
  char buf[64];
  for (int i = 0; i < sphere.count(); ++i) {
    for (int c = 0; c < sphere.nodes.cols(); ++c) {
      snprintf(buf, sizeof buf, "%.17g", sphere.nodes(i, c));
      os << buf << ",";
    }
    snprintf(buf, sizeof buf, "%.17g", sphere.weights[i]);
    os << buf << "\n";
  }
}

std::vector<double> boundary_params(int p) {
  std::vector<double> out(p);
  for (int i = 0; i < p; ++i) out[i] = 2 * kPi * i / p;
  return out;
}

Embedding bdr_embed(const metricfield::MetricField& field,
                    const Eigen::Vector2d& x,
                    const std::vector<double>& node_params, double tol,
                    const metricfield::DistanceOptions& opts) {
  if (!field.inside(x)) throw ArgumentError("bdr_embed: point outside domain");
  auto rows = metricfield::boundary_row(field, x, node_params, tol, opts);
  Eigen::VectorXd v(node_params.size());
  for (size_t k = 0; k < rows.size(); ++k) v[k] = rows[k].length;
  return Embedding(std::move(v));
}

std::vector<Embedding> bdr_embed_batch(const metricfield::MetricField& field,
                                       const std::vector<Eigen::Vector2d>& xs,
                                       const std::vector<double>& node_params,
                                       double tol,
                                       const metricfield::DistanceOptions& opts) {
  std::vector<Embedding> out(xs.size());
  parallel_for(int(xs.size()), [&](int i) {
    out[i] = bdr_embed(field, xs[i], node_params, tol, opts);
  });
  return out;
}

Embedding busemann_embed_euclidean(const Eigen::VectorXd& x,
                                   const SampledSphere& sphere) {
  if (x.size() != sphere.ambient())
    throw ArgumentError("busemann_embed_euclidean: dimension mismatch");
  return Embedding(sphere.nodes * x);
}

double busemann_hyperbolic(const Eigen::Vector2d& x, const Eigen::Vector2d& ideal) {
  double d2 = (x - ideal).squaredNorm();
  return std::log(d2 / (1.0 - x.squaredNorm()));
}

Embedding busemann_embed_hyperbolic(const Eigen::Vector2d& x,
                                    const SampledSphere& sphere) {
  if (sphere.ambient() != 2)
    throw ArgumentError("busemann_embed_hyperbolic: needs circle nodes");
  if (x.norm() >= 1.0)
    throw ChartError("busemann_embed_hyperbolic: point outside the disc");
  Eigen::VectorXd v(sphere.count());
  for (int k = 0; k < sphere.count(); ++k)
    v[k] = busemann_hyperbolic(x, sphere.nodes.row(k).transpose());
  return Embedding(std::move(v));
}

double scalar_product_e(const Embedding& u, const Embedding& v,
                        const SampledSphere& sphere) {
  if (u.values.size() != sphere.count() || v.values.size() != sphere.count())
    throw ArgumentError("scalar_product_e: node count mismatch");
  double s = 0;
  for (int k = 0; k < sphere.count(); ++k)
    s += sphere.weights[k] * u.values[k] * v.values[k];
  return sphere.ambient() * s;
}

double norm_e(const Embedding& u, const SampledSphere& sphere) {
  return std::sqrt(std::max(0.0, scalar_product_e(u, u, sphere)));
}

Eigen::VectorXd project_flat(const Embedding& u, const SampledSphere& sphere) {
  if (u.values.size() != sphere.count())
    throw ArgumentError("project_flat: node count mismatch");
  Eigen::VectorXd x = Eigen::VectorXd::Zero(sphere.ambient());
  for (int k = 0; k < sphere.count(); ++k)
    x += sphere.weights[k] * u.values[k] * sphere.nodes.row(k).transpose();
  return sphere.ambient() * x;
}

JacobianFitReport jacobian_bound_probe(const SampledSphere& sphere, int samples,
                                       double radius, std::uint64_t seed,
                                       double lambda) {
  if (samples < 10)
    throw ArgumentError("jacobian_bound_probe: need at least 10 samples");
  if (lambda <= 0) lambda = 1.0 / (2.0 * radius * radius);
  const int m = sphere.count();
  const int n = sphere.ambient();

  auto fmap = [&](const Eigen::VectorXd& u) -> Eigen::VectorXd {
    Embedding e(u);
    Eigen::VectorXd x = project_flat(e, sphere);
    Embedding q(u - sphere.nodes * x);
    double r2 = scalar_product_e(q, q, sphere);
    return x / (1.0 + lambda * r2);
  };

  JacobianFitReport rep;
  rep.lambda = lambda;
  rep.samples.resize(samples);
  parallel_for(samples, [&](int i) {
    Rng rng = Rng::derive(seed, i);
    Eigen::VectorXd u = rng.gaussian(m);
    double ne = norm_e(Embedding(u), sphere);
    u *= radius * rng.uniform01() / std::max(1e-12, ne);

    // Active directions: the linear image of the coordinate basis plus
    // the normalized residual; the differential vanishes on their
    // scalar-product complement.
    Eigen::VectorXd x = project_flat(Embedding(u), sphere);
    Eigen::VectorXd q = u - sphere.nodes * x;
    double r2 = scalar_product_e(Embedding(q), Embedding(q), sphere);
    std::vector<Eigen::VectorXd> dirs;
    for (int d = 0; d < n; ++d)
      dirs.push_back(sphere.nodes * Eigen::VectorXd::Unit(n, d));
    if (r2 > 1e-14) dirs.push_back(q / std::sqrt(r2));
    double delta = 1e-5 * std::max(1.0, radius);
    Eigen::MatrixXd D(n, int(dirs.size()));
    for (size_t j = 0; j < dirs.size(); ++j)
      D.col(int(j)) =
          (fmap(u + delta * dirs[j]) - fmap(u - delta * dirs[j])) / (2 * delta);
    double J = std::sqrt(std::max(0.0, (D * D.transpose()).determinant()));
    rep.samples[i] = {J, r2};
  });
  double cbest = std::numeric_limits<double>::infinity();
  for (const auto& s : rep.samples) {
    if (s.jacobian > 1.0 + 1e-10) ++rep.violations;
    if (s.resid2 > 1e-10) cbest = std::min(cbest, (1.0 - s.jacobian) / s.resid2);
  }
  rep.fitted_c = std::isfinite(cbest) ? cbest : 0.0;
  return rep;
}

Eigen::Vector2d project_hyperbolic(const Embedding& phi,
                                   const SampledSphere& sphere, double tol) {
  if (sphere.ambient() != 2)
    throw ArgumentError("project_hyperbolic: needs circle nodes");
  if (phi.values.size() != sphere.count())
    throw ArgumentError("project_hyperbolic: node count mismatch");
  if (!phi.values.allFinite())
    throw ArgumentError("project_hyperbolic: non-finite coordinates");
  if (tol <= 0) throw ArgumentError("project_hyperbolic: tol must be positive");
  const int n = 2;
  // c_k = w_k |S| exp(-n phi_k), normalized so the objective is O(1).
  // With exp(B_k(x)) = |x - s_k|^2 / (1 - |x|^2) and unit nodes the
  // objective collapses to (1 + |x|^2 - 2 b.x) / (1 - |x|^2).
  double shift = phi.values.minCoeff();
  Eigen::VectorXd c(sphere.count());
  for (int k = 0; k < sphere.count(); ++k)
    c[k] = sphere.weights[k] * std::exp(-n * (phi.values[k] - shift));
  c /= c.sum();
  Eigen::Vector2d b = Eigen::Vector2d::Zero();
  for (int k = 0; k < sphere.count(); ++k)
    b += c[k] * sphere.nodes.row(k).transpose();

  auto value = [&](const Eigen::Vector2d& x) {
    double D = 1 - x.squaredNorm();
    return ((1 + x.squaredNorm()) - 2 * b.dot(x)) / D;
  };
  auto grad = [&](const Eigen::Vector2d& x) {
    double D = 1 - x.squaredNorm();
    double N = (1 + x.squaredNorm()) - 2 * b.dot(x);
    return Eigen::Vector2d(((2 * x - 2 * b) * D + 2 * N * x) / (D * D));
  };
  auto hess = [&](const Eigen::Vector2d& x) {
    double D = 1 - x.squaredNorm();
    double N = (1 + x.squaredNorm()) - 2 * b.dot(x);
    Eigen::Vector2d gN = 2 * x - 2 * b;
    Eigen::Vector2d gD = -2 * x;
    Eigen::Matrix2d H = (2.0 / D) * Eigen::Matrix2d::Identity();
    H -= (gN * gD.transpose() + gD * gN.transpose()) / (D * D);
    H += (2 * N / (D * D)) * Eigen::Matrix2d::Identity();
    H += (2 * N / (D * D * D)) * (gD * gD.transpose());
    return H;
  };

  Eigen::Vector2d x = Eigen::Vector2d::Zero();
  const double collar = 0.995;
  for (int it = 0; it < 300; ++it) {
    Eigen::Vector2d g = grad(x);
    if (g.norm() <= tol) return x;
    Eigen::Matrix2d H = hess(x);
    Eigen::Vector2d d;
    Eigen::LLT<Eigen::Matrix2d> llt(H);
    if (llt.info() == Eigen::Success)
      d = -llt.solve(g);
    else
      d = -g;
    if (g.norm() < 1e-6) {
      // inside the quadratic basin the value-based line search cannot
      // resolve the descent any more; take plain Newton steps
      Eigen::Vector2d xn = x + d;
      if (xn.norm() >= collar)
        throw ChartError("project_hyperbolic: iterate escaped the chart collar");
      x = xn;
      continue;
    }
    double f0 = value(x);
    double t = 1.0;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      Eigen::Vector2d xn = x + t * d;
      if (xn.norm() < collar && value(xn) <= f0 + 1e-4 * t * g.dot(d)) {
        x = xn;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      if (x.norm() >= collar - 1e-9)
        throw ChartError("project_hyperbolic: iterate escaped the chart collar");
      throw ConvergenceError("project_hyperbolic: line search stalled");
    }
  }
  throw ConvergenceError("project_hyperbolic: Newton iteration cap exceeded");
}

void write_embeddings_csv(const std::vector<Embedding>& batch, std::ostream& os) {
  char buf[64];
  for (const auto& e : batch) {
    for (int i = 0; i < e.values.size(); ++i) {
      snprintf(buf, sizeof buf, "%.17g", e.values[i]);
      os << (i ? "," : "") << buf;
    }
    os << "\n";
  }
}

}  // namespace fillscape::represent
