#include "fillscape/normspace.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <unordered_map>

#include "fillscape/rng.hpp"

namespace fillscape::normspace {

namespace {

void check_spd(const Eigen::MatrixXd& A) {
  if (A.rows() != A.cols() || A.rows() < 1)
    throw ArgumentError("matrix must be square and nonempty");
  if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1 + A.cwiseAbs().maxCoeff()))
    throw ArgumentError("matrix must be symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success)
    throw ArgumentError("matrix must be positive definite");
}

double dual_exponent(double p) {
  if (std::isinf(p)) return 1.0;
  if (p <= 1.0 + 1e-15) return std::numeric_limits<double>::infinity();
  return p / (p - 1.0);
}

double lp_norm(const Eigen::VectorXd& x, double p) {
  if (std::isinf(p)) return x.cwiseAbs().maxCoeff();
  double s = 0;
  for (int i = 0; i < x.size(); ++i) s += std::pow(std::abs(x[i]), p);
  return std::pow(s, 1.0 / p);
}

// --- 2D hull helpers ---------------------------------------------------

double cross2(const Eigen::Vector2d& o, const Eigen::Vector2d& a,
              const Eigen::Vector2d& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

// Andrew monotone chain, counterclockwise, no duplicate endpoint.
std::vector<Eigen::Vector2d> hull2d(std::vector<Eigen::Vector2d> pts) {
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const auto& a, const auto& b) {
                          return (a - b).cwiseAbs().maxCoeff() < 1e-14;
                        }),
            pts.end());
  int n = int(pts.size());
  if (n < 3) return pts;
  std::vector<Eigen::Vector2d> h(2 * n);
  int k = 0;
  for (int i = 0; i < n; ++i) {
    while (k >= 2 && cross2(h[k - 2], h[k - 1], pts[i]) <= 1e-15) --k;
    h[k++] = pts[i];
  }
  for (int i = n - 2, lower = k + 1; i >= 0; --i) {
    while (k >= lower && cross2(h[k - 2], h[k - 1], pts[i]) <= 1e-15) --k;
    h[k++] = pts[i];
  }
  h.resize(k - 1);
  return h;
}

double shoelace(const std::vector<Eigen::Vector2d>& poly) {
  double a = 0;
  int n = int(poly.size());
  for (int i = 0; i < n; ++i) {
    const auto& u = poly[i];
    const auto& v = poly[(i + 1) % n];
    a += u.x() * v.y() - v.x() * u.y();
  }
  return std::abs(a) * 0.5;
}

Eigen::MatrixXd symmetric_rows(const Eigen::MatrixXd& A) {
  Eigen::MatrixXd out(2 * A.rows(), A.cols());
  out.topRows(A.rows()) = A;
  out.bottomRows(A.rows()) = -A;
  return out;
}

// Vertices of the symmetric polygon {x : |a_k.x| <= 1} via polarity:
// hull edges of conv{+-a_k} dualize to vertices, in cyclic order.
std::vector<Eigen::Vector2d> polygon_vertices_2d(const Eigen::MatrixXd& facets) {
  std::vector<Eigen::Vector2d> pts;
  pts.reserve(2 * facets.rows());
  for (int k = 0; k < facets.rows(); ++k) {
    Eigen::Vector2d a = facets.row(k);
    pts.push_back(a);
    pts.push_back(-a);
  }
  auto h = hull2d(pts);
  if (h.size() < 3) throw DegenerateError("facet set does not span the plane");
  std::vector<Eigen::Vector2d> verts;
  verts.reserve(h.size());
  int n = int(h.size());
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d& u = h[i];
    const Eigen::Vector2d& v = h[(i + 1) % n];
    double det = u.x() * v.y() - u.y() * v.x();
    if (std::abs(det) < 1e-14) continue;
    verts.emplace_back((v.y() - u.y()) / det, (u.x() - v.x()) / det);
  }
  if (verts.size() < 3) throw DegenerateError("degenerate polygon");
  return verts;
}

int facet_rank(const Eigen::MatrixXd& facets) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(facets);
  double smax = svd.singularValues()(0);
  int r = 0;
  for (int i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()(i) > 1e-12 * smax) ++r;
  return r;
}

}  // namespace

Norm Norm::euclidean(const Eigen::MatrixXd& A) {
  check_spd(A);
  Norm n;
  n.dim = int(A.rows());
  n.kind = NormKind::euclidean;
  n.matrix = A;
  return n;
}

Norm Norm::lp(int dim, double p) {
  if (dim < 1) throw ArgumentError("dimension must be >= 1");
  if (!(p >= 1.0)) throw ArgumentError("lp exponent must satisfy p >= 1");
  Norm n;
  n.dim = dim;
  n.kind = NormKind::lp;
  n.p = p;
  return n;
}

Norm Norm::polytope(const Eigen::MatrixXd& facets) {
  if (facets.rows() < 1) throw ArgumentError("facet list must be nonempty");
  Norm n;
  n.dim = int(facets.cols());
  n.kind = NormKind::polytope;
  n.facets = facets;
  return n;
}

double omega_ball(int n) {
  switch (n) {
    case 0: return 1.0;
    case 1: return 2.0;
    case 2: return kPi;
    case 3: return 4.0 * kPi / 3.0;
    case 4: return kPi * kPi / 2.0;
    default:
      throw UnsupportedError("unit-ball volume table stops at dimension 4");
  }
}

AreaDensity AreaDensity::from_name(const std::string& name) {
  if (name == "busemann") return AreaDensity(Density::busemann);
  if (name == "holmes_thompson") return AreaDensity(Density::holmes_thompson);
  if (name == "loewner") return AreaDensity(Density::loewner);
  if (name == "benson") return AreaDensity(Density::benson);
  throw ArgumentError("unknown volume definition: " + name);
}

std::string AreaDensity::name() const {
  switch (definition) {
    case Density::busemann: return "busemann";
    case Density::holmes_thompson: return "holmes_thompson";
    case Density::loewner: return "loewner";
    case Density::benson: return "benson";
  }
  return "?";
}

double AreaDensity::omega(int k) const { return omega_ball(k); }

double norm_eval(const Norm& norm, const Eigen::VectorXd& x) {
  if (x.size() != norm.dim)
    throw ArgumentError("norm_eval: vector dimension mismatch");
  switch (norm.kind) {
    case NormKind::euclidean:
      return std::sqrt(std::max(0.0, x.dot(norm.matrix * x)));
    case NormKind::lp:
      return lp_norm(x, norm.p);
    case NormKind::polytope:
      return (norm.facets * x).cwiseAbs().maxCoeff();
  }
  return 0.0;
}

// --- John ellipsoid -----------------------------------------------------
//
// For the polytope ball the inscribed ellipsoid {x : x'Qx <= 1} satisfies
// a_k' Q^{-1} a_k <= 1; maximizing its volume is the determinant program
// max log det M(u), M(u) = sum u_k a_k a_k', over the weight simplex.
// Damped multiplicative fixed-point iteration on the multipliers,
// u_k <- u_k (kappa_k / n)^w, overrelaxed while the determinant keeps
// growing; at the certified optimum Q = n M(u). Certification is the
// dual criterion max_k kappa_k <= n (1 + tol) with sum_k u_k kappa_k = n.

namespace {

struct JohnCore {
  Eigen::MatrixXd M;
  double gap = 0;
  int iterations = 0;
  bool certified = false;
};

JohnCore john_core(const Eigen::MatrixXd& A, double tol, int max_iter,
                   Eigen::VectorXd* warm) {
  const int K = int(A.rows());
  const int n = int(A.cols());
  Eigen::VectorXd u;
  if (warm && warm->size() == K && warm->minCoeff() >= 0 && warm->sum() > 0.5)
    u = *warm;
  else
    u = Eigen::VectorXd::Constant(K, 1.0 / K);

  Eigen::VectorXd kappa(K);
  Eigen::MatrixXd M(n, n), Minv(n, n);
  auto eval = [&](const Eigen::VectorXd& w, double* logdet) {
    M.setZero();
    for (int k = 0; k < K; ++k)
      M.noalias() += w[k] * (A.row(k).transpose() * A.row(k));
    double det = M.determinant();
    if (logdet) *logdet = det > 0 ? std::log(det) : -1e300;
    if (det <= 0) return false;
    Minv = M.inverse();
    for (int k = 0; k < K; ++k)
      kappa[k] = A.row(k) * Minv * A.row(k).transpose();
    return true;
  };

  JohnCore out;
  double logdet;
  if (!eval(u, &logdet)) {
    u.setConstant(1.0 / K);
    eval(u, &logdet);
  }
  double omega = 1.8;
  for (int iter = 0; iter < max_iter; ++iter) {
    out.iterations = iter;
    double kmax = kappa.maxCoeff();
    out.gap = kmax / n - 1.0;
    if (out.gap <= tol) {
      out.certified = true;
      break;
    }
    Eigen::VectorXd u_prev = u;
    Eigen::VectorXd kappa_prev = kappa;
    double logdet_prev = logdet;
    for (int k = 0; k < K; ++k) u[k] *= std::pow(kappa[k] / n, omega);
    u /= u.sum();
    eval(u, &logdet);
    if (logdet < logdet_prev && omega != 1.0) {
      // overrelaxation overshot: retreat to the plain damped update
      omega = 1.0;
      u = u_prev;
      for (int k = 0; k < K; ++k) u[k] *= kappa_prev[k] / n;
      u /= u.sum();
      eval(u, &logdet);
    }
    if (logdet < logdet_prev - 1e-15 * std::abs(logdet_prev) - 1e-300) {
      // the monotone update hit the rounding floor
      u = u_prev;
      eval(u, &logdet);
      break;
    }
    // Exchange steps drain mass from the lowest leverage point toward
    // the highest one; they identify sparse supports that the
    // multiplicative sweep alone approaches only sublinearly.
    for (int xc = 0; xc < 4; ++xc) {
      int jp = 0, jm = -1;
      double kp = -1, km = std::numeric_limits<double>::infinity();
      for (int k = 0; k < K; ++k) {
        if (kappa[k] > kp) { kp = kappa[k]; jp = k; }
        if (u[k] > 1e-16 && kappa[k] < km) { km = kappa[k]; jm = k; }
      }
      if (jm < 0 || kp <= km * (1 + 1e-12)) break;
      Eigen::MatrixXd Minv = M.inverse();
      double kij = A.row(jp) * Minv * A.row(jm).transpose();
      double denom = 2 * (kp * km - kij * kij);
      double lam = denom > 1e-300 ? (kp - km) / denom : u[jm];
      lam = std::min(lam, u[jm]);
      if (lam <= 0) break;
      u[jp] += lam;
      u[jm] -= lam;
      eval(u, &logdet);
    }
  }
  out.M = M;
  if (warm) *warm = u;
  return out;
}

}  // namespace

Ellipsoid john_ellipsoid_warm(const Norm& norm, double tol, int max_iter,
                              Eigen::VectorXd* warm) {
  const int n = norm.dim;
  if (tol <= 0) throw ArgumentError("john_ellipsoid: tol must be positive");
  if (norm.kind == NormKind::euclidean) {
    double det = norm.matrix.determinant();
    return Ellipsoid{norm.matrix, omega_ball(n) / std::sqrt(det)};
  }
  if (norm.kind != NormKind::polytope)
    throw ArgumentError(
        "john_ellipsoid expects a polytope or euclidean norm; "
        "facet-sample smooth norms first");
  const Eigen::MatrixXd& A = norm.facets;
  if (facet_rank(A) < n)
    throw DegenerateError("john_ellipsoid: facet set does not span, ball unbounded");
  JohnCore core = john_core(A, tol, max_iter, warm);
  Eigen::MatrixXd Q = double(n) * core.M;
  Ellipsoid e{Q, omega_ball(n) / std::sqrt(Q.determinant())};
  if (!core.certified)
    throw JohnConvergenceError(
        "john_ellipsoid: iteration cap exceeded before certification", e);
  return e;
}

Ellipsoid john_ellipsoid(const Norm& norm, double tol, int max_iter) {
  return john_ellipsoid_warm(norm, tol, max_iter, nullptr);
}

// --- hull volumes -------------------------------------------------------

namespace detail {

namespace {

double hull_volume_recursive(const std::vector<Eigen::VectorXd>& pts, int d);

double hull_volume_1d(const std::vector<Eigen::VectorXd>& pts) {
  double lo = pts[0](0), hi = pts[0](0);
  for (const auto& p : pts) {
    lo = std::min(lo, p(0));
    hi = std::max(hi, p(0));
  }
  return hi - lo;
}

double hull_volume_2d(const std::vector<Eigen::VectorXd>& pts) {
  std::vector<Eigen::Vector2d> v;
  v.reserve(pts.size());
  for (const auto& p : pts) v.emplace_back(p(0), p(1));
  auto h = hull2d(std::move(v));
  if (h.size() < 3) return 0.0;
  return shoelace(h);
}

double hull_volume_recursive(const std::vector<Eigen::VectorXd>& pts, int d) {
  if (d == 1) return hull_volume_1d(pts);
  if (d == 2) return hull_volume_2d(pts);
  const int K = int(pts.size());
  Eigen::VectorXd c = Eigen::VectorXd::Zero(d);
  for (const auto& p : pts) c += p;
  c /= double(K);
  double scale = 0;
  for (const auto& p : pts) scale = std::max(scale, (p - c).norm());
  if (scale == 0) return 0.0;
  const double tol = 1e-9 * scale;

  std::map<std::array<long long, 5>, char> seen;
  double vol = 0.0;

  std::vector<int> idx(d);
  // Iterate over d-subsets of points.
  std::vector<int> comb(d);
  for (int i = 0; i < d; ++i) comb[i] = i;
  auto advance = [&]() -> bool {
    int i = d - 1;
    while (i >= 0 && comb[i] == K - d + i) --i;
    if (i < 0) return false;
    ++comb[i];
    for (int j = i + 1; j < d; ++j) comb[j] = comb[j - 1] + 1;
    return true;
  };

  do {
    Eigen::MatrixXd diff(d - 1, d);
    for (int r = 1; r < d; ++r)
      diff.row(r - 1) = (pts[comb[r]] - pts[comb[0]]).transpose();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(diff, Eigen::ComputeFullV);
    if (svd.singularValues().size() < d - 1 ||
        svd.singularValues()(d - 2) < tol)
      continue;  // subset does not span a hyperplane
    Eigen::VectorXd normal = svd.matrixV().col(d - 1);
    double off0 = normal.dot(pts[comb[0]] - c);
    if (std::abs(off0) < tol) continue;  // passes through centroid
    if (off0 < 0) { normal = -normal; off0 = -off0; }
    // Supporting test.
    bool supporting = true;
    for (int k = 0; k < K && supporting; ++k)
      if (normal.dot(pts[k] - c) > off0 + tol) supporting = false;
    if (!supporting) continue;
    std::array<long long, 5> key{};
    for (int i = 0; i < d; ++i) key[i] = llround(normal(i) * 1e7);
    key[4] = llround(off0 / scale * 1e7);
    if (!seen.emplace(key, 1).second) continue;
    // Gather facet members and recurse in the hyperplane.
    Eigen::MatrixXd basis(d, d - 1);
    {
      Eigen::MatrixXd P = Eigen::MatrixXd::Identity(d, d) - normal * normal.transpose();
      Eigen::JacobiSVD<Eigen::MatrixXd> bsvd(P, Eigen::ComputeFullU);
      basis = bsvd.matrixU().leftCols(d - 1);
    }
    std::vector<Eigen::VectorXd> face;
    for (int k = 0; k < K; ++k)
      if (std::abs(normal.dot(pts[k] - c) - off0) <= tol)
        face.push_back(basis.transpose() * (pts[k] - c));
    if (int(face.size()) < d) continue;
    double fvol = hull_volume_recursive(face, d - 1);
    vol += off0 * fvol / double(d);
  } while (advance());
  return vol;
}

}  // namespace

double convex_hull_volume(const std::vector<Eigen::VectorXd>& points, int dim) {
  if (dim < 1 || dim > 4)
    throw UnsupportedError("convex hull volume limited to dimensions 1..4");
  if (points.empty()) return 0.0;
  return hull_volume_recursive(points, dim);
}

}  // namespace detail

// --- vertices / volumes -------------------------------------------------

Eigen::MatrixXd polytope_vertices(const Norm& norm) {
  if (norm.kind != NormKind::polytope)
    throw ArgumentError("polytope_vertices expects a polytope norm");
  const int n = norm.dim;
  if (n > 4) throw UnsupportedError("vertex enumeration limited to dim <= 4");
  if (facet_rank(norm.facets) < n)
    throw DegenerateError("facet set does not span, ball unbounded");
  if (n == 1) {
    double amax = norm.facets.cwiseAbs().maxCoeff();
    Eigen::MatrixXd out(2, 1);
    out << 1.0 / amax, -1.0 / amax;
    return out;
  }
  if (n == 2) {
    auto verts = polygon_vertices_2d(norm.facets);
    Eigen::MatrixXd out(verts.size(), 2);
    for (size_t i = 0; i < verts.size(); ++i) out.row(i) = verts[i];
    return out;
  }
  // dim 3 or 4: enumerate active facet subsets with sign patterns.
  const Eigen::MatrixXd F = symmetric_rows(norm.facets);
  const int K = int(F.rows());
  std::vector<Eigen::VectorXd> verts;
  std::vector<int> comb(n);
  for (int i = 0; i < n; ++i) comb[i] = i;
  auto advance = [&]() -> bool {
    int i = n - 1;
    while (i >= 0 && comb[i] == K - n + i) --i;
    if (i < 0) return false;
    ++comb[i];
    for (int j = i + 1; j < n; ++j) comb[j] = comb[j - 1] + 1;
    return true;
  };
  Eigen::MatrixXd S(n, n);
  Eigen::VectorXd one = Eigen::VectorXd::Ones(n);
  do {
    for (int r = 0; r < n; ++r) S.row(r) = F.row(comb[r]);
    double det = S.determinant();
    double rowscale = 1.0;
    for (int r = 0; r < n; ++r) rowscale *= std::max(1e-30, S.row(r).norm());
    if (std::abs(det) < 1e-12 * rowscale) continue;
    Eigen::VectorXd x = S.colPivHouseholderQr().solve(one);
    if ((F * x).maxCoeff() > 1.0 + 1e-9) continue;
    bool dup = false;
    for (const auto& v : verts)
      if ((v - x).cwiseAbs().maxCoeff() < 1e-8) { dup = true; break; }
    if (!dup) verts.push_back(x);
  } while (advance());
  if (verts.empty()) throw DegenerateError("no vertices found");
  Eigen::MatrixXd out(verts.size(), n);
  for (size_t i = 0; i < verts.size(); ++i) out.row(i) = verts[i];
  return out;
}

double ball_volume(const Norm& norm) {
  switch (norm.kind) {
    case NormKind::euclidean:
      return omega_ball(norm.dim) / std::sqrt(norm.matrix.determinant());
    case NormKind::lp: {
      // Closed form: vol = (2 Gamma(1/p + 1))^n / Gamma(n/p + 1).
      double n = norm.dim, p = norm.p;
      double g1 = std::tgamma(1.0 / p + 1.0);
      return std::pow(2.0 * g1, n) / std::tgamma(n / p + 1.0);
    }
    case NormKind::polytope: {
      if (norm.dim > 4)
        throw UnsupportedError("polytope volume limited to dim <= 4");
      if (norm.dim == 2) {
        auto verts = polygon_vertices_2d(norm.facets);
        return shoelace(verts);
      }
      Eigen::MatrixXd V = polytope_vertices(norm);
      std::vector<Eigen::VectorXd> pts;
      pts.reserve(V.rows());
      for (int i = 0; i < V.rows(); ++i) pts.push_back(V.row(i).transpose());
      return detail::convex_hull_volume(pts, norm.dim);
    }
  }
  return 0.0;
}

double polar_volume(const Norm& norm) {
  const int n = norm.dim;
  if (n > 4)
    throw UnsupportedError("polar_volume limited to dimensions <= 4");
  switch (norm.kind) {
    case NormKind::euclidean:
      return omega_ball(n) * std::sqrt(norm.matrix.determinant());
    case NormKind::lp: {
      double q = dual_exponent(norm.p);
      if (std::isinf(q)) {
        return std::pow(2.0, n);  // polar of the cross-polytope ball
      }
      double g1 = std::tgamma(1.0 / q + 1.0);
      return std::pow(2.0 * g1, n) / std::tgamma(n / q + 1.0);
    }
    case NormKind::polytope: {
      if (n == 2) {
        std::vector<Eigen::Vector2d> pts;
        for (int k = 0; k < norm.facets.rows(); ++k) {
          Eigen::Vector2d a = norm.facets.row(k);
          pts.push_back(a);
          pts.push_back(-a);
        }
        auto h = hull2d(std::move(pts));
        if (h.size() < 3)
          throw DegenerateError("polar_volume: facets do not span");
        return shoelace(h);
      }
      std::vector<Eigen::VectorXd> pts;
      pts.reserve(2 * norm.facets.rows());
      for (int k = 0; k < norm.facets.rows(); ++k) {
        pts.push_back(norm.facets.row(k).transpose());
        pts.push_back(-norm.facets.row(k).transpose());
      }
      return detail::convex_hull_volume(pts, n);
    }
  }
  return 0.0;
}

Norm polar(const Norm& norm) {
  if (norm.kind != NormKind::polytope)
    throw ArgumentError("polar expects a polytope norm");
  return Norm::polytope(polytope_vertices(norm));
}

Norm essential_facets(const Norm& norm) {
  if (norm.kind != NormKind::polytope || norm.dim != 2 ||
      norm.facets.rows() <= 16)
    return norm;
  std::vector<Eigen::Vector2d> pts;
  pts.reserve(2 * norm.facets.rows());
  for (int k = 0; k < norm.facets.rows(); ++k) {
    Eigen::Vector2d a = norm.facets.row(k);
    pts.push_back(a);
    pts.push_back(-a);
  }
  auto h = hull2d(std::move(pts));
  if (h.size() < 4) return norm;
  std::vector<Eigen::Vector2d> half;
  for (const auto& a : h)
    if (a.y() > 1e-15 || (std::abs(a.y()) <= 1e-15 && a.x() > 0))
      half.push_back(a);
  if (half.size() < 2) return norm;
  Eigen::MatrixXd F(half.size(), 2);
  for (size_t i = 0; i < half.size(); ++i) F.row(i) = half[i];
  return Norm::polytope(F);
}

// --- Benson: minimal circumscribed parallelotope (n = 2) ----------------

namespace {

// Support function of the polygon with the given vertex set.
double polygon_support(const std::vector<Eigen::Vector2d>& verts, double theta) {
  Eigen::Vector2d u(std::cos(theta), std::sin(theta));
  double h = 0;
  for (const auto& v : verts) h = std::max(h, std::abs(v.dot(u)));
  return h;
}

double parallelogram_area(const std::vector<Eigen::Vector2d>& verts,
                          double phi, double psi) {
  double s = std::abs(std::sin(psi - phi));
  if (s < 1e-12) return std::numeric_limits<double>::infinity();
  return 4.0 * polygon_support(verts, phi) * polygon_support(verts, psi) / s;
}

double min_parallelogram_area_2d(const Norm& norm) {
  auto vm = polytope_vertices(norm);
  std::vector<Eigen::Vector2d> verts;
  for (int i = 0; i < vm.rows(); ++i) verts.emplace_back(vm(i, 0), vm(i, 1));

  // Candidate slab directions: facet normals (kink minima live there)
  // plus a uniform grid for the smooth case.
  std::vector<double> cand;
  for (int k = 0; k < norm.facets.rows(); ++k) {
    Eigen::Vector2d a = norm.facets.row(k);
    cand.push_back(std::fmod(std::atan2(a.y(), a.x()) + 2 * kPi, kPi));
  }
  const int grid = 360;
  for (int i = 0; i < grid; ++i) cand.push_back(kPi * i / grid);
  std::sort(cand.begin(), cand.end());

  double best = std::numeric_limits<double>::infinity();
  double bphi = 0, bpsi = kPi / 2;
  for (double phi : cand)
    for (double psi : cand) {
      if (psi <= phi + 1e-9) continue;
      double a = parallelogram_area(verts, phi, psi);
      if (a < best) { best = a; bphi = phi; bpsi = psi; }
    }

  // Coordinate-wise golden-section polish around the best grid pair.
  auto golden1d = [&](double lo, double hi, auto f) {
    const double r = 0.6180339887498949;
    double a = lo, b = hi;
    double x1 = b - r * (b - a), x2 = a + r * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int it = 0; it < 60; ++it) {
      if (f1 < f2) { b = x2; x2 = x1; f2 = f1; x1 = b - r * (b - a); f1 = f(x1); }
      else { a = x1; x1 = x2; f1 = f2; x2 = a + r * (b - a); f2 = f(x2); }
    }
    return f1 < f2 ? x1 : x2;
  };
  double span = kPi / grid;
  for (int round = 0; round < 3; ++round) {
    bphi = golden1d(bphi - span, bphi + span,
                    [&](double t) { return parallelogram_area(verts, t, bpsi); });
    bpsi = golden1d(bpsi - span, bpsi + span,
                    [&](double t) { return parallelogram_area(verts, bphi, t); });
    span *= 0.25;
  }
  double polished = parallelogram_area(verts, bphi, bpsi);
  return std::min(best, polished);
}

}  // namespace

double volume_density(const Norm& norm, const AreaDensity& def) {
  return volume_density(norm, def.definition);
}

double volume_density(const Norm& norm, Density def) {
  const int n = norm.dim;
  if (norm.kind == NormKind::euclidean) {
    // In the round coordinates of the ball every definition gives
    // omega_n against omega_n: exactly one.
    return 1.0;
  }
  if (norm.kind == NormKind::lp) {
    if (std::abs(norm.p - 2.0) < 1e-14)
      return volume_density(Norm::euclidean(Eigen::MatrixXd::Identity(n, n)), def);
    return volume_density(facet_sample(norm), def);
  }
  switch (def) {
    case Density::busemann:
      return omega_ball(n) / ball_volume(norm);
    case Density::holmes_thompson:
      return polar_volume(norm) / omega_ball(n);
    case Density::loewner: {
      Ellipsoid e = john_ellipsoid(norm);
      return omega_ball(n) / e.volume;
    }
    case Density::benson: {
      if (n != 2)
        throw UnsupportedError(
            "benson density implemented for dimension 2 polytopes only");
      return 4.0 / min_parallelogram_area_2d(norm);
    }
  }
  return 0.0;
}

Norm induced_norm(int ambient_dim, const Eigen::MatrixXd& basis) {
  if (basis.rows() != ambient_dim)
    throw ArgumentError("induced_norm: basis row count must match ambient dim");
  const int n = int(basis.cols());
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(basis);
  double smax = svd.singularValues()(0);
  if (smax <= 0 || svd.singularValues()(n - 1) < 1e-12 * smax)
    throw DegenerateError("induced_norm: rank-deficient tangent basis");
  return Norm::polytope(basis);
}

Norm facet_sample(const Norm& norm, int per_pair) {
  if (norm.kind == NormKind::polytope) return norm;
  const int n = norm.dim;
  if (per_pair < 4) throw ArgumentError("facet_sample: need >= 4 directions");
  auto support = [&](const Eigen::VectorXd& u) -> double {
    if (norm.kind == NormKind::euclidean) {
      Eigen::VectorXd w = norm.matrix.ldlt().solve(u);
      return std::sqrt(u.dot(w));
    }
    return lp_norm(u, dual_exponent(norm.p));
  };
  std::vector<Eigen::VectorXd> dirs;
  if (n == 1) {
    dirs.push_back(Eigen::VectorXd::Ones(1));
  } else if (n == 2) {
    for (int i = 0; i < per_pair; ++i) {
      double t = kPi * i / per_pair;
      Eigen::VectorXd u(2);
      u << std::cos(t), std::sin(t);
      dirs.push_back(u);
    }
  } else {
    // Fixed-seed gaussian directions; the facet constraint |a.x| <= 1 is
    // symmetric, so direction sign does not matter.
    int total = per_pair * n * (n - 1) / 2;
    Rng rng(0x5f4c5c3e9ab1u);
    dirs.push_back(Eigen::VectorXd::Unit(n, 0));
    dirs.push_back(Eigen::VectorXd::Unit(n, n - 1));
    while (int(dirs.size()) < total) {
      Eigen::VectorXd u = rng.gaussian(n);
      double r = u.norm();
      if (r < 1e-8) continue;
      dirs.push_back(u / r);
    }
  }
  Eigen::MatrixXd F(dirs.size(), n);
  for (size_t i = 0; i < dirs.size(); ++i) {
    double h = support(dirs[i]);
    if (h <= 0) throw DegenerateError("facet_sample: zero support");
    F.row(i) = dirs[i].transpose() / h;
  }
  return Norm::polytope(F);
}

// --- serialization -------------------------------------------------------

nlohmann::json to_json(const Norm& norm) {
  nlohmann::json j;
  j["dim"] = norm.dim;
  switch (norm.kind) {
    case NormKind::euclidean: {
      j["kind"] = "euclidean";
      std::vector<std::vector<double>> rows;
      for (int r = 0; r < norm.matrix.rows(); ++r) {
        std::vector<double> row(norm.matrix.cols());
        for (int c = 0; c < norm.matrix.cols(); ++c) row[c] = norm.matrix(r, c);
        rows.push_back(row);
      }
      j["matrix"] = rows;
      break;
    }
    case NormKind::lp:
      j["kind"] = "lp";
      j["p"] = norm.p;
      break;
    case NormKind::polytope: {
      j["kind"] = "polytope";
      std::vector<std::vector<double>> rows;
      for (int r = 0; r < norm.facets.rows(); ++r) {
        std::vector<double> row(norm.facets.cols());
        for (int c = 0; c < norm.facets.cols(); ++c) row[c] = norm.facets(r, c);
        rows.push_back(row);
      }
      j["facets"] = rows;
      break;
    }
  }
  return j;
}

Norm norm_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ArgumentError("norm json must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    std::string k = it.key();
    if (k != "dim" && k != "kind" && k != "matrix" && k != "p" && k != "facets")
      throw ArgumentError("norm json: unknown key '" + k + "'");
  }
  if (!j.contains("dim") || !j.contains("kind"))
    throw ArgumentError("norm json: 'dim' and 'kind' required");
  int dim = j.at("dim").get<int>();
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "euclidean") {
    auto rows = j.at("matrix").get<std::vector<std::vector<double>>>();
    Eigen::MatrixXd A(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (size_t r = 0; r < rows.size(); ++r)
      for (size_t c = 0; c < rows[r].size(); ++c) A(r, c) = rows[r][c];
    if (A.rows() != dim) throw ArgumentError("norm json: matrix/dim mismatch");
    return Norm::euclidean(A);
  }
  if (kind == "lp") return Norm::lp(dim, j.at("p").get<double>());
  if (kind == "polytope") {
    auto rows = j.at("facets").get<std::vector<std::vector<double>>>();
    if (rows.empty()) throw ArgumentError("norm json: empty facet list");
    Eigen::MatrixXd F(rows.size(), rows[0].size());
    for (size_t r = 0; r < rows.size(); ++r) {
      if (int(rows[r].size()) != dim)
        throw ArgumentError("norm json: facet/dim mismatch");
      for (size_t c = 0; c < rows[r].size(); ++c) F(r, c) = rows[r][c];
    }
    return Norm::polytope(F);
  }
  throw ArgumentError("norm json: unknown kind '" + kind + "'");
}

nlohmann::json to_json(const Ellipsoid& e) {
  nlohmann::json j;
  std::vector<double> shape;
  for (int r = 0; r < e.shape.rows(); ++r)
    for (int c = 0; c < e.shape.cols(); ++c) shape.push_back(e.shape(r, c));
  j["shape"] = shape;
  j["dim"] = e.shape.rows();
  j["volume"] = e.volume;
  return j;
}

}  // namespace fillscape::normspace
