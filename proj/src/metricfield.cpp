#include "fillscape/metricfield.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <queue>

#include "fillscape/parallel.hpp"
#include "fillscape/rng.hpp"

namespace fillscape::metricfield {

namespace {

constexpr double kPi = 3.14159265358979323846;

double wrap_pi(double a) {
  while (a > kPi) a -= 2 * kPi;
  while (a <= -kPi) a += 2 * kPi;
  return a;
}

double eig_min2(const Eigen::Matrix2d& g) {
  double tr = g(0, 0) + g(1, 1);
  double det = g(0, 0) * g(1, 1) - g(0, 1) * g(1, 0);
  double disc = std::sqrt(std::max(0.0, tr * tr - 4 * det));
  return 0.5 * (tr - disc);
}

double eig_max2(const Eigen::Matrix2d& g) {
  double tr = g(0, 0) + g(1, 1);
  double det = g(0, 0) * g(1, 1) - g(0, 1) * g(1, 0);
  double disc = std::sqrt(std::max(0.0, tr * tr - 4 * det));
  return 0.5 * (tr + disc);
}

// Catmull-Rom weights and their derivatives on t in [0,1].
void cr_weights(double t, double w[4], double dw[4]) {
  double t2 = t * t, t3 = t2 * t;
  w[0] = 0.5 * (-t3 + 2 * t2 - t);
  w[1] = 0.5 * (3 * t3 - 5 * t2 + 2);
  w[2] = 0.5 * (-3 * t3 + 4 * t2 + t);
  w[3] = 0.5 * (t3 - t2);
  dw[0] = 0.5 * (-3 * t2 + 4 * t - 1);
  dw[1] = 0.5 * (9 * t2 - 10 * t);
  dw[2] = 0.5 * (-9 * t2 + 8 * t + 1);
  dw[3] = 0.5 * (3 * t2 - 2 * t);
}

}  // namespace

// --- MetricField ---------------------------------------------------------

MetricField MetricField::euclidean(double R, double h) {
  MetricField f;
  f.R_ = R;
  f.h_ = h;
  f.kind_ = FieldKind::euclidean;
  f.analytic_ = [](const Eigen::Vector2d&) { return Eigen::Matrix2d::Identity(); };
  f.L_ = R + std::max(f.collar_, 3 * h);
  f.sample_nodes();
  f.validate_and_bound();
  return f;
}

MetricField MetricField::hyperbolic(double R, double h, double collar) {
  if (R <= 0 || R + collar >= 1.0)
    throw ArgumentError("hyperbolic field: need 0 < R and R + collar < 1");
  MetricField f;
  f.R_ = R;
  f.h_ = h;
  f.collar_ = collar;
  f.kind_ = FieldKind::hyperbolic;
  f.analytic_ = [](const Eigen::Vector2d& x) {
    double s = 1.0 - x.squaredNorm();
    return Eigen::Matrix2d(4.0 / (s * s) * Eigen::Matrix2d::Identity());
  };
  f.L_ = R + std::max(collar, 3 * h);
  if (f.L_ >= 1.0) f.L_ = 0.5 * (R + 1.0);
  f.sample_nodes();
  f.validate_and_bound();
  return f;
}

MetricField MetricField::custom(double R, double h, TensorFn tensor,
                                double collar) {
  if (!tensor) throw ArgumentError("custom field: tensor callable required");
  MetricField f;
  f.R_ = R;
  f.h_ = h;
  f.collar_ = collar;
  f.kind_ = FieldKind::custom;
  f.analytic_ = std::move(tensor);
  f.L_ = R + std::max(collar, 3 * h);
  f.sample_nodes();
  f.validate_and_bound();
  return f;
}

MetricField MetricField::custom_from_nodes(
    double R, double h, const std::vector<Eigen::Matrix2d>& nodes, int grid_n,
    double L) {
  MetricField f;
  f.R_ = R;
  f.h_ = h;
  f.kind_ = FieldKind::custom;
  f.grid_n_ = grid_n;
  f.L_ = L;
  f.nodes_ = nodes;
  if (int(nodes.size()) != (grid_n + 1) * (grid_n + 1))
    throw ArgumentError("custom field: node count does not match grid");
  if (L < R + 2.5 * (2 * L / grid_n))
    throw ArgumentError("custom field: grid extent leaves no interpolation collar");
  f.validate_and_bound();
  return f;
}

void MetricField::sample_nodes() {
  grid_n_ = std::max(8, int(std::ceil(2 * L_ / h_)));
  double hh = 2 * L_ / grid_n_;
  nodes_.resize((grid_n_ + 1) * (grid_n_ + 1));
  for (int i = 0; i <= grid_n_; ++i)
    for (int j = 0; j <= grid_n_; ++j) {
      Eigen::Vector2d x(-L_ + i * hh, -L_ + j * hh);
      nodes_[i * (grid_n_ + 1) + j] = analytic_(x);
    }
}

void MetricField::validate_and_bound() {
  for (const auto& g : nodes_) {
    if (std::abs(g(0, 1) - g(1, 0)) > 1e-10 * (1 + g.cwiseAbs().maxCoeff()))
      throw ArgumentError("metric tensor must be symmetric");
    if (eig_min2(g) <= 0)
      throw ArgumentError("metric tensor must be positive definite at nodes");
  }
  // Dense SPD sweep over the closed domain, through whichever evaluation
  // path the field actually uses.
  min_eig_ = std::numeric_limits<double>::infinity();
  max_eig_ = 0;
  const int S = 101;
  for (int i = 0; i < S; ++i)
    for (int j = 0; j < S; ++j) {
      Eigen::Vector2d x(-R_ + 2.0 * R_ * i / (S - 1), -R_ + 2.0 * R_ * j / (S - 1));
      if (x.norm() > R_) continue;
      Eigen::Matrix2d g = metric(x);
      double lo = eig_min2(g);
      if (lo <= 0)
        throw ArgumentError("interpolated metric loses positivity inside the domain");
      min_eig_ = std::min(min_eig_, lo);
      max_eig_ = std::max(max_eig_, eig_max2(g));
    }
  min_eig_ *= 0.9;  // sampled bound, keep a margin
  max_eig_ *= 1.1;
}

Eigen::Matrix2d MetricField::interpolate(const Eigen::Vector2d& x,
                                         Eigen::Matrix2d* dx,
                                         Eigen::Matrix2d* dy) const {
  double hh = 2 * L_ / grid_n_;
  double u = (x.x() + L_) / hh;
  double v = (x.y() + L_) / hh;
  int i = int(std::floor(u));
  int j = int(std::floor(v));
  if (i < 1 || i > grid_n_ - 2 || j < 1 || j > grid_n_ - 2)
    throw ChartError("tensor interpolation outside the grid collar");
  double tu = u - i, tv = v - j;
  double wu[4], dwu[4], wv[4], dwv[4];
  cr_weights(tu, wu, dwu);
  cr_weights(tv, wv, dwv);
  Eigen::Matrix2d g = Eigen::Matrix2d::Zero();
  Eigen::Matrix2d gx = Eigen::Matrix2d::Zero();
  Eigen::Matrix2d gy = Eigen::Matrix2d::Zero();
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      const Eigen::Matrix2d& f = nodes_[(i - 1 + a) * (grid_n_ + 1) + (j - 1 + b)];
      g += wu[a] * wv[b] * f;
      if (dx) gx += dwu[a] * wv[b] * f;
      if (dy) gy += wu[a] * dwv[b] * f;
    }
  if (dx) *dx = gx / hh;
  if (dy) *dy = gy / hh;
  return g;
}

Eigen::Matrix2d MetricField::metric(const Eigen::Vector2d& x) const {
  if (analytic_) return analytic_(x);
  return interpolate(x, nullptr, nullptr);
}

void MetricField::metric_jet(const Eigen::Vector2d& x, Eigen::Matrix2d& g,
                             Eigen::Matrix2d& dgx, Eigen::Matrix2d& dgy) const {
  switch (kind_) {
    case FieldKind::euclidean:
      g = Eigen::Matrix2d::Identity();
      dgx.setZero();
      dgy.setZero();
      return;
    case FieldKind::hyperbolic: {
      double s = 1.0 - x.squaredNorm();
      double f = 4.0 / (s * s);
      double df = 16.0 / (s * s * s);  // chain rule with ds/dx_i = -2 x_i
      g = f * Eigen::Matrix2d::Identity();
      dgx = (df * x.x()) * Eigen::Matrix2d::Identity();
      dgy = (df * x.y()) * Eigen::Matrix2d::Identity();
      return;
    }
    case FieldKind::custom:
      if (analytic_) {
        const double hfd = 2e-6;
        g = analytic_(x);
        dgx = (analytic_(x + Eigen::Vector2d(hfd, 0)) -
               analytic_(x - Eigen::Vector2d(hfd, 0))) /
              (2 * hfd);
        dgy = (analytic_(x + Eigen::Vector2d(0, hfd)) -
               analytic_(x - Eigen::Vector2d(0, hfd))) /
              (2 * hfd);
      } else {
        g = interpolate(x, &dgx, &dgy);
      }
      return;
  }
}

double MetricField::sqrt_det(const Eigen::Vector2d& x) const {
  Eigen::Matrix2d g = metric(x);
  return std::sqrt(std::max(0.0, g.determinant()));
}

double MetricField::gnorm(const Eigen::Vector2d& x, const Eigen::Vector2d& v) const {
  return std::sqrt(std::max(0.0, v.dot(metric(x) * v)));
}

double MetricField::gauss_curvature(const Eigen::Vector2d& x) const {
  if (kind_ == FieldKind::euclidean) return 0.0;
  if (kind_ == FieldKind::hyperbolic) return -1.0;
  // Brioschi formula with finite-difference derivatives of the tensor.
  double hd = analytic_ ? 1e-4 : (2 * L_ / grid_n_) / 4.0;
  auto comp = [&](const Eigen::Vector2d& p, int what) {
    Eigen::Matrix2d g = metric(p);
    return what == 0 ? g(0, 0) : (what == 1 ? g(0, 1) : g(1, 1));
  };
  auto d1 = [&](int what, int dir) {
    Eigen::Vector2d e = dir == 0 ? Eigen::Vector2d(hd, 0) : Eigen::Vector2d(0, hd);
    return (comp(x + e, what) - comp(x - e, what)) / (2 * hd);
  };
  auto d2 = [&](int what, int dir1, int dir2) {
    if (dir1 == dir2) {
      Eigen::Vector2d e = dir1 == 0 ? Eigen::Vector2d(hd, 0) : Eigen::Vector2d(0, hd);
      return (comp(x + e, what) - 2 * comp(x, what) + comp(x - e, what)) / (hd * hd);
    }
    Eigen::Vector2d ex(hd, 0), ey(0, hd);
    return (comp(x + ex + ey, what) - comp(x + ex - ey, what) -
            comp(x - ex + ey, what) + comp(x - ex - ey, what)) /
           (4 * hd * hd);
  };
  double E = comp(x, 0), F = comp(x, 1), G = comp(x, 2);
  double Eu = d1(0, 0), Ev = d1(0, 1);
  double Fu = d1(1, 0), Fv = d1(1, 1);
  double Gu = d1(2, 0), Gv = d1(2, 1);
  double Evv = d2(0, 1, 1), Guu = d2(2, 0, 0), Fuv = d2(1, 0, 1);
  Eigen::Matrix3d A, B;
  A << -0.5 * Evv + Fuv - 0.5 * Guu, 0.5 * Eu, Fu - 0.5 * Ev,
       Fv - 0.5 * Gu, E, F,
       0.5 * Gv, F, G;
  B << 0, 0.5 * Ev, 0.5 * Gu,
       0.5 * Ev, E, F,
       0.5 * Gu, F, G;
  double den = E * G - F * F;
  return (A.determinant() - B.determinant()) / (den * den);
}

// --- geodesic integration ------------------------------------------------

namespace {

struct HamState {
  Eigen::Vector2d x;
  Eigen::Vector2d p;
};

// xdot = G p, pdot_i = 1/2 v' (d_i g) v with v = G p.
inline void ham_rhs(const MetricField& f, const HamState& s, HamState& out) {
  Eigen::Matrix2d g, dgx, dgy;
  f.metric_jet(s.x, g, dgx, dgy);
  double det = g(0, 0) * g(1, 1) - g(0, 1) * g(1, 0);
  Eigen::Matrix2d Ginv;
  Ginv << g(1, 1), -g(0, 1), -g(1, 0), g(0, 0);
  Ginv /= det;
  Eigen::Vector2d v = Ginv * s.p;
  out.x = v;
  out.p[0] = 0.5 * v.dot(dgx * v);
  out.p[1] = 0.5 * v.dot(dgy * v);
}

inline HamState rk4_step(const MetricField& f, const HamState& s, double dt) {
  HamState k1, k2, k3, k4, tmp;
  ham_rhs(f, s, k1);
  tmp.x = s.x + 0.5 * dt * k1.x;
  tmp.p = s.p + 0.5 * dt * k1.p;
  ham_rhs(f, tmp, k2);
  tmp.x = s.x + 0.5 * dt * k2.x;
  tmp.p = s.p + 0.5 * dt * k2.p;
  ham_rhs(f, tmp, k3);
  tmp.x = s.x + dt * k3.x;
  tmp.p = s.p + dt * k3.p;
  ham_rhs(f, tmp, k4);
  HamState out;
  out.x = s.x + dt / 6.0 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x);
  out.p = s.p + dt / 6.0 * (k1.p + 2 * k2.p + 2 * k3.p + k4.p);
  return out;
}

struct FlowResult {
  HamState state;
  bool exited = false;
  double time = 0;
};

// Integrates for parameter time T or until the trajectory leaves the
// disc; the exit point is refined by bisection on the final substep.
// When a curvature source is given the scalar Jacobi equation
// J'' = -K J with J(0)=0, J'(0)=1 rides along and the first sign change
// past the launch is recorded.
FlowResult flow(const MetricField& f, HamState s, double T, double step,
                std::vector<PathPoint>* record = nullptr,
                const MetricField* jacobi_of = nullptr,
                double* jacobi = nullptr, double* jacobi_zero_t = nullptr) {
  int N = std::max(1, int(std::ceil(std::abs(T) / step)));
  double dt = T / N;
  double R = f.radius();
  double J = 0, J1 = 1;
  auto record_point = [&](const HamState& st, double t) {
    if (!record) return;
    Eigen::Matrix2d g = f.metric(st.x);
    record->push_back({st.x, g.inverse() * st.p, t});
  };
  record_point(s, 0);
  double t = 0;
  for (int k = 0; k < N; ++k) {
    HamState next = rk4_step(f, s, dt);
    if (jacobi_of) {
      double Ka = jacobi_of->gauss_curvature(s.x);
      Eigen::Vector2d xm = 0.5 * (s.x + next.x);
      double Km = xm.norm() <= R ? jacobi_of->gauss_curvature(xm) : Ka;
      double Kb = next.x.norm() <= R ? jacobi_of->gauss_curvature(next.x) : Km;
      double dj1 = J1;
      double k1j = -Ka * J;
      double j2 = J + 0.5 * dt * dj1, dj2 = J1 + 0.5 * dt * k1j;
      double k2j = -Km * j2;
      double j3 = J + 0.5 * dt * dj2, dj3 = J1 + 0.5 * dt * k2j;
      double k3j = -Km * j3;
      double j4 = J + dt * dj3, dj4 = J1 + dt * k3j;
      double k4j = -Kb * j4;
      double Jn = J + dt / 6.0 * (dj1 + 2 * dj2 + 2 * dj3 + dj4);
      double J1n = J1 + dt / 6.0 * (k1j + 2 * k2j + 2 * k3j + k4j);
      if (jacobi_zero_t && *jacobi_zero_t < 0 && t > 10 * step && J * Jn < 0)
        *jacobi_zero_t = t + dt * J / (J - Jn);
      J = Jn;
      J1 = J1n;
    }
    double tn = t + dt;
    if (next.x.norm() > R * (1 + 1e-14)) {
      double lo = 0, hi = 1;
      HamState cross = next;
      for (int it = 0; it < 60; ++it) {
        double mid = 0.5 * (lo + hi);
        HamState trial = rk4_step(f, s, dt * mid);
        if (trial.x.norm() > R)
          hi = mid;
        else
          lo = mid;
        if (hi - lo < 1e-14) break;
      }
      double frac = 0.5 * (lo + hi);
      cross = rk4_step(f, s, dt * frac);
      record_point(cross, t + dt * frac);
      if (jacobi) *jacobi = J;
      return {cross, true, t + dt * frac};
    }
    s = next;
    t = tn;
    record_point(s, t);
  }
  if (jacobi) *jacobi = J;
  return {s, false, t};
}

HamState make_state(const MetricField& f, const Eigen::Vector2d& x,
                    const Eigen::Vector2d& v) {
  return {x, f.metric(x) * v};
}

Eigen::Vector2d unit_speed_vector(const MetricField& f, const Eigen::Vector2d& x,
                                  double theta) {
  Eigen::Vector2d e(std::cos(theta), std::sin(theta));
  double n = f.gnorm(x, e);
  return e / n;
}

double auto_tmax(const MetricField& f) {
  return 8.0 * f.radius() * std::sqrt(f.max_eig_bound());
}

}  // namespace

ShootResult geodesic_shoot(const MetricField& field, const Eigen::Vector2d& x,
                           const Eigen::Vector2d& v, double T, double step) {
  if (!field.inside(x)) throw ArgumentError("geodesic_shoot: start outside domain");
  if (v.norm() == 0) throw ArgumentError("geodesic_shoot: zero velocity");
  if (step <= 0) throw ArgumentError("geodesic_shoot: step must be positive");
  ShootResult out;
  FlowResult r = flow(field, make_state(field, x, v), T, step, &out.path);
  out.exited = r.exited;
  out.exit_time = r.time;
  out.exit_point = r.state.x;
  // Arc length by trapezoid over recorded speeds; the speed is conserved
  // up to integrator order so this matches T * |v|_g.
  double len = 0;
  for (size_t i = 1; i < out.path.size(); ++i) {
    double s0 = field.gnorm(out.path[i - 1].x, out.path[i - 1].v);
    double s1 = field.gnorm(out.path[i].x, out.path[i].v);
    len += 0.5 * (s0 + s1) * (out.path[i].t - out.path[i - 1].t);
  }
  out.length = len;
  return out;
}

// --- path graph ------------------------------------------------------------

PathGraph PathGraph::build(const MetricField& field, double spacing) {
  PathGraph g;
  double R = field.radius();
  if (spacing <= 0) spacing = R / 24;
  g.spacing_ = spacing;
  g.origin_ = -R;
  g.nx_ = int(std::floor(2 * R / spacing)) + 1;
  g.index_.assign(g.nx_ * g.nx_, -1);
  for (int i = 0; i < g.nx_; ++i)
    for (int j = 0; j < g.nx_; ++j) {
      Eigen::Vector2d x(g.origin_ + i * spacing, g.origin_ + j * spacing);
      if (x.norm() <= R) {
        g.index_[i * g.nx_ + j] = int(g.points_.size());
        g.points_.push_back(x);
      }
    }
  g.adj_.resize(g.points_.size());
  const int offs[8][2] = {{1, 0}, {0, 1}, {1, 1}, {1, -1},
                          {2, 1}, {1, 2}, {2, -1}, {1, -2}};
  for (int i = 0; i < g.nx_; ++i)
    for (int j = 0; j < g.nx_; ++j) {
      int a = g.index_[i * g.nx_ + j];
      if (a < 0) continue;
      for (auto& o : offs) {
        int i2 = i + o[0], j2 = j + o[1];
        if (i2 < 0 || i2 >= g.nx_ || j2 < 0 || j2 >= g.nx_) continue;
        int b = g.index_[i2 * g.nx_ + j2];
        if (b < 0) continue;
        Eigen::Vector2d mid = 0.5 * (g.points_[a] + g.points_[b]);
        if (mid.norm() > R) mid *= R / mid.norm() * 0.999;
        float w = float(field.gnorm(mid, g.points_[b] - g.points_[a]));
        g.adj_[a].push_back({b, w});
        g.adj_[b].push_back({a, w});
      }
    }
  return g;
}

int PathGraph::node_at(const Eigen::Vector2d& x) const {
  int bi = -1;
  double best = std::numeric_limits<double>::infinity();
  int i0 = int(std::round((x.x() - origin_) / spacing_));
  int j0 = int(std::round((x.y() - origin_) / spacing_));
  for (int di = -2; di <= 2; ++di)
    for (int dj = -2; dj <= 2; ++dj) {
      int i = i0 + di, j = j0 + dj;
      if (i < 0 || i >= nx_ || j < 0 || j >= nx_) continue;
      int id = index_[i * nx_ + j];
      if (id < 0) continue;
      double d = (points_[id] - x).norm();
      if (d < best) { best = d; bi = id; }
    }
  return bi;
}

std::pair<double, double> PathGraph::query(const Eigen::Vector2d& x,
                                           const Eigen::Vector2d& y) const {
  int src = node_at(x), dst = node_at(y);
  if (src < 0 || dst < 0) return {-1, 0};
  std::vector<double> dist(points_.size(), std::numeric_limits<double>::infinity());
  std::vector<int> parent(points_.size(), -1);
  using QItem = std::pair<double, int>;
  std::priority_queue<QItem, std::vector<QItem>, std::greater<>> q;
  dist[src] = 0;
  q.push({0, src});
  while (!q.empty()) {
    auto [d, a] = q.top();
    q.pop();
    if (d > dist[a]) continue;
    if (a == dst) break;
    for (auto [b, w] : adj_[a]) {
      double nd = d + w;
      if (nd < dist[b]) {
        dist[b] = nd;
        parent[b] = a;
        q.push({nd, b});
      }
    }
  }
  if (!std::isfinite(dist[dst])) return {-1, 0};
  std::vector<int> chain;
  for (int c = dst; c != -1; c = parent[c]) chain.push_back(c);
  std::reverse(chain.begin(), chain.end());
  Eigen::Vector2d ahead =
      chain.size() > 2 ? points_[chain[std::min<size_t>(2, chain.size() - 1)]]
                       : y;
  Eigen::Vector2d dir = ahead - x;
  if (dir.norm() < 1e-12) dir = y - x;
  double total = dist[dst] + (points_[src] - x).norm() + (points_[dst] - y).norm();
  return {total, std::atan2(dir.y(), dir.x())};
}

// --- two-point solver ------------------------------------------------------

namespace {

struct EndpointEval {
  Eigen::Vector2d pos;
  Eigen::Vector2d vel;
  bool exited;
};

EndpointEval endpoint(const MetricField& f, const Eigen::Vector2d& x,
                      double theta, double T, double step) {
  HamState s = make_state(f, x, unit_speed_vector(f, x, theta));
  FlowResult r = flow(f, s, T, step);
  Eigen::Matrix2d g = f.metric(r.state.x);
  return {r.state.x, g.inverse() * r.state.p, r.exited};
}

struct FanShot {
  double theta = 0;
  bool exited = false;
  double exit_param = 0;
  double length = 0;
};

FanShot shoot_exit(const MetricField& f, const Eigen::Vector2d& x, double theta,
                   double step, double t_max) {
  HamState s = make_state(f, x, unit_speed_vector(f, x, theta));
  FlowResult r = flow(f, s, t_max, step);
  FanShot shot;
  shot.theta = theta;
  shot.exited = r.exited;
  if (r.exited) {
    shot.exit_param = std::atan2(r.state.x.y(), r.state.x.x());
    shot.length = r.time;  // unit-speed parametrization
  }
  return shot;
}

bool on_boundary(const MetricField& f, const Eigen::Vector2d& x) {
  return std::abs(x.norm() - f.radius()) <= 1e-9 * std::max(1.0, f.radius());
}

// Interior-target Gauss-Newton on (theta, T) with Levenberg damping.
struct GNResult {
  bool converged = false;
  double theta = 0, T = 0, residual = 0;
};

GNResult gauss_newton(const MetricField& f, const Eigen::Vector2d& x,
                      const Eigen::Vector2d& y, double theta, double T,
                      double tol, double step, double t_cap) {
  GNResult best;
  best.residual = std::numeric_limits<double>::infinity();
  double mu = 1e-8;
  EndpointEval e = endpoint(f, x, theta, T, step);
  double r = (e.pos - y).norm();
  for (int it = 0; it < 40; ++it) {
    if (r < best.residual) {
      best = {r <= tol, theta, T, r};
      if (r <= tol) return best;
    }
    const double dth = 1e-7;
    EndpointEval e2 = endpoint(f, x, theta + dth, T, step);
    Eigen::Matrix2d Jm;
    Jm.col(0) = (e2.pos - e.pos) / dth;
    Jm.col(1) = e.vel;
    Eigen::Vector2d rhs = y - e.pos;
    bool improved = false;
    for (int damp = 0; damp < 8; ++damp) {
      Eigen::Matrix2d M = Jm.transpose() * Jm + mu * Eigen::Matrix2d::Identity();
      Eigen::Vector2d d = M.ldlt().solve(Jm.transpose() * rhs);
      double nt = theta + d[0];
      double nT = std::clamp(T + d[1], step, t_cap);
      EndpointEval en = endpoint(f, x, nt, nT, step);
      double rn = (en.pos - y).norm();
      if (rn < r) {
        theta = nt;
        T = nT;
        e = en;
        r = rn;
        mu = std::max(mu * 0.25, 1e-12);
        improved = true;
        break;
      }
      mu *= 8;
    }
    if (!improved) break;
  }
  if (r < best.residual) best = {r <= tol, theta, T, r};
  return best;
}

}  // namespace

std::vector<DistanceResult> boundary_row(const MetricField& field,
                                         const Eigen::Vector2d& x,
                                         const std::vector<double>& target_params,
                                         double tol, const DistanceOptions& opts) {
  const double R = field.radius();
  const double t_max = opts.t_max > 0 ? opts.t_max : auto_tmax(field);
  const double param_tol = std::min(tol / std::max(1.0, R), 1e-7);

  // One fan of exit shots is shared by every target in the row.
  std::vector<double> thetas;
  int fan = std::max(opts.fan, 16);
  if (on_boundary(field, x)) {
    double inward = std::atan2(-x.y(), -x.x());
    double margin = 2e-3;
    for (int k = 0; k < fan; ++k)
      thetas.push_back(inward - (kPi / 2 - margin) +
                       (kPi - 2 * margin) * k / (fan - 1));
  } else {
    for (int k = 0; k < fan; ++k) thetas.push_back(-kPi + 2 * kPi * k / fan);
  }
  std::vector<FanShot> shots(thetas.size());
  for (size_t k = 0; k < thetas.size(); ++k)
    shots[k] = shoot_exit(field, x, thetas[k], opts.step, t_max);

  bool cyclic = !on_boundary(field, x);
  std::vector<DistanceResult> out(target_params.size());
  for (size_t ti = 0; ti < target_params.size(); ++ti) {
    double target = target_params[ti];
    Eigen::Vector2d ypt(R * std::cos(target), R * std::sin(target));
    if ((ypt - x).norm() < 1e-12) {
      out[ti].length = 0;
      out[ti].residual = 0;
      out[ti].candidates.push_back({0, 0, 0});
      continue;
    }
    std::vector<GeodesicCandidate> cands;
    size_t nshots = shots.size();
    size_t pairs = cyclic ? nshots : nshots - 1;
    for (size_t k = 0; k < pairs; ++k) {
      const FanShot& A = shots[k];
      const FanShot& B = shots[(k + 1) % nshots];
      if (!A.exited || !B.exited) continue;
      double da = wrap_pi(A.exit_param - target);
      double db = wrap_pi(B.exit_param - target);
      if (std::abs(da) + std::abs(db) > kPi) continue;  // wrap artifact
      if (da == 0) {
        cands.push_back({A.theta, A.length, 0});
        continue;
      }
      if (da * db > 0) continue;
      double lo = A.theta, hi = B.theta;
      if (cyclic && hi < lo) hi += 2 * kPi;
      double flo = da, fhi = db;
      double th = lo, fth = flo, len = A.length;
      for (int it = 0; it < 48 && std::abs(fth) > param_tol; ++it) {
        double mid = (std::abs(fhi - flo) > 1e-14)
                         ? (lo * fhi - hi * flo) / (fhi - flo)
                         : 0.5 * (lo + hi);
        if (!(mid > std::min(lo, hi) && mid < std::max(lo, hi)))
          mid = 0.5 * (lo + hi);
        FanShot probe = shoot_exit(field, x, mid, opts.step, t_max);
        if (!probe.exited) break;
        double fm = wrap_pi(probe.exit_param - target);
        th = mid;
        fth = fm;
        len = probe.length;
        if (fm * flo <= 0) {
          hi = mid;
          fhi = fm;
        } else {
          lo = mid;
          flo = fm;
        }
      }
      if (std::abs(fth) <= param_tol * 64) {
        cands.push_back({wrap_pi(th), len, std::abs(fth) * R});
      }
    }
    if (cands.empty())
      throw SolverError("boundary shooting found no connecting geodesic", 1e9);
    std::sort(cands.begin(), cands.end(),
              [](const auto& a, const auto& b) { return a.length < b.length; });
    std::vector<GeodesicCandidate> merged;
    for (const auto& c : cands) {
      bool dup = false;
      for (const auto& m : merged)
        if (std::abs(wrap_pi(c.theta - m.theta)) < 5e-3) { dup = true; break; }
      if (!dup) merged.push_back(c);
    }
    out[ti].length = merged.front().length;
    out[ti].residual = merged.front().residual;
    out[ti].candidates = merged;
    if (opts.want_path) {
      ShootResult sr = geodesic_shoot(
          field, x, unit_speed_vector(field, x, merged.front().theta),
          merged.front().length, opts.step);
      out[ti].path = sr.path;
    }
  }
  return out;
}

DistanceResult distance(const MetricField& field, const Eigen::Vector2d& x,
                        const Eigen::Vector2d& y, double tol,
                        const DistanceOptions& opts) {
  if (!field.inside(x) || !field.inside(y))
    throw ArgumentError("distance: endpoint outside the closed domain");
  DistanceResult res;
  if ((x - y).norm() < 1e-15) {
    res.candidates.push_back({0, 0, 0});
    return res;
  }
  if (tol <= 0) throw ArgumentError("distance: tol must be positive");

  if (on_boundary(field, y)) {
    auto rows = boundary_row(field, x, {std::atan2(y.y(), y.x())}, tol, opts);
    return rows[0];
  }
  if (on_boundary(field, x)) {
    return distance(field, y, x, tol, opts);  // reversible metric
  }

  const double t_cap = opts.t_max > 0 ? opts.t_max : auto_tmax(field);
  double lower_bound = std::sqrt(field.min_eig_bound()) * (x - y).norm();

  std::vector<std::pair<double, double>> starts;  // (theta, T)
  double chordT = field.gnorm(0.5 * (x + y), y - x);
  if (opts.use_graph) {
    const PathGraph* graph = opts.graph;
    PathGraph local;
    if (!graph) {
      double sp = opts.graph_spacing > 0 ? opts.graph_spacing : field.radius() / 24;
      local = PathGraph::build(field, sp);
      graph = &local;
    }
    auto [gd, gth] = graph->query(x, y);
    if (gd > 0) starts.push_back({gth, gd});
    for (const auto& s : opts.extra_starts) starts.push_back(s);
    int nfan = std::max(0, opts.starts - int(starts.size()));
    for (int k = 0; k < nfan; ++k)
      starts.push_back({-kPi + 2 * kPi * k / std::max(1, nfan),
                        gd > 0 ? gd : chordT});
  } else {
    for (const auto& s : opts.extra_starts) starts.push_back(s);
    int nfan = std::max(1, opts.starts - int(starts.size()));
    Eigen::Vector2d d = y - x;
    double base = std::atan2(d.y(), d.x());
    starts.push_back({base, chordT});
    for (int k = 1; k < nfan; ++k)
      starts.push_back({base - kPi + 2 * kPi * k / nfan, chordT});
  }

  std::vector<GeodesicCandidate> cands;
  double best_resid = std::numeric_limits<double>::infinity();
  double best_len = std::numeric_limits<double>::infinity();
  double best_theta = 0;
  for (const auto& [th0, T0] : starts) {
    GNResult g = gauss_newton(field, x, y, th0, std::min(T0, t_cap), tol,
                              opts.step, t_cap);
    best_resid = std::min(best_resid, g.residual);
    if (!g.converged) continue;
    bool dup = false;
    for (const auto& c : cands)
      if (std::abs(wrap_pi(c.theta - g.theta)) < 5e-3 &&
          std::abs(c.length - g.T) < 1e-6 * (1 + c.length)) {
        dup = true;
        break;
      }
    if (!dup) cands.push_back({wrap_pi(g.theta), g.T, g.residual});
    if (g.T < best_len) {
      best_len = g.T;
      best_theta = g.theta;
    }
    if (best_len <= lower_bound + tol) break;  // certified global minimum
  }
  if (cands.empty())
    throw SolverError("distance: no shooting start converged", best_resid);
  std::sort(cands.begin(), cands.end(),
            [](const auto& a, const auto& b) { return a.length < b.length; });
  res.length = cands.front().length;
  res.residual = cands.front().residual;
  res.candidates = cands;
  if (opts.want_path) {
    ShootResult sr = geodesic_shoot(
        field, x, unit_speed_vector(field, x, best_theta), best_len, opts.step);
    res.path = sr.path;
  }
  return res;
}

// --- boundary distance table ------------------------------------------------

BoundaryDistanceTable boundary_distance_table(const MetricField& field, int p,
                                              double tol,
                                              const DistanceOptions& opts) {
  if (p < 8) throw ArgumentError("boundary_distance_table: p must be >= 8");
  BoundaryDistanceTable tab;
  tab.p = p;
  tab.params.resize(p);
  for (int i = 0; i < p; ++i) tab.params[i] = 2 * kPi * i / p;
  Eigen::MatrixXd raw(p, p), resid(p, p);
  raw.setZero();
  resid.setZero();
  const double R = field.radius();
  std::vector<std::string> row_errors(p);
  parallel_for(p, [&](int i) {
    Eigen::Vector2d bi(R * std::cos(tab.params[i]), R * std::sin(tab.params[i]));
    std::vector<double> targets;
    targets.reserve(p - 1);
    for (int j = 0; j < p; ++j)
      if (j != i) targets.push_back(tab.params[j]);
    try {
      auto rows = boundary_row(field, bi, targets, tol, opts);
      int k = 0;
      for (int j = 0; j < p; ++j) {
        if (j == i) continue;
        raw(i, j) = rows[k].length;
        resid(i, j) = rows[k].residual;
        ++k;
      }
    } catch (const SolverError&) {
      row_errors[i] = "row " + std::to_string(i);
    }
  });
  for (int i = 0; i < p; ++i)
    if (!row_errors[i].empty())
      throw SolverError(
          "boundary_distance_table: nonconvergence at " + row_errors[i], 1e9);
  tab.values.resize(p, p);
  tab.residuals = resid;
  tab.asymmetry.resize(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) {
      tab.values(i, j) = 0.5 * (raw(i, j) + raw(j, i));
      tab.asymmetry(i, j) = std::abs(raw(i, j) - raw(j, i));
    }
  return tab;
}

void write_table_csv(const BoundaryDistanceTable& table, std::ostream& os) {
  char buf[64];
  for (int i = 0; i < table.p; ++i) {
    snprintf(buf, sizeof buf, "%.17g", table.params[i]);
    os << (i ? "," : "") << buf;
  }
  os << "\n";
  for (int i = 0; i < table.p; ++i) {
    for (int j = 0; j < table.p; ++j) {
      snprintf(buf, sizeof buf, "%.17g", table.values(i, j));
      os << (j ? "," : "") << buf;
    }
    os << "\n";
  }
}

// --- simplicity --------------------------------------------------------------

namespace {

double boundary_convexity_at(const MetricField& f, double phi) {
  double R = f.radius();
  Eigen::Vector2d c(R * std::cos(phi), R * std::sin(phi));
  Eigen::Vector2d c1(-R * std::sin(phi), R * std::cos(phi));
  Eigen::Vector2d c2(-R * std::cos(phi), -R * std::sin(phi));
  Eigen::Matrix2d g, dgx, dgy;
  f.metric_jet(c, g, dgx, dgy);
  Eigen::Matrix2d Ginv = g.inverse();
  double Gamma[2][2][2];
  Eigen::Matrix2d dg[2] = {dgx, dgy};
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        double s = 0;
        for (int l = 0; l < 2; ++l)
          s += Ginv(k, l) * (dg[i](j, l) + dg[j](i, l) - dg[l](i, j));
        Gamma[k][i][j] = 0.5 * s;
      }
  Eigen::Vector2d acc = c2;
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) acc[k] += Gamma[k][i][j] * c1[i] * c1[j];
  // inward g-unit normal
  Eigen::Vector2d gc1 = g * c1;
  Eigen::Vector2d nu(-gc1.y(), gc1.x());
  if (nu.dot(-c) < 0) nu = -nu;
  nu /= std::sqrt(nu.dot(g * nu));
  double speed2 = c1.dot(g * c1);
  return acc.dot(g * nu) / speed2;
}

}  // namespace

SimplicityReport simplicity_check(const MetricField& field, int samples,
                                  std::uint64_t seed,
                                  const DistanceOptions& opts) {
  if (samples < 100)
    throw ArgumentError("simplicity_check: need at least 100 samples");
  SimplicityReport rep;
  rep.seed = seed;
  const double R = field.radius();

  rep.boundary_convexity = std::numeric_limits<double>::infinity();
  for (int i = 0; i < samples; ++i) {
    double phi = 2 * kPi * i / samples;
    rep.boundary_convexity =
        std::min(rep.boundary_convexity, boundary_convexity_at(field, phi));
  }

  const double t_max = opts.t_max > 0 ? opts.t_max : auto_tmax(field);
  int ngeo = samples;
  std::vector<double> zeros(ngeo, -1.0);
  parallel_for(ngeo, [&](int i) {
    Rng rng = Rng::derive(seed, 1000 + i);
    Eigen::Vector2d x;
    double theta;
    if (i % 2 == 0) {
      double phi = rng.uniform(0, 2 * kPi);
      x = {R * std::cos(phi), R * std::sin(phi)};
      double inward = std::atan2(-x.y(), -x.x());
      theta = inward + rng.uniform(-1.2, 1.2);
    } else {
      double r = R * std::sqrt(rng.uniform01()) * 0.98;
      double phi = rng.uniform(0, 2 * kPi);
      x = {r * std::cos(phi), r * std::sin(phi)};
      theta = rng.uniform(0, 2 * kPi);
    }
    HamState s = make_state(field, x, unit_speed_vector(field, x, theta));
    double jz = -1.0, jac = 0;
    flow(field, s, t_max, opts.step, nullptr, &field, &jac, &jz);
    zeros[i] = jz;
  });
  for (int i = 0; i < ngeo; ++i)
    if (zeros[i] > 0) {
      rep.conjugate_point_free = false;
      if (!rep.first_conjugate_length || zeros[i] < *rep.first_conjugate_length)
        rep.first_conjugate_length = zeros[i];
    }

  int npairs = std::max(8, samples / 8);
  std::vector<int> mult(npairs, 1);
  std::vector<int> incon(npairs, 0);
  parallel_for(npairs, [&](int i) {
    Rng rng = Rng::derive(seed, 5000 + i);
    double pa = rng.uniform(0, 2 * kPi);
    double pb = pa + rng.uniform(0.3, 2 * kPi - 0.3);
    Eigen::Vector2d a(R * std::cos(pa), R * std::sin(pa));
    try {
      auto rows = boundary_row(field, a, {std::fmod(pb, 2 * kPi)}, 1e-7, opts);
      const auto& cands = rows[0].candidates;
      mult[i] = int(cands.size());
      if (cands.size() > 1) {
        double gap = cands[1].length - cands[0].length;
        if (gap < 1e-5 * (1 + cands[0].length)) incon[i] = 1;
      }
    } catch (const SolverError&) {
      incon[i] = 1;
    }
  });
  for (int i = 0; i < npairs; ++i) {
    rep.worst_multiplicity = std::max(rep.worst_multiplicity, mult[i]);
    if (incon[i]) rep.inconclusive = true;
    if (mult[i] > 1 && !incon[i]) rep.minimizing = false;
  }
  return rep;
}

// --- serialization -------------------------------------------------------------

nlohmann::json to_json(const MetricField& field) {
  nlohmann::json j;
  j["dim"] = 2;
  j["R"] = field.radius();
  j["h"] = field.spacing();
  j["L"] = field.grid_extent();
  j["grid_n"] = field.grid_n();
  switch (field.kind()) {
    case FieldKind::euclidean: j["kind"] = "euclidean"; break;
    case FieldKind::hyperbolic: j["kind"] = "hyperbolic"; break;
    case FieldKind::custom: j["kind"] = "custom"; break;
  }
  std::vector<std::array<double, 3>> nodes;
  nodes.reserve(field.nodes().size());
  for (const auto& g : field.nodes())
    nodes.push_back({g(0, 0), g(0, 1), g(1, 1)});
  j["nodes"] = nodes;
  return j;
}

MetricField field_from_json(const nlohmann::json& j) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    std::string k = it.key();
    if (k != "dim" && k != "R" && k != "h" && k != "L" && k != "grid_n" &&
        k != "kind" && k != "nodes")
      throw ArgumentError("field json: unknown key '" + k + "'");
  }
  if (j.at("dim").get<int>() != 2)
    throw UnsupportedError("metric fields support dimension 2");
  double R = j.at("R").get<double>();
  double h = j.at("h").get<double>();
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "euclidean") return MetricField::euclidean(R, h);
  if (kind == "hyperbolic") return MetricField::hyperbolic(R, h);
  if (kind != "custom") throw ArgumentError("field json: unknown kind " + kind);
  auto rows = j.at("nodes").get<std::vector<std::array<double, 3>>>();
  std::vector<Eigen::Matrix2d> nodes(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    nodes[i] << rows[i][0], rows[i][1], rows[i][1], rows[i][2];
  }
  return MetricField::custom_from_nodes(R, h, nodes, j.at("grid_n").get<int>(),
                                        j.at("L").get<double>());
}

}  // namespace fillscape::metricfield
