#include "fillscape/surface.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>

#include "fillscape/rng.hpp"

namespace fillscape::surface {

using normspace::Density;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::uint64_t fnv_mix(std::uint64_t h, std::uint64_t v) {
  h ^= v;
  h *= 0x100000001b3ULL;
  return h;
}

std::uint64_t edge_key(const Eigen::MatrixXd& V, Density def) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = fnv_mix(h, std::uint64_t(def));
  h = fnv_mix(h, std::uint64_t(V.rows()) << 8 | std::uint64_t(V.cols()));
  for (int i = 0; i < V.rows(); ++i)
    for (int j = 0; j < V.cols(); ++j) {
      double q = std::nearbyint(V(i, j) * 1e12);
      std::int64_t iq = std::llround(q);
      h = fnv_mix(h, std::uint64_t(iq));
    }
  return h;
}

CellAreaResult cell_area_edges(const Eigen::MatrixXd& V, Density def,
                               DensityCache* cache,
                               Eigen::VectorXd* warm = nullptr) {
  const int n = int(V.cols());
  CellAreaResult out;
  out.ref_volume = 1.0;
  for (int k = 2; k <= n; ++k) out.ref_volume /= k;
  // rank via the edge Gram matrix
  Eigen::MatrixXd G = V.transpose() * V;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G);
  double lo = eig.eigenvalues()(0), hi = eig.eigenvalues()(n - 1);
  if (!(hi > 0) || lo <= 1e-24 * hi) {
    out.degenerate = true;
    return out;
  }
  std::uint64_t key = 0;
  if (cache) {
    key = edge_key(V, def);
    if (auto hit = cache->lookup(key)) {
      out.density = *hit;
      out.area = out.density * out.ref_volume;
      return out;
    }
  }
  normspace::Norm nm = normspace::induced_norm(int(V.rows()), V);
  if (def == Density::loewner) {
    // hot path of the optimizer: redundant facets dropped, multipliers
    // warm-started from the previous solve of the same cell
    normspace::Norm red = normspace::essential_facets(nm);
    normspace::Ellipsoid e =
        normspace::john_ellipsoid_warm(red, 2e-7, 10000, warm);
    out.density = normspace::omega_ball(n) / e.volume;
  } else {
    out.density = normspace::volume_density(nm, def);
  }
  out.area = out.density * out.ref_volume;
  if (cache) cache->store(key, out.density);
  return out;
}

Eigen::MatrixXd edges_of(const std::vector<Eigen::VectorXd>& verts) {
  const int n = int(verts.size()) - 1;
  Eigen::MatrixXd V(verts[0].size(), n);
  for (int i = 0; i < n; ++i) V.col(i) = verts[i + 1] - verts[0];
  return V;
}

}  // namespace

void SimplicialSurface::validate() const {
  const int nv = int(vertices.size());
  if (int(fixed.size()) != nv)
    throw ArgumentError("surface: fixed mask size mismatch");
  for (const auto& v : vertices)
    if (int(v.size()) != ambient_dim)
      throw ArgumentError("surface: vertex dimension mismatch");
  std::map<std::pair<int, int>, int> edge_use;
  for (const auto& c : cells) {
    for (int i = 0; i < 3; ++i) {
      if (c[i] < 0 || c[i] >= nv)
        throw ArgumentError("surface: cell references a missing vertex");
      int a = c[i], b = c[(i + 1) % 3];
      edge_use[{std::min(a, b), std::max(a, b)}] += 1;
    }
    if (c[0] == c[1] || c[1] == c[2] || c[0] == c[2])
      throw ArgumentError("surface: cell repeats a vertex");
  }
  std::vector<std::uint8_t> on_boundary(nv, 0);
  for (const auto& [e, uses] : edge_use) {
    if (uses > 2) throw ArgumentError("surface: edge shared by > 2 cells");
    if (uses == 1) {
      if (!fixed[e.first] || !fixed[e.second])
        throw ArgumentError("surface: boundary edge with a free vertex");
      on_boundary[e.first] = on_boundary[e.second] = 1;
    }
  }
  for (int v = 0; v < nv; ++v)
    if (fixed[v] && !on_boundary[v])
      throw ArgumentError("surface: fixed vertex off the boundary");
}

CellAreaResult cell_area(const std::vector<Eigen::VectorXd>& cell_vertices,
                         Density def, DensityCache* cache) {
  if (cell_vertices.size() < 3)
    throw ArgumentError("cell_area: need n+1 vertices");
  return cell_area_edges(edges_of(cell_vertices), def, cache);
}

AreaBreakdown surface_area(const SimplicialSurface& s, Density def,
                           DensityCache* cache) {
  AreaBreakdown out;
  out.def = def;
  out.per_cell.resize(s.cells.size());
  for (size_t c = 0; c < s.cells.size(); ++c) {
    Eigen::MatrixXd V(s.ambient_dim, 2);
    V.col(0) = s.vertices[s.cells[c][1]] - s.vertices[s.cells[c][0]];
    V.col(1) = s.vertices[s.cells[c][2]] - s.vertices[s.cells[c][0]];
    CellAreaResult r = cell_area_edges(V, def, cache);
    out.per_cell[c] = r.area;
    out.total += r.area;
    if (r.degenerate) ++out.sliver_count;
  }
  return out;
}

double surface_area_e(const SimplicialSurface& s, const Eigen::VectorXd& weights,
                      int factor) {
  Eigen::VectorXd w = weights;
  if (w.size() == 0)
    w = Eigen::VectorXd::Constant(s.ambient_dim, 1.0 / s.ambient_dim);
  if (w.size() != s.ambient_dim)
    throw ArgumentError("surface_area_e: weight size mismatch");
  double total = 0;
  for (const auto& c : s.cells) {
    Eigen::VectorXd e1 = s.vertices[c[1]] - s.vertices[c[0]];
    Eigen::VectorXd e2 = s.vertices[c[2]] - s.vertices[c[0]];
    double a11 = 0, a12 = 0, a22 = 0;
    for (int k = 0; k < s.ambient_dim; ++k) {
      a11 += w[k] * e1[k] * e1[k];
      a12 += w[k] * e1[k] * e2[k];
      a22 += w[k] * e2[k] * e2[k];
    }
    double det = factor * factor * (a11 * a22 - a12 * a12);
    if (det > 0) total += 0.5 * std::sqrt(det);
  }
  return total;
}

PlanarMesh disc_mesh(double radius, int target_cells) {
  if (target_cells < 4) throw ArgumentError("disc_mesh: need at least 4 cells");
  int J = std::max(1, int(std::lround(std::sqrt(target_cells / 6.0))));
  int s = std::max(3, int(std::lround(double(target_cells) / (J * J))));
  PlanarMesh mesh;
  mesh.points.push_back({0, 0});
  std::vector<std::vector<int>> ring_ids(J + 1);
  ring_ids[0] = {0};
  for (int j = 1; j <= J; ++j) {
    int nj = s * j;
    double r = radius * j / J;
    for (int k = 0; k < nj; ++k) {
      double a = 2 * kPi * k / nj;
      ring_ids[j].push_back(int(mesh.points.size()));
      mesh.points.push_back({r * std::cos(a), r * std::sin(a)});
    }
  }
  auto angle_of = [&](int id) {
    return std::atan2(mesh.points[id].y(), mesh.points[id].x());
  };
  auto push_cell = [&](int a, int b, int c) {
    Eigen::Vector2d u = mesh.points[b] - mesh.points[a];
    Eigen::Vector2d v = mesh.points[c] - mesh.points[a];
    if (u.x() * v.y() - u.y() * v.x() < 0) std::swap(b, c);
    mesh.cells.push_back({a, b, c});
  };
  // center fan
  for (int k = 0; k < int(ring_ids[1].size()); ++k)
    push_cell(0, ring_ids[1][k], ring_ids[1][(k + 1) % ring_ids[1].size()]);
  // annulus stitching by angular march
  for (int j = 2; j <= J; ++j) {
    const auto& in = ring_ids[j - 1];
    const auto& outr = ring_ids[j];
    int ni = int(in.size()), no = int(outr.size());
    int i = 0, k = 0;
    while (i < ni || k < no) {
      double next_in = double(i + 1) / ni;
      double next_out = double(k + 1) / no;
      if (i < ni && (next_in <= next_out || k >= no)) {
        push_cell(in[i % ni], outr[k % no], in[(i + 1) % ni]);
        ++i;
      } else {
        push_cell(in[i % ni], outr[k % no], outr[(k + 1) % no]);
        ++k;
      }
    }
  }
  (void)angle_of;
  mesh.boundary.assign(mesh.points.size(), 0);
  for (int id : ring_ids[J]) mesh.boundary[id] = 1;
  return mesh;
}

SimplicialSurface flat_disc_surface(double radius, int mesh_cells,
                                    const represent::SampledSphere& sphere) {
  if (mesh_cells < 4) throw ArgumentError("flat_disc_surface: need >= 4 cells");
  PlanarMesh mesh = disc_mesh(radius, mesh_cells);
  SimplicialSurface s;
  s.ambient_dim = sphere.count();
  s.cells = mesh.cells;
  s.fixed = mesh.boundary;
  s.vertices.reserve(mesh.points.size());
  for (const auto& p : mesh.points)
    s.vertices.push_back(
        represent::busemann_embed_euclidean(Eigen::Vector2d(p), sphere).values);
  s.validate();
  return s;
}

EmbeddedFilling embed_filling(const metricfield::MetricField& field,
                              const PlanarMesh& mesh, const EmbedSpec& spec) {
  EmbeddedFilling out;
  // Riemannian volume by the edge-midpoint rule on the planar mesh.
  for (const auto& c : mesh.cells) {
    const Eigen::Vector2d& a = mesh.points[c[0]];
    const Eigen::Vector2d& b = mesh.points[c[1]];
    const Eigen::Vector2d& d = mesh.points[c[2]];
    double tri = 0.5 * std::abs((b - a).x() * (d - a).y() -
                                (b - a).y() * (d - a).x());
    double f = (field.sqrt_det(0.5 * (a + b)) + field.sqrt_det(0.5 * (b + d)) +
                field.sqrt_det(0.5 * (a + d))) /
               3.0;
    out.field_volume += tri * f;
  }
  SimplicialSurface& s = out.surface;
  s.cells = mesh.cells;
  s.fixed = mesh.boundary;
  switch (spec.kind) {
    case EmbedKind::busemann_euclidean: {
      if (!spec.sphere) throw ArgumentError("embed_filling: sphere required");
      s.ambient_dim = spec.sphere->count();
      for (const auto& p : mesh.points)
        s.vertices.push_back(
            represent::busemann_embed_euclidean(Eigen::Vector2d(p), *spec.sphere)
                .values);
      break;
    }
    case EmbedKind::hyperbolic: {
      if (!spec.sphere) throw ArgumentError("embed_filling: sphere required");
      s.ambient_dim = spec.sphere->count();
      for (const auto& p : mesh.points)
        s.vertices.push_back(
            represent::busemann_embed_hyperbolic(p, *spec.sphere).values);
      break;
    }
    case EmbedKind::bdr: {
      auto params = represent::boundary_params(spec.bdr_p);
      auto embs = represent::bdr_embed_batch(field, mesh.points, params,
                                             spec.tol, spec.dist);
      s.ambient_dim = spec.bdr_p;
      for (auto& e : embs) s.vertices.push_back(std::move(e.values));
      break;
    }
  }
  s.validate();
  return out;
}

// --- optimizer -----------------------------------------------------------

namespace {

struct Flattener {
  std::vector<int> free_ids;
  int m = 0;
  Eigen::VectorXd pack(const SimplicialSurface& s) const {
    Eigen::VectorXd z(free_ids.size() * m);
    for (size_t i = 0; i < free_ids.size(); ++i)
      z.segment(i * m, m) = s.vertices[free_ids[i]];
    return z;
  }
  void unpack(const Eigen::VectorXd& z, SimplicialSurface& s) const {
    for (size_t i = 0; i < free_ids.size(); ++i)
      s.vertices[free_ids[i]] = z.segment(i * m, m);
  }
};

// Weighted-Gram simplex area and gradient over the free coordinates.
double surrogate_with_grad(const SimplicialSurface& s,
                           const Eigen::VectorXd& w, int factor,
                           const std::vector<int>& vert_slot,
                           Eigen::VectorXd& grad) {
  grad.setZero();
  const int m = s.ambient_dim;
  double total = 0;
  Eigen::VectorXd we1(m), we2(m);
  for (const auto& c : s.cells) {
    const Eigen::VectorXd& v0 = s.vertices[c[0]];
    const Eigen::VectorXd& v1 = s.vertices[c[1]];
    const Eigen::VectorXd& v2 = s.vertices[c[2]];
    double a11 = 0, a12 = 0, a22 = 0;
    for (int k = 0; k < m; ++k) {
      double e1 = v1[k] - v0[k], e2 = v2[k] - v0[k];
      double wk = factor * w[k];
      we1[k] = wk * e1;
      we2[k] = wk * e2;
      a11 += wk * e1 * e1;
      a12 += wk * e1 * e2;
      a22 += wk * e2 * e2;
    }
    double det = a11 * a22 - a12 * a12;
    if (det <= 1e-300) continue;
    double area = 0.5 * std::sqrt(det);
    total += area;
    // d(area)/dE = area * (M E A^{-1}) with A the edge Gram matrix
    double inv11 = a22 / det, inv12 = -a12 / det, inv22 = a11 / det;
    int s0 = vert_slot[c[0]], s1 = vert_slot[c[1]], s2 = vert_slot[c[2]];
    for (int k = 0; k < m; ++k) {
      double g1 = area * (we1[k] * inv11 + we2[k] * inv12);
      double g2 = area * (we1[k] * inv12 + we2[k] * inv22);
      if (s1 >= 0) grad[s1 * m + k] += g1;
      if (s2 >= 0) grad[s2 * m + k] += g2;
      if (s0 >= 0) grad[s0 * m + k] -= g1 + g2;
    }
  }
  return total;
}

}  // namespace

MinimizeResult minimize_filling(const SimplicialSurface& start, Density def,
                                const OptimizerConfig& cfg, std::uint64_t seed) {
  if (cfg.iterations < 1)
    throw ArgumentError("minimize_filling: iterations must be >= 1");
  start.validate();
  DensityCache cache;
  MinimizeResult res;
  res.surface = start;

  Eigen::VectorXd w = cfg.weights;
  if (w.size() == 0)
    w = Eigen::VectorXd::Constant(start.ambient_dim, 1.0 / start.ambient_dim);

  AreaBreakdown ab = surface_area(res.surface, def, &cache);
  double best_area = ab.total;
  SimplicialSurface best = res.surface;
  res.trace.push_back({0, ab.total, 0.0, ab.sliver_count});

  Flattener fl;
  fl.m = start.ambient_dim;
  std::vector<int> vert_slot(start.vertices.size(), -1);
  for (size_t v = 0; v < start.vertices.size(); ++v)
    if (!start.fixed[v]) {
      vert_slot[v] = int(fl.free_ids.size());
      fl.free_ids.push_back(int(v));
    }
  if (fl.free_ids.empty()) return res;

  auto consider = [&](const SimplicialSurface& s, int iter, double step) {
    AreaBreakdown a = surface_area(s, def, &cache);
    if (a.total < best_area - 1e-12 * (1 + best_area)) {
      best_area = a.total;
      best = s;
      res.trace.push_back({iter, a.total, step, a.sliver_count});
    }
    return a.total;
  };

  // Phase A: limited-memory quasi-Newton on the smooth surrogate.
  {
    SimplicialSurface cur = res.surface;
    Eigen::VectorXd z = fl.pack(cur);
    const int dim = int(z.size());
    Eigen::VectorXd g(dim), gprev(dim);
    fl.unpack(z, cur);
    double f = surrogate_with_grad(cur, w, cfg.e_factor, vert_slot, g);
    const int hist = 8;
    std::vector<Eigen::VectorXd> S, Y;
    for (int it = 1; it <= cfg.iterations; ++it) {
      if (g.norm() <= 1e-12 * (1 + std::abs(f))) break;
      // two-loop recursion
      Eigen::VectorXd q = g;
      std::vector<double> alpha(S.size());
      for (int i = int(S.size()) - 1; i >= 0; --i) {
        double rho = 1.0 / Y[i].dot(S[i]);
        alpha[i] = rho * S[i].dot(q);
        q -= alpha[i] * Y[i];
      }
      if (!S.empty()) {
        double gamma = S.back().dot(Y.back()) / Y.back().dot(Y.back());
        q *= gamma;
      } else {
        q *= 1.0 / std::max(1.0, g.norm());
      }
      for (size_t i = 0; i < S.size(); ++i) {
        double rho = 1.0 / Y[i].dot(S[i]);
        double beta = rho * Y[i].dot(q);
        q += (alpha[i] - beta) * S[i];
      }
      Eigen::VectorXd d = -q;
      if (d.dot(g) >= 0) d = -g / std::max(1.0, g.norm());
      double t = 1.0;
      double slope = g.dot(d);
      bool ok = false;
      Eigen::VectorXd zn;
      double fn = f;
      for (int bt = 0; bt < 40; ++bt) {
        zn = z + t * d;
        fl.unpack(zn, cur);
        Eigen::VectorXd gtmp;  // unused here
        fn = surface_area_e(cur, w, cfg.e_factor);
        if (fn <= f + 1e-4 * t * slope) {
          ok = true;
          break;
        }
        t *= 0.5;
      }
      if (!ok) break;
      fl.unpack(zn, cur);
      gprev = g;
      f = surrogate_with_grad(cur, w, cfg.e_factor, vert_slot, g);
      Eigen::VectorXd sv = zn - z;
      Eigen::VectorXd yv = g - gprev;
      if (sv.dot(yv) > 1e-14 * sv.norm() * yv.norm()) {
        S.push_back(sv);
        Y.push_back(yv);
        if (int(S.size()) > hist) {
          S.erase(S.begin());
          Y.erase(Y.begin());
        }
      }
      z = zn;
      if (it % cfg.trace_every == 0) consider(cur, it, t);
    }
    fl.unpack(z, cur);
    consider(cur, cfg.iterations, 0.0);
  }

  // Phase B: coordinatewise descent on the true density with halving
  // steps, local re-evaluation over the touched cells only.
  {
    SimplicialSurface cur = best;
    AreaBreakdown a = surface_area(cur, def, &cache);
    std::vector<double> cell_areas = a.per_cell;
    double total = a.total;
    std::vector<std::vector<int>> vert_cells(cur.vertices.size());
    for (size_t c = 0; c < cur.cells.size(); ++c)
      for (int i = 0; i < 3; ++i) vert_cells[cur.cells[c][i]].push_back(int(c));
    std::vector<Eigen::VectorXd> warm(cur.cells.size());
    auto local_delta = [&](int cellid) {
      const auto& c = cur.cells[cellid];
      Eigen::MatrixXd V(cur.ambient_dim, 2);
      V.col(0) = cur.vertices[c[1]] - cur.vertices[c[0]];
      V.col(1) = cur.vertices[c[2]] - cur.vertices[c[0]];
      return cell_area_edges(V, def, &cache, &warm[cellid]).area;
    };
    const int m = cur.ambient_dim;
    int iter_base = cfg.iterations;
    for (int level = 0; level < cfg.polish_levels; ++level) {
      double step = cfg.polish_step0 * std::pow(0.5, level);
      for (size_t fi = 0; fi < fl.free_ids.size(); ++fi) {
        int v = fl.free_ids[fi];
        Rng rng = Rng::derive(seed, (std::uint64_t(level) << 32) ^ fi);
        for (int probe = 0; probe < cfg.polish_coords; ++probe) {
          int coord = rng.uniform_int(0, m - 1);
          for (double sgn : {1.0, -1.0}) {
            double old_val = cur.vertices[v][coord];
            double before = 0;
            for (int cid : vert_cells[v]) before += cell_areas[cid];
            cur.vertices[v][coord] = old_val + sgn * step;
            double after = 0;
            for (int cid : vert_cells[v]) after += local_delta(cid);
            if (after < before - 1e-12 * (1 + total)) {
              for (int cid : vert_cells[v]) cell_areas[cid] = local_delta(cid);
              total += after - before;
              break;  // keep the move, skip the mirror probe
            }
            cur.vertices[v][coord] = old_val;
          }
        }
      }
      if (total < best_area - 1e-12 * (1 + best_area)) {
        AreaBreakdown fresh = surface_area(cur, def, &cache);
        total = fresh.total;
        if (fresh.total < best_area - 1e-12 * (1 + best_area)) {
          best_area = fresh.total;
          best = cur;
          res.trace.push_back(
              {iter_base + level + 1, fresh.total, step, fresh.sliver_count});
        }
      }
    }
  }

  res.surface = best;
  return res;
}

void write_trace_csv(const std::vector<TraceEntry>& trace, std::ostream& os) {
  os << "iteration,area,step,slivers\n";
  char buf[96];
  for (const auto& t : trace) {
    snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%d\n", t.iteration, t.area, t.step,
             t.slivers);
    os << buf;
  }
}

nlohmann::json to_json(const SimplicialSurface& s) {
  nlohmann::json j;
  j["m"] = s.ambient_dim;
  std::vector<std::vector<double>> verts;
  for (const auto& v : s.vertices)
    verts.emplace_back(v.data(), v.data() + v.size());
  j["vertices"] = verts;
  std::vector<std::array<int, 3>> cells(s.cells.begin(), s.cells.end());
  j["cells"] = cells;
  std::vector<bool> fixed(s.fixed.begin(), s.fixed.end());
  j["fixed"] = fixed;
  return j;
}

SimplicialSurface surface_from_json(const nlohmann::json& j) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    std::string k = it.key();
    if (k != "m" && k != "vertices" && k != "cells" && k != "fixed")
      throw ArgumentError("surface json: unknown key '" + k + "'");
  }
  SimplicialSurface s;
  s.ambient_dim = j.at("m").get<int>();
  for (const auto& row : j.at("vertices")) {
    auto vals = row.get<std::vector<double>>();
    s.vertices.push_back(
        Eigen::Map<Eigen::VectorXd>(vals.data(), vals.size()));
  }
  for (const auto& c : j.at("cells")) {
    auto v = c.get<std::vector<int>>();
    if (v.size() != 3) throw ArgumentError("surface json: non-triangle cell");
    s.cells.push_back({v[0], v[1], v[2]});
  }
  for (const auto& f : j.at("fixed"))
    s.fixed.push_back(f.get<bool>() ? 1 : 0);
  s.validate();
  return s;
}

}  // namespace fillscape::surface
