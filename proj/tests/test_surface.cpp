#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "fillscape/rng.hpp"
#include "fillscape/surface.hpp"

using namespace fillscape;
using namespace fillscape::surface;
using normspace::Density;
using represent::SampledSphere;
using Eigen::Vector2d;
using Eigen::VectorXd;

namespace {

constexpr double kPi = 3.14159265358979323846;

SimplicialSurface tiny_triangle(const std::vector<VectorXd>& verts) {
  SimplicialSurface s;
  s.ambient_dim = int(verts[0].size());
  s.vertices = verts;
  s.cells = {{0, 1, 2}};
  s.fixed = {1, 1, 1};
  return s;
}

SimplicialSurface jittered(const SimplicialSurface& base, double esize,
                           const VectorXd& w, int factor, std::uint64_t seed) {
  SimplicialSurface s = base;
  Rng rng(seed);
  for (size_t v = 0; v < s.vertices.size(); ++v) {
    if (s.fixed[v]) continue;
    VectorXd d = rng.gaussian(s.ambient_dim);
    double ne = 0;
    for (int k = 0; k < s.ambient_dim; ++k) ne += factor * w[k] * d[k] * d[k];
    s.vertices[v] += d * (esize / std::sqrt(ne));
  }
  return s;
}

}  // namespace

TEST_CASE("cell areas on the linear image match the euclidean simplex") {
  SampledSphere sp = represent::sphere_circle(256);
  auto lift = [&](double a, double b) {
    return represent::busemann_embed_euclidean(Eigen::Vector2d(a, b), sp).values;
  };
  std::vector<VectorXd> tri = {lift(0, 0), lift(1, 0), lift(0, 1)};
  CellAreaResult lo = cell_area(tri, Density::loewner);
  CHECK(lo.area == doctest::Approx(0.5).epsilon(1e-3));
  CHECK(!lo.degenerate);
  CellAreaResult bu = cell_area(tri, Density::busemann);
  CHECK(bu.area == doctest::Approx(0.5).epsilon(1e-3));
  CellAreaResult ht = cell_area(tri, Density::holmes_thompson);
  CHECK(ht.area == doctest::Approx(0.5).epsilon(1e-3));

  // skewed simplex: loewner area equals its euclidean area
  std::vector<VectorXd> skew = {lift(0, 0), lift(2, 0), lift(0.3, 1)};
  CHECK(cell_area(skew, Density::loewner).area ==
        doctest::Approx(1.0).epsilon(1e-3));

  std::vector<VectorXd> degen = {lift(0, 0), lift(1, 1), lift(1, 1)};
  CellAreaResult dg = cell_area(degen, Density::loewner);
  CHECK(dg.degenerate);
  CHECK(dg.area == 0.0);
}

TEST_CASE("flat disc surface construction") {
  SampledSphere sp = represent::sphere_circle(64);
  SimplicialSurface s = flat_disc_surface(1.0, 4, sp);
  CHECK(s.cells.size() == 4);
  CHECK(s.vertices.size() == 5);
  int nfixed = 0;
  for (auto f : s.fixed) nfixed += f;
  CHECK(nfixed == 4);
  // vertices lie on the linear image: retraction is the identity
  for (const auto& v : s.vertices) {
    VectorXd x = represent::project_flat(represent::Embedding(v), sp);
    VectorXd back = represent::busemann_embed_euclidean(x, sp).values;
    CHECK((back - v).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("flat disc area approaches pi under every density") {
  SampledSphere sp = represent::sphere_circle(256);
  SimplicialSurface s = flat_disc_surface(1.0, 600, sp);
  double lo = surface_area(s, Density::loewner).total;
  double bu = surface_area(s, Density::busemann).total;
  double ht = surface_area(s, Density::holmes_thompson).total;
  CHECK(lo == doctest::Approx(kPi).epsilon(0.01));
  CHECK(std::abs(bu - lo) / lo < 0.01);
  CHECK(std::abs(ht - lo) / lo < 0.01);
}

TEST_CASE("flat disc area at the reference resolution") {
  SampledSphere sp = represent::sphere_circle(256);
  SimplicialSurface s = flat_disc_surface(1.0, 2000, sp);
  DensityCache cache;
  AreaBreakdown ab = surface_area(s, Density::loewner, &cache);
  CHECK(ab.total == doctest::Approx(kPi).epsilon(0.01));
  CHECK(ab.sliver_count == 0);
}

TEST_CASE("refinement consistency of the flat disc area") {
  SampledSphere sp = represent::sphere_circle(128);
  double prev = surface_area(flat_disc_surface(1.0, 500, sp), Density::loewner).total;
  double next = surface_area(flat_disc_surface(1.0, 1000, sp), Density::loewner).total;
  double fine = surface_area(flat_disc_surface(1.0, 2000, sp), Density::loewner).total;
  CHECK(std::abs(next - prev) / prev < 0.005);
  CHECK(std::abs(fine - next) / next < 0.005);
  CHECK(std::abs(fine - kPi) <= std::abs(prev - kPi) + 1e-9);
}

TEST_CASE("area scaling and additivity") {
  SampledSphere sp = represent::sphere_circle(64);
  SimplicialSurface s = flat_disc_surface(1.0, 60, sp);
  double base = surface_area(s, Density::loewner).total;
  SimplicialSurface scaled = s;
  for (auto& v : scaled.vertices) v *= 1.7;
  CHECK(surface_area(scaled, Density::loewner).total ==
        doctest::Approx(1.7 * 1.7 * base).epsilon(1e-9));

  // disjoint union: areas add
  SimplicialSurface uni = s;
  int off = int(s.vertices.size());
  for (const auto& v : s.vertices) uni.vertices.push_back(v);
  for (const auto& c : s.cells)
    uni.cells.push_back({c[0] + off, c[1] + off, c[2] + off});
  for (auto f : s.fixed) uni.fixed.push_back(f);
  CHECK(surface_area(uni, Density::loewner).total ==
        doctest::Approx(2 * base).epsilon(1e-12));
}

TEST_CASE("componentwise contractions never increase any density") {
  Rng rng(71);
  for (int trial = 0; trial < 6; ++trial) {
    int m = 6;
    std::vector<VectorXd> verts = {rng.gaussian(m), rng.gaussian(m),
                                   rng.gaussian(m)};
    SimplicialSurface s = tiny_triangle(verts);
    for (Density d : {Density::busemann, Density::holmes_thompson,
                      Density::loewner, Density::benson}) {
      double before = surface_area(s, d).total;
      SimplicialSurface t = s;
      for (int k = 0; k < m; ++k) {
        double tk = rng.uniform(0.2, 1.0);
        for (auto& v : t.vertices) v[k] *= tk;
      }
      double after = surface_area(t, d).total;
      CHECK(after <= before + 1e-9 * (1 + before));
    }
  }
}

TEST_CASE("scalar-product area is a lower bound for the loewner area") {
  SampledSphere sp = represent::sphere_circle(64);
  VectorXd w = sp.weights;
  Rng rng(73);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<VectorXd> verts = {rng.gaussian(64) * 0.6, rng.gaussian(64) * 0.6,
                                   rng.gaussian(64) * 0.6};
    SimplicialSurface s = tiny_triangle(verts);
    double e = surface_area_e(s, w, 2);
    double lo = surface_area(s, Density::loewner).total;
    CHECK(e <= lo + 1e-9 * (1 + lo));
  }
}

TEST_CASE("projecting vertices onto the linear image shrinks the surrogate") {
  SampledSphere sp = represent::sphere_circle(64);
  SimplicialSurface s = flat_disc_surface(1.0, 100, sp);
  SimplicialSurface j = jittered(s, 0.25, sp.weights, 2, 5);
  double before = surface_area_e(j, sp.weights, 2);
  SimplicialSurface p = j;
  for (size_t v = 0; v < p.vertices.size(); ++v) {
    VectorXd x = represent::project_flat(represent::Embedding(p.vertices[v]), sp);
    p.vertices[v] = represent::busemann_embed_euclidean(x, sp).values;
  }
  double after = surface_area_e(p, sp.weights, 2);
  CHECK(after <= before + 1e-10 * (1 + before));
}

TEST_CASE("embedded fillings: flat, hyperbolic and boundary-distance") {
  using metricfield::MetricField;
  SampledSphere sp = represent::sphere_circle(128);

  MetricField flat = MetricField::euclidean(1.0);
  PlanarMesh mesh = disc_mesh(1.0, 300);
  EmbedSpec fe;
  fe.kind = EmbedKind::busemann_euclidean;
  fe.sphere = &sp;
  EmbeddedFilling ef = embed_filling(flat, mesh, fe);
  CHECK(ef.field_volume == doctest::Approx(kPi).epsilon(0.01));
  SimplicialSurface direct = flat_disc_surface(1.0, 300, sp);
  REQUIRE(direct.vertices.size() == ef.surface.vertices.size());
  for (size_t v = 0; v < direct.vertices.size(); ++v)
    CHECK((direct.vertices[v] - ef.surface.vertices[v]).cwiseAbs().maxCoeff() <
          1e-12);

  MetricField hyp = MetricField::hyperbolic(0.5, 0.01);
  double hyp_area = 2 * kPi * (std::cosh(std::log(3.0)) - 1);  // 4 pi / 3
  EmbedSpec he;
  he.kind = EmbedKind::hyperbolic;
  he.sphere = &sp;
  EmbeddedFilling coarse = embed_filling(hyp, disc_mesh(0.5, 400), he);
  EmbeddedFilling fine = embed_filling(hyp, disc_mesh(0.5, 1600), he);
  CHECK(coarse.field_volume == doctest::Approx(hyp_area).epsilon(0.01));
  CHECK(fine.field_volume == doctest::Approx(hyp_area).epsilon(0.005));
  // the piecewise-linear image carries surplus area that shrinks with
  // the mesh; the floor is the smooth volume
  double lo_coarse = surface_area(coarse.surface, Density::loewner).total;
  double lo_fine = surface_area(fine.surface, Density::loewner).total;
  CHECK(lo_coarse >= hyp_area * (1 - 0.01));
  CHECK(lo_fine >= hyp_area * (1 - 0.01));
  CHECK(std::abs(lo_fine - hyp_area) < std::abs(lo_coarse - hyp_area));
  CHECK(lo_fine == doctest::Approx(hyp_area).epsilon(0.02));

  EmbedSpec be;
  be.kind = EmbedKind::bdr;
  be.bdr_p = 48;
  PlanarMesh bmesh = disc_mesh(1.0, 500);
  EmbeddedFilling bf = embed_filling(flat, bmesh, be);
  CHECK(bf.surface.ambient_dim == 48);
  double blo = surface_area(bf.surface, Density::loewner).total;
  CHECK(blo >= kPi * (1 - 0.01));
  CHECK(blo == doctest::Approx(kPi).epsilon(0.04));
}

TEST_CASE("minimizer leaves a fully fixed surface alone") {
  SampledSphere sp = represent::sphere_circle(32);
  Rng rng(77);
  SimplicialSurface s = tiny_triangle(
      {rng.gaussian(32), rng.gaussian(32), rng.gaussian(32)});
  OptimizerConfig cfg;
  cfg.iterations = 50;
  cfg.weights = sp.weights;
  MinimizeResult r = minimize_filling(s, Density::loewner, cfg, 1);
  CHECK(r.trace.size() == 1);
  for (size_t v = 0; v < s.vertices.size(); ++v)
    CHECK((r.surface.vertices[v] - s.vertices[v]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("the flat disc is stationary for the minimizer") {
  SampledSphere sp = represent::sphere_circle(64);
  SimplicialSurface s = flat_disc_surface(1.0, 150, sp);
  double a0 = surface_area(s, Density::loewner).total;

  // independent probe: no seeded direction decreases the area
  Rng rng(79);
  DensityCache cache;
  for (int probe = 0; probe < 100; ++probe) {
    SimplicialSurface t = s;
    int v;
    do { v = rng.uniform_int(0, int(s.vertices.size()) - 1); } while (s.fixed[v]);
    VectorXd d = rng.gaussian(64);
    double ne = 0;
    for (int k = 0; k < 64; ++k) ne += 2 * sp.weights[k] * d[k] * d[k];
    t.vertices[v] += d * (1e-3 / std::sqrt(ne));
    double at = surface_area(t, Density::loewner, &cache).total;
    CHECK(at >= a0 - 1e-8);
  }

  OptimizerConfig cfg;
  cfg.iterations = 60;
  cfg.polish_levels = 4;
  cfg.weights = sp.weights;
  MinimizeResult r = minimize_filling(s, Density::loewner, cfg, 3);
  double a1 = surface_area(r.surface, Density::loewner).total;
  CHECK(std::abs(a1 - a0) <= 1e-6);
}

TEST_CASE("jittered flat disc recovers toward the plane") {
  SampledSphere sp = represent::sphere_circle(64);
  SimplicialSurface flat = flat_disc_surface(1.0, 200, sp);
  double a_flat = surface_area(flat, Density::loewner).total;
  SimplicialSurface start = jittered(flat, 0.1, sp.weights, 2, 11);
  double a_start = surface_area(start, Density::loewner).total;
  CHECK(a_start > a_flat);

  OptimizerConfig cfg;
  cfg.iterations = 250;
  cfg.polish_levels = 5;
  cfg.weights = sp.weights;
  MinimizeResult r = minimize_filling(start, Density::loewner, cfg, 13);
  double a_end = surface_area(r.surface, Density::loewner).total;
  CHECK(a_end <= a_start + 1e-12);
  CHECK(a_end >= a_flat * (1 - 0.01));
  // trace is non-increasing
  for (size_t i = 1; i < r.trace.size(); ++i)
    CHECK(r.trace[i].area <= r.trace[i - 1].area);
  // boundary stays pinned
  for (size_t v = 0; v < flat.vertices.size(); ++v)
    if (flat.fixed[v])
      CHECK((r.surface.vertices[v] - flat.vertices[v]).cwiseAbs().maxCoeff() ==
            0.0);
}

TEST_CASE("surface json round trip and validation errors") {
  SampledSphere sp = represent::sphere_circle(32);
  SimplicialSurface s = flat_disc_surface(1.0, 24, sp);
  SimplicialSurface back = surface_from_json(to_json(s));
  CHECK(back.cells.size() == s.cells.size());
  for (size_t v = 0; v < s.vertices.size(); ++v)
    CHECK((back.vertices[v] - s.vertices[v]).cwiseAbs().maxCoeff() < 1e-15);

  SimplicialSurface bad = s;
  bad.cells.push_back({0, 1, 999});
  CHECK_THROWS_AS(bad.validate(), ArgumentError);

  SimplicialSurface freeb = s;
  for (size_t v = 0; v < freeb.fixed.size(); ++v) freeb.fixed[v] = 0;
  CHECK_THROWS_AS(freeb.validate(), ArgumentError);

  std::ostringstream os;
  write_trace_csv({{0, 3.14, 0.1, 0}}, os);
  CHECK(os.str().find("iteration,area,step,slivers") == 0);
}
