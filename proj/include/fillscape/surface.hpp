#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "fillscape/errors.hpp"
#include "fillscape/metricfield.hpp"
#include "fillscape/normspace.hpp"
#include "fillscape/represent.hpp"

namespace fillscape::surface {

/// Triangulated surface with vertices in the discretized sup-norm space
/// and a fixed/free flag per vertex. The oriented boundary must consist
/// of fixed vertices only.
struct SimplicialSurface {
  int ambient_dim = 0;
  std::vector<Eigen::VectorXd> vertices;
  std::vector<std::array<int, 3>> cells;
  std::vector<std::uint8_t> fixed;
  int surf_dim() const { return 2; }
  void validate() const;
};

/// Memoizes per-cell densities keyed by the quantized edge matrix.
class DensityCache {
 public:
  std::optional<double> lookup(std::uint64_t key) const {
    auto it = map_.find(key);
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }
  void store(std::uint64_t key, double v) {
    if (map_.size() > 4000000) map_.clear();
    map_.emplace(key, v);
  }
  std::size_t size() const { return map_.size(); }

 private:
  std::unordered_map<std::uint64_t, double> map_;
};

struct CellAreaResult {
  double area = 0;
  double density = 0;
  double ref_volume = 0;
  bool degenerate = false;
};

/// Finsler area of one simplex: density of the induced sup-norm ball on
/// the edge span times the reference simplex volume. Degenerate cells
/// yield zero with a flag rather than an error.
CellAreaResult cell_area(const std::vector<Eigen::VectorXd>& cell_vertices,
                         normspace::Density def, DensityCache* cache = nullptr);

struct AreaBreakdown {
  std::vector<double> per_cell;
  double total = 0;
  normspace::Density def = normspace::Density::loewner;
  int sliver_count = 0;
};

AreaBreakdown surface_area(const SimplicialSurface& s, normspace::Density def,
                           DensityCache* cache = nullptr);

/// Smooth surrogate: simplex area of the weighted scalar product
/// <u,v> = factor * sum_k w_k u_k v_k. Dominated by every density on
/// the sup-norm side, with equality on linear images of the plane.
double surface_area_e(const SimplicialSurface& s, const Eigen::VectorXd& weights,
                      int factor);

struct PlanarMesh {
  std::vector<Eigen::Vector2d> points;
  std::vector<std::array<int, 3>> cells;
  std::vector<std::uint8_t> boundary;
};

/// Concentric-ring triangulation of the disc with about `target_cells`
/// triangles; ring J carries the boundary flags.
PlanarMesh disc_mesh(double radius, int target_cells);

/// Planar disc mapped through the linear representation; boundary fixed.
SimplicialSurface flat_disc_surface(double radius, int mesh_cells,
                                    const represent::SampledSphere& sphere);

enum class EmbedKind { bdr, busemann_euclidean, hyperbolic };

struct EmbedSpec {
  EmbedKind kind = EmbedKind::busemann_euclidean;
  const represent::SampledSphere* sphere = nullptr;  // busemann kinds
  int bdr_p = 48;
  double tol = 1e-8;
  metricfield::DistanceOptions dist;
};

struct EmbeddedFilling {
  SimplicialSurface surface;
  double field_volume = 0;  // quadrature of the Riemannian area element
};

EmbeddedFilling embed_filling(const metricfield::MetricField& field,
                              const PlanarMesh& mesh, const EmbedSpec& spec);

struct OptimizerConfig {
  int iterations = 500;       // smooth-phase quasi-Newton iterations
  int polish_levels = 8;      // geometric step schedule, factor 0.5
  double polish_step0 = 0.05;
  int polish_coords = 2;      // sampled ambient coordinates per vertex
  int trace_every = 25;
  Eigen::VectorXd weights;    // empty: uniform
  int e_factor = 2;
};

struct TraceEntry {
  int iteration = 0;
  double area = 0;
  double step = 0;
  int slivers = 0;
};

struct MinimizeResult {
  SimplicialSurface surface;
  std::vector<TraceEntry> trace;
};

/// Two-phase descent over the free vertices: quasi-Newton steps on the
/// scalar-product surrogate, then coordinatewise finite-difference
/// polish on the requested density with halving steps. The trace records
/// the accepted (improving) evaluations of the true area and the
/// returned surface is the best iterate seen.
MinimizeResult minimize_filling(const SimplicialSurface& start,
                                normspace::Density def,
                                const OptimizerConfig& cfg, std::uint64_t seed);

void write_trace_csv(const std::vector<TraceEntry>& trace, std::ostream& os);

nlohmann::json to_json(const SimplicialSurface& s);
SimplicialSurface surface_from_json(const nlohmann::json& j);

}  // namespace fillscape::surface
