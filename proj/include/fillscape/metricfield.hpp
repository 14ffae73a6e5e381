#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include "json.hpp"

#include "fillscape/errors.hpp"

namespace fillscape::metricfield {

enum class FieldKind { euclidean, hyperbolic, custom };

using TensorFn = std::function<Eigen::Matrix2d(const Eigen::Vector2d&)>;

/// Smooth positive-definite metric tensor on a disc of radius R around
/// the origin. Closed-form kinds evaluate analytically; custom fields
/// evaluate either through a supplied tensor callable or by bicubic
/// interpolation of node samples. Node samples are always kept for
/// serialization and for the SPD invariants.
class MetricField {
 public:
  static MetricField euclidean(double R, double h = 0.02);
  /// Poincare disc chart; requires R + collar < 1.
  static MetricField hyperbolic(double R, double h = 0.01,
                                double collar = 0.05);
  static MetricField custom(double R, double h, TensorFn tensor,
                            double collar = 0.05);
  static MetricField custom_from_nodes(double R, double h,
                                       const std::vector<Eigen::Matrix2d>& nodes,
                                       int grid_n, double L);

  int dim() const { return 2; }
  double radius() const { return R_; }
  double spacing() const { return h_; }
  double collar() const { return collar_; }
  FieldKind kind() const { return kind_; }

  bool inside(const Eigen::Vector2d& x) const {
    return x.norm() <= R_ * (1.0 + 1e-12) + 1e-15;
  }

  Eigen::Matrix2d metric(const Eigen::Vector2d& x) const;
  /// Tensor with its first derivatives (d/dx, d/dy).
  void metric_jet(const Eigen::Vector2d& x, Eigen::Matrix2d& g,
                  Eigen::Matrix2d& dgx, Eigen::Matrix2d& dgy) const;
  double gauss_curvature(const Eigen::Vector2d& x) const;
  double sqrt_det(const Eigen::Vector2d& x) const;
  double gnorm(const Eigen::Vector2d& x, const Eigen::Vector2d& v) const;

  /// Eigenvalue bounds of the tensor sampled densely over the domain.
  double min_eig_bound() const { return min_eig_; }
  double max_eig_bound() const { return max_eig_; }

  int grid_n() const { return grid_n_; }
  double grid_extent() const { return L_; }
  const std::vector<Eigen::Matrix2d>& nodes() const { return nodes_; }

 private:
  MetricField() = default;
  void sample_nodes();
  void validate_and_bound();
  Eigen::Matrix2d interpolate(const Eigen::Vector2d& x, Eigen::Matrix2d* dx,
                              Eigen::Matrix2d* dy) const;

  double R_ = 1.0, h_ = 0.02, collar_ = 0.05, L_ = 1.05;
  int grid_n_ = 0;  // nodes per axis minus one
  FieldKind kind_ = FieldKind::euclidean;
  TensorFn analytic_;
  std::vector<Eigen::Matrix2d> nodes_;  // row-major, (grid_n+1)^2
  double min_eig_ = 1.0, max_eig_ = 1.0;
};

struct PathPoint {
  Eigen::Vector2d x;
  Eigen::Vector2d v;
  double t = 0;
};

struct ShootResult {
  std::vector<PathPoint> path;
  bool exited = false;
  double exit_time = 0;
  Eigen::Vector2d exit_point = Eigen::Vector2d::Zero();
  double length = 0;
};

/// Integrates the geodesic through (x, v) for parameter time T with a
/// classical 4th-order step; stops with the exit flag on leaving the disc.
ShootResult geodesic_shoot(const MetricField& field, const Eigen::Vector2d& x,
                           const Eigen::Vector2d& v, double T, double step);

/// Coarse grid graph used to seed shooting with global path estimates.
class PathGraph {
 public:
  static PathGraph build(const MetricField& field, double spacing);
  /// Approximate distance and initial direction angle from x to y.
  std::pair<double, double> query(const Eigen::Vector2d& x,
                                  const Eigen::Vector2d& y) const;
  bool empty() const { return points_.empty(); }

 private:
  std::vector<Eigen::Vector2d> points_;
  std::vector<std::vector<std::pair<int, float>>> adj_;
  std::vector<int> index_;  // dense grid -> node id or -1
  int nx_ = 0;
  double origin_ = 0, spacing_ = 0;
  int node_at(const Eigen::Vector2d& x) const;
};

struct DistanceOptions {
  double step = 0.01;
  int starts = 32;    // shooting starts for interior targets
  int fan = 96;       // fan resolution for boundary targets
  double t_max = 0;   // 0: derived from the domain size
  bool use_graph = true;
  double graph_spacing = 0;  // 0: auto
  const PathGraph* graph = nullptr;
  std::vector<std::pair<double, double>> extra_starts;  // (angle, T)
  bool want_path = false;
};

struct GeodesicCandidate {
  double theta = 0;
  double length = 0;
  double residual = 0;
};

struct DistanceResult {
  double length = 0;
  double residual = 0;
  std::vector<PathPoint> path;
  std::vector<GeodesicCandidate> candidates;  // all connecting geodesics found
};

/// Minimal connecting geodesic by multi-start shooting seeded with a
/// coarse graph shortest path; throws SolverError when no start converges.
DistanceResult distance(const MetricField& field, const Eigen::Vector2d& x,
                        const Eigen::Vector2d& y, double tol = 1e-9,
                        const DistanceOptions& opts = {});

/// One source, many boundary targets, sharing a single shooting fan.
std::vector<DistanceResult> boundary_row(const MetricField& field,
                                         const Eigen::Vector2d& x,
                                         const std::vector<double>& target_params,
                                         double tol, const DistanceOptions& opts);

struct BoundaryDistanceTable {
  int p = 0;
  std::vector<double> params;  // boundary angles
  Eigen::MatrixXd values;      // symmetrized distances
  Eigen::MatrixXd residuals;   // solver endpoint miss per entry
  Eigen::MatrixXd asymmetry;   // |d_ij - d_ji| before symmetrization
};

BoundaryDistanceTable boundary_distance_table(const MetricField& field, int p,
                                              double tol = 1e-9,
                                              const DistanceOptions& opts = {});

void write_table_csv(const BoundaryDistanceTable& table, std::ostream& os);

struct SimplicityReport {
  double boundary_convexity = 0;  // min second fundamental form eigenvalue
  bool conjugate_point_free = true;
  std::optional<double> first_conjugate_length;
  bool minimizing = true;
  int worst_multiplicity = 1;
  bool inconclusive = false;  // two near-equal connecting geodesics
  std::uint64_t seed = 0;
  bool simple() const {
    return boundary_convexity > 0 && conjugate_point_free && minimizing;
  }
};

/// Three-part test: strict boundary convexity, absence of conjugate
/// points along sampled geodesics, minimality via multi-start shooting
/// between boundary pairs.
SimplicityReport simplicity_check(const MetricField& field, int samples,
                                  std::uint64_t seed,
                                  const DistanceOptions& opts = {});

nlohmann::json to_json(const MetricField& field);
MetricField field_from_json(const nlohmann::json& j);

}  // namespace fillscape::metricfield
