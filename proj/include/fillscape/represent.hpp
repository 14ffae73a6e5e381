#pragma once

#include <Eigen/Core>
#include <istream>
#include <ostream>
#include <vector>

#include "fillscape/errors.hpp"
#include "fillscape/metricfield.hpp"

namespace fillscape::represent {

/// Quadrature nodes with weights approximating the uniform probability
/// measure on the unit sphere; second moments are exact to near machine
/// precision so the flat scalar product below restricts to the Euclidean
/// one on linear embeddings.
struct SampledSphere {
  int dim = 1;             // sphere dimension (1 for S^1, 2 for S^2)
  Eigen::MatrixXd nodes;   // m x (dim+1) unit rows
  Eigen::VectorXd weights; // positive, sums to one
  int count() const { return int(nodes.rows()); }
  int ambient() const { return dim + 1; }
};

/// m uniformly spaced unit vectors on the circle, equal weights.
SampledSphere sphere_circle(int m);

/// Antipodally symmetrized Fibonacci set on S^2 (m even) with a
/// least-norm weight correction enforcing exact second moments.
SampledSphere sphere_s2(int m);

SampledSphere sphere_from_csv(std::istream& is);
void write_sphere_csv(const SampledSphere& sphere, std::ostream& os);

/// A point of the discretized sup-norm space: one value per sphere node.
struct Embedding {
  Eigen::VectorXd values;
  double sup_norm = 0;
  Embedding() = default;
  explicit Embedding(Eigen::VectorXd v)
      : values(std::move(v)),
        sup_norm(values.size() ? values.cwiseAbs().maxCoeff() : 0.0) {}
};

std::vector<double> boundary_params(int p);

/// Boundary distance representation: coordinate k is the geodesic
/// distance from x to the k-th boundary node. The field is assumed to
/// have passed the simplicity gate.
Embedding bdr_embed(const metricfield::MetricField& field,
                    const Eigen::Vector2d& x,
                    const std::vector<double>& node_params, double tol = 1e-9,
                    const metricfield::DistanceOptions& opts = {});

std::vector<Embedding> bdr_embed_batch(const metricfield::MetricField& field,
                                       const std::vector<Eigen::Vector2d>& xs,
                                       const std::vector<double>& node_params,
                                       double tol = 1e-9,
                                       const metricfield::DistanceOptions& opts = {});

/// Linear map x -> <x, .> sampled on the sphere nodes.
Embedding busemann_embed_euclidean(const Eigen::VectorXd& x,
                                   const SampledSphere& sphere);

/// Horocycle coordinate along the ray toward node k:
/// B_k(x) = log(|x - s_k|^2 / (1 - |x|^2)) in the Poincare disc.
Embedding busemann_embed_hyperbolic(const Eigen::Vector2d& x,
                                    const SampledSphere& sphere);
double busemann_hyperbolic(const Eigen::Vector2d& x, const Eigen::Vector2d& ideal);

/// <u,v> = n * sum_k w_k u_k v_k.
double scalar_product_e(const Embedding& u, const Embedding& v,
                        const SampledSphere& sphere);
double norm_e(const Embedding& u, const SampledSphere& sphere);

/// Orthogonal projection onto the linear image W: x_i = n sum w u s_i.
Eigen::VectorXd project_flat(const Embedding& u, const SampledSphere& sphere);

struct JacobianSample {
  double jacobian = 0;
  double resid2 = 0;  // squared scalar-product distance to W
};

struct JacobianFitReport {
  std::vector<JacobianSample> samples;
  double fitted_c = 0;  // largest c with J <= 1 - c r^2 over the batch
  int violations = 0;   // samples with J > 1
  double lambda = 0;    // shrinking strength used
};

/// Probes the area contraction of the projection composed with the
/// shrinking 1/(1 + lambda |u - P u|^2): finite-difference Jacobians in
/// the active tangent directions for seeded samples in a scalar-product
/// ball. lambda <= 0 selects 1 / (2 radius^2).
JacobianFitReport jacobian_bound_probe(const SampledSphere& sphere, int samples,
                                       double radius, std::uint64_t seed,
                                       double lambda = 0);

/// Minimizer of x -> sum_k w_k |S| e^{-n phi_k} e^{B_k(x)} over the
/// Poincare disc by damped Newton; unique by convexity along geodesics.
Eigen::Vector2d project_hyperbolic(const Embedding& phi,
                                   const SampledSphere& sphere,
                                   double tol = 1e-9);

void write_embeddings_csv(const std::vector<Embedding>& batch, std::ostream& os);

}  // namespace fillscape::represent
