#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "json.hpp"

#include "fillscape/errors.hpp"

namespace fillscape::normspace {

enum class NormKind { euclidean, lp, polytope };

/// A centrally symmetric convex unit ball on R^n, given in one of three
/// forms: euclidean (SPD matrix A, ball {x : x'Ax <= 1}), lp (p >= 1), or
/// polytope (facet covectors a_k, ball {x : |a_k.x| <= 1 for all k}).
struct Norm {
  int dim = 0;
  NormKind kind = NormKind::euclidean;
  Eigen::MatrixXd matrix;  // euclidean: n x n SPD
  double p = 2.0;          // lp exponent
  Eigen::MatrixXd facets;  // polytope: K x n, one covector per row

  static Norm euclidean(const Eigen::MatrixXd& A);
  static Norm lp(int dim, double p);
  static Norm polytope(const Eigen::MatrixXd& facets);
};

/// Centered ellipsoid {x : x'Qx <= 1} with its Lebesgue volume.
struct Ellipsoid {
  Eigen::MatrixXd shape;
  double volume = 0.0;
};

enum class Density { busemann, holmes_thompson, loewner, benson };

/// A volume definition together with the unit-ball volume table it
/// normalizes against.
struct AreaDensity {
  Density definition = Density::loewner;
  AreaDensity() = default;
  explicit AreaDensity(Density d) : definition(d) {}
  static AreaDensity from_name(const std::string& name);
  std::string name() const;
  double omega(int k) const;
};

constexpr double kPi = 3.14159265358979323846;

/// Volume of the Euclidean unit ball in R^n, n <= 4.
double omega_ball(int n);

/// Evaluates the norm. Homogeneous, symmetric, positive off zero.
double norm_eval(const Norm& norm, const Eigen::VectorXd& x);

/// John convergence failure carrying the last iterate.
struct JohnConvergenceError : ConvergenceError {
  Ellipsoid last;
  JohnConvergenceError(const std::string& msg, Ellipsoid e)
      : ConvergenceError(msg), last(std::move(e)) {}
};

/// Maximum-volume ellipsoid inscribed in the unit ball (centered, by
/// symmetry). For euclidean norms this is the ball itself. Certified by
/// the dual multiplier criterion max_k kappa_k <= n (1 + tol).
Ellipsoid john_ellipsoid(const Norm& norm, double tol = 1e-8,
                         int max_iter = 10000);

/// Same solver, carrying the dual multipliers across nearby solves.
Ellipsoid john_ellipsoid_warm(const Norm& norm, double tol, int max_iter,
                              Eigen::VectorXd* warm);

/// Drops facets whose covectors are interior to the polar body; the unit
/// ball is unchanged. Plane polytopes only, other norms pass through.
Norm essential_facets(const Norm& norm);

/// Lebesgue volume of the polar body B° = {y : y.x <= 1 for x in B}.
/// Polytope polars are convex hulls of the facet covectors and are
/// measured exactly by hull triangulation (dim <= 4).
double polar_volume(const Norm& norm);

/// Density sigma with the Finsler volume element equal to
/// sigma x Lebesgue in the coordinates presenting the unit ball.
/// Euclidean norms are presented in their round coordinates, hence
/// return exactly 1 under every definition.
double volume_density(const Norm& norm, const AreaDensity& def);
double volume_density(const Norm& norm, Density def);

/// Restriction of the ambient sup-norm to the column span of V (m x n),
/// expressed in basis coordinates: polytope with facets = rows of V.
Norm induced_norm(int ambient_dim, const Eigen::MatrixXd& basis);

/// Replaces a smooth (lp or euclidean) norm by a circumscribed facet
/// polytope sampled in `per_pair` directions per coordinate 2-plane.
Norm facet_sample(const Norm& norm, int per_pair = 64);

/// Dual norm of a polytope norm: facets = vertices of the primal ball.
Norm polar(const Norm& norm);

/// Vertices of a polytope norm's unit ball, one per row (dim <= 4).
Eigen::MatrixXd polytope_vertices(const Norm& norm);

/// Lebesgue volume of the unit ball itself (polytope or euclidean).
double ball_volume(const Norm& norm);

nlohmann::json to_json(const Norm& norm);
Norm norm_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Ellipsoid& e);

namespace detail {
/// Volume of the convex hull of a point set, dim <= 4. Supporting
/// hyperplane enumeration with hull recursion on facets.
double convex_hull_volume(const std::vector<Eigen::VectorXd>& points,
                          int dim);
}  // namespace detail

}  // namespace fillscape::normspace
