#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace oodbound {

/// Per-class geometry in projected space: centroid, support and accept radius.
struct ClassGeometry {
  std::string label;
  Eigen::VectorXd centroid;
  std::size_t count = 0;
  double radius = 0.0;  // in [0, 2]
};

struct BoundaryParams {
  double step = 0.001;
  std::size_t max_iter = 2000;
  /// Replaces the per-class imbalance weight when set.
  std::optional<double> beta_override;

  void validate() const;
};

struct ProjectedSample {
  Eigen::VectorXd vector;
  std::size_t label;
};

/// Outcome of the radius search for one class.
struct RadiusFit {
  double radius = 0.0;
  double beta = 0.0;
  std::size_t iterations = 0;
  bool converged = true;
};

/// Distance between the L2-normalized inputs; lies in [0, 2].
/// Throws NumericError when either input has zero norm.
double norm_euclid(const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& y);

/// Class means of the projected vectors. `labels` names the classes; its
/// size is the class count. Throws DataError if any class is empty.
std::vector<ClassGeometry> compute_centroids(std::span<const ProjectedSample> projected,
                                             std::span<const std::string> labels);

/// Imbalance weight: examples outside the class over examples inside it.
double beta(std::size_t n_class, std::size_t n_rest);

/// Stopping criterion evaluated term by term:
///   sum_ood (d - r) / n_ood + beta * sum_ind (d - r) / n_ind
double criterion_F(std::span<const double> dists_ind, std::span<const double> dists_ood,
                   double r, double beta);

/// Exact root of the criterion, which is linear in r: (A + beta B) / (1 + beta)
/// with A the mean OOD distance and B the mean IND distance.
double closed_form_radius(double mean_ood, double mean_ind, double beta);

/// Grid search r = 0, step, 2 step, ... (capped at 2) for the first r with
/// F(r) <= 0, i.e. the first minimizer of max(F, 0). Gives up after
/// `max_iter` increments and returns the last r examined, unconverged.
RadiusFit search_radius(std::span<const double> dists_ind, std::span<const double> dists_ood,
                        double beta, const BoundaryParams& params);

/// Fits the radius of `class_index`, treating the other classes' training
/// points as the OOD side. Uses beta() unless the params override it.
RadiusFit fit_radius(std::size_t class_index, std::span<const ClassGeometry> geometry,
                     std::span<const ProjectedSample> projected, const BoundaryParams& params);

}  // namespace oodbound
