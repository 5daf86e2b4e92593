#include "oodbound/boundary.hpp"

#include <algorithm>
#include <cmath>

#include "oodbound/error.hpp"

namespace oodbound {

namespace {

constexpr double kMaxRadius = 2.0;

double mean(std::span<const double> xs) {
  double sum = 0.0;
  for (double x : xs) sum += x;
  return sum / static_cast<double>(xs.size());
}

}  // namespace

void BoundaryParams::validate() const {
  if (!(step > 0.0) || !std::isfinite(step)) throw DataError("boundary step must be positive");
  if (max_iter < 1) throw DataError("boundary max_iter must be at least 1");
  if (beta_override && !(*beta_override > 0.0)) throw DataError("beta override must be positive");
}

double norm_euclid(const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& y) {
  if (x.size() != y.size()) throw DataError("norm_euclid: dimension mismatch");
  const double nx = x.norm();
  const double ny = y.norm();
  if (!(nx > 0.0) || !(ny > 0.0)) {
    throw NumericError("norm_euclid: zero-norm vector (degenerate projection)");
  }
  return (x / nx - y / ny).norm();
}

std::vector<ClassGeometry> compute_centroids(std::span<const ProjectedSample> projected,
                                             std::span<const std::string> labels) {
  const auto k = labels.size();
  if (projected.empty()) throw DataError("compute_centroids: no projected samples");
  const auto dim = projected.front().vector.size();

  std::vector<ClassGeometry> out(k);
  for (std::size_t i = 0; i < k; ++i) {
    out[i].label = labels[i];
    out[i].centroid = Eigen::VectorXd::Zero(dim);
  }
  for (const auto& s : projected) {
    if (s.label >= k) throw DataError("compute_centroids: class index out of range");
    if (s.vector.size() != dim) throw DataError("compute_centroids: dimension mismatch");
    out[s.label].centroid += s.vector;
    ++out[s.label].count;
  }
  for (auto& g : out) {
    if (g.count == 0) throw DataError("compute_centroids: class '" + g.label + "' has no examples");
    g.centroid /= static_cast<double>(g.count);
  }
  return out;
}

double beta(std::size_t n_class, std::size_t n_rest) {
  if (n_class == 0 || n_rest == 0) throw DataError("beta: class counts must be positive");
  return static_cast<double>(n_rest) / static_cast<double>(n_class);
}

double criterion_F(std::span<const double> dists_ind, std::span<const double> dists_ood,
                   double r, double beta) {
  if (dists_ind.empty() || dists_ood.empty()) {
    throw DataError("criterion_F: both distance lists must be nonempty");
  }
  double ood = 0.0;
  for (double d : dists_ood) ood += d - r;
  double ind = 0.0;
  for (double d : dists_ind) ind += d - r;
  return ood / static_cast<double>(dists_ood.size()) +
         beta * ind / static_cast<double>(dists_ind.size());
}

double closed_form_radius(double mean_ood, double mean_ind, double beta) {
  return (mean_ood + beta * mean_ind) / (1.0 + beta);
}

RadiusFit search_radius(std::span<const double> dists_ind, std::span<const double> dists_ood,
                        double beta, const BoundaryParams& params) {
  params.validate();
  if (dists_ind.empty() || dists_ood.empty()) {
    throw DataError("radius search needs both IND and OOD distances");
  }
  // Sum (d - r) / n == mean(d) - r, so the means are all the search needs.
  const double a = mean(dists_ood);
  const double b = mean(dists_ind);
  auto criterion = [&](double r) { return (a - r) + beta * (b - r); };

  RadiusFit fit{0.0, beta, 0, false};
  for (std::size_t k = 0;; ++k) {
    const double r = std::min(static_cast<double>(k) * params.step, kMaxRadius);
    fit.radius = r;
    fit.iterations = k;
    if (criterion(r) <= 0.0) {
      fit.converged = true;
      break;
    }
    if (k >= params.max_iter || r >= kMaxRadius) break;
  }
  return fit;
}

RadiusFit fit_radius(std::size_t class_index, std::span<const ClassGeometry> geometry,
                     std::span<const ProjectedSample> projected, const BoundaryParams& params) {
  if (geometry.size() < 2) throw DataError("fit_radius: at least 2 classes are required");
  if (class_index >= geometry.size()) throw DataError("fit_radius: class index out of range");
  const auto& centroid = geometry[class_index].centroid;

  std::vector<double> ind, ood;
  for (const auto& s : projected) {
    const double d = norm_euclid(s.vector, centroid);
    (s.label == class_index ? ind : ood).push_back(d);
  }
  if (ind.empty()) throw DataError("fit_radius: class '" + geometry[class_index].label + "' is empty");
  if (ood.empty()) throw DataError("fit_radius: no examples outside class '" + geometry[class_index].label + "'");

  const double w = params.beta_override.value_or(beta(ind.size(), ood.size()));
  return search_radius(ind, ood, w, params);
}

}  // namespace oodbound
