#include "oodbound/gradcheck.hpp"

#include <algorithm>
#include <random>
#include <vector>

#include "detail.hpp"
#include "oodbound/error.hpp"
#include "oodbound/metric_learning.hpp"

namespace oodbound {

double relative_error(const Eigen::Ref<const Eigen::MatrixXd>& analytic,
                      const Eigen::Ref<const Eigen::MatrixXd>& numeric) {
  if (analytic.rows() != numeric.rows() || analytic.cols() != numeric.cols()) {
    throw NumericError("gradient shapes differ");
  }
  const double scale =
      std::max({analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff(), kRelativeErrorFloor});
  return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

Eigen::MatrixXd central_difference(const std::function<double()>& loss, Eigen::MatrixXd& param,
                                   double step) {
  Eigen::MatrixXd grad(param.rows(), param.cols());
  for (Eigen::Index c = 0; c < param.cols(); ++c) {
    for (Eigen::Index r = 0; r < param.rows(); ++r) {
      const double saved = param(r, c);
      param(r, c) = saved + step;
      const double up = loss();
      param(r, c) = saved - step;
      const double down = loss();
      param(r, c) = saved;
      grad(r, c) = (up - down) / (2.0 * step);
    }
  }
  return grad;
}

namespace {

struct Instance {
  std::vector<Eigen::VectorXd> inputs;
  std::vector<std::size_t> labels;
  Projection proj;
  LmclHead head;

  std::vector<Sample> batch() const {
    std::vector<Sample> out;
    for (std::size_t i = 0; i < inputs.size(); ++i) out.push_back({&inputs[i], labels[i]});
    return out;
  }
};

Instance random_instance(std::mt19937_64& rng, std::uint64_t seed) {
  std::uniform_int_distribution<std::size_t> pick_in(2, 8);
  std::normal_distribution<double> normal(0.0, 1.0);
  Instance inst;
  const auto d_in = pick_in(rng);
  const auto d_out = std::uniform_int_distribution<std::size_t>(2, d_in)(rng);
  const auto k = std::uniform_int_distribution<std::size_t>(2, 4)(rng);
  const auto n = std::uniform_int_distribution<std::size_t>(4, 8)(rng);
  auto [proj, head] = init_params(d_in, d_out, k, seed);
  inst.proj = std::move(proj);
  inst.head = std::move(head);
  // Directions slightly off the sphere so the normalization Jacobian is exercised.
  inst.head.class_directions *= std::uniform_real_distribution<double>(0.5, 2.0)(rng);
  inst.head.scale = std::uniform_real_distribution<double>(1.0, 30.0)(rng);
  inst.head.margin = std::uniform_real_distribution<double>(0.0, 0.5)(rng);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(d_in));
    for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = normal(rng);
    inst.inputs.push_back(std::move(x));
    inst.labels.push_back(i % std::min<std::size_t>(k, n / 2));
  }
  return inst;
}

}  // namespace

GradCheckResult run_gradcheck(const GradCheckOptions& options) {
  if (options.trials == 0) throw DataError("gradcheck needs at least one trial");
  GradCheckResult result;
  auto rng = detail::keyed_rng(options.seed, std::uint64_t{3});

  auto record = [&](double err, const std::string& what) {
    ++result.checks;
    if (result.worst_case.empty() || err > result.worst_error) {
      result.worst_error = err;
      result.worst_case = what;
    }
  };
  auto corrupt = [&](Eigen::MatrixXd g) {
    if (options.corrupt_gradient) g(0, 0) += 1e-2 * (1.0 + std::abs(g(0, 0)));
    return g;
  };

  for (std::size_t t = 0; t < options.trials; ++t) {
    auto inst = random_instance(rng, options.seed * 1000 + t);
    auto batch = inst.batch();
    const auto tag = " trial " + std::to_string(t);

    auto lmcl = lmcl_loss(batch, inst.proj, inst.head);
    auto lmcl_value = [&] { return lmcl_loss(batch, inst.proj, inst.head).loss; };
    auto num_w = central_difference(lmcl_value, inst.proj.weights, options.step);
    auto num_h = central_difference(lmcl_value, inst.head.class_directions, options.step);
    record(relative_error(corrupt(lmcl.grad_weights), num_w), "lmcl weights" + tag);
    record(relative_error(lmcl.grad_directions, num_h), "lmcl directions" + tag);

    const double margin = std::uniform_real_distribution<double>(0.2, 1.5)(rng);
    auto trip = triplet_loss(batch, inst.proj, margin);
    auto trip_value = [&] { return triplet_loss(batch, inst.proj, margin).loss; };
    auto num_t = central_difference(trip_value, inst.proj.weights, options.step);
    record(relative_error(corrupt(trip.grad_weights), num_t), "triplet weights" + tag);
  }
  result.passed = result.worst_error < options.tolerance;
  return result;
}

}  // namespace oodbound
