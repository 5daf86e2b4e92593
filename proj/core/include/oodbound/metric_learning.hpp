#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "oodbound/dataset.hpp"

namespace oodbound {

/// Linear map T(x) = W x, no bias. W is dim_out x dim_in.
struct Projection {
  Eigen::MatrixXd weights;

  std::size_t dim_in() const noexcept { return static_cast<std::size_t>(weights.cols()); }
  std::size_t dim_out() const noexcept { return static_cast<std::size_t>(weights.rows()); }

  /// Raw (unnormalized) image of `x`. Throws DataError on dimension mismatch.
  Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

/// Class directions of the large-margin cosine softmax, one row per class.
struct LmclHead {
  Eigen::MatrixXd class_directions;  // k x dim_out
  double scale = 64.0;
  double margin = 0.35;

  void renormalize();
};

enum class LossKind { Lmcl, Triplet };

std::string_view to_string(LossKind kind);
LossKind loss_from_string(std::string_view name);

struct TrainConfig {
  LossKind loss = LossKind::Lmcl;
  std::size_t dim_out = 0;  // 0 means dim_in
  double learning_rate = 1e-3;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  double lmcl_scale = 64.0;
  double lmcl_margin = 0.35;
  double triplet_margin = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  /// Throws DataError when a field is out of range.
  void validate() const;
};

struct TrainReport {
  std::vector<double> loss_curve;
  double final_loss = 0.0;
  std::size_t epochs_run = 0;
  /// Triplet batches that held no usable triplet and were skipped.
  std::size_t skipped_batches = 0;
};

struct TrainResult {
  Projection projection;
  LmclHead head;  // unused (empty) for triplet training
  TrainReport report;
};

/// One training example as seen by the losses: a borrowed vector and its class index.
struct Sample {
  const Eigen::VectorXd* vector;
  std::size_t label;
};

struct LmclEvaluation {
  double loss = 0.0;
  Eigen::MatrixXd grad_weights;     // dim_out x dim_in
  Eigen::MatrixXd grad_directions;  // k x dim_out
};

struct TripletEvaluation {
  double loss = 0.0;
  Eigen::MatrixXd grad_weights;
  /// Number of (anchor, positive) pairs averaged over.
  std::size_t pairs = 0;
};

/// Glorot-uniform weights and unit-norm random class directions.
std::pair<Projection, LmclHead> init_params(std::size_t dim_in, std::size_t dim_out,
                                            std::size_t classes, std::uint64_t seed);

/// Mean large-margin cosine loss over the batch and its analytic gradients.
///
/// Cosines are taken between the normalized projection and the normalized
/// class direction, so the gradient w.r.t. the directions includes the
/// normalization Jacobian and is exact even when rows drift off the sphere.
LmclEvaluation lmcl_loss(std::span<const Sample> batch, const Projection& proj,
                         const LmclHead& head);

/// Choice of negative for one (anchor, positive) pair, exposed for testing.
struct TripletChoice {
  std::size_t anchor;
  std::size_t positive;
  std::size_t negative;
};

/// Semi-hard negative mining over a batch of normalized embeddings: for each
/// (anchor, positive) pair, the closest negative strictly farther than the
/// positive, else the closest negative overall. Ties go to the lower index.
std::vector<TripletChoice> mine_semi_hard(const Eigen::Ref<const Eigen::MatrixXd>& embeddings,
                                          std::span<const std::size_t> labels);

/// Mean over (anchor, positive) pairs of max(0, d(a,p) - d(a,n) + margin) on
/// normalized projections, with the negative picked by mine_semi_hard.
/// Throws DataError when the batch holds a single class.
TripletEvaluation triplet_loss(std::span<const Sample> batch, const Projection& proj,
                               double margin);

/// Mini-batch Adam over shuffled epochs. Bitwise deterministic per (data, config).
TrainResult train(const Dataset& data, const TrainConfig& config);

}  // namespace oodbound
