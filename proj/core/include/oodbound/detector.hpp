#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "oodbound/boundary.hpp"
#include "oodbound/dataset.hpp"
#include "oodbound/metric_learning.hpp"

namespace oodbound {

inline constexpr std::string_view kModelVersion = "oodbound/1";

/// Provenance stored alongside the numeric model.
struct ModelMetadata {
  TrainConfig train_config;
  BoundaryParams boundary_params;
  std::string dataset_fingerprint;
  double final_loss = 0.0;
  std::vector<double> loss_curve;
  std::vector<double> betas;
  /// Labels whose radius search hit the iteration limit.
  std::vector<std::string> unconverged;
};

struct DetectorModel {
  Projection projection;
  std::vector<ClassGeometry> geometry;  // one per label, same order
  std::vector<std::string> labels;
  ModelMetadata metadata;

  std::size_t dim_in() const noexcept { return projection.dim_in(); }
  /// Throws DataError when the invariants (>= 2 classes, radii in [0, 2], shapes) fail.
  void validate() const;
};

struct Prediction {
  std::string label;          // nearest_label, or the OOD label
  std::string nearest_label;
  std::size_t nearest_index = 0;
  double distance = 0.0;      // to the nearest centroid
  double margin = 0.0;        // radius - distance; >= 0 means accepted
};

/// Metric learning, then centroids and one radius per class, all on the training set.
DetectorModel fit(const Dataset& train, const TrainConfig& train_config,
                  const BoundaryParams& boundary_params);

/// Assembles a model from an already-trained projection.
DetectorModel fit_boundaries(const Dataset& train, Projection projection,
                             const BoundaryParams& boundary_params);

/// Nearest centroid by normalized distance (lowest index on ties), accepted
/// only when inside that class's radius.
Prediction predict(const DetectorModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);

std::vector<Prediction> predict_batch(const DetectorModel& model,
                                      std::span<const Eigen::VectorXd> xs);

/// JSON document with a SHA-256 checksum over its canonical serialization.
std::string serialize_model(const DetectorModel& model);
DetectorModel deserialize_model(std::string_view text);

void save_model(const DetectorModel& model, const std::filesystem::path& path);
DetectorModel load_model(const std::filesystem::path& path);

}  // namespace oodbound
