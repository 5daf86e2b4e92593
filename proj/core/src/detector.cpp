#include "oodbound/detector.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "detail.hpp"
#include "oodbound/error.hpp"

namespace oodbound {

using nlohmann::json;

namespace {

// Distances closer than this are treated as equal; the lower class index wins.
constexpr double kTieTolerance = 1e-15;

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j.at(static_cast<std::size_t>(r));
    if (static_cast<Eigen::Index>(row.size()) != cols) throw DataError("ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

json train_config_to_json(const TrainConfig& c) {
  return {{"loss", std::string(to_string(c.loss))},
          {"dim_out", c.dim_out},
          {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"lmcl_scale", c.lmcl_scale},
          {"lmcl_margin", c.lmcl_margin},
          {"triplet_margin", c.triplet_margin},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_epsilon", c.adam_epsilon}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.loss = loss_from_string(j.at("loss").get<std::string>());
  c.dim_out = j.at("dim_out").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.lmcl_scale = j.at("lmcl_scale").get<double>();
  c.lmcl_margin = j.at("lmcl_margin").get<double>();
  c.triplet_margin = j.at("triplet_margin").get<double>();
  c.adam_beta1 = j.at("adam_beta1").get<double>();
  c.adam_beta2 = j.at("adam_beta2").get<double>();
  c.adam_epsilon = j.at("adam_epsilon").get<double>();
  return c;
}

json model_body(const DetectorModel& model) {
  json centroids = json::array();
  json radii = json::array();
  json counts = json::array();
  for (const auto& g : model.geometry) {
    centroids.push_back(std::vector<double>(g.centroid.data(), g.centroid.data() + g.centroid.size()));
    radii.push_back(g.radius);
    counts.push_back(g.count);
  }
  const auto& md = model.metadata;
  json beta_override = md.boundary_params.beta_override ? json(*md.boundary_params.beta_override)
                                                        : json(nullptr);
  json meta = {
      {"train_config", train_config_to_json(md.train_config)},
      {"boundary_params",
       {{"step", md.boundary_params.step},
        {"max_iter", md.boundary_params.max_iter},
        {"beta_override", beta_override}}},
      {"dataset_fingerprint", md.dataset_fingerprint},
      {"final_loss", md.final_loss},
      {"loss_curve", md.loss_curve},
      {"betas", md.betas},
      {"unconverged", md.unconverged},
      {"class_counts", counts},
  };
  return {{"version", std::string(kModelVersion)},
          {"labels", model.labels},
          {"weights", matrix_to_json(model.projection.weights)},
          {"centroids", std::move(centroids)},
          {"radii", std::move(radii)},
          {"metadata", std::move(meta)}};
}

}  // namespace

void DetectorModel::validate() const {
  if (labels.size() < 2) throw DataError("model needs at least 2 classes");
  if (geometry.size() != labels.size()) throw DataError("model geometry/label count mismatch");
  if (projection.weights.size() == 0 || !projection.weights.allFinite()) {
    throw DataError("model projection is empty or non-finite");
  }
  for (std::size_t i = 0; i < geometry.size(); ++i) {
    const auto& g = geometry[i];
    if (g.label != labels[i]) throw DataError("model geometry label order mismatch");
    if (static_cast<std::size_t>(g.centroid.size()) != projection.dim_out() || !g.centroid.allFinite()) {
      throw DataError("model centroid for '" + g.label + "' is malformed");
    }
    if (!(g.radius >= 0.0 && g.radius <= 2.0)) {
      throw DataError("model radius for '" + g.label + "' lies outside [0, 2]");
    }
    if (g.count < 1) throw DataError("model class '" + g.label + "' has no support");
  }
}

DetectorModel fit_boundaries(const Dataset& train, Projection projection,
                             const BoundaryParams& boundary_params) {
  boundary_params.validate();
  if (train.labels().size() < 2) throw DataError("training data needs at least 2 classes");

  std::vector<ProjectedSample> projected;
  projected.reserve(train.size());
  for (const auto& item : train.items()) {
    auto idx = train.class_index(item.label);
    if (!idx) throw DataError("training data contains the OOD label");
    projected.push_back({projection.apply(item.vector), *idx});
  }

  DetectorModel model;
  model.labels = train.labels();
  model.geometry = compute_centroids(projected, model.labels);
  model.metadata.boundary_params = boundary_params;
  model.metadata.dataset_fingerprint = train.fingerprint();
  for (std::size_t i = 0; i < model.geometry.size(); ++i) {
    const auto fitted = fit_radius(i, model.geometry, projected, boundary_params);
    model.geometry[i].radius = fitted.radius;
    model.metadata.betas.push_back(fitted.beta);
    if (!fitted.converged) model.metadata.unconverged.push_back(model.labels[i]);
  }
  model.projection = std::move(projection);
  model.validate();
  return model;
}

DetectorModel fit(const Dataset& train, const TrainConfig& train_config,
                  const BoundaryParams& boundary_params) {
  boundary_params.validate();
  auto trained = oodbound::train(train, train_config);
  auto model = fit_boundaries(train, std::move(trained.projection), boundary_params);
  model.metadata.train_config = train_config;
  model.metadata.final_loss = trained.report.final_loss;
  model.metadata.loss_curve = trained.report.loss_curve;
  return model;
}

Prediction predict(const DetectorModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const Eigen::VectorXd z = model.projection.apply(x);
  Prediction out;
  bool first = true;
  for (std::size_t i = 0; i < model.geometry.size(); ++i) {
    const double d = norm_euclid(z, model.geometry[i].centroid);
    if (first || d < out.distance - kTieTolerance) {
      out.distance = d;
      out.nearest_index = i;
      first = false;
    }
  }
  const auto& g = model.geometry[out.nearest_index];
  out.nearest_label = g.label;
  out.margin = g.radius - out.distance;
  out.label = out.margin >= 0.0 ? g.label : std::string(kOodLabel);
  return out;
}

std::vector<Prediction> predict_batch(const DetectorModel& model,
                                      std::span<const Eigen::VectorXd> xs) {
  std::vector<Prediction> out;
  out.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    try {
      out.push_back(predict(model, xs[i]));
    } catch (const DataError& e) {
      throw DataError("item " + std::to_string(i) + ": " + e.what());
    } catch (const NumericError& e) {
      throw NumericError("item " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

std::string serialize_model(const DetectorModel& model) {
  model.validate();
  json doc = model_body(model);
  doc["checksum"] = detail::sha256_hex(doc.dump());
  return doc.dump(1) + "\n";
}

DetectorModel deserialize_model(std::string_view text) {
  using Kind = ModelFormatError::Kind;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ModelFormatError(Kind::Corrupt, std::string("corrupt model file: ") + e.what());
  }
  if (!doc.is_object()) throw ModelFormatError(Kind::Corrupt, "corrupt model file: not an object");
  auto version = doc.find("version");
  if (version == doc.end() || !version->is_string()) {
    throw ModelFormatError(Kind::Version, "model file carries no version tag");
  }
  if (version->get<std::string>() != kModelVersion) {
    throw ModelFormatError(Kind::Version, "unsupported model version '" +
                                              version->get<std::string>() + "' (expected '" +
                                              std::string(kModelVersion) + "')");
  }
  auto checksum = doc.find("checksum");
  if (checksum == doc.end() || !checksum->is_string()) {
    throw ModelFormatError(Kind::Corrupt, "model file has no checksum");
  }
  const auto expected = checksum->get<std::string>();
  doc.erase("checksum");
  if (detail::sha256_hex(doc.dump()) != expected) {
    throw ModelFormatError(Kind::Checksum, "model checksum mismatch");
  }

  try {
    DetectorModel model;
    model.labels = doc.at("labels").get<std::vector<std::string>>();
    model.projection.weights = matrix_from_json(doc.at("weights"));
    const auto& centroids = doc.at("centroids");
    const auto& radii = doc.at("radii");
    const auto& meta = doc.at("metadata");
    const auto counts = meta.at("class_counts").get<std::vector<std::size_t>>();
    if (centroids.size() != model.labels.size() || radii.size() != model.labels.size() ||
        counts.size() != model.labels.size()) {
      throw DataError("per-class arrays disagree in length");
    }
    for (std::size_t i = 0; i < model.labels.size(); ++i) {
      auto c = centroids.at(i).get<std::vector<double>>();
      ClassGeometry g;
      g.label = model.labels[i];
      g.centroid = Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
      g.radius = radii.at(i).get<double>();
      g.count = counts[i];
      model.geometry.push_back(std::move(g));
    }
    auto& md = model.metadata;
    md.train_config = train_config_from_json(meta.at("train_config"));
    const auto& bp = meta.at("boundary_params");
    md.boundary_params.step = bp.at("step").get<double>();
    md.boundary_params.max_iter = bp.at("max_iter").get<std::size_t>();
    if (!bp.at("beta_override").is_null()) {
      md.boundary_params.beta_override = bp.at("beta_override").get<double>();
    }
    md.dataset_fingerprint = meta.at("dataset_fingerprint").get<std::string>();
    md.final_loss = meta.at("final_loss").get<double>();
    md.loss_curve = meta.at("loss_curve").get<std::vector<double>>();
    md.betas = meta.at("betas").get<std::vector<double>>();
    md.unconverged = meta.at("unconverged").get<std::vector<std::string>>();
    model.validate();
    return model;
  } catch (const json::exception& e) {
    throw ModelFormatError(Kind::Corrupt, std::string("corrupt model file: ") + e.what());
  } catch (const DataError& e) {
    throw ModelFormatError(Kind::Corrupt, std::string("corrupt model file: ") + e.what());
  }
}

void save_model(const DetectorModel& model, const std::filesystem::path& path) {
  const auto text = serialize_model(model);
  detail::write_atomically(path, [&](std::ostream& out) { out << text; });
}

DetectorModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_model(buf.str());
}

}  // namespace oodbound
