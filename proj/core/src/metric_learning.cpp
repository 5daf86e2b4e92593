#include "oodbound/metric_learning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "detail.hpp"
#include "oodbound/error.hpp"

namespace oodbound {

Eigen::VectorXd Projection::apply(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (static_cast<std::size_t>(x.size()) != dim_in()) {
    throw DataError("projection expects dimension " + std::to_string(dim_in()) + ", got " +
                    std::to_string(x.size()));
  }
  return weights * x;
}

void LmclHead::renormalize() {
  for (Eigen::Index j = 0; j < class_directions.rows(); ++j) {
    const double n = class_directions.row(j).norm();
    if (n > 0.0) class_directions.row(j) /= n;
  }
}

std::string_view to_string(LossKind kind) {
  return kind == LossKind::Lmcl ? "lmcl" : "triplet";
}

LossKind loss_from_string(std::string_view name) {
  if (name == "lmcl") return LossKind::Lmcl;
  if (name == "triplet") return LossKind::Triplet;
  throw DataError("unknown loss '" + std::string(name) + "' (expected lmcl or triplet)");
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw DataError(std::string("invalid training config: ") + what);
  };
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning rate must be positive");
  require(epochs >= 1, "epochs must be positive");
  require(batch_size >= 2, "batch size must be at least 2");
  require(lmcl_scale > 0.0, "LMCL scale must be positive");
  require(lmcl_margin >= 0.0, "LMCL margin must be non-negative");
  require(triplet_margin > 0.0, "triplet margin must be positive");
  require(dim_out == 0 || dim_out >= 2, "output dimension must be at least 2");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam beta1 must lie in [0, 1)");
  require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam beta2 must lie in [0, 1)");
  require(adam_epsilon > 0.0, "adam epsilon must be positive");
}

std::pair<Projection, LmclHead> init_params(std::size_t dim_in, std::size_t dim_out,
                                            std::size_t classes, std::uint64_t seed) {
  if (dim_in == 0 || dim_out == 0 || classes == 0) {
    throw DataError("init_params: dimensions and class count must be positive");
  }
  auto rng = detail::keyed_rng(seed, std::uint64_t{1});
  const double a = std::sqrt(6.0 / static_cast<double>(dim_in + dim_out));
  std::uniform_real_distribution<double> uniform(-a, a);
  std::normal_distribution<double> normal(0.0, 1.0);

  Projection proj{Eigen::MatrixXd(dim_out, dim_in)};
  for (Eigen::Index c = 0; c < proj.weights.cols(); ++c) {
    for (Eigen::Index r = 0; r < proj.weights.rows(); ++r) proj.weights(r, c) = uniform(rng);
  }

  LmclHead head;
  head.class_directions.resize(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(dim_out));
  for (Eigen::Index j = 0; j < head.class_directions.rows(); ++j) {
    do {
      for (Eigen::Index c = 0; c < head.class_directions.cols(); ++c) {
        head.class_directions(j, c) = normal(rng);
      }
    } while (head.class_directions.row(j).norm() == 0.0);
  }
  head.renormalize();
  return {std::move(proj), std::move(head)};
}

namespace {

struct Normalized {
  Eigen::VectorXd unit;
  double norm;
};

Normalized project_normalized(const Projection& proj, const Eigen::VectorXd& x) {
  Eigen::VectorXd z = proj.apply(x);
  const double n = z.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw NumericError("projected vector has zero or non-finite norm (degenerate projection)");
  }
  return {z / n, n};
}

}  // namespace

LmclEvaluation lmcl_loss(std::span<const Sample> batch, const Projection& proj,
                         const LmclHead& head) {
  if (batch.empty()) throw DataError("lmcl_loss: empty batch");
  const auto k = head.class_directions.rows();
  const double s = head.scale;
  const double m = head.margin;

  Eigen::VectorXd row_norms = head.class_directions.rowwise().norm();
  if ((row_norms.array() <= 0.0).any()) throw NumericError("lmcl_loss: zero class direction");
  Eigen::MatrixXd directions = row_norms.cwiseInverse().asDiagonal() * head.class_directions;

  LmclEvaluation out;
  out.grad_weights = Eigen::MatrixXd::Zero(proj.weights.rows(), proj.weights.cols());
  Eigen::MatrixXd grad_unit_dirs = Eigen::MatrixXd::Zero(k, directions.cols());

  Eigen::VectorXd logits(k);
  for (const auto& sample : batch) {
    if (static_cast<Eigen::Index>(sample.label) >= k) {
      throw DataError("lmcl_loss: class index out of range");
    }
    const auto y = static_cast<Eigen::Index>(sample.label);
    const auto [u, znorm] = project_normalized(proj, *sample.vector);

    Eigen::VectorXd cosines = directions * u;
    logits = s * cosines;
    logits[y] -= s * m;
    const double top = logits.maxCoeff();
    Eigen::VectorXd p = (logits.array() - top).exp();
    const double z = p.sum();
    p /= z;
    out.loss += top + std::log(z) - logits[y];

    // dL/dcos_j = s (p_j - [j == y])
    Eigen::VectorXd g = s * p;
    g[y] -= s;

    const Eigen::VectorXd grad_u = directions.transpose() * g;
    const Eigen::VectorXd grad_z = (grad_u - u * u.dot(grad_u)) / znorm;
    out.grad_weights.noalias() += grad_z * sample.vector->transpose();
    grad_unit_dirs.noalias() += g * u.transpose();
  }

  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  out.grad_weights *= inv;
  // Chain through row normalization: d(w/|w|)/dw = (I - v v^T) / |w|.
  out.grad_directions.resize(k, directions.cols());
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::RowVectorXd gj = grad_unit_dirs.row(j) * inv;
    out.grad_directions.row(j) =
        (gj - directions.row(j) * directions.row(j).dot(gj)) / row_norms[j];
  }
  return out;
}

std::vector<TripletChoice> mine_semi_hard(const Eigen::Ref<const Eigen::MatrixXd>& embeddings,
                                          std::span<const std::size_t> labels) {
  const auto n = static_cast<std::size_t>(embeddings.rows());
  Eigen::MatrixXd dist(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      dist(i, j) = (embeddings.row(i) - embeddings.row(j)).norm();
    }
  }

  std::vector<TripletChoice> out;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t p = 0; p < n; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      const double d_ap = dist(a, p);
      std::size_t semi = n, hardest = n;
      for (std::size_t c = 0; c < n; ++c) {
        if (labels[c] == labels[a]) continue;
        const double d = dist(a, c);
        if (hardest == n || d < dist(a, hardest)) hardest = c;
        if (d > d_ap && (semi == n || d < dist(a, semi))) semi = c;
      }
      if (hardest == n) continue;
      out.push_back({a, p, semi != n ? semi : hardest});
    }
  }
  return out;
}

TripletEvaluation triplet_loss(std::span<const Sample> batch, const Projection& proj,
                               double margin) {
  const auto n = batch.size();
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = batch[i].label;
  if (n == 0 || std::all_of(labels.begin(), labels.end(), [&](auto l) { return l == labels[0]; })) {
    throw DataError("triplet_loss: batch holds a single class, no triplets can be formed");
  }

  const auto d_out = static_cast<Eigen::Index>(proj.dim_out());
  Eigen::MatrixXd units(static_cast<Eigen::Index>(n), d_out);
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto [u, znorm] = project_normalized(proj, *batch[i].vector);
    units.row(static_cast<Eigen::Index>(i)) = u.transpose();
    norms[i] = znorm;
  }

  TripletEvaluation out;
  out.grad_weights = Eigen::MatrixXd::Zero(proj.weights.rows(), proj.weights.cols());
  const auto triplets = mine_semi_hard(units, labels);
  out.pairs = triplets.size();
  if (triplets.empty()) return out;

  Eigen::MatrixXd grad_units = Eigen::MatrixXd::Zero(units.rows(), units.cols());
  for (const auto& t : triplets) {
    const auto a = static_cast<Eigen::Index>(t.anchor);
    const auto p = static_cast<Eigen::Index>(t.positive);
    const auto q = static_cast<Eigen::Index>(t.negative);
    const Eigen::RowVectorXd ap = units.row(a) - units.row(p);
    const Eigen::RowVectorXd an = units.row(a) - units.row(q);
    const double d_ap = ap.norm();
    const double d_an = an.norm();
    const double term = d_ap - d_an + margin;
    if (term <= 0.0) continue;
    out.loss += term;
    // Subgradient 0 where a distance vanishes.
    if (d_ap > 0.0) {
      grad_units.row(a) += ap / d_ap;
      grad_units.row(p) -= ap / d_ap;
    }
    if (d_an > 0.0) {
      grad_units.row(a) -= an / d_an;
      grad_units.row(q) += an / d_an;
    }
  }

  const double inv = 1.0 / static_cast<double>(triplets.size());
  out.loss *= inv;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const Eigen::VectorXd gu = grad_units.row(r).transpose() * inv;
    const Eigen::VectorXd u = units.row(r).transpose();
    const Eigen::VectorXd gz = (gu - u * u.dot(gu)) / norms[i];
    out.grad_weights.noalias() += gz * batch[i].vector->transpose();
  }
  return out;
}

namespace {

class Adam {
public:
  Adam(Eigen::Index rows, Eigen::Index cols, const TrainConfig& config)
      : m_(Eigen::MatrixXd::Zero(rows, cols)), v_(Eigen::MatrixXd::Zero(rows, cols)),
        config_(config) {}

  void step(Eigen::MatrixXd& param, const Eigen::MatrixXd& grad) {
    ++t_;
    const double b1 = config_.adam_beta1;
    const double b2 = config_.adam_beta2;
    m_ = b1 * m_ + (1.0 - b1) * grad;
    v_ = b2 * v_ + (1.0 - b2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    param.array() -= config_.learning_rate * (m_.array() / c1) /
                     ((v_.array() / c2).sqrt() + config_.adam_epsilon);
  }

private:
  Eigen::MatrixXd m_, v_;
  const TrainConfig& config_;
  std::uint64_t t_ = 0;
};

// Shuffle each class, cut it into pairs, then shuffle the pairs so that every
// batch carries positives from several classes.
std::vector<std::size_t> stratified_order(const std::vector<std::size_t>& labels,
                                          std::size_t classes, std::mt19937_64& rng) {
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<std::vector<std::size_t>> chunks;
  for (auto& idx : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < idx.size(); i += 2) {
      if (i + 1 < idx.size()) {
        chunks.push_back({idx[i], idx[i + 1]});
      } else if (!chunks.empty() && labels[chunks.back().front()] == labels[idx[i]]) {
        chunks.back().push_back(idx[i]);
      } else {
        chunks.push_back({idx[i]});
      }
    }
  }
  std::shuffle(chunks.begin(), chunks.end(), rng);
  std::vector<std::size_t> order;
  order.reserve(labels.size());
  for (const auto& c : chunks) order.insert(order.end(), c.begin(), c.end());
  return order;
}

bool has_triplet(std::span<const Sample> batch) {
  std::map<std::size_t, std::size_t> counts;
  for (const auto& s : batch) ++counts[s.label];
  if (counts.size() < 2) return false;
  return std::any_of(counts.begin(), counts.end(), [](const auto& kv) { return kv.second >= 2; });
}

}  // namespace

TrainResult train(const Dataset& data, const TrainConfig& config) {
  config.validate();
  const auto classes = data.labels().size();
  if (classes < 2) throw DataError("training data needs at least 2 classes");

  std::vector<std::size_t> labels;
  labels.reserve(data.size());
  for (const auto& item : data.items()) {
    auto idx = data.class_index(item.label);
    if (!idx) throw DataError("training data contains the OOD label");
    labels.push_back(*idx);
  }

  const auto dim_in = data.dim();
  const auto dim_out = config.dim_out == 0 ? dim_in : config.dim_out;
  auto [proj, head] = init_params(dim_in, dim_out, classes, config.seed);
  head.scale = config.lmcl_scale;
  head.margin = config.lmcl_margin;

  Adam adam_w(proj.weights.rows(), proj.weights.cols(), config);
  Adam adam_h(head.class_directions.rows(), head.class_directions.cols(), config);
  auto rng = detail::keyed_rng(config.seed, std::uint64_t{2});

  TrainReport report;
  std::vector<std::size_t> order(data.size());
  std::vector<Sample> batch;
  batch.reserve(config.batch_size);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.loss == LossKind::Triplet) {
      order = stratified_order(labels, classes, rng);
    } else {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
    }

    double weighted = 0.0;
    double weight = 0.0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += config.batch_size, ++b) {
      const auto stop = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (auto i = start; i < stop; ++i) batch.push_back({&data.items()[order[i]].vector, labels[order[i]]});

      auto where = [&] {
        return " at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b);
      };

      double loss = 0.0;
      try {
        if (config.loss == LossKind::Lmcl) {
          auto eval = lmcl_loss(batch, proj, head);
          loss = eval.loss;
          if (!std::isfinite(loss) || !eval.grad_weights.allFinite() ||
              !eval.grad_directions.allFinite()) {
            throw NumericError("non-finite loss or gradient");
          }
          adam_w.step(proj.weights, eval.grad_weights);
          adam_h.step(head.class_directions, eval.grad_directions);
          head.renormalize();
        } else {
          if (!has_triplet(batch)) {
            ++report.skipped_batches;
            continue;
          }
          auto eval = triplet_loss(batch, proj, config.triplet_margin);
          loss = eval.loss;
          if (!std::isfinite(loss) || !eval.grad_weights.allFinite()) {
            throw NumericError("non-finite loss or gradient");
          }
          adam_w.step(proj.weights, eval.grad_weights);
        }
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + where());
      }
      weighted += loss * static_cast<double>(batch.size());
      weight += static_cast<double>(batch.size());
    }
    if (weight == 0.0) {
      throw DataError("epoch " + std::to_string(epoch) + " had no usable batch");
    }
    report.loss_curve.push_back(weighted / weight);
  }

  report.epochs_run = report.loss_curve.size();
  report.final_loss = report.loss_curve.back();
  if (config.loss == LossKind::Triplet) head = LmclHead{};
  return {std::move(proj), std::move(head), std::move(report)};
}

}  // namespace oodbound
