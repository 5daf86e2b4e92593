#include "oodbound/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "detail.hpp"
#include "oodbound/error.hpp"

namespace oodbound {

namespace {

std::string location(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

void check_finite(const Eigen::VectorXd& v, const std::string& where) {
  if (!v.allFinite()) throw DataError(where + "non-finite vector component");
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == ',' && !quoted) {
      fields.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  fields.push_back(trim(line.substr(start)));
  return fields;
}

std::string unquote(std::string_view field) {
  if (field.size() >= 2 && field.front() == '"' && field.back() == '"') {
    std::string out;
    field = field.substr(1, field.size() - 2);
    for (std::size_t i = 0; i < field.size(); ++i) {
      out.push_back(field[i]);
      if (field[i] == '"' && i + 1 < field.size() && field[i + 1] == '"') ++i;
    }
    return out;
  }
  return std::string(field);
}

double parse_double(std::string_view field, const std::string& where) {
  double value = 0.0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec == std::errc::result_out_of_range) throw DataError(where + "non-finite vector component");
  if (ec != std::errc() || ptr != last) {
    throw DataError(where + "cannot parse number '" + std::string(field) + "'");
  }
  return value;
}

void check_label(const std::string& label, const LoadOptions& options, const std::string& where) {
  if (label.empty() && options.require_label) throw DataError(where + "empty label");
  if (label == kOodLabel && !options.allow_ood) {
    throw DataError(where + "reserved label '" + std::string(kOodLabel) +
                    "' is not allowed in this file");
  }
}

std::vector<LabeledEmbedding> read_jsonl(const std::filesystem::path& path,
                                         const LoadOptions& options, std::size_t& dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<LabeledEmbedding> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto where = location(path, line_no);
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + "invalid JSON: " + e.what());
    } catch (const nlohmann::json::out_of_range&) {
      throw DataError(where + "non-finite vector component (number overflow)");
    }
    if (!row.is_object()) throw DataError(where + "row is not a JSON object");

    LabeledEmbedding item;
    if (auto it = row.find("label"); it != row.end()) {
      if (!it->is_string()) throw DataError(where + "'label' must be a string");
      item.label = it->get<std::string>();
    } else if (options.require_label) {
      throw DataError(where + "missing 'label'");
    }
    check_label(item.label, options, where);

    auto vec = row.find("vector");
    if (vec == row.end() || !vec->is_array()) throw DataError(where + "missing 'vector' array");
    item.vector.resize(static_cast<Eigen::Index>(vec->size()));
    for (std::size_t i = 0; i < vec->size(); ++i) {
      const auto& v = (*vec)[i];
      if (!v.is_number()) throw DataError(where + "vector component is not a number");
      item.vector[static_cast<Eigen::Index>(i)] = v.get<double>();
    }
    check_finite(item.vector, where);

    if (auto it = row.find("text"); it != row.end() && !it->is_null()) {
      if (!it->is_string()) throw DataError(where + "'text' must be a string");
      item.text = it->get<std::string>();
    }

    const auto n = static_cast<std::size_t>(item.vector.size());
    if (n == 0) throw DataError(where + "empty vector");
    if (dim == 0) dim = n;
    if (n != dim) {
      throw DataError(where + "dimension mismatch: expected " + std::to_string(dim) + ", got " +
                      std::to_string(n));
    }
    items.push_back(std::move(item));
  }
  return items;
}

std::vector<LabeledEmbedding> read_csv(const std::filesystem::path& path,
                                       const LoadOptions& options, std::size_t& dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<LabeledEmbedding> items;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto where = location(path, line_no);
    auto fields = split_commas(line);
    if (!header_seen) {
      if (fields.size() < 2 || fields[0] != "label") {
        throw DataError(where + "expected header 'label,v0,v1,...'");
      }
      for (std::size_t i = 1; i < fields.size(); ++i) {
        if (fields[i] != "v" + std::to_string(i - 1)) {
          throw DataError(where + "header column " + std::to_string(i) + " must be v" +
                          std::to_string(i - 1));
        }
      }
      dim = fields.size() - 1;
      header_seen = true;
      continue;
    }
    if (fields.size() != dim + 1) {
      throw DataError(where + "dimension mismatch: expected " + std::to_string(dim) + ", got " +
                      std::to_string(fields.size() - 1));
    }
    LabeledEmbedding item;
    item.label = unquote(fields[0]);
    check_label(item.label, options, where);
    item.vector.resize(static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < dim; ++i) {
      item.vector[static_cast<Eigen::Index>(i)] = parse_double(fields[i + 1], where);
    }
    check_finite(item.vector, where);
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace

Dataset::Dataset(std::vector<LabeledEmbedding> items, std::size_t dim)
    : items_(std::move(items)), dim_(dim) {
  if (!items_.empty()) dim_ = static_cast<std::size_t>(items_.front().vector.size());
  if (dim_ == 0) throw DataError("dataset dimension must be positive");
  std::set<std::string> labels;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& item = items_[i];
    if (static_cast<std::size_t>(item.vector.size()) != dim_) {
      throw DataError("item " + std::to_string(i) + ": dimension mismatch: expected " +
                      std::to_string(dim_) + ", got " + std::to_string(item.vector.size()));
    }
    if (!item.vector.allFinite()) {
      throw DataError("item " + std::to_string(i) + ": non-finite vector component");
    }
    if (item.label != kOodLabel && !item.label.empty()) labels.insert(item.label);
  }
  labels_.assign(labels.begin(), labels.end());
}

std::optional<std::size_t> Dataset::class_index(std::string_view label) const {
  auto it = std::lower_bound(labels_.begin(), labels_.end(), label);
  if (it == labels_.end() || *it != label) return std::nullopt;
  return static_cast<std::size_t>(it - labels_.begin());
}

std::size_t Dataset::ood_count() const {
  return static_cast<std::size_t>(std::count_if(
      items_.begin(), items_.end(), [](const auto& item) { return item.label == kOodLabel; }));
}

std::string Dataset::fingerprint() const {
  std::string bytes;
  bytes.reserve(items_.size() * (dim_ * sizeof(double) + 16));
  bytes += std::to_string(dim_);
  bytes.push_back('\n');
  for (const auto& item : items_) {
    bytes += item.label;
    bytes.push_back('\0');
    detail::append_bits(bytes, item.vector);
  }
  return detail::sha256_hex(bytes);
}

FileFormat format_from_path(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".csv" ? FileFormat::Csv : FileFormat::Jsonl;
}

Dataset load_dataset(const std::filesystem::path& path, FileFormat format,
                     const LoadOptions& options) {
  std::size_t dim = 0;
  auto items = format == FileFormat::Csv ? read_csv(path, options, dim)
                                         : read_jsonl(path, options, dim);
  if (items.empty()) {
    if (!options.allow_empty) throw DataError(path.string() + ": empty file");
    return Dataset({}, dim == 0 ? 1 : dim);
  }
  return Dataset(std::move(items));
}

Dataset load_dataset(const std::filesystem::path& path, const LoadOptions& options) {
  return load_dataset(path, format_from_path(path), options);
}

void write_jsonl(const Dataset& data, const std::filesystem::path& path) {
  detail::write_atomically(path, [&](std::ostream& out) {
    for (const auto& item : data.items()) {
      nlohmann::ordered_json row;
      row["label"] = item.label;
      row["vector"] = std::vector<double>(item.vector.data(), item.vector.data() + item.vector.size());
      if (item.text) row["text"] = *item.text;
      out << row.dump() << '\n';
    }
  });
}

void write_csv(const Dataset& data, const std::filesystem::path& path) {
  detail::write_atomically(path, [&](std::ostream& out) {
    out << "label";
    for (std::size_t i = 0; i < data.dim(); ++i) out << ",v" << i;
    out << '\n';
    char buf[32];
    for (const auto& item : data.items()) {
      out << item.label;
      for (Eigen::Index i = 0; i < item.vector.size(); ++i) {
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, item.vector[i]);
        out << ',' << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
      }
      out << '\n';
    }
  });
}

std::size_t known_class_count(double ratio, std::size_t label_count) {
  // 0.1 * 30 is 3.0000000000000004 in binary; do not let that round up to 4.
  const double raw = ratio * static_cast<double>(label_count);
  return static_cast<std::size_t>(std::ceil(raw - 1e-9));
}

SplitResult make_split(const Dataset& train, const Dataset& test, const SplitSpec& spec) {
  if (!(spec.known_ratio > 0.0 && spec.known_ratio <= 1.0)) {
    throw DataError("known ratio must lie in (0, 1]");
  }
  if (train.dim() != test.dim()) {
    throw DataError("train and test dimensions differ (" + std::to_string(train.dim()) + " vs " +
                    std::to_string(test.dim()) + ")");
  }
  if (train.labels().size() < 2) throw DataError("training data needs at least 2 classes");
  for (const auto& label : test.labels()) {
    if (!train.class_index(label)) {
      throw DataError("test label '" + label + "' does not occur in the training data");
    }
  }

  const auto k = known_class_count(spec.known_ratio, train.labels().size());
  if (k < 2) {
    throw DataError("known ratio " + std::to_string(spec.known_ratio) + " leaves " +
                    std::to_string(k) + " known class(es); boundary fitting needs at least 2");
  }

  std::vector<std::size_t> order(train.labels().size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = detail::keyed_rng(spec.seed, spec.run_index);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(k);
  std::sort(order.begin(), order.end());

  std::vector<std::string> known;
  known.reserve(k);
  for (auto idx : order) known.push_back(train.labels()[idx]);
  auto is_known = [&](const std::string& label) {
    return std::binary_search(known.begin(), known.end(), label);
  };

  std::vector<LabeledEmbedding> train_items;
  for (const auto& item : train.items()) {
    if (is_known(item.label)) train_items.push_back(item);
  }
  if (train_items.empty()) throw DataError("no training items left after split");

  std::vector<LabeledEmbedding> test_items = test.items();
  for (auto& item : test_items) {
    if (!is_known(item.label)) item.label = std::string(kOodLabel);
  }

  return SplitResult{std::move(known), Dataset(std::move(train_items)),
                     Dataset(std::move(test_items), test.dim())};
}

Dataset subsample_stratified(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw DataError("train fraction must lie in (0, 1]");
  if (fraction == 1.0) return data;

  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.items()[i].label].push_back(i);

  auto rng = detail::keyed_rng(seed, std::uint64_t{0x5eed});
  std::vector<std::size_t> keep;
  for (auto& [label, idx] : by_class) {
    const auto target = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size()))));
    std::shuffle(idx.begin(), idx.end(), rng);
    keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(target));
  }
  std::sort(keep.begin(), keep.end());

  std::vector<LabeledEmbedding> items;
  items.reserve(keep.size());
  for (auto i : keep) items.push_back(data.items()[i]);
  return Dataset(std::move(items), data.dim());
}

std::pair<Dataset, Dataset> synth_blobs(const BlobSpec& spec) {
  if (spec.classes < 2) throw DataError("synth_blobs: need at least 2 classes");
  if (spec.dim < 2) throw DataError("synth_blobs: dim must be at least 2");
  if (spec.per_class < 2) throw DataError("synth_blobs: per_class must be at least 2");
  if (!(spec.sigma >= 0.0)) throw DataError("synth_blobs: sigma must be non-negative");

  const auto dim = static_cast<Eigen::Index>(spec.dim);
  auto rng = detail::keyed_rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
    return v;
  };

  const double max_cos = std::cos(spec.min_angle);
  const std::size_t retry_limit = 10000;
  std::vector<Eigen::VectorXd> centers;
  while (centers.size() < spec.classes) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < retry_limit && !placed; ++attempt) {
      Eigen::VectorXd c = gaussian(dim);
      const double norm = c.norm();
      if (norm == 0.0) continue;
      c /= norm;
      placed = std::all_of(centers.begin(), centers.end(),
                           [&](const Eigen::VectorXd& o) { return c.dot(o) <= max_cos; });
      if (placed) centers.push_back(std::move(c));
    }
    if (!placed) {
      throw DataError("synth_blobs: could not place " + std::to_string(spec.classes) +
                      " centers with the required separation in dimension " +
                      std::to_string(spec.dim));
    }
  }

  const auto width = std::to_string(spec.classes - 1).size();
  auto name = [&](std::size_t c) {
    auto digits = std::to_string(c);
    return "c" + std::string(width - digits.size(), '0') + digits;
  };

  auto draw = [&] {
    std::vector<LabeledEmbedding> items;
    items.reserve(spec.classes * spec.per_class);
    for (std::size_t c = 0; c < spec.classes; ++c) {
      for (std::size_t i = 0; i < spec.per_class; ++i) {
        Eigen::VectorXd v = centers[c] + spec.sigma * gaussian(dim);
        items.push_back({std::move(v), name(c), std::nullopt});
      }
    }
    return Dataset(std::move(items));
  };
  auto train = draw();
  auto test = draw();
  return {std::move(train), std::move(test)};
}

}  // namespace oodbound
