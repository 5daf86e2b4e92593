#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace oodbound {

/// Label reserved for out-of-domain items. Never a genuine class name.
inline constexpr std::string_view kOodLabel = "__ood__";

struct LabeledEmbedding {
  Eigen::VectorXd vector;
  std::string label;
  std::optional<std::string> text;
};

/// An immutable, validated collection of embeddings sharing one dimension.
///
/// `labels()` holds the distinct non-OOD class names in lexicographic order;
/// a label's position in that list is its class index everywhere else in the
/// library.
class Dataset {
public:
  /// Validates items (finite, equal dimension) and derives the label set.
  /// `dim` is only consulted when `items` is empty.
  Dataset(std::vector<LabeledEmbedding> items, std::size_t dim = 0);

  const std::vector<LabeledEmbedding>& items() const noexcept { return items_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return items_.size(); }
  bool empty() const noexcept { return items_.empty(); }

  /// Index of `label` in labels(), or nullopt (also for the OOD label).
  std::optional<std::size_t> class_index(std::string_view label) const;
  std::size_t ood_count() const;

  /// SHA-256 over labels and the exact bit patterns of every vector, hex encoded.
  std::string fingerprint() const;

private:
  std::vector<LabeledEmbedding> items_;
  std::vector<std::string> labels_;
  std::size_t dim_ = 0;
};

enum class FileFormat { Jsonl, Csv };

/// Picks the format from the file extension: `.csv` is CSV, anything else JSONL.
FileFormat format_from_path(const std::filesystem::path& path);

struct LoadOptions {
  /// Whether rows may carry the reserved OOD label (test files may, train files may not).
  bool allow_ood = false;
  /// Whether rows without a label are accepted (prediction inputs); they get an empty label.
  bool require_label = true;
  /// Whether an empty file is accepted.
  bool allow_empty = false;
};

Dataset load_dataset(const std::filesystem::path& path, FileFormat format,
                     const LoadOptions& options = {});
Dataset load_dataset(const std::filesystem::path& path, const LoadOptions& options = {});

/// Writes one JSONL row per item in the data contract's exact key order.
void write_jsonl(const Dataset& data, const std::filesystem::path& path);
void write_csv(const Dataset& data, const std::filesystem::path& path);

struct SplitSpec {
  double known_ratio = 1.0;
  std::uint64_t seed = 0;
  std::uint64_t run_index = 0;
};

struct SplitResult {
  std::vector<std::string> known_labels;  // sorted
  Dataset train;
  Dataset test;
};

/// ceil(ratio * label_count), robust to representation error in `ratio`.
std::size_t known_class_count(double ratio, std::size_t label_count);

/// Samples the known classes for one protocol run and rewrites unknown test
/// labels to the OOD label. Unknown-class training items are dropped.
SplitResult make_split(const Dataset& train, const Dataset& test, const SplitSpec& spec);

/// Stratified subsample keeping round(fraction * n_c) items per class, at least one.
/// Item order is preserved. fraction == 1 returns the input unchanged.
Dataset subsample_stratified(const Dataset& data, double fraction, std::uint64_t seed);

struct BlobSpec {
  std::size_t classes = 2;
  std::size_t dim = 2;
  std::size_t per_class = 2;
  double sigma = 0.05;
  std::uint64_t seed = 0;
  /// Minimum angle between any two cluster centers, radians.
  double min_angle = 1.0471975511965976;  // 60 degrees
};

/// Gaussian clusters around unit-norm centers. Train and test each hold
/// `per_class` items per class, grouped by class.
std::pair<Dataset, Dataset> synth_blobs(const BlobSpec& spec);

}  // namespace oodbound
