#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "oodbound/dataset.hpp"
#include "oodbound/error.hpp"
#include "test_util.hpp"

using namespace oodbound;

TEST_CASE("load_dataset reads JSONL rows in file order") {
  TempDir dir;
  const auto path = dir.path() / "two.jsonl";
  write_text(path,
             "{\"label\": \"a\", \"vector\": [1, 2, 3, 4], \"text\": \"hello\"}\n"
             "{\"label\": \"b\", \"vector\": [0.5, -1e-3, 2.5e2, 0]}\n");
  const auto d = load_dataset(path);
  CHECK(d.size() == 2);
  CHECK(d.dim() == 4);
  CHECK(d.items()[0].label == "a");
  CHECK(d.items()[0].text == std::optional<std::string>("hello"));
  CHECK(d.items()[1].vector[2] == 250.0);
  CHECK(d.labels() == std::vector<std::string>{"a", "b"});
}

TEST_CASE("load_dataset reads the CSV layout") {
  TempDir dir;
  const auto path = dir.path() / "rows.csv";
  write_text(path, "label,v0,v1,v2\nx,1,2,3\ny,4,5,6\nx,-1,0,1e-2\n");
  const auto d = load_dataset(path);
  CHECK(d.size() == 3);
  CHECK(d.dim() == 3);
  CHECK(d.items()[2].vector[2] == doctest::Approx(0.01));
  CHECK(d.labels().size() == 2);
}

TEST_CASE("load_dataset error paths") {
  TempDir dir;
  auto expect_error = [&](const std::string& name, const std::string& body, const std::string& needle,
                          LoadOptions opts = {}) {
    const auto path = dir.path() / name;
    write_text(path, body);
    try {
      load_dataset(path, opts);
      FAIL("expected DataError for " << name);
    } catch (const DataError& e) {
      CHECK_MESSAGE(std::string(e.what()).find(needle) != std::string::npos, e.what());
    }
  };
  expect_error("bad.jsonl", "{\"label\": \"a\", \"vector\": [1, 2]}\n{oops\n", ":2:");
  expect_error("dims.jsonl", "{\"label\": \"a\", \"vector\": [1, 2]}\n{\"label\": \"b\", \"vector\": [1]}\n",
               "dimension mismatch");
  expect_error("empty.jsonl", "", "empty file");
  expect_error("inf.jsonl", "{\"label\": \"a\", \"vector\": [1e400, 2]}\n", "non-finite");
  expect_error("inf.csv", "label,v0,v1\na,inf,2\n", "non-finite");
  expect_error("ood.jsonl", "{\"label\": \"__ood__\", \"vector\": [1, 2]}\n", "reserved label");
  expect_error("hdr.csv", "name,v0\n", "header");
  expect_error("nolabel.jsonl", "{\"vector\": [1, 2]}\n", "missing 'label'");

  // The reserved label is fine in test files.
  LoadOptions test_opts;
  test_opts.allow_ood = true;
  const auto path = dir.path() / "test.jsonl";
  write_text(path, "{\"label\": \"__ood__\", \"vector\": [1, 2]}\n{\"label\": \"a\", \"vector\": [1, 3]}\n");
  const auto d = load_dataset(path, test_opts);
  CHECK(d.ood_count() == 1);
  CHECK(d.labels() == std::vector<std::string>{"a"});
}

TEST_CASE("JSONL writer emits the contract's key order and round-trips bit-exactly") {
  TempDir dir;
  auto [train, test] = synth_blobs({.classes = 3, .dim = 5, .per_class = 4, .sigma = 0.3, .seed = 9});
  const auto path = dir.path() / "out.jsonl";
  write_jsonl(train, path);
  const auto first_line = read_text(path).substr(0, 20);
  CHECK(first_line.rfind("{\"label\":\"c0\",\"vect", 0) == 0);
  const auto back = load_dataset(path);
  CHECK(back.fingerprint() == train.fingerprint());

  const auto csv = dir.path() / "out.csv";
  write_csv(test, csv);
  CHECK(load_dataset(csv).fingerprint() == test.fingerprint());
}

TEST_CASE("known class count uses the ceiling rule") {
  CHECK(known_class_count(0.25, 150) == 38);
  CHECK(known_class_count(0.5, 150) == 75);
  CHECK(known_class_count(0.75, 150) == 113);
  CHECK(known_class_count(0.25, 77) == 20);
  CHECK(known_class_count(0.1, 30) == 3);

  // Enumeration: the smallest integer k with k >= r * L, found by counting up.
  for (double r : {0.25, 0.5, 0.75}) {
    for (std::size_t labels = 2; labels <= 200; ++labels) {
      std::size_t k = 0;
      while (static_cast<double>(k) < r * static_cast<double>(labels)) ++k;
      REQUIRE(known_class_count(r, labels) == k);
    }
  }
}

namespace {

std::pair<Dataset, Dataset> labelled_fixture(std::size_t classes, std::size_t per_class) {
  auto [train, test] = synth_blobs({.classes = classes, .dim = 8, .per_class = per_class, .sigma = 0.1,
                                    .seed = 3, .min_angle = 0.3});
  return {std::move(train), std::move(test)};
}

}  // namespace

TEST_CASE("make_split keeps known classes, relabels unknown test items") {
  auto [train, test] = labelled_fixture(12, 3);
  const auto split = make_split(train, test, {0.25, 11, 0});
  CHECK(split.known_labels.size() == 3);
  CHECK(split.train.ood_count() == 0);
  CHECK(split.test.size() == test.size());
  std::set<std::string> known(split.known_labels.begin(), split.known_labels.end());
  for (const auto& item : split.train.items()) CHECK(known.count(item.label) == 1);
  CHECK(split.train.size() == 3 * 3);
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& before = test.items()[i];
    const auto& after = split.test.items()[i];
    // Only labels change; vectors and order are untouched.
    CHECK((after.vector.array() == before.vector.array()).all());
    if (known.count(before.label)) CHECK(after.label == before.label);
    else CHECK(after.label == kOodLabel);
  }
}

TEST_CASE("make_split is a deterministic function of (seed, run_index)") {
  auto [train, test] = labelled_fixture(20, 2);
  const auto a = make_split(train, test, {0.5, 4, 2});
  const auto b = make_split(train, test, {0.5, 4, 2});
  CHECK(a.known_labels == b.known_labels);
  CHECK(a.train.fingerprint() == b.train.fingerprint());
  CHECK(a.test.fingerprint() == b.test.fingerprint());

  // Different runs draw different known sets (with overwhelming probability).
  std::set<std::vector<std::string>> seen;
  for (std::uint64_t run = 0; run < 5; ++run) seen.insert(make_split(train, test, {0.5, 4, run}).known_labels);
  CHECK(seen.size() > 1);
}

TEST_CASE("make_split ratio 1.0 keeps every class and only native OOD rows") {
  auto [train, test] = labelled_fixture(4, 3);
  auto items = test.items();
  items[0].label = std::string(kOodLabel);
  items[5].label = std::string(kOodLabel);
  Dataset with_ood(std::move(items));
  const auto split = make_split(train, with_ood, {1.0, 0, 0});
  CHECK(split.known_labels == train.labels());
  CHECK(split.test.ood_count() == 2);
  CHECK(split.train.size() == train.size());
}

TEST_CASE("make_split guards") {
  auto [train, test] = labelled_fixture(2, 3);
  CHECK_THROWS_AS(make_split(train, test, {0.25, 0, 0}), DataError);
  CHECK_THROWS_AS(make_split(train, test, {0.0, 0, 0}), DataError);
  CHECK_NOTHROW(make_split(train, test, {1.0, 0, 0}));

  auto [other, other_test] = synth_blobs({.classes = 2, .dim = 3, .per_class = 2, .sigma = 0.1, .seed = 0});
  CHECK_THROWS_AS(make_split(train, other_test, {1.0, 0, 0}), DataError);
}

TEST_CASE("subsample_stratified keeps at least one item per class") {
  auto [train, test] = labelled_fixture(5, 10);
  const auto half = subsample_stratified(train, 0.5, 1);
  CHECK(half.size() == 25);
  CHECK(half.labels() == train.labels());
  const auto tiny = subsample_stratified(train, 0.01, 1);
  CHECK(tiny.size() == 5);
  CHECK(subsample_stratified(train, 1.0, 1).fingerprint() == train.fingerprint());
  CHECK(subsample_stratified(train, 0.3, 8).fingerprint() == subsample_stratified(train, 0.3, 8).fingerprint());
}

TEST_CASE("synth_blobs shapes and degenerate spread") {
  auto [train, test] = synth_blobs({.classes = 2, .dim = 4, .per_class = 10, .sigma = 0.2, .seed = 1});
  CHECK(train.size() == 20);
  CHECK(test.size() == 20);
  CHECK(train.labels().size() == 2);

  auto [flat, flat_test] = synth_blobs({.classes = 3, .dim = 4, .per_class = 5, .sigma = 0.0, .seed = 2});
  for (std::size_t i = 0; i < flat.size(); ++i) {
    for (std::size_t j = 0; j < flat.size(); ++j) {
      if (flat.items()[i].label == flat.items()[j].label) {
        CHECK((flat.items()[i].vector - flat.items()[j].vector).norm() == 0.0);
      }
    }
    CHECK(std::abs(flat.items()[i].vector.norm() - 1.0) < 1e-12);
  }

  auto [again, again_test] = synth_blobs({.classes = 2, .dim = 4, .per_class = 10, .sigma = 0.2, .seed = 1});
  CHECK(again.fingerprint() == train.fingerprint());
  CHECK(again_test.fingerprint() == test.fingerprint());
}

TEST_CASE("synth_blobs separates centers by far more than the noise") {
  const double sigma = 0.05;
  auto [train, test] = synth_blobs({.classes = 8, .dim = 32, .per_class = 50, .sigma = 0.0, .seed = 5});
  std::vector<Eigen::VectorXd> centers;
  for (std::size_t c = 0; c < 8; ++c) centers.push_back(train.items()[c * 50].vector);
  double min_dist = 1e9;
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = i + 1; j < 8; ++j) min_dist = std::min(min_dist, (centers[i] - centers[j]).norm());
  CHECK(min_dist > 10 * sigma);
}

TEST_CASE("synth_blobs gives up when the dimension cannot host the classes") {
  CHECK_THROWS_AS(synth_blobs({.classes = 8, .dim = 2, .per_class = 2, .sigma = 0.1, .seed = 0}), DataError);
  CHECK_THROWS_AS(synth_blobs({.classes = 1, .dim = 2, .per_class = 2, .sigma = 0.1, .seed = 0}), DataError);
}

TEST_CASE("Dataset rejects non-finite vectors and mixed dimensions") {
  std::vector<LabeledEmbedding> items{{Eigen::Vector2d(1, 2), "a", {}}, {Eigen::Vector3d(1, 2, 3), "b", {}}};
  CHECK_THROWS_AS(Dataset(items, 0), DataError);
  std::vector<LabeledEmbedding> nan{{Eigen::Vector2d(1, std::nan("")), "a", {}}};
  CHECK_THROWS_AS(Dataset(nan, 0), DataError);
}
