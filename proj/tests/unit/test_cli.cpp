#include <doctest.h>

#include <nlohmann/json.hpp>
#include <sstream>

#include "cli.hpp"
#include "oodbound/dataset.hpp"
#include "oodbound/detector.hpp"
#include "test_util.hpp"

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "oodbound");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = oodbound::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& p) {
  std::istringstream in(read_text(p));
  std::vector<nlohmann::json> rows;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) rows.push_back(nlohmann::json::parse(line));
  return rows;
}

// Small fixture shared by most cases.
struct Fixture {
  TempDir dir;
  std::filesystem::path train = dir.path() / "train.jsonl";
  std::filesystem::path test = dir.path() / "test.jsonl";

  Fixture(std::size_t classes = 4) {
    const auto r = invoke({"--quiet", "--seed", "3", "synth", "--classes", std::to_string(classes), "--dim", "8",
                           "--per-class", "10", "--sigma", "0.05", "--out-train", train.string(), "--out-test",
                           test.string()});
    REQUIRE(r.code == 0);
  }
  std::string p(const char* name) const { return (dir.path() / name).string(); }
};

}  // namespace

TEST_CASE("synth writes the requested shape") {
  Fixture fx;
  const auto rows = read_jsonl(fx.train);
  CHECK(rows.size() == 40);
  CHECK(rows.front()["vector"].size() == 8);
  CHECK(oodbound::load_dataset(fx.test).labels().size() == 4);
  // --seed is accepted after the subcommand too.
  CHECK(invoke({"--quiet", "synth", "--seed", "3", "--classes", "4", "--dim", "8", "--per-class", "10", "--sigma",
                "0.05", "--out-train", fx.p("again.jsonl"), "--out-test", fx.p("again_test.jsonl")})
            .code == 0);
  CHECK(read_text(fx.p("again.jsonl")) == read_text(fx.train));
  CHECK(invoke({"synth", "--classes", "1", "--out-train", fx.p("a.jsonl"), "--out-test", fx.p("b.jsonl")}).code == 1);
}

TEST_CASE("fit writes a loadable model and prints a summary") {
  Fixture fx;
  const auto r = invoke({"fit", "--train", fx.train.string(), "--out", fx.p("m.json"), "--epochs", "5"});
  CHECK(r.code == 0);
  CHECK(r.out.find("classes:     4") != std::string::npos);
  const auto model = oodbound::load_model(fx.p("m.json"));
  CHECK(model.labels.size() == 4);
  CHECK(model.metadata.train_config.epochs == 5);
}

TEST_CASE("fit usage and data errors") {
  Fixture fx;
  auto missing = invoke({"fit", "--out", fx.p("m.json")});
  CHECK(missing.code == 1);
  CHECK(missing.err.find("--train") != std::string::npos);
  CHECK(invoke({}).code == 1);
  CHECK(invoke({"fit", "--train", fx.train.string(), "--out", fx.p("m.json"), "--loss", "hinge"}).code == 1);

  write_text(fx.p("one.jsonl"), "{\"label\": \"a\", \"vector\": [1, 0]}\n{\"label\": \"a\", \"vector\": [0, 1]}\n");
  auto single = invoke({"fit", "--train", fx.p("one.jsonl"), "--out", fx.p("m.json")});
  CHECK(single.code == 2);
  CHECK(single.err.find("2 classes") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(fx.p("m.json")));
  CHECK(invoke({"fit", "--train", fx.p("nope.jsonl"), "--out", fx.p("m.json")}).code == 2);
}

TEST_CASE("predict labels one training probe per class") {
  Fixture fx;
  REQUIRE(invoke({"--quiet", "fit", "--train", fx.train.string(), "--out", fx.p("m.json"), "--epochs", "10"}).code == 0);
  const auto model = oodbound::load_model(fx.p("m.json"));
  const auto train = oodbound::load_dataset(fx.train);

  // One raw training vector per class as probe.
  std::string probes;
  std::vector<std::string> expected;
  for (const auto& label : train.labels()) {
    for (const auto& item : train.items()) {
      if (item.label != label) continue;
      nlohmann::ordered_json row;
      row["vector"] = std::vector<double>(item.vector.begin(), item.vector.end());
      probes += row.dump() + "\n";
      expected.push_back(label);
      break;
    }
  }
  write_text(fx.p("probe.jsonl"), probes);
  const auto r = invoke({"predict", "--model", fx.p("m.json"), "--input", fx.p("probe.jsonl"), "--out",
                         fx.p("pred.jsonl")});
  CHECK(r.code == 0);
  const auto rows = read_jsonl(fx.p("pred.jsonl"));
  REQUIRE(rows.size() == expected.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i]["label"] == expected[i]);
    CHECK(rows[i]["margin"].get<double>() >= 0.0);
    CHECK(rows[i].contains("nearest_label"));
    CHECK(rows[i].contains("distance"));
  }
}

TEST_CASE("predict error paths and empty input") {
  Fixture fx;
  REQUIRE(invoke({"--quiet", "fit", "--train", fx.train.string(), "--out", fx.p("m.json"), "--epochs", "2"}).code == 0);
  write_text(fx.p("short.jsonl"), "{\"vector\": [1, 2, 3]}\n");
  CHECK(invoke({"predict", "--model", fx.p("m.json"), "--input", fx.p("short.jsonl"), "--out", fx.p("o.jsonl")})
            .code == 2);

  write_text(fx.p("empty.jsonl"), "");
  const auto r = invoke({"predict", "--model", fx.p("m.json"), "--input", fx.p("empty.jsonl"), "--out",
                         fx.p("o.jsonl")});
  CHECK(r.code == 0);
  CHECK(read_text(fx.p("o.jsonl")).empty());

  auto text = read_text(fx.p("m.json"));
  text.replace(text.find("oodbound/1"), 10, "oodbound/2");
  write_text(fx.p("bad.json"), text);
  CHECK(invoke({"predict", "--model", fx.p("bad.json"), "--input", fx.p("empty.jsonl"), "--out", fx.p("o.jsonl")})
            .code == 2);
}

TEST_CASE("eval writes a report with spread fields and is reproducible") {
  Fixture fx;
  const std::vector<std::string> args{"--quiet", "eval", "--train", fx.train.string(), "--test", fx.test.string(),
                                      "--ratios", "0.5,1.0", "--runs", "2", "--epochs", "5"};
  auto a_args = args, b_args = args;
  a_args.insert(a_args.end(), {"--report", fx.p("a.json")});
  b_args.insert(b_args.end(), {"--report", fx.p("b.json")});
  CHECK(invoke(a_args).code == 0);
  CHECK(invoke(b_args).code == 0);
  CHECK(read_text(fx.p("a.json")) == read_text(fx.p("b.json")));

  const auto report = nlohmann::json::parse(read_text(fx.p("a.json")));
  REQUIRE(report["cells"].size() == 2);
  for (const auto& cell : report["cells"]) {
    CHECK(cell["accuracy"].contains("std"));
    CHECK(cell["f1_ood"].contains("mean"));
    CHECK(cell["per_run"].size() == 2);
  }
}

TEST_CASE("eval sweep and error paths") {
  Fixture two(2);
  CHECK(invoke({"eval", "--train", two.train.string(), "--test", two.test.string(), "--ratios", "0.25", "--runs",
                "1", "--report", two.p("r.json")})
            .code == 2);
  CHECK(invoke({"eval", "--train", two.train.string(), "--test", two.test.string(), "--ratios", "0", "--report",
                two.p("r.json")})
            .code == 1);

  Fixture fx;
  const auto r = invoke({"--quiet", "eval", "--train", fx.train.string(), "--test", fx.test.string(), "--ratios",
                         "0.5", "--runs", "1", "--epochs", "3", "--train-fraction", "0.5,1.0", "--report",
                         fx.p("s.csv")});
  CHECK(r.code == 0);
  std::istringstream csv(read_text(fx.p("s.csv")));
  std::string header;
  std::getline(csv, header);
  CHECK(header == "train_fraction,ratio,metric,mean,std,runs");
}

TEST_CASE("gradcheck exit codes") {
  const auto ok = invoke({"gradcheck", "--trials", "3"});
  CHECK(ok.code == 0);
  CHECK(ok.out.rfind("PASS", 0) == 0);
  const auto bad = invoke({"gradcheck", "--trials", "3", "--corrupt-gradient"});
  CHECK(bad.code == 3);
  CHECK(bad.out.rfind("FAIL", 0) == 0);
  CHECK(invoke({"gradcheck", "--trials", "0"}).code == 1);
}
