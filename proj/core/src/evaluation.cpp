#include "oodbound/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "detail.hpp"
#include "oodbound/detector.hpp"
#include "oodbound/error.hpp"

namespace oodbound {

namespace {

double f1_of(double precision, double recall) {
  return precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

double average_counted(const std::vector<ClassScore>& scores, std::size_t first, std::size_t last) {
  double sum = 0.0;
  std::size_t n = 0;
  for (auto i = first; i < last; ++i) {
    if (!scores[i].counted) continue;
    sum += scores[i].f1;
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

}  // namespace

Metrics confusion_and_f1(std::span<const std::string> predictions,
                         std::span<const std::string> gold,
                         std::span<const std::string> label_set) {
  if (predictions.size() != gold.size()) {
    throw DataError("confusion_and_f1: " + std::to_string(predictions.size()) +
                    " predictions for " + std::to_string(gold.size()) + " gold labels");
  }
  if (gold.empty()) throw DataError("confusion_and_f1: empty input");

  std::vector<std::string> classes;
  for (const auto& l : label_set) {
    if (l != kOodLabel) classes.push_back(l);
  }
  classes.emplace_back(kOodLabel);
  std::map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (!index.emplace(classes[i], i).second) {
      throw DataError("confusion_and_f1: duplicate label '" + classes[i] + "'");
    }
  }
  auto lookup = [&](const std::string& l) {
    auto it = index.find(l);
    if (it == index.end()) throw DataError("confusion_and_f1: label '" + l + "' is not in the label set");
    return it->second;
  };

  const auto k = classes.size();
  std::vector<std::size_t> tp(k, 0), gold_n(k, 0), pred_n(k, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto g = lookup(gold[i]);
    const auto p = lookup(predictions[i]);
    ++gold_n[g];
    ++pred_n[p];
    if (g == p) {
      ++tp[g];
      ++correct;
    }
  }

  Metrics m;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(gold.size());
  for (std::size_t c = 0; c < k; ++c) {
    ClassScore s;
    s.label = classes[c];
    s.gold = gold_n[c];
    s.predicted = pred_n[c];
    s.counted = gold_n[c] > 0 || pred_n[c] > 0;
    s.precision = pred_n[c] == 0 ? 0.0 : static_cast<double>(tp[c]) / static_cast<double>(pred_n[c]);
    s.recall = gold_n[c] == 0 ? 0.0 : static_cast<double>(tp[c]) / static_cast<double>(gold_n[c]);
    s.f1 = f1_of(s.precision, s.recall);
    m.per_class.push_back(std::move(s));
  }
  m.macro_f1 = average_counted(m.per_class, 0, k);
  m.f1_ind = average_counted(m.per_class, 0, k - 1);
  m.f1_ood = m.per_class.back().f1;
  return m;
}

void RunConfig::validate() const {
  if (runs < 1) throw DataError("runs must be at least 1");
  if (ratios.empty()) throw DataError("at least one known ratio is required");
  for (double r : ratios) {
    if (!(r > 0.0 && r <= 1.0)) throw DataError("known ratios must lie in (0, 1]");
  }
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw DataError("train fraction must lie in (0, 1]");
  }
}

Summary summarize(std::span<const double> values) {
  Summary s;
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return s;
}

namespace {

RunMetrics run_cell(const Dataset& train, const Dataset& test, double ratio, std::size_t run,
                    const RunConfig& rc, const TrainConfig& tc, const BoundaryParams& bp) {
  auto split = make_split(train, test, SplitSpec{ratio, rc.seed, run});
  auto sub_rng = detail::keyed_rng(rc.seed, std::uint64_t{run}, std::uint64_t{7});
  auto fitted_on = subsample_stratified(split.train, rc.train_fraction, sub_rng());

  TrainConfig cfg = tc;
  auto cfg_rng = detail::keyed_rng(tc.seed, rc.seed, std::uint64_t{run});
  cfg.seed = cfg_rng();
  const auto model = fit(fitted_on, cfg, bp);

  std::vector<Eigen::VectorXd> xs;
  std::vector<std::string> gold;
  xs.reserve(split.test.size());
  for (const auto& item : split.test.items()) {
    xs.push_back(item.vector);
    gold.push_back(item.label);
  }
  std::vector<std::string> predicted;
  for (auto& p : predict_batch(model, xs)) predicted.push_back(std::move(p.label));

  RunMetrics out;
  out.run_index = run;
  out.known_labels = split.known_labels;
  if (gold.empty()) throw DataError("test set is empty");
  out.metrics = confusion_and_f1(predicted, gold, split.known_labels);
  return out;
}

MetricsReport aggregate(double ratio, double fraction, std::vector<RunMetrics> runs) {
  MetricsReport r;
  r.ratio = ratio;
  r.train_fraction = fraction;
  std::vector<double> acc, macro, ood, ind;
  for (const auto& run : runs) {
    acc.push_back(run.metrics.accuracy);
    macro.push_back(run.metrics.macro_f1);
    ood.push_back(run.metrics.f1_ood);
    ind.push_back(run.metrics.f1_ind);
  }
  r.accuracy = summarize(acc);
  r.macro_f1 = summarize(macro);
  r.f1_ood = summarize(ood);
  r.f1_ind = summarize(ind);
  r.per_run = std::move(runs);
  return r;
}

}  // namespace

EvaluationReport run_protocol(const Dataset& train, const Dataset& test, const RunConfig& run_config,
                              const TrainConfig& train_config,
                              const BoundaryParams& boundary_params) {
  run_config.validate();
  train_config.validate();
  boundary_params.validate();
  for (double r : run_config.ratios) {
    if (known_class_count(r, train.labels().size()) < 2) {
      throw DataError("known ratio " + std::to_string(r) + " leaves fewer than 2 known classes out of " +
                      std::to_string(train.labels().size()));
    }
  }

  const auto n_ratios = run_config.ratios.size();
  const auto n_cells = n_ratios * run_config.runs;
  std::vector<RunMetrics> results(n_cells);
  std::vector<std::exception_ptr> errors(n_cells);
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (auto cell = next.fetch_add(1); cell < n_cells; cell = next.fetch_add(1)) {
      const auto ratio = run_config.ratios[cell / run_config.runs];
      const auto run = cell % run_config.runs;
      try {
        results[cell] = run_cell(train, test, ratio, run, run_config, train_config, boundary_params);
      } catch (...) {
        errors[cell] = std::current_exception();
      }
    }
  };

  auto threads = run_config.threads == 0 ? std::max(1u, std::thread::hardware_concurrency())
                                         : run_config.threads;
  threads = std::min<std::size_t>(threads, n_cells);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  EvaluationReport report;
  report.run_config = run_config;
  report.train_config = train_config;
  report.boundary_params = boundary_params;
  for (std::size_t i = 0; i < n_ratios; ++i) {
    std::vector<RunMetrics> runs(results.begin() + static_cast<std::ptrdiff_t>(i * run_config.runs),
                                 results.begin() + static_cast<std::ptrdiff_t>((i + 1) * run_config.runs));
    report.cells.push_back(aggregate(run_config.ratios[i], run_config.train_fraction, std::move(runs)));
  }
  return report;
}

std::vector<std::pair<double, EvaluationReport>> train_size_sweep(
    std::span<const double> fractions, const Dataset& train, const Dataset& test,
    const RunConfig& run_config, const TrainConfig& train_config,
    const BoundaryParams& boundary_params) {
  if (fractions.empty()) throw DataError("train_size_sweep: no fractions given");
  if (!std::is_sorted(fractions.begin(), fractions.end())) {
    throw DataError("train_size_sweep: fractions must be sorted ascending");
  }
  std::vector<std::pair<double, EvaluationReport>> out;
  for (double f : fractions) {
    RunConfig rc = run_config;
    rc.train_fraction = f;
    out.emplace_back(f, run_protocol(train, test, rc, train_config, boundary_params));
  }
  return out;
}

EvaluationReport merge_sweep(const std::vector<std::pair<double, EvaluationReport>>& sweep) {
  if (sweep.empty()) throw DataError("merge_sweep: empty sweep");
  EvaluationReport merged = sweep.front().second;
  merged.cells.clear();
  for (const auto& [fraction, report] : sweep) {
    merged.cells.insert(merged.cells.end(), report.cells.begin(), report.cells.end());
  }
  return merged;
}

ReportFormat report_format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".csv") return ReportFormat::Csv;
  if (ext == ".md" || ext == ".markdown") return ReportFormat::Markdown;
  return ReportFormat::Json;
}

namespace {

using ojson = nlohmann::ordered_json;

ojson summary_json(const Summary& s) { return {{"mean", s.mean}, {"std", s.std}}; }

Summary summary_from(const nlohmann::json& j) {
  return {j.at("mean").get<double>(), j.at("std").get<double>()};
}

bool multiple_fractions(const EvaluationReport& report) {
  return std::any_of(report.cells.begin(), report.cells.end(), [&](const MetricsReport& c) {
    return c.train_fraction != report.cells.front().train_fraction;
  });
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_pct(const Summary& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", 100.0 * s.mean, 100.0 * s.std);
  return buf;
}

}  // namespace

std::string report_to_json(const EvaluationReport& report) {
  const auto& rc = report.run_config;
  const auto& tc = report.train_config;
  const auto& bp = report.boundary_params;
  ojson doc;
  doc["schema"] = kReportSchema;
  doc["ood_policy"] = "native OOD test rows merged with relabelled unknown-class test rows";
  doc["run_config"] = {{"ratios", rc.ratios},
                       {"runs", rc.runs},
                       {"seed", rc.seed},
                       {"train_fraction", rc.train_fraction}};
  doc["train_config"] = {{"loss", std::string(to_string(tc.loss))},
                         {"dim_out", tc.dim_out},
                         {"learning_rate", tc.learning_rate},
                         {"epochs", tc.epochs},
                         {"batch_size", tc.batch_size},
                         {"seed", tc.seed},
                         {"lmcl_scale", tc.lmcl_scale},
                         {"lmcl_margin", tc.lmcl_margin},
                         {"triplet_margin", tc.triplet_margin},
                         {"adam_beta1", tc.adam_beta1},
                         {"adam_beta2", tc.adam_beta2},
                         {"adam_epsilon", tc.adam_epsilon}};
  doc["boundary_params"] = {{"step", bp.step},
                            {"max_iter", bp.max_iter},
                            {"beta_override", bp.beta_override ? ojson(*bp.beta_override) : ojson(nullptr)}};
  ojson cells = ojson::array();
  for (const auto& cell : report.cells) {
    ojson runs = ojson::array();
    for (const auto& run : cell.per_run) {
      ojson per_class = ojson::array();
      for (const auto& s : run.metrics.per_class) {
        per_class.push_back({{"label", s.label},
                             {"precision", s.precision},
                             {"recall", s.recall},
                             {"f1", s.f1},
                             {"gold", s.gold},
                             {"predicted", s.predicted},
                             {"counted", s.counted}});
      }
      runs.push_back({{"run_index", run.run_index},
                      {"known_labels", run.known_labels},
                      {"accuracy", run.metrics.accuracy},
                      {"macro_f1", run.metrics.macro_f1},
                      {"f1_ood", run.metrics.f1_ood},
                      {"f1_ind", run.metrics.f1_ind},
                      {"per_class", std::move(per_class)}});
    }
    cells.push_back({{"ratio", cell.ratio},
                     {"train_fraction", cell.train_fraction},
                     {"accuracy", summary_json(cell.accuracy)},
                     {"macro_f1", summary_json(cell.macro_f1)},
                     {"f1_ood", summary_json(cell.f1_ood)},
                     {"f1_ind", summary_json(cell.f1_ind)},
                     {"per_run", std::move(runs)}});
  }
  doc["cells"] = std::move(cells);
  return doc.dump(1) + "\n";
}

EvaluationReport report_from_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("corrupt report: ") + e.what());
  }
  try {
    if (doc.at("schema").get<std::string>() != kReportSchema) {
      throw DataError("unsupported report schema");
    }
    EvaluationReport r;
    const auto& rc = doc.at("run_config");
    r.run_config.ratios = rc.at("ratios").get<std::vector<double>>();
    r.run_config.runs = rc.at("runs").get<std::size_t>();
    r.run_config.seed = rc.at("seed").get<std::uint64_t>();
    r.run_config.train_fraction = rc.at("train_fraction").get<double>();
    const auto& tc = doc.at("train_config");
    auto& t = r.train_config;
    t.loss = loss_from_string(tc.at("loss").get<std::string>());
    t.dim_out = tc.at("dim_out").get<std::size_t>();
    t.learning_rate = tc.at("learning_rate").get<double>();
    t.epochs = tc.at("epochs").get<std::size_t>();
    t.batch_size = tc.at("batch_size").get<std::size_t>();
    t.seed = tc.at("seed").get<std::uint64_t>();
    t.lmcl_scale = tc.at("lmcl_scale").get<double>();
    t.lmcl_margin = tc.at("lmcl_margin").get<double>();
    t.triplet_margin = tc.at("triplet_margin").get<double>();
    t.adam_beta1 = tc.at("adam_beta1").get<double>();
    t.adam_beta2 = tc.at("adam_beta2").get<double>();
    t.adam_epsilon = tc.at("adam_epsilon").get<double>();
    const auto& bp = doc.at("boundary_params");
    r.boundary_params.step = bp.at("step").get<double>();
    r.boundary_params.max_iter = bp.at("max_iter").get<std::size_t>();
    if (!bp.at("beta_override").is_null()) r.boundary_params.beta_override = bp.at("beta_override").get<double>();
    for (const auto& c : doc.at("cells")) {
      MetricsReport cell;
      cell.ratio = c.at("ratio").get<double>();
      cell.train_fraction = c.at("train_fraction").get<double>();
      cell.accuracy = summary_from(c.at("accuracy"));
      cell.macro_f1 = summary_from(c.at("macro_f1"));
      cell.f1_ood = summary_from(c.at("f1_ood"));
      cell.f1_ind = summary_from(c.at("f1_ind"));
      for (const auto& run : c.at("per_run")) {
        RunMetrics rm;
        rm.run_index = run.at("run_index").get<std::size_t>();
        rm.known_labels = run.at("known_labels").get<std::vector<std::string>>();
        rm.metrics.accuracy = run.at("accuracy").get<double>();
        rm.metrics.macro_f1 = run.at("macro_f1").get<double>();
        rm.metrics.f1_ood = run.at("f1_ood").get<double>();
        rm.metrics.f1_ind = run.at("f1_ind").get<double>();
        for (const auto& s : run.at("per_class")) {
          ClassScore cs;
          cs.label = s.at("label").get<std::string>();
          cs.precision = s.at("precision").get<double>();
          cs.recall = s.at("recall").get<double>();
          cs.f1 = s.at("f1").get<double>();
          cs.gold = s.at("gold").get<std::size_t>();
          cs.predicted = s.at("predicted").get<std::size_t>();
          cs.counted = s.at("counted").get<bool>();
          rm.metrics.per_class.push_back(std::move(cs));
        }
        cell.per_run.push_back(std::move(rm));
      }
      r.cells.push_back(std::move(cell));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

std::string report_to_csv(const EvaluationReport& report) {
  const bool sweep = multiple_fractions(report);
  std::ostringstream out;
  if (sweep) out << "train_fraction,";
  out << "ratio,metric,mean,std,runs\n";
  for (const auto& cell : report.cells) {
    const std::pair<const char*, const Summary*> rows[] = {{"accuracy", &cell.accuracy},
                                                           {"macro_f1", &cell.macro_f1},
                                                           {"f1_ood", &cell.f1_ood},
                                                           {"f1_ind", &cell.f1_ind}};
    for (const auto& [name, s] : rows) {
      if (sweep) out << fmt_double(cell.train_fraction) << ',';
      out << fmt_double(cell.ratio) << ',' << name << ',' << fmt_double(s->mean) << ','
          << fmt_double(s->std) << ',' << cell.per_run.size() << '\n';
    }
  }
  return out.str();
}

std::string report_to_markdown(const EvaluationReport& report) {
  const bool sweep = multiple_fractions(report);
  std::ostringstream out;
  out << '|' << (sweep ? " Train fraction |" : "")
      << " Known ratio | Accuracy | Macro-F1 | F1(OOD) | F1(IND) | Runs |\n";
  out << '|' << (sweep ? "---|" : "") << "---|---|---|---|---|---|\n";
  for (const auto& cell : report.cells) {
    char head[64];
    out << '|';
    if (sweep) {
      std::snprintf(head, sizeof head, " %g |", cell.train_fraction);
      out << head;
    }
    std::snprintf(head, sizeof head, " %g%% |", 100.0 * cell.ratio);
    out << head << ' ' << fmt_pct(cell.accuracy) << " | " << fmt_pct(cell.macro_f1) << " | "
        << fmt_pct(cell.f1_ood) << " | " << fmt_pct(cell.f1_ind) << " | " << cell.per_run.size()
        << " |\n";
  }
  return out.str();
}

void emit_report(const EvaluationReport& report, const std::filesystem::path& path,
                 ReportFormat format) {
  std::string text;
  switch (format) {
    case ReportFormat::Json: text = report_to_json(report); break;
    case ReportFormat::Csv: text = report_to_csv(report); break;
    case ReportFormat::Markdown: text = report_to_markdown(report); break;
  }
  detail::write_atomically(path, [&](std::ostream& out) { out << text; });
}

}  // namespace oodbound
