#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "oodbound/oodbound.hpp"

namespace oodbound::cli {

namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GlobalOptions {
  std::uint64_t seed = 0;
  bool quiet = false;
  std::size_t threads = 0;
};

// Hyperparameters shared by `fit` and `eval`.
struct ModelOptions {
  std::string loss = "lmcl";
  std::size_t dim_out = 0;
  std::size_t epochs = 30;
  std::size_t batch = 64;
  double lr = 1e-3;
  double scale = 64.0;
  std::optional<double> margin;
  double step = 0.001;
  std::size_t max_iter = 2000;
  std::optional<double> beta;

  void attach(CLI::App& app) {
    app.add_option("--loss", loss, "Metric-learning objective")
        ->check(CLI::IsMember({"lmcl", "triplet"}))
        ->capture_default_str();
    app.add_option("--dim-out", dim_out, "Projection output dimension (0 = input dimension)")
        ->capture_default_str();
    app.add_option("--epochs", epochs, "Training epochs")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--batch", batch, "Mini-batch size")->check(CLI::Range(2, 1 << 30))->capture_default_str();
    app.add_option("--lr", lr, "Adam learning rate")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--scale", scale, "LMCL scale s")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--margin", margin, "LMCL margin m (default 0.35) or triplet margin (default 1.0)")
        ->check(CLI::NonNegativeNumber);
    app.add_option("--step", step, "Radius search step")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--max-iter", max_iter, "Radius search iteration limit")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_option("--beta", beta, "Global override of the per-class imbalance weight")
        ->check(CLI::PositiveNumber);
  }

  TrainConfig train_config(std::uint64_t seed) const {
    TrainConfig c;
    c.loss = loss_from_string(loss);
    c.dim_out = dim_out;
    c.epochs = epochs;
    c.batch_size = batch;
    c.learning_rate = lr;
    c.lmcl_scale = scale;
    c.seed = seed;
    if (margin) {
      if (c.loss == LossKind::Lmcl) c.lmcl_margin = *margin;
      else c.triplet_margin = *margin;
    }
    c.validate();
    return c;
  }

  BoundaryParams boundary_params() const {
    BoundaryParams p;
    p.step = step;
    p.max_iter = max_iter;
    p.beta_override = beta;
    p.validate();
    return p;
  }
};

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

int cmd_fit(const GlobalOptions& g, const ModelOptions& m, const fs::path& train_path,
            const fs::path& out_path, std::ostream& out) {
  const auto train_config = m.train_config(g.seed);
  const auto boundary = m.boundary_params();
  const auto train = load_dataset(train_path);
  if (train.labels().size() < 2) {
    throw DataError("training data has " + std::to_string(train.labels().size()) +
                    " class(es); at least 2 classes are required");
  }
  const auto model = fit(train, train_config, boundary);
  save_model(model, out_path);

  if (!g.quiet) {
    auto [lo, hi] = std::minmax_element(model.geometry.begin(), model.geometry.end(),
                                        [](const auto& a, const auto& b) { return a.radius < b.radius; });
    out << "classes:     " << model.labels.size() << '\n'
        << "dimensions:  " << model.projection.dim_in() << " -> " << model.projection.dim_out() << '\n'
        << "radii:       [" << fixed(lo->radius) << ", " << fixed(hi->radius) << "]\n"
        << "final loss:  " << fixed(model.metadata.final_loss, 6) << '\n';
    if (!model.metadata.unconverged.empty()) {
      out << "warning:     " << model.metadata.unconverged.size()
          << " class radius search(es) hit the iteration limit\n";
    }
    out << "model:       " << out_path.string() << '\n';
  }
  return kOk;
}

int cmd_predict(const GlobalOptions& g, const fs::path& model_path, const fs::path& input_path,
                const fs::path& out_path, std::ostream& out) {
  const auto model = load_model(model_path);
  LoadOptions opts;
  opts.allow_ood = true;
  opts.require_label = false;
  opts.allow_empty = true;
  const auto input = load_dataset(input_path, opts);
  if (!input.empty() && input.dim() != model.dim_in()) {
    throw DataError("input dimension " + std::to_string(input.dim()) + " does not match model dimension " +
                    std::to_string(model.dim_in()));
  }
  std::vector<Eigen::VectorXd> xs;
  xs.reserve(input.size());
  for (const auto& item : input.items()) xs.push_back(item.vector);
  const auto predictions = predict_batch(model, xs);

  std::string text;
  for (const auto& p : predictions) {
    nlohmann::ordered_json row;
    row["label"] = p.label;
    row["nearest_label"] = p.nearest_label;
    row["distance"] = p.distance;
    row["margin"] = p.margin;
    text += row.dump();
    text += '\n';
  }
  write_text_atomically(out_path, text);

  if (!g.quiet) {
    const auto ood = std::count_if(predictions.begin(), predictions.end(),
                                   [](const auto& p) { return p.label == kOodLabel; });
    out << predictions.size() << " predictions (" << ood << " out-of-domain) -> " << out_path.string()
        << '\n';
  }
  return kOk;
}

int cmd_eval(const GlobalOptions& g, const ModelOptions& m, const fs::path& train_path,
             const fs::path& test_path, const std::vector<double>& ratios, std::size_t runs,
             std::vector<double> fractions, const fs::path& report_path, std::ostream& out) {
  const auto train_config = m.train_config(g.seed);
  const auto boundary = m.boundary_params();
  RunConfig rc;
  rc.ratios = ratios;
  rc.runs = runs;
  rc.seed = g.seed;
  rc.threads = g.threads;
  for (double r : ratios) {
    if (!(r > 0.0 && r <= 1.0)) throw UsageError("--ratios values must lie in (0, 1]");
  }
  if (fractions.empty()) fractions.push_back(1.0);
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw UsageError("--train-fraction values must lie in (0, 1]");
  }
  std::sort(fractions.begin(), fractions.end());
  rc.train_fraction = fractions.front();
  rc.validate();

  const auto train = load_dataset(train_path);
  LoadOptions test_opts;
  test_opts.allow_ood = true;
  const auto test = load_dataset(test_path, test_opts);

  EvaluationReport report;
  if (fractions.size() == 1) {
    report = run_protocol(train, test, rc, train_config, boundary);
  } else {
    report = merge_sweep(train_size_sweep(fractions, train, test, rc, train_config, boundary));
  }
  emit_report(report, report_path, report_format_from_path(report_path));
  if (!g.quiet) out << report_to_markdown(report);
  return kOk;
}

int cmd_synth(const GlobalOptions& g, BlobSpec spec, const fs::path& train_path,
              const fs::path& test_path, std::ostream& out) {
  spec.seed = g.seed;
  auto [train, test] = synth_blobs(spec);
  auto write = [](const Dataset& d, const fs::path& p) {
    if (format_from_path(p) == FileFormat::Csv) write_csv(d, p);
    else write_jsonl(d, p);
  };
  write(train, train_path);
  write(test, test_path);
  if (!g.quiet) {
    out << "wrote " << train.size() << " train and " << test.size() << " test rows (" << spec.classes
        << " classes, dim " << spec.dim << ")\n";
  }
  return kOk;
}

int cmd_gradcheck(const GlobalOptions& g, std::size_t trials, bool corrupt, std::ostream& out) {
  if (trials == 0) throw UsageError("--trials must be at least 1");
  GradCheckOptions opts;
  opts.trials = trials;
  opts.seed = g.seed;
  opts.corrupt_gradient = corrupt;
  const auto result = run_gradcheck(opts);
  if (!g.quiet || !result.passed) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e", result.worst_error);
    out << (result.passed ? "PASS" : "FAIL") << ": " << result.checks
        << " gradient checks, worst relative error " << buf << " (" << result.worst_case
        << "), bound " << opts.tolerance << '\n';
  }
  return result.passed ? kOk : kNumericError;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Out-of-domain detection with metric learning and adaptive class boundaries",
               "oodbound"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_flag("--quiet", g.quiet, "Suppress the standard-output summary");
  app.add_option("--threads", g.threads, "Worker threads for evaluation cells (0 = all cores)")
      ->capture_default_str();

  ModelOptions fit_opts;
  fs::path fit_train, fit_out;
  auto* fit_cmd = app.add_subcommand("fit", "Train a projection and fit class boundaries");
  fit_cmd->add_option("--train", fit_train, "Training embeddings (.jsonl or .csv)")->required();
  fit_cmd->add_option("--out", fit_out, "Model file to write")->required();
  fit_opts.attach(*fit_cmd);

  fs::path pred_model, pred_input, pred_out;
  auto* pred_cmd = app.add_subcommand("predict", "Classify embeddings or reject them as out-of-domain");
  pred_cmd->add_option("--model", pred_model, "Model file")->required();
  pred_cmd->add_option("--input", pred_input, "Embeddings to classify (.jsonl or .csv)")->required();
  pred_cmd->add_option("--out", pred_out, "JSONL predictions to write")->required();

  ModelOptions eval_opts;
  fs::path eval_train, eval_test, eval_report;
  std::vector<double> ratios{0.25, 0.5, 0.75};
  std::size_t runs = 10;
  std::vector<double> fractions;
  auto* eval_cmd = app.add_subcommand("eval", "Run the known-ratio evaluation protocol");
  eval_cmd->add_option("--train", eval_train, "Training embeddings")->required();
  eval_cmd->add_option("--test", eval_test, "Test embeddings (may contain __ood__ rows)")->required();
  eval_cmd->add_option("--ratios", ratios, "Known-class ratios, comma separated")
      ->delimiter(',')
      ->capture_default_str();
  eval_cmd->add_option("--runs", runs, "Runs per ratio")->check(CLI::PositiveNumber)->capture_default_str();
  eval_cmd->add_option("--train-fraction", fractions,
                       "Training fraction(s); several values run a training-size sweep")
      ->delimiter(',');
  eval_cmd->add_option("--report", eval_report, "Report file (.json, .csv or .md)")->required();
  eval_opts.attach(*eval_cmd);

  BlobSpec blobs;
  fs::path synth_train, synth_test;
  auto* synth_cmd = app.add_subcommand("synth", "Generate Gaussian blob fixtures");
  synth_cmd->add_option("--classes", blobs.classes, "Number of classes")->check(CLI::Range(2, 1 << 20))->capture_default_str();
  synth_cmd->add_option("--dim", blobs.dim, "Vector dimension")->check(CLI::Range(2, 1 << 20))->capture_default_str();
  synth_cmd->add_option("--per-class", blobs.per_class, "Items per class in each split")
      ->check(CLI::Range(2, 1 << 24))
      ->capture_default_str();
  synth_cmd->add_option("--sigma", blobs.sigma, "Noise scale")->check(CLI::NonNegativeNumber)->capture_default_str();
  synth_cmd->add_option("--out-train", synth_train, "Training file to write")->required();
  synth_cmd->add_option("--out-test", synth_test, "Test file to write")->required();

  std::size_t trials = 20;
  bool corrupt = false;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Verify analytic loss gradients against finite differences");
  grad_cmd->add_option("--trials", trials, "Random instances per loss")->capture_default_str();
  grad_cmd->add_flag("--corrupt-gradient", corrupt, "Negative control: perturb the analytic gradient")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << "oodbound 0.1.0\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kUsage;
  }

  try {
    if (*fit_cmd) return cmd_fit(g, fit_opts, fit_train, fit_out, out);
    if (*pred_cmd) return cmd_predict(g, pred_model, pred_input, pred_out, out);
    if (*eval_cmd) return cmd_eval(g, eval_opts, eval_train, eval_test, ratios, runs, fractions, eval_report, out);
    if (*synth_cmd) return cmd_synth(g, blobs, synth_train, synth_test, out);
    if (*grad_cmd) return cmd_gradcheck(g, trials, corrupt, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumericError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

}  // namespace oodbound::cli
