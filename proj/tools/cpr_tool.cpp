// Command-line front end: fit, predict, eval, synth, grid, benchmark, diagnose.
//
// Exit codes: 0 success, 2 bad input, 3 numerical failure (EP failure,
// indefinite covariance), 4 non-convergence.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cpr/ep.hpp"
#include "cpr/experiments.hpp"
#include "cpr/fit.hpp"
#include "cpr/io.hpp"
#include "cpr/metrics.hpp"
#include "cpr/oracle.hpp"
#include "cpr/predict.hpp"

namespace fs = std::filesystem;
using namespace cpr;

namespace {

enum ExitCode { kOk = 0, kBadInput = 2, kNumerical = 3, kNotConverged = 4 };

struct DataArgs {
  std::string path;
  std::string labelColumn;
  std::string labelPath;
  std::string sidePath;
  std::string sideCovPath;
};

struct ModelArgs {
  std::string method = "cpr";
  double lambda0 = 1.0;
  double lambda1 = 1.0;
  double lambda2 = 0.1;
  double lambda3 = 0.0;
  double lengthScale = 0.2;
  std::string penalty = "l1";
  bool noStandardize = false;
  double admmAbsTol = 1e-4;
  double admmRelTol = 1e-3;
  int maxIter = 500;
  double epTol = 1e-6;
  int epMaxIter = 50;
};

struct Common {
  std::uint64_t seed = 20;
  std::string out = ".";
  int threads = 1;
};

void add_data_options(CLI::App* app, DataArgs& d, bool required = true) {
  auto* opt = app->add_option("--data", d.path, "Samples as rows, features as columns");
  if (required) opt->required();
  app->add_option("--label-column", d.labelColumn, "Label column (header name or 0-based index)");
  app->add_option("--labels", d.labelPath, "Separate single-column label file");
  app->add_option("--side", d.sidePath, "Side-information features (rows match --data)");
  app->add_option("--side-cov", d.sideCovPath, "Precomputed n x n side covariance (rows match --data)");
}

void add_model_options(CLI::App* app, ModelArgs& m) {
  app->add_option("--method", m.method, "cpr | cpr-map | probit | gp-limit")
      ->check(CLI::IsMember({"cpr", "cpr-map", "probit", "gp-limit"}));
  app->add_option("--lambda0", m.lambda0, "l1 penalty weight")->check(CLI::NonNegativeNumber);
  app->add_option("--lambda1", m.lambda1, "identity noise weight")->check(CLI::PositiveNumber);
  app->add_option("--lambda2", m.lambda2, "linear kernel weight")->check(CLI::NonNegativeNumber);
  app->add_option("--lambda3", m.lambda3, "side kernel weight")->check(CLI::NonNegativeNumber);
  app->add_option("--length-scale", m.lengthScale, "RBF length scale for --side")->check(CLI::PositiveNumber);
  app->add_option("--penalty", m.penalty, "l1 | l2 (cpr only)")->check(CLI::IsMember({"l1", "l2"}));
  app->add_flag("--no-standardize", m.noStandardize, "Use raw features");
  app->add_option("--admm-abs-tol", m.admmAbsTol, "ADMM absolute tolerance")->check(CLI::PositiveNumber);
  app->add_option("--admm-rel-tol", m.admmRelTol, "ADMM relative tolerance")->check(CLI::PositiveNumber);
  app->add_option("--max-iter", m.maxIter, "Maximum ADMM iterations")->check(CLI::PositiveNumber);
  app->add_option("--ep-tol", m.epTol, "EP site tolerance")->check(CLI::PositiveNumber);
  app->add_option("--ep-max-iter", m.epMaxIter, "Maximum EP sweeps")->check(CLI::PositiveNumber);
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Random seed (recorded in every output)");
  app->add_option("--out", c.out, "Output directory");
}

std::string stamp(const Common& c) {
  std::ostringstream os;
  os << "# cpr-tool " << kVersion << " seed=" << c.seed;
  return os.str();
}

std::ofstream open_out(const Common& c, const std::string& name) {
  fs::create_directories(c.out);
  const fs::path p = fs::path(c.out) / name;
  std::ofstream os(p);
  if (!os) throw InvalidInput("cannot write '" + p.string() + "'");
  return os;
}

Dataset load_data(const DataArgs& d, bool labelsOptional = false) {
  CsvDatasetOptions o;
  o.labelColumn = d.labelColumn;
  o.labelPath = d.labelPath;
  o.sidePath = d.sidePath;
  o.labelsOptional = labelsOptional;
  return read_dataset(d.path, o);
}

std::optional<KernelComponent> side_kernel(const DataArgs& d, const Dataset& data, double lengthScale) {
  if (!d.sideCovPath.empty()) {
    const CsvTable t = read_csv_file(d.sideCovPath);
    const auto n = static_cast<Index>(t.rows.size());
    if (n != data.samples() || static_cast<Index>(t.rows.front().size()) != n)
      throw InvalidInput(d.sideCovPath + ": side covariance must be " + std::to_string(data.samples()) + " x " +
                         std::to_string(data.samples()));
    auto m = std::make_shared<MatrixXd>(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) (*m)(i, j) = t.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    return KernelComponent::precomputed(m);
  }
  if (data.side) return KernelComponent::rbf_side(lengthScale);
  return std::nullopt;
}

FitOptions fit_options(const ModelArgs& m, std::uint64_t seed) {
  FitOptions o;
  o.standardize = !m.noStandardize;
  o.penalty = m.penalty == "l2" ? Penalty::l2 : Penalty::l1;
  o.admm.absTol = m.admmAbsTol;
  o.admm.relTol = m.admmRelTol;
  o.admm.maxIter = m.maxIter;
  o.ep.tol = m.epTol;
  o.ep.maxIter = m.epMaxIter;
  o.seed = seed;
  return o;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v;
    if (!detail::parse_double(detail::trim(item), v)) throw InvalidInput("bad number in list: '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw InvalidInput("empty list");
  return out;
}

int status_code(const FittedModel& m) {
  switch (m.diagnostics.status) {
    case FitStatus::converged: return kOk;
    case FitStatus::ep_failure: return kNumerical;
    case FitStatus::not_converged: return kNotConverged;
  }
  return kNotConverged;
}

// ---------------------------------------------------------------------------

int cmd_fit(const DataArgs& da, const ModelArgs& ma, const Common& c) {
  Dataset data = load_data(da);
  const auto side = side_kernel(da, data, ma.lengthScale);
  if (ma.lambda3 > 0.0 && !side) throw InvalidInput("--lambda3 > 0 needs --side or --side-cov");
  const FitOptions opts = fit_options(ma, c.seed);
  const Method method = method_from_string(ma.method);
  const CovarianceModel cov = side && ma.lambda3 > 0.0
                                  ? CovarianceModel::mixture(ma.lambda1, ma.lambda2, side, ma.lambda3)
                                  : CovarianceModel::mixture(ma.lambda1, ma.lambda2);
  FittedModel model;
  switch (method) {
    case Method::cpr: model = fit_cpr(data, cov, ma.lambda0, opts); break;
    case Method::cpr_map: model = fit_cpr_map(data, cov, ma.lambda0, opts); break;
    case Method::probit: model = fit_probit(data, ma.lambda1, ma.lambda0, opts); break;
    case Method::gp_limit: model = fit_gp_limit(data, cov, opts); break;
  }
  fs::create_directories(c.out);
  save_model((fs::path(c.out) / "model.json").string(), model);
  auto trace = open_out(c, "trace.csv");
  trace << stamp(c) << "\niteration,objective\n";
  trace.precision(17);
  for (std::size_t i = 0; i < model.objectiveTrace.size(); ++i) trace << i << ',' << model.objectiveTrace[i] << '\n';
  auto log = open_out(c, "fit.log");
  log << stamp(c) << "\nmethod " << to_string(model.method) << "\nstatus " << to_string(model.diagnostics.status)
      << "\niterations " << model.diagnostics.iterations << "\nnonzeros " << model.nonzeros() << " of "
      << model.weights.size() << "\nprimal_residual " << model.diagnostics.primalResidual << "\ndual_residual "
      << model.diagnostics.dualResidual << "\nep_failures " << model.diagnostics.epFailures << "\nseconds "
      << model.diagnostics.seconds << '\n';
  std::cerr << to_string(model.method) << ": " << to_string(model.diagnostics.status) << " after "
            << model.diagnostics.iterations << " iterations, " << model.nonzeros() << " nonzero weights\n";
  return status_code(model);
}

int cmd_predict(const std::string& modelPath, const DataArgs& test, const DataArgs& train, const std::string& mode,
                const Common& c) {
  FittedModel model = load_model(modelPath);
  Dataset te = load_data(test, true);
  Predictions p;
  if (mode == "independent") {
    p.scores = linear_scores(model, te.X);
    p.labels = sign_labels(p.scores);
  } else {
    if (train.path.empty()) throw InvalidInput("correlated prediction needs --train");
    Dataset tr = load_data(train);
    for (auto& comp : model.covariance.components)
      if (comp.kind == KernelKind::precomputed)
        throw InvalidInput("correlated prediction from a saved model does not support precomputed kernels");
    for (auto& comp : model.covariance.components)
      if (comp.kind == KernelKind::rbf_side && (!tr.side || !te.side))
        throw InvalidInput("model uses a side kernel: give --train-side and --side");
    p = predict(model, tr, te, true);
  }
  auto os = open_out(c, "predictions.csv");
  os << stamp(c) << "\nindex,label,score\n";
  os.precision(17);
  for (Index i = 0; i < p.labels.size(); ++i) os << i << ',' << (p.labels[i] > 0 ? 1 : -1) << ',' << p.scores[i] << '\n';
  return kOk;
}

int cmd_eval(const std::string& predPath, const DataArgs& truth, const Common& c) {
  const CsvTable t = read_csv_file(predPath);
  std::size_t labelCol = 1, scoreCol = 2;
  if (!t.header.empty()) {
    labelCol = scoreCol = t.header.size();
    for (std::size_t i = 0; i < t.header.size(); ++i) {
      if (t.header[i] == "label") labelCol = i;
      if (t.header[i] == "score") scoreCol = i;
    }
  }
  const std::size_t width = t.rows.front().size();
  if (labelCol >= width) throw InvalidInput(predPath + ": no 'label' column");
  const Dataset data = load_data(truth);
  if (static_cast<Index>(t.rows.size()) != data.samples())
    throw InvalidInput(predPath + ": " + std::to_string(t.rows.size()) + " predictions for " +
                       std::to_string(data.samples()) + " samples");
  const Index n = data.samples();
  VectorXd labels(n), scores(n);
  for (Index i = 0; i < n; ++i) {
    const auto& r = t.rows[static_cast<std::size_t>(i)];
    labels[i] = parse_label(r[labelCol], predPath + ":" + std::to_string(t.lineNumbers[static_cast<std::size_t>(i)]));
    scores[i] = scoreCol < width ? r[scoreCol] : labels[i];
  }
  auto os = open_out(c, "metrics.csv");
  os << stamp(c) << "\nmetric,value\n";
  os.precision(17);
  os << "accuracy," << accuracy(labels, data.y) << '\n';
  bool pos = (data.y.array() > 0).any(), neg = (data.y.array() < 0).any();
  if (pos && neg) {
    os << "auc," << auc(scores, data.y) << '\n';
    os << "auc01," << auc_partial(scores, data.y, 0.1) << '\n';
  } else {
    std::cerr << "only one class present: AUC undefined\n";
  }
  return kOk;
}

int cmd_synth(Index d, Index n, Index k, Index trainSize, const Common& c) {
  SyntheticSpec spec;
  spec.d = d;
  spec.n = n;
  spec.k = k;
  spec.seed = c.seed;
  const SyntheticData syn = generate_synthetic(spec);
  {
    auto os = open_out(c, "data.csv");
    os << stamp(c) << '\n';
    write_dataset_csv(os, syn.data);
  }
  {
    auto os = open_out(c, "side_cov.csv");
    os << stamp(c) << '\n';
    os.precision(17);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) os << (*syn.sideCov)(i, j) << (j + 1 < n ? ',' : '\n');
  }
  {
    auto os = open_out(c, "true_w.csv");
    os << stamp(c) << "\nweight\n";
    for (Index i = 0; i < d; ++i) os << syn.trueW[i] << '\n';
  }
  {
    const Split s = split(syn.data, trainSize, mix_seed(c.seed, 1));
    std::vector<std::string> role(static_cast<std::size_t>(n));
    for (Index i : s.train) role[static_cast<std::size_t>(i)] = "train";
    for (Index i : s.validation) role[static_cast<std::size_t>(i)] = "validation";
    for (Index i : s.test) role[static_cast<std::size_t>(i)] = "test";
    auto os = open_out(c, "split.csv");
    os << stamp(c) << "\nindex,role\n";
    for (Index i = 0; i < n; ++i) os << i << ',' << role[static_cast<std::size_t>(i)] << '\n';
  }
  return kOk;
}

struct GridArgs {
  std::string lambda0, lambda2, lambda3;
  std::string metric = "accuracy";
  Index trainSize = 100;
  bool stratify = false;
  bool gpSide = false;
};

GridConfig grid_config(const GridArgs& g, const ModelArgs& ma, const Common& c) {
  GridConfig cfg = desk_scale_grid();
  if (!g.lambda0.empty()) cfg.lambda0 = parse_list(g.lambda0);
  if (!g.lambda2.empty()) cfg.lambda2 = parse_list(g.lambda2);
  if (!g.lambda3.empty()) cfg.lambda3 = parse_list(g.lambda3);
  cfg.lambda1 = ma.lambda1;
  cfg.metric = metric_from_string(g.metric);
  cfg.fit = fit_options(ma, c.seed);
  cfg.threads = c.threads;
  cfg.gpSideKernel = g.gpSide;
  return cfg;
}

int cmd_grid(const DataArgs& da, const ModelArgs& ma, const GridArgs& ga, const Common& c) {
  const Dataset data = load_data(da);
  const auto side = side_kernel(da, data, ma.lengthScale);
  const GridConfig cfg = grid_config(ga, ma, c);
  const Split s = split(data, ga.trainSize, mix_seed(c.seed, 1), ga.stratify);
  const auto res = grid_search(subset(data, s.train), subset(data, s.validation), subset(data, s.test),
                               method_from_string(ma.method), cfg, side);
  fs::create_directories(c.out);
  save_model((fs::path(c.out) / "model.json").string(), res.model);
  auto os = open_out(c, "grid.csv");
  os << stamp(c) << "\nlambda0,lambda1,lambda2,lambda3,validation_" << to_string(cfg.metric) << ",ok,seconds,error\n";
  os.precision(10);
  for (const auto& cell : res.cells)
    os << cell.lambda0 << ',' << cfg.lambda1 << ',' << cell.lambda2 << ',' << cell.lambda3 << ',' << cell.score << ','
       << (cell.ok ? 1 : 0) << ',' << cell.seconds << ",\"" << cell.error << "\"\n";
  nlohmann::json summary = {{"toolVersion", kVersion},
                            {"seed", c.seed},
                            {"method", ma.method},
                            {"metric", to_string(cfg.metric)},
                            {"selected",
                             {{"lambda0", res.best.lambda0},
                              {"lambda1", cfg.lambda1},
                              {"lambda2", res.best.lambda2},
                              {"lambda3", res.best.lambda3}}},
                            {"validationScore", res.validationScore},
                            {"testScore", res.testScore},
                            {"warnings", res.warnings}};
  auto js = open_out(c, "summary.json");
  js << summary.dump(2) << '\n';
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
  std::cerr << "validation " << res.validationScore << ", test " << res.testScore << '\n';
  return kOk;
}

int cmd_benchmark(int reps, const std::string& ks, const std::string& methods, const ModelArgs& ma, const GridArgs& ga,
                  const Common& c) {
  BenchmarkConfig cfg;
  cfg.repetitions = reps;
  cfg.ks.clear();
  for (double k : parse_list(ks)) cfg.ks.push_back(static_cast<Index>(k));
  if (!methods.empty()) {
    cfg.methods.clear();
    std::stringstream ss(methods);
    std::string item;
    while (std::getline(ss, item, ',')) cfg.methods.push_back(bench_method_from_string(detail::trim(item)));
  }
  cfg.grid = grid_config(ga, ma, c);
  cfg.trainSize = ga.trainSize;
  cfg.threads = c.threads;
  cfg.seed = c.seed;
  const auto report = run_benchmark(cfg);
  {
    auto os = open_out(c, "benchmark.csv");
    os << stamp(c) << '\n';
    write_benchmark_csv(os, report);
  }
  {
    auto os = open_out(c, "records.csv");
    os << stamp(c) << "\nk,repetition,method,ok,score,seconds,lambda0,lambda2,lambda3,error\n";
    os.precision(10);
    for (const auto& r : report.records)
      os << r.k << ',' << r.repetition << ',' << to_string(r.method) << ',' << (r.ok ? 1 : 0) << ',' << r.testScore
         << ',' << r.seconds << ',' << r.selected.lambda0 << ',' << r.selected.lambda2 << ',' << r.selected.lambda3
         << ",\"" << r.error << "\"\n";
  }
  nlohmann::json summary = {{"toolVersion", kVersion}, {"seed", c.seed}, {"repetitions", reps},
                            {"metric", to_string(cfg.grid.metric)},
                            {"grid", {{"lambda0", cfg.grid.lambda0}, {"lambda1", cfg.grid.lambda1},
                                      {"lambda2", cfg.grid.lambda2}, {"lambda3", cfg.grid.lambda3}}},
                            {"results", nlohmann::json::array()}};
  for (const auto& s : report.summary)
    summary["results"].push_back({{"k", s.k}, {"method", to_string(s.method)}, {"mean", s.mean},
                                  {"stderr", s.stderr_}, {"meanSeconds", s.meanSeconds},
                                  {"succeeded", s.succeeded}, {"failed", s.failed}});
  auto js = open_out(c, "summary.json");
  js << summary.dump(2) << '\n';
  write_benchmark_csv(std::cout, report);
  return kOk;
}

int cmd_diagnose(const DataArgs& da, const ModelArgs& ma, int reps, int epInstances, const Common& c) {
  // EP against tensor quadrature on random small instances.
  {
    auto os = open_out(c, "ep_oracle.csv");
    os << stamp(c) << "\nn,instance,logmass_ep,logmass_oracle,abs_logmass_gap,max_abs_mean_gap\n";
    os.precision(10);
    Rng rng(c.seed);
    double worst = 0.0;
    for (Index n = 1; n <= 3; ++n)
      for (int t = 0; t < epInstances; ++t) {
        MatrixXd A(n, n);
        for (Index i = 0; i < n; ++i)
          for (Index j = 0; j < n; ++j) A(i, j) = rng.normal();
        MatrixXd sigma = A * A.transpose() / static_cast<double>(n);
        sigma.diagonal().array() += 0.5;
        VectorXd mu(n);
        for (Index i = 0; i < n; ++i) mu[i] = rng.normal();
        const auto ep = ep_moments(mu, sigma).moments;
        const auto oracle = orthant_oracle(mu, sigma, OracleMethod::quadrature, n == 3 ? 3 : 8).moments;
        const double gm = (ep.mean - oracle.mean).cwiseAbs().maxCoeff();
        worst = std::max(worst, gm);
        os << n << ',' << t << ',' << ep.logMass << ',' << oracle.logMass << ','
           << std::abs(ep.logMass - oracle.logMass) << ',' << gm << '\n';
      }
    std::cerr << "largest EP mean gap against quadrature: " << worst << '\n';
  }
  if (!da.path.empty()) {
    const Dataset data = load_data(da);
    const auto side = side_kernel(da, data, ma.lengthScale);
    const FitOptions opts = fit_options(ma, c.seed);
    const Method method = method_from_string(ma.method);
    auto fit = [&](const Dataset& part) -> FittedModel {
      switch (method) {
        case Method::probit: return fit_probit(part, ma.lambda1, ma.lambda0, opts);
        case Method::cpr_map:
          return fit_cpr_map(part, CovarianceModel::mixture(ma.lambda1, ma.lambda2), ma.lambda0, opts);
        case Method::cpr: {
          const auto cov = side && ma.lambda3 > 0.0 ? CovarianceModel::mixture(ma.lambda1, ma.lambda2, side, ma.lambda3)
                                                    : CovarianceModel::mixture(ma.lambda1, ma.lambda2);
          return fit_cpr(part, cov, ma.lambda0, opts);
        }
        case Method::gp_limit: throw InvalidInput("diagnose: gp-limit has no weights to rank");
      }
      throw InvalidInput("diagnose: unknown method");
    };
    const CurveSummary curve = confounder_correlation_curve(data, fit, reps, c.seed);
    auto os = open_out(c, "correlation_curve.csv");
    os << stamp(c) << '\n';
    write_curve_csv(os, curve);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse correlated probit regression"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  DataArgs data, train;
  ModelArgs model;
  Common common;
  GridArgs grid;

  auto* fit = app.add_subcommand("fit", "Fit a model and write model.json, trace.csv, fit.log");
  add_data_options(fit, data);
  add_model_options(fit, model);
  add_common(fit, common);

  std::string modelPath, mode = "independent";
  auto* pred = app.add_subcommand("predict", "Predict labels and write predictions.csv");
  pred->add_option("--model", modelPath, "model.json from fit or grid")->required();
  add_data_options(pred, data);
  pred->add_option("--mode", mode, "independent | correlated")->check(CLI::IsMember({"independent", "correlated"}));
  pred->add_option("--train", train.path, "Training data (correlated mode)");
  pred->add_option("--train-label-column", train.labelColumn, "Label column of the training data");
  pred->add_option("--train-labels", train.labelPath, "Label file of the training data");
  pred->add_option("--train-side", train.sidePath, "Side information of the training data");
  add_common(pred, common);

  std::string predPath;
  auto* eval = app.add_subcommand("eval", "Score predictions and write metrics.csv");
  eval->add_option("--predictions", predPath, "predictions.csv")->required();
  add_data_options(eval, data);
  add_common(eval, common);

  Index d = 50, n = 200, k = 10;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic confounded dataset");
  synth->add_option("--d", d, "Features")->check(CLI::PositiveNumber);
  synth->add_option("--n", n, "Samples")->check(CLI::PositiveNumber);
  synth->add_option("--k", k, "Nonzero true weights")->check(CLI::NonNegativeNumber);
  synth->add_option("--train-size", grid.trainSize, "Training samples in split.csv");
  add_common(synth, common);

  auto add_grid_options = [&](CLI::App* a) {
    a->add_option("--grid-lambda0", grid.lambda0, "Comma-separated lambda0 values");
    a->add_option("--grid-lambda2", grid.lambda2, "Comma-separated lambda2 values");
    a->add_option("--grid-lambda3", grid.lambda3, "Comma-separated lambda3 values");
    a->add_option("--metric", grid.metric, "accuracy | auc | auc01")->check(CLI::IsMember({"accuracy", "auc", "auc01"}));
    a->add_option("--train-size", grid.trainSize, "Training samples; the rest is halved into validation and test");
    a->add_flag("--gp-side-kernel", grid.gpSide, "Give the gp-limit baseline the side kernel too");
    a->add_option("--threads", common.threads, "Worker threads")->check(CLI::PositiveNumber);
  };

  auto* gridCmd = app.add_subcommand("grid", "Grid search on one split");
  add_data_options(gridCmd, data);
  add_model_options(gridCmd, model);
  add_grid_options(gridCmd);
  gridCmd->add_flag("--stratify", grid.stratify, "Stratify the split by label");
  add_common(gridCmd, common);

  int reps = 50;
  std::string ks = "2,10,25,50", methods;
  auto* bench = app.add_subcommand("benchmark", "Repeated synthetic benchmark");
  bench->add_option("--reps", reps, "Repetitions per k")->check(CLI::PositiveNumber);
  bench->add_option("--ks", ks, "Comma-separated k values");
  bench->add_option("--methods", methods, "Comma-separated subset of cpr,cpr-map,probit,gp-limit,oracle");
  add_model_options(bench, model);
  add_grid_options(bench);
  add_common(bench, common);

  int epInstances = 10, curveReps = 30;
  auto* diag = app.add_subcommand("diagnose", "EP oracle comparison and correlation curve");
  add_data_options(diag, data, false);
  add_model_options(diag, model);
  diag->add_option("--ep-instances", epInstances, "Random instances per dimension")->check(CLI::PositiveNumber);
  diag->add_option("--curve-reps", curveReps, "Repetitions of the correlation curve")->check(CLI::PositiveNumber);
  add_common(diag, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kBadInput;
  }

  try {
    if (*fit) return cmd_fit(data, model, common);
    if (*pred) return cmd_predict(modelPath, data, train, mode, common);
    if (*eval) return cmd_eval(predPath, data, common);
    if (*synth) return cmd_synth(d, n, k, grid.trainSize, common);
    if (*gridCmd) return cmd_grid(data, model, grid, common);
    if (*bench) return cmd_benchmark(reps, ks, methods, model, grid, common);
    if (*diag) return cmd_diagnose(data, model, curveReps, epInstances, common);
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const EpFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const IndefiniteCovariance& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  }
  return kOk;
}
