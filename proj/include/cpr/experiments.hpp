#pragma once

// Synthetic confounded data, train/validation/test splits, hyperparameter
// grid search and the repeated benchmark over methods.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include "cpr/error.hpp"
#include "cpr/fit.hpp"
#include "cpr/metrics.hpp"
#include "cpr/model.hpp"
#include "cpr/predict.hpp"
#include "cpr/rng.hpp"

namespace cpr {

/// splitmix64 finalizer; derives independent stream seeds from a base seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t x = seed ^ (a * 0x9E3779B97F4A7C15ULL) ^ (b * 0xC2B2AE3D27D4EB4FULL);
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

namespace detail {

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Results must be
/// written to per-index slots so the outcome does not depend on scheduling.
inline void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(workers, count); ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticSpec {
  Index d = 50;
  Index n = 200;
  Index k = 10;
  std::uint64_t seed = 20;
  /// Rows of the random matrix A behind the side covariance.
  Index sideRank = 50;
};

struct SyntheticData {
  Dataset data;
  VectorXd trueW;
  /// 3 A^T A + 0.6 I + 3 * ones, indexed by sample id.
  std::shared_ptr<const MatrixXd> sideCov;
};

/// w has ones in its first k entries; X ~ U[-1,1]^(d x n); labels are
/// sign(x_i^T w + e_i) with e ~ N(0, Sigma_side), sign(0) = +1.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  detail::require(spec.d >= 1 && spec.n >= 2, "synthetic: need d >= 1 and n >= 2");
  detail::require(spec.k >= 0 && spec.k <= spec.d, "synthetic: k must lie in [0, d]");
  detail::require(spec.sideRank >= 1, "synthetic: side rank must be positive");
  Rng rng(spec.seed);
  const Index n = spec.n, d = spec.d;
  MatrixXd A(spec.sideRank, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < spec.sideRank; ++i) A(i, j) = rng.uniform(-1.0, 1.0);
  auto side = std::make_shared<MatrixXd>(3.0 * A.transpose() * A);
  side->diagonal().array() += 0.6;
  side->array() += 3.0;

  SyntheticData out;
  out.trueW = VectorXd::Zero(d);
  out.trueW.head(spec.k).setOnes();
  out.data.X.resize(d, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < d; ++i) out.data.X(i, j) = rng.uniform(-1.0, 1.0);
  VectorXd z(n);
  for (Index i = 0; i < n; ++i) z[i] = rng.normal();
  Eigen::LLT<MatrixXd> llt(*side);
  if (llt.info() != Eigen::Success) throw NumericalError("synthetic: side covariance not factorizable");
  const VectorXd noise = llt.matrixL() * z;
  out.data.y = sign_labels(out.data.X.transpose() * out.trueW + noise);
  out.data.names.reserve(static_cast<std::size_t>(d));
  for (Index i = 0; i < d; ++i) out.data.names.push_back("x" + std::to_string(i + 1));
  out.sideCov = std::move(side);
  return out;
}

// ---------------------------------------------------------------------------
// Splits

struct Split {
  std::vector<Index> train, validation, test;
};

/// Random split: `trainSize` training samples, the rest halved into
/// validation and test (validation gets the extra sample). With `stratify`,
/// each part keeps the proportions of every (label, group) stratum to within
/// one sample.
inline Split split(const Dataset& data, Index trainSize, std::uint64_t seed, bool stratify = false,
                   const std::vector<int>* groups = nullptr) {
  const Index n = data.samples();
  detail::require(trainSize >= 1 && trainSize < n, "split: need 1 <= trainSize < n");
  detail::require(!groups || static_cast<Index>(groups->size()) == n, "split: group count mismatch");
  Rng rng(seed);
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);

  if (stratify) {
    // Interleave strata by fractional rank so every contiguous block of the
    // order is proportional.
    std::map<std::pair<int, int>, std::vector<Index>> strata;
    for (Index i : order) {
      const int g = groups ? (*groups)[static_cast<std::size_t>(i)] : 0;
      strata[{data.y[i] > 0 ? 1 : -1, g}].push_back(i);
    }
    std::vector<std::tuple<double, int, Index>> keyed;
    int sid = 0;
    for (const auto& [key, members] : strata) {
      const auto m = static_cast<double>(members.size());
      for (std::size_t r = 0; r < members.size(); ++r)
        keyed.emplace_back((static_cast<double>(r) + 0.5) / m, sid, members[r]);
      ++sid;
    }
    std::sort(keyed.begin(), keyed.end());
    for (std::size_t i = 0; i < keyed.size(); ++i) order[i] = std::get<2>(keyed[i]);
  }

  const Index rest = n - trainSize;
  const Index nval = rest - rest / 2;
  Split s;
  s.train.assign(order.begin(), order.begin() + trainSize);
  s.validation.assign(order.begin() + trainSize, order.begin() + trainSize + nval);
  s.test.assign(order.begin() + trainSize + nval, order.end());
  if (stratify) {
    for (const auto* part : {&s.train, &s.validation, &s.test}) {
      if (part->empty()) continue;
      bool pos = false, neg = false;
      for (Index i : *part) (data.y[i] > 0 ? pos : neg) = true;
      detail::require(pos && neg, "split: a class is absent from a stratified split");
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Evaluation

enum class Metric { accuracy, auc, auc01 };

inline const char* to_string(Metric m) {
  switch (m) {
    case Metric::accuracy: return "accuracy";
    case Metric::auc: return "auc";
    case Metric::auc01: return "auc01";
  }
  return "?";
}

inline Metric metric_from_string(const std::string& s) {
  if (s == "accuracy") return Metric::accuracy;
  if (s == "auc") return Metric::auc;
  if (s == "auc01") return Metric::auc01;
  throw InvalidInput("unknown metric '" + s + "'");
}

/// Whether a method predicts through the joint model with the training labels.
inline bool predicts_correlated(Method m) { return m == Method::cpr || m == Method::gp_limit; }

struct Predictions {
  VectorXd labels;
  VectorXd scores;
};

/// Labels and ranking scores: linear scores for independent prediction,
/// per-sample log odds for correlated prediction.
inline Predictions predict(const FittedModel& model, const Dataset& train, const Dataset& test,
                           bool correlated, const CorrelatedOptions& opts = {}) {
  if (!correlated) {
    Predictions p;
    p.scores = linear_scores(model, test.X);
    p.labels = sign_labels(p.scores);
    return p;
  }
  CorrelatedOptions o = opts;
  o.mode = CorrelatedMode::per_sample;
  auto r = predict_correlated(model, train, test, o);
  if (opts.mode == CorrelatedMode::exhaustive ||
      (opts.mode == CorrelatedMode::automatic && test.samples() <= opts.enumerationLimit)) {
    // Ranking scores still come from the per-sample log odds.
    auto ex = predict_correlated(model, train, test, opts);
    return {ex.labels, r.logOdds};
  }
  return {r.labels, r.logOdds};
}

inline double score_predictions(const Predictions& p, const VectorXd& labels, Metric metric) {
  switch (metric) {
    case Metric::accuracy: return accuracy(p.labels, labels);
    case Metric::auc: return auc(p.scores, labels);
    case Metric::auc01: return auc_partial(p.scores, labels, 0.1);
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Grid search

struct GridConfig {
  std::vector<double> lambda0 = {0.01, 0.1, 1.0, 10.0};
  /// lambda1 is held fixed: jointly scaling Sigma and w leaves the model
  /// unchanged, so only ratios to lambda1 matter.
  double lambda1 = 1.0;
  std::vector<double> lambda2 = {0.1, 1.0, 10.0, 100.0, 1000.0};
  std::vector<double> lambda3 = {0.1, 1.0, 10.0, 100.0, 1000.0};
  Metric metric = Metric::accuracy;
  FitOptions fit;
  CorrelatedOptions predict;
  /// Whether the gp-limit baseline also receives the side kernel; by default
  /// it is a GP over the features (identity plus linear kernel).
  bool gpSideKernel = false;
  int threads = 1;
};

/// Reduced grid for the repeated synthetic benchmark on one core. Values
/// outside it were never selected in pilot runs (lambda0 >= 10 already
/// zeroes every weight).
inline GridConfig desk_scale_grid() {
  GridConfig g;
  g.lambda0 = {0.3, 1.0, 3.0, 10.0};
  g.lambda2 = {0.01, 0.1, 1.0};
  g.lambda3 = {0.1, 1.0, 10.0};
  return g;
}

struct GridCell {
  double lambda0 = 0.0;
  double lambda2 = 0.0;
  double lambda3 = 0.0;
  double score = 0.0;
  bool ok = false;
  std::string error;
  double seconds = 0.0;
};

struct GridResult {
  FittedModel model;
  GridCell best;
  double validationScore = 0.0;
  double testScore = 0.0;
  std::vector<GridCell> cells;
  std::vector<std::string> warnings;
  /// Wall-clock seconds of all cell fits.
  double fitSeconds = 0.0;
};

/// The hyperparameter axes a method uses.
struct MethodAxes {
  bool lambda0 = false, lambda2 = false, lambda3 = false;
};

inline MethodAxes method_axes(Method m, bool hasSide) {
  switch (m) {
    case Method::probit: return {true, false, false};
    case Method::cpr_map: return {true, true, false};
    case Method::cpr: return {true, true, hasSide};
    case Method::gp_limit: return {false, true, hasSide};
  }
  return {};
}

inline CovarianceModel cell_covariance(double lambda1, const GridCell& c,
                                       const std::optional<KernelComponent>& side) {
  if (side) return CovarianceModel::mixture(lambda1, c.lambda2, side, c.lambda3);
  return CovarianceModel::mixture(lambda1, c.lambda2);
}

inline FittedModel fit_method(Method method, const Dataset& train, double lambda1, const GridCell& c,
                              const std::optional<KernelComponent>& side, const FitOptions& opts) {
  switch (method) {
    case Method::probit: return fit_probit(train, lambda1, c.lambda0, opts);
    case Method::cpr_map: return fit_cpr_map(train, CovarianceModel::mixture(lambda1, c.lambda2), c.lambda0, opts);
    case Method::cpr: return fit_cpr(train, cell_covariance(lambda1, c, side), c.lambda0, opts);
    case Method::gp_limit: return fit_gp_limit(train, cell_covariance(lambda1, c, side), opts);
  }
  throw InvalidInput("fit_method: unknown method");
}

namespace detail {

/// Strict preference among cells with equal scores: larger lambda0, then
/// lexicographically smaller (lambda2, lambda3).
inline bool preferred(const GridCell& a, const GridCell& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.lambda0 != b.lambda0) return a.lambda0 > b.lambda0;
  if (a.lambda2 != b.lambda2) return a.lambda2 < b.lambda2;
  return a.lambda3 < b.lambda3;
}

inline void boundary_warning(std::vector<std::string>& out, const char* name, const std::vector<double>& grid,
                             double value) {
  if (grid.size() < 2) return;
  const auto [lo, hi] = std::minmax_element(grid.begin(), grid.end());
  if (value == *lo || value == *hi) {
    std::ostringstream os;
    os << name << " = " << value << " selected on the grid boundary";
    out.push_back(os.str());
  }
}

}  // namespace detail

/// Fits every cell on `train`, scores it on `validation`, keeps the best cell
/// (its fitted model is reused) and scores that model on `test`.
inline GridResult grid_search(const Dataset& train, const Dataset& validation, const Dataset& test,
                              Method method, const GridConfig& config,
                              const std::optional<KernelComponent>& sideKernel = std::nullopt) {
  const std::optional<KernelComponent> side =
      method == Method::gp_limit && !config.gpSideKernel ? std::nullopt : sideKernel;
  const MethodAxes ax = method_axes(method, side.has_value());
  const std::vector<double> none = {0.0};
  const auto& g0 = ax.lambda0 ? config.lambda0 : none;
  const auto& g2 = ax.lambda2 ? config.lambda2 : none;
  const auto& g3 = ax.lambda3 ? config.lambda3 : none;
  detail::require(!g0.empty() && !g2.empty() && !g3.empty(), "grid_search: empty grid");

  std::vector<GridCell> cells;
  for (double l0 : g0)
    for (double l2 : g2)
      for (double l3 : g3) cells.push_back({l0, l2, l3});
  std::vector<std::optional<FittedModel>> models(cells.size());
  const bool correlated = predicts_correlated(method);
  detail::Stopwatch clock;

  detail::parallel_for(cells.size(), config.threads, [&](std::size_t i) {
    GridCell& c = cells[i];
    detail::Stopwatch cellClock;
    try {
      auto m = fit_method(method, train, config.lambda1, c, side, config.fit);
      if (m.diagnostics.status == FitStatus::ep_failure) throw EpFailure(m.diagnostics.message);
      const auto p = predict(m, train, validation, correlated, config.predict);
      c.score = score_predictions(p, validation.y, config.metric);
      c.ok = true;
      models[i] = std::move(m);
    } catch (const std::exception& e) {
      c.error = e.what();
    }
    c.seconds = cellClock.seconds();
  });

  GridResult out;
  out.fitSeconds = clock.seconds();
  out.cells = cells;
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (cells[i].ok && (!best || detail::preferred(cells[i], cells[*best]))) best = i;
  if (!best) {
    std::ostringstream os;
    os << "grid_search: all " << cells.size() << " cells failed";
    for (const auto& c : cells)
      os << "\n  lambda0=" << c.lambda0 << " lambda2=" << c.lambda2 << " lambda3=" << c.lambda3 << ": "
         << c.error;
    throw Error(os.str());
  }
  out.best = cells[*best];
  out.model = std::move(*models[*best]);
  out.validationScore = out.best.score;
  if (ax.lambda0) detail::boundary_warning(out.warnings, "lambda0", config.lambda0, out.best.lambda0);
  if (ax.lambda2) detail::boundary_warning(out.warnings, "lambda2", config.lambda2, out.best.lambda2);
  if (ax.lambda3) detail::boundary_warning(out.warnings, "lambda3", config.lambda3, out.best.lambda3);
  if (test.samples() > 0)
    out.testScore = score_predictions(predict(out.model, train, test, correlated, config.predict), test.y,
                                      config.metric);
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark

enum class BenchMethod { cpr, cpr_map, probit, gp_limit, oracle };

inline const char* to_string(BenchMethod m) {
  switch (m) {
    case BenchMethod::cpr: return "cpr";
    case BenchMethod::cpr_map: return "cpr-map";
    case BenchMethod::probit: return "probit";
    case BenchMethod::gp_limit: return "gp-limit";
    case BenchMethod::oracle: return "oracle";
  }
  return "?";
}

inline BenchMethod bench_method_from_string(const std::string& s) {
  if (s == "oracle") return BenchMethod::oracle;
  switch (method_from_string(s)) {
    case Method::cpr: return BenchMethod::cpr;
    case Method::cpr_map: return BenchMethod::cpr_map;
    case Method::probit: return BenchMethod::probit;
    case Method::gp_limit: return BenchMethod::gp_limit;
  }
  throw InvalidInput("unknown method '" + s + "'");
}

struct BenchmarkConfig {
  SyntheticSpec spec;
  std::vector<Index> ks = {2, 10, 25, 50};
  int repetitions = 50;
  Index trainSize = 100;
  std::vector<BenchMethod> methods = {BenchMethod::cpr, BenchMethod::cpr_map, BenchMethod::probit,
                                      BenchMethod::gp_limit, BenchMethod::oracle};
  GridConfig grid = desk_scale_grid();
  /// Workers over repetitions; grid cells then run serially.
  int threads = 1;
  std::uint64_t seed = 20;
};

struct BenchmarkRecord {
  Index k = 0;
  int repetition = 0;
  BenchMethod method = BenchMethod::cpr;
  bool ok = false;
  double testScore = 0.0;
  double seconds = 0.0;
  GridCell selected;
  std::string error;
};

struct BenchmarkSummary {
  Index k = 0;
  BenchMethod method = BenchMethod::cpr;
  int succeeded = 0;
  int failed = 0;
  double mean = 0.0;
  double stderr_ = 0.0;
  double meanSeconds = 0.0;
};

struct BenchmarkReport {
  std::vector<BenchmarkRecord> records;
  std::vector<BenchmarkSummary> summary;

  const BenchmarkSummary* find(Index k, BenchMethod m) const {
    for (const auto& s : summary)
      if (s.k == k && s.method == m) return &s;
    return nullptr;
  }
};

/// Oracle classifier: the generating weights on raw features and correlated
/// prediction under the generating covariance.
inline FittedModel oracle_model(const SyntheticData& syn) {
  FittedModel m;
  m.method = Method::cpr;
  m.weights = syn.trueW;
  m.standardization = StandardizationParams::identity(syn.trueW.size());
  // 0.6 I is split off so the identity weight stays positive.
  auto rest = std::make_shared<MatrixXd>(*syn.sideCov);
  rest->diagonal().array() -= 0.6;
  m.covariance.components = {KernelComponent::identity(), KernelComponent::precomputed(rest)};
  m.covariance.lambdas = {0.6, 1.0};
  m.covariance.jitterScale = 0.0;
  m.diagnostics.status = FitStatus::converged;
  return m;
}

/// generate -> split -> grid search -> test score, over repetitions and k.
/// A (k, method) cell is an error only when fewer than 80% of its
/// repetitions succeed.
inline BenchmarkReport run_benchmark(const BenchmarkConfig& config) {
  detail::require(!config.methods.empty(), "run_benchmark: no methods");
  detail::require(config.repetitions >= 1, "run_benchmark: need at least one repetition");
  struct Job {
    Index k;
    int rep;
  };
  std::vector<Job> jobs;
  for (Index k : config.ks)
    for (int r = 0; r < config.repetitions; ++r) jobs.push_back({k, r});
  const std::size_t nm = config.methods.size();
  std::vector<BenchmarkRecord> records(jobs.size() * nm);

  GridConfig grid = config.grid;
  grid.threads = 1;
  detail::parallel_for(jobs.size(), config.threads, [&](std::size_t j) {
    const Job job = jobs[j];
    SyntheticSpec spec = config.spec;
    spec.k = job.k;
    spec.seed = mix_seed(config.seed, static_cast<std::uint64_t>(job.k), static_cast<std::uint64_t>(job.rep));
    std::optional<SyntheticData> syn;
    std::optional<Split> parts;
    std::string setupError;
    try {
      syn = generate_synthetic(spec);
      parts = split(syn->data, config.trainSize, mix_seed(spec.seed, 1));
    } catch (const std::exception& e) {
      setupError = e.what();
    }
    for (std::size_t mi = 0; mi < nm; ++mi) {
      BenchmarkRecord& rec = records[j * nm + mi];
      rec.k = job.k;
      rec.repetition = job.rep;
      rec.method = config.methods[mi];
      if (!syn) {
        rec.error = setupError;
        continue;
      }
      detail::Stopwatch clock;
      try {
        const Dataset train = subset(syn->data, parts->train);
        const Dataset val = subset(syn->data, parts->validation);
        const Dataset test = subset(syn->data, parts->test);
        if (rec.method == BenchMethod::oracle) {
          const auto p = predict(oracle_model(*syn), train, test, true, grid.predict);
          rec.testScore = score_predictions(p, test.y, grid.metric);
        } else {
          const Method m = method_from_string(to_string(rec.method));
          const auto side = KernelComponent::precomputed(syn->sideCov);
          const auto res = grid_search(train, val, test, m, grid, side);
          rec.testScore = res.testScore;
          rec.selected = res.best;
        }
        rec.ok = true;
      } catch (const std::exception& e) {
        rec.error = e.what();
      }
      rec.seconds = clock.seconds();
    }
  });

  BenchmarkReport report;
  report.records = std::move(records);
  for (Index k : config.ks)
    for (BenchMethod m : config.methods) {
      BenchmarkSummary s;
      s.k = k;
      s.method = m;
      std::vector<double> v;
      double secs = 0.0;
      for (const auto& r : report.records) {
        if (r.k != k || r.method != m) continue;
        if (r.ok) {
          v.push_back(r.testScore);
          secs += r.seconds;
        } else {
          ++s.failed;
        }
      }
      s.succeeded = static_cast<int>(v.size());
      if (!v.empty()) {
        const double cnt = static_cast<double>(v.size());
        for (double x : v) s.mean += x;
        s.mean /= cnt;
        if (v.size() > 1) {
          double ss = 0.0;
          for (double x : v) ss += (x - s.mean) * (x - s.mean);
          s.stderr_ = std::sqrt(ss / (cnt - 1.0) / cnt);
        }
        s.meanSeconds = secs / cnt;
      }
      if (static_cast<double>(s.succeeded) < 0.8 * static_cast<double>(s.succeeded + s.failed)) {
        std::ostringstream os;
        os << "run_benchmark: " << to_string(m) << " at k=" << k << " failed in " << s.failed << " of "
           << (s.succeeded + s.failed) << " repetitions";
        for (const auto& r : report.records)
          if (r.k == k && r.method == m && !r.ok) {
            os << "; first error: " << r.error;
            break;
          }
        throw Error(os.str());
      }
      report.summary.push_back(s);
    }
  return report;
}

inline void write_benchmark_csv(std::ostream& os, const BenchmarkReport& r) {
  os << "k,method,mean,stderr,mean_seconds,succeeded,failed\n";
  os.precision(10);
  for (const auto& s : r.summary)
    os << s.k << ',' << to_string(s.method) << ',' << s.mean << ',' << s.stderr_ << ',' << s.meanSeconds << ','
       << s.succeeded << ',' << s.failed << '\n';
}

// ---------------------------------------------------------------------------
// Confounder-correlation curve

/// Repeats: fit on a random `trainFraction` of the samples, take the
/// correlations of every feature (over all samples) with the top kernel
/// eigenvector, order them by the fitted |w| and take running means.
inline CurveSummary confounder_correlation_curve(
    const Dataset& data, const std::function<FittedModel(const Dataset&)>& fit, int repetitions = 30,
    std::uint64_t seed = 1, double trainFraction = 0.7) {
  detail::require(repetitions >= 1, "correlation curve: need at least one repetition");
  detail::require(trainFraction > 0.0 && trainFraction < 1.0, "correlation curve: bad train fraction");
  auto [standardized, params] = standardize(data);
  const VectorXd corr = confounder_correlations(standardized.X, seed);
  const auto ntrain = std::max<Index>(
      2, static_cast<Index>(std::llround(trainFraction * static_cast<double>(data.samples()))));
  std::vector<VectorXd> curves;
  for (int r = 0; r < repetitions; ++r) {
    Rng rng(mix_seed(seed, 7, static_cast<std::uint64_t>(r)));
    std::vector<Index> idx(static_cast<std::size_t>(data.samples()));
    for (Index i = 0; i < data.samples(); ++i) idx[static_cast<std::size_t>(i)] = i;
    rng.shuffle(idx);
    idx.resize(static_cast<std::size_t>(ntrain));
    const FittedModel m = fit(subset(data, idx));
    curves.push_back(correlation_running_mean(m.weights, corr));
  }
  return summarize_curves(curves);
}

// ---------------------------------------------------------------------------
// Convexity

struct ConvexityReport {
  int chords = 0;
  int violations = 0;
  double worstGap = -std::numeric_limits<double>::infinity();
  /// First violating chord: endpoints, mixing weight and gap.
  std::optional<std::tuple<VectorXd, VectorXd, double, double>> witness;
};

/// Samples chords w1, w2 ~ N(0, scale^2 I) and t ~ U(0,1) and checks
/// f(t w1 + (1-t) w2) <= t f(w1) + (1-t) f(w2) + tol.
inline ConvexityReport check_convexity(const std::function<double(const VectorXd&)>& f, Index dim,
                                       int chords, std::uint64_t seed, double scale = 1.0,
                                       double tol = 1e-6) {
  detail::require(dim >= 1 && chords >= 1, "check_convexity: need dim >= 1 and chords >= 1");
  Rng rng(seed);
  ConvexityReport rep;
  for (int c = 0; c < chords; ++c) {
    VectorXd a(dim), b(dim);
    for (Index i = 0; i < dim; ++i) a[i] = scale * rng.normal();
    for (Index i = 0; i < dim; ++i) b[i] = scale * rng.normal();
    double t = rng.uniform();
    while (t <= 0.0) t = rng.uniform();
    const double gap = f(t * a + (1.0 - t) * b) - (t * f(a) + (1.0 - t) * f(b));
    ++rep.chords;
    rep.worstGap = std::max(rep.worstGap, gap);
    if (gap > tol) {
      ++rep.violations;
      if (!rep.witness) rep.witness = std::make_tuple(a, b, t, gap);
    }
  }
  return rep;
}

}  // namespace cpr
