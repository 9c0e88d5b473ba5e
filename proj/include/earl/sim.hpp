#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "earl/baselines.hpp"
#include "earl/csv.hpp"

namespace earl {

/// Generative model: X ~ N(0, I_p), P(A = 1 | x) = expit(l(x)) (scenarios 1
/// and 2) or 0.025 (scenario 3), Y = sum x_j^2 + sum x_j + A c(x) + eps with
/// c(x) = x1 + x2 - 0.1 and eps ~ N(0, 1).
struct ScenarioSpec {
  int scenario = 2;
  std::size_t n = 500;
  std::size_t p = 10;

  void validate() const {
    if (scenario < 1 || scenario > 3) throw ConfigError("scenario must be 1, 2 or 3");
    if (n < 1) throw ConfigError("scenario sample size must be >= 1");
    if (p < 2) throw ConfigError("scenarios need p >= 2");
  }
};

inline constexpr double kScenario3Propensity = 0.025;

inline double contrast(std::span<const double> x) { return x[0] + x[1] - 0.1; }

/// Propensity link l(x) of scenarios 1 and 2 (logit of the constant for 3).
inline double scenario_link(int scenario, std::span<const double> x) {
  switch (scenario) {
    case 1: return x[0] + x[1] + x[0] * x[1];
    case 2: return 0.5 * x[0] - 0.5;
    default: return std::log(kScenario3Propensity / (1.0 - kScenario3Propensity));
  }
}

inline double scenario_propensity(int scenario, std::span<const double> x) {
  return scenario == 3 ? kScenario3Propensity : expit(scenario_link(scenario, x));
}

/// The data-generating propensity as a model (clip applied at prediction).
inline PropensityModel true_propensity(int scenario, std::size_t p, Clip clip = {}) {
  if (scenario == 1)
    return PropensityModel(FeatureMap::parse("terms:1,x1,x2,x1*x2", p), (Vector(4) << 0.0, 1.0, 1.0, 1.0).finished(), clip);
  if (scenario == 2) {
    Vector g(2);
    g << -0.5, 0.5;
    return PropensityModel(FeatureMap::parse("terms:1,x1", p), g, clip);
  }
  Vector g(1);
  g << std::log(kScenario3Propensity / (1.0 - kScenario3Propensity));
  return PropensityModel(FeatureMap::intercept_only(p), g, clip);
}

/// Outcome map with predictors X, X^2, A, X1 A, X2 A (plus intercept).
inline FeatureMap correct_outcome_map(std::size_t p) {
  std::vector<Term> t{Term{}};
  for (int j = 0; j < static_cast<int>(p); ++j) t.push_back({{j}, false});
  for (int j = 0; j < static_cast<int>(p); ++j) t.push_back({{j, j}, false});
  t.push_back({{}, true});
  t.push_back({{0}, true});
  t.push_back({{1}, true});
  return FeatureMap(p, std::move(t));
}

/// The true conditional mean Q(x, a) of every scenario.
inline OutcomeModel true_outcome(std::size_t p) {
  FeatureMap map = correct_outcome_map(p);
  Vector theta = Vector::Zero(static_cast<Eigen::Index>(map.size()));
  const auto ip = static_cast<Eigen::Index>(p);
  theta.segment(1, 2 * ip).setOnes();
  theta[2 * ip + 1] = -0.1;
  theta[2 * ip + 2] = 1.0;
  theta[2 * ip + 3] = 1.0;
  return OutcomeModel(std::move(map), std::move(theta));
}

namespace detail {
inline void draw_covariates(Rng& rng, Matrix& X) {
  std::normal_distribution<double> N;
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < X.cols(); ++j) X(i, j) = N(rng);
}
}  // namespace detail

inline Dataset generate_scenario(const ScenarioSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng = make_stream(seed, 0);
  const auto n = static_cast<Eigen::Index>(spec.n);
  Matrix X(n, static_cast<Eigen::Index>(spec.p));
  detail::draw_covariates(rng, X);
  Eigen::VectorXi A(n);
  Vector Y(n);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector x = X.row(i).transpose();
    const std::span<const double> xs(x.data(), spec.p);
    A[i] = U(rng) < scenario_propensity(spec.scenario, xs) ? 1 : -1;
    Y[i] = x.squaredNorm() + x.sum() + A[i] * contrast(xs) + N(rng);
  }
  return Dataset(std::move(X), std::move(A), std::move(Y));
}

/// The optimal rule sgn c(x).
struct OptimalRule {
  Eigen::VectorXi decisions(const Matrix& X) const {
    Eigen::VectorXi d(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) d[i] = sgn(X(i, 0) + X(i, 1) - 0.1);
    return d;
  }
};

/// Constant rule.
struct ConstantRule {
  int arm = 1;
  Eigen::VectorXi decisions(const Matrix& X) const { return Eigen::VectorXi::Constant(X.rows(), arm); }
};

struct McValue {
  double value = 0.0;
  double standard_error = 0.0;
};

/// Fixed set of covariate draws on which noiseless outcomes are averaged.
/// Draws are row-major from stream (seed, 0), so any two sets built from the
/// same seed share their leading rows.
class ValidationSet {
 public:
  ValidationSet(std::size_t p, std::size_t draws, std::uint64_t seed) : X_(static_cast<Eigen::Index>(draws), static_cast<Eigen::Index>(p)) {
    if (draws < 1) throw ConfigError("Monte Carlo needs at least one draw");
    Rng rng = make_stream(seed, 0);
    detail::draw_covariates(rng, X_);
    base_ = X_.rowwise().squaredNorm() + X_.rowwise().sum();
    c_ = X_.col(0).array() + X_.col(1).array() - 0.1;
  }

  const Matrix& X() const { return X_; }

  template <class Rule>
  McValue value(const Rule& rule) const {
    const Eigen::VectorXi d = rule.decisions(X_);
    const Vector v = base_ + (d.cast<double>().array() * c_.array()).matrix();
    const double m = v.mean();
    const double n = static_cast<double>(v.size());
    const double var = v.size() > 1 ? (v.array() - m).square().sum() / (n - 1.0) : 0.0;
    return {m, std::sqrt(var / n)};
  }

 private:
  Matrix X_;
  Vector base_, c_;
};

/// Monte Carlo value E[sum X_j^2 + sum X_j + d(X) c(X)] from fresh draws,
/// processed in chunks so large draw counts stay within memory.
template <class Rule>
McValue true_value_mc(const Rule& rule, const ScenarioSpec& scenario, std::size_t draws, std::uint64_t seed) {
  if (draws < 1) throw ConfigError("Monte Carlo needs at least one draw");
  Rng rng = make_stream(seed, 0);
  const std::size_t chunk = 1 << 16;
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t done = 0; done < draws; done += chunk) {
    const std::size_t m = std::min(chunk, draws - done);
    Matrix X(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(scenario.p));
    detail::draw_covariates(rng, X);
    const Eigen::VectorXi d = rule.decisions(X);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const double v = X.row(i).squaredNorm() + X.row(i).sum() + d[i] * (X(i, 0) + X(i, 1) - 0.1);
      sum += v;
      sumsq += v * v;
    }
  }
  const double n = static_cast<double>(draws);
  const double mean = sum / n;
  const double var = draws > 1 ? std::max(0.0, (sumsq - n * mean * mean) / (n - 1.0)) : 0.0;
  return {mean, std::sqrt(var / n)};
}

enum class SpecCode { CC, CI, IC, II };

inline const char* spec_name(SpecCode s) {
  switch (s) {
    case SpecCode::CC: return "CC";
    case SpecCode::CI: return "CI";
    case SpecCode::IC: return "IC";
    case SpecCode::II: return "II";
  }
  return "?";
}

inline SpecCode parse_spec(std::string_view s) {
  if (s == "CC") return SpecCode::CC;
  if (s == "CI") return SpecCode::CI;
  if (s == "IC") return SpecCode::IC;
  if (s == "II") return SpecCode::II;
  throw ConfigError("unknown model specification '" + std::string(s) + "' (expected CC|CI|IC|II)");
}

/// Nuisance working models of a specification code. First letter: the
/// propensity model (correct: x1, x2, x1x2 in scenario 1, x1 otherwise;
/// incorrect: all of X in scenario 1, intercept only otherwise). Second
/// letter: the outcome model (correct: X, X^2, A, X1 A, X2 A; incorrect:
/// X, A, X A).
inline NuisanceSpec model_spec(SpecCode code, int scenario, std::size_t p, double ridge = 0.0, Clip clip = {}) {
  const bool pi_ok = code == SpecCode::CC || code == SpecCode::CI;
  const bool q_ok = code == SpecCode::CC || code == SpecCode::IC;
  NuisanceSpec s;
  if (scenario == 1)
    s.propensity_map = pi_ok ? FeatureMap::parse("terms:1,x1,x2,x1*x2", p) : FeatureMap::linear(p, true);
  else
    s.propensity_map = pi_ok ? FeatureMap::parse("terms:1,x1", p) : FeatureMap::intercept_only(p);
  s.outcome_map = q_ok ? correct_outcome_map(p) : FeatureMap::parse("linear*a", p);
  s.ridge = ridge;
  s.clip = clip;
  return s;
}

struct MethodSpec {
  Method method = Method::earl;
  Loss loss = Loss::logistic;  // EARL only

  std::string label() const {
    return method == Method::earl ? std::string("earl-") + loss_name(loss) : method_name(method);
  }
};

inline MethodSpec parse_method_spec(std::string_view s) {
  if (s.substr(0, 5) == "earl-") return {Method::earl, parse_loss(s.substr(5))};
  const Method m = parse_method(s);
  return {m, m == Method::owl ? Loss::hinge : Loss::logistic};
}

struct ExperimentResult {
  std::string method;
  int scenario = 0;
  SpecCode spec = SpecCode::CC;
  std::size_t n = 0;
  int replicate = 0;
  double value = 0.0;
  double seconds = 0.0;
  bool failed = false;
  std::string error;
};

struct ExperimentConfig {
  std::vector<int> scenarios{1, 2};
  std::vector<SpecCode> specs{SpecCode::CC, SpecCode::CI, SpecCode::IC, SpecCode::II};
  std::vector<MethodSpec> methods{{Method::earl, Loss::logistic}, {Method::qlearning}, {Method::owl, Loss::hinge},
                                  {Method::aipwe_direct}};
  std::vector<std::size_t> n_grid{200, 500, 1000, 2500};
  int replicates = 100;
  std::uint64_t seed = 0;
  std::size_t p = 10;
  std::size_t validation_draws = 10000;
  EarlConfig earl;  // lambda grid, solver settings, threads
  bool select_lambda = true;
  bool crossfit = false;
  SearchConfig search;
  double ridge = 0.0;
  Clip clip{};
  bool record_time = false;

  void validate() const {
    if (scenarios.empty() || specs.empty() || methods.empty() || n_grid.empty())
      throw ConfigError("experiment grids must be nonempty");
    if (replicates < 1) throw ConfigError("replicates must be >= 1");
    for (int s : scenarios)
      if (s < 1 || s > 3) throw ConfigError("scenario must be 1, 2 or 3");
    earl.validate();
    search.validate();
  }
};

/// Fits one method under one specification and returns the fitted rule.
inline TreatmentRule fit_method(const Dataset& data, const MethodSpec& method, const NuisanceSpec& spec,
                                EarlConfig earl, bool select, bool crossfit, SearchConfig search) {
  switch (method.method) {
    case Method::earl: {
      earl.loss = method.loss;
      if (crossfit) {
        if (select) earl.lambda = select_lambda(data, spec, earl).lambda;
        return TreatmentRule(earl_fit_crossfit(data, spec, earl).rule);
      }
      return TreatmentRule(fit_pipeline(data, spec, earl, select).fit.rule);
    }
    case Method::qlearning: return qlearning_fit(data, spec.outcome_map).rule;
    case Method::owl: {
      earl.loss = method.loss;
      const double shift = std::min(0.0, data.Y().minCoeff());
      const Dataset shifted(data.X(), data.A(), (data.Y().array() - shift).matrix());
      const PropensityModel pi = fit_propensity(shifted, spec.propensity_map, spec.ridge, spec.clip);
      if (select) {
        NuisanceSpec owl_spec;
        owl_spec.known_propensity = pi;
        owl_spec.known_outcome = OutcomeModel::zero(data.p());
        earl.lambda = select_lambda(shifted, owl_spec, earl).lambda;
      }
      return owl_fit(shifted, pi, earl).rule;
    }
    case Method::aipwe_direct: return aipwe_direct_search(data, fit_nuisance(data, spec), search).rule;
  }
  throw ConfigError("unknown method");
}

/// Runs every (scenario, n, replicate) cell: one training set per cell shared
/// by all specifications and methods, each fitted rule valued on a common
/// Monte Carlo validation set. Deterministic given the seed and independent
/// of the thread count. Failures are recorded, not thrown.
inline std::vector<ExperimentResult> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const ValidationSet validation(cfg.p, cfg.validation_draws, cfg.seed ^ 0x5eedf00dULL);
  struct Cell {
    int scenario;
    std::size_t n;
    int replicate;
  };
  std::vector<Cell> cells;
  for (int s : cfg.scenarios)
    for (std::size_t n : cfg.n_grid)
      for (int r = 0; r < cfg.replicates; ++r) cells.push_back({s, n, r});

  std::vector<std::vector<ExperimentResult>> per_cell(cells.size());
  parallel_for(cells.size(), cfg.earl.threads, [&](std::size_t c) {
    const Cell& cell = cells[c];
    const std::uint64_t data_seed =
        cfg.seed * 0x9e3779b97f4a7c15ULL + (static_cast<std::uint64_t>(cell.scenario) << 48) +
        (static_cast<std::uint64_t>(cell.n) << 20) + static_cast<std::uint64_t>(cell.replicate);
    const Dataset data = generate_scenario({cell.scenario, cell.n, cfg.p}, data_seed);
    EarlConfig earl = cfg.earl;
    earl.threads = 1;
    earl.seed = data_seed;
    SearchConfig search = cfg.search;
    search.seed = data_seed;
    for (SpecCode code : cfg.specs) {
      const NuisanceSpec spec = model_spec(code, cell.scenario, cfg.p, cfg.ridge, cfg.clip);
      for (const MethodSpec& m : cfg.methods) {
        ExperimentResult r{m.label(), cell.scenario, code, cell.n, cell.replicate, 0.0, 0.0, false, {}};
        const auto t0 = std::chrono::steady_clock::now();
        try {
          const TreatmentRule rule = fit_method(data, m, spec, earl, cfg.select_lambda, cfg.crossfit, search);
          r.value = validation.value(rule).value;
        } catch (const std::exception& e) {
          r.failed = true;
          r.value = std::numeric_limits<double>::quiet_NaN();
          r.error = e.what();
        }
        if (cfg.record_time)
          r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        per_cell[c].push_back(std::move(r));
      }
    }
  });

  std::vector<ExperimentResult> out;
  for (auto& v : per_cell)
    for (auto& r : v) out.push_back(std::move(r));
  std::sort(out.begin(), out.end(), [](const ExperimentResult& a, const ExperimentResult& b) {
    return std::tie(a.method, a.scenario, a.spec, a.n, a.replicate) <
           std::tie(b.method, b.scenario, b.spec, b.n, b.replicate);
  });
  return out;
}

/// `method,scenario,spec,n,replicate,value,seconds`; failed replicates carry
/// value NA, and seconds is NA unless timing was recorded.
inline void write_results_csv(const std::vector<ExperimentResult>& rows, std::ostream& out, bool with_time) {
  out << "method,scenario,spec,n,replicate,value,seconds\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.scenario << ',' << spec_name(r.spec) << ',' << r.n << ',' << r.replicate << ','
        << (r.failed ? std::string("NA") : detail::format_double(r.value)) << ','
        << (with_time ? detail::format_double(r.seconds) : std::string("NA")) << '\n';
  }
}

}  // namespace earl
