#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "earl/losses.hpp"
#include "earl/parallel.hpp"
#include "earl/value.hpp"
#include "earl/weights.hpp"

namespace earl {

/// 2^-5, 2^-4, ..., 2^5.
inline std::vector<double> default_lambda_grid() {
  std::vector<double> g;
  for (int e = -5; e <= 5; ++e) g.push_back(std::ldexp(1.0, e));
  return g;
}

struct EarlConfig {
  Loss loss = Loss::logistic;
  double lambda = 1.0;
  // Feature map of f over x; linear in x when unset.
  std::optional<FeatureMap> rule_map;
  double tolerance = 1e-8;
  int max_iterations = 5000;
  int hinge_iterations = 20000;
  int folds = 2;  // K for cross-fitting
  int cv_folds = 10;
  std::vector<double> lambda_grid = default_lambda_grid();
  std::uint64_t seed = 0;
  unsigned threads = 1;

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be >= 0");
    if (folds < 2) throw ConfigError("cross-fitting needs K >= 2");
    if (cv_folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
    if (lambda_grid.empty()) throw ConfigError("lambda grid must be nonempty");
    for (double l : lambda_grid)
      if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("lambda grid values must be >= 0");
    if (!(tolerance > 0.0)) throw ConfigError("tolerance must be positive");
    if (max_iterations < 1 || hinge_iterations < 1) throw ConfigError("iteration caps must be >= 1");
  }

  FeatureMap rule_map_for(std::size_t p) const {
    if (!rule_map) return FeatureMap::linear(p, false);
    if (rule_map->input_dimension() != p)
      throw ShapeError("rule feature map dimension does not match the data");
    return *rule_map;
  }
};

struct FitDiagnostics {
  int iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
};

struct EarlFit {
  LinearRule rule;
  double objective_value = 0.0;
  double lambda_used = 0.0;
  std::vector<CrossFitFold> per_fold;  // filled by cross-fitting only
  FitDiagnostics diagnostics;
  std::vector<std::string> warnings;
};

/// The weighted-classification problem behind the objective: per subject a
/// feature row z (intercept first) and two labelled, weighted instances.
struct WeightedProblem {
  Matrix Z;
  Vector w1, l1, w2, l2;

  WeightedProblem(const Matrix& rule_design, std::span<const WeightPair> weights) {
    const Eigen::Index n = rule_design.rows();
    if (static_cast<std::size_t>(n) != weights.size())
      throw ShapeError("weights are not aligned with the data rows");
    Z.resize(n, rule_design.cols() + 1);
    Z.col(0).setOnes();
    Z.rightCols(rule_design.cols()) = rule_design;
    w1.resize(n), l1.resize(n), w2.resize(n), l2.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto inst = classification_view(weights[static_cast<std::size_t>(i)]);
      if (!std::isfinite(inst[0].weight) || !std::isfinite(inst[1].weight))
        throw DomainError("weights must be finite");
      l1[i] = inst[0].label, w1[i] = inst[0].weight;
      l2[i] = inst[1].label, w2[i] = inst[1].weight;
    }
  }

  Eigen::Index n() const { return Z.rows(); }
  Eigen::Index q() const { return Z.cols(); }
};

namespace detail {

struct LossFns {
  Loss loss;
  double value(double t) const { return phi(loss, t); }
  double grad(double t) const { return phi_grad(loss, t); }
  double hess(double t) const { return phi_hess(loss, t); }
};

// Hinge with the corner rounded over [1 - delta, 1].
struct SmoothedHinge {
  double delta;
  double value(double t) const {
    if (t >= 1.0) return 0.0;
    if (t <= 1.0 - delta) return 1.0 - t - 0.5 * delta;
    return (1.0 - t) * (1.0 - t) / (2.0 * delta);
  }
  double grad(double t) const {
    if (t >= 1.0) return 0.0;
    if (t <= 1.0 - delta) return -1.0;
    return -(1.0 - t) / delta;
  }
  double hess(double t) const { return (t < 1.0 && t > 1.0 - delta) ? 1.0 / delta : 0.0; }
};

inline double penalty(const Vector& beta, double lambda) {
  return lambda * beta.tail(beta.size() - 1).squaredNorm();
}

template <class Fns>
double objective(const WeightedProblem& pr, const Fns& fns, double lambda, const Vector& beta) {
  const Vector f = pr.Z * beta;
  double s = 0.0;
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    if (pr.w1[i] != 0.0) s += pr.w1[i] * fns.value(pr.l1[i] * f[i]);
    if (pr.w2[i] != 0.0) s += pr.w2[i] * fns.value(pr.l2[i] * f[i]);
  }
  return s / static_cast<double>(pr.n()) + penalty(beta, lambda);
}

template <class Fns>
Vector gradient(const WeightedProblem& pr, const Fns& fns, double lambda, const Vector& beta) {
  const Vector f = pr.Z * beta;
  Vector g(f.size());
  for (Eigen::Index i = 0; i < f.size(); ++i)
    g[i] = pr.w1[i] * pr.l1[i] * fns.grad(pr.l1[i] * f[i]) + pr.w2[i] * pr.l2[i] * fns.grad(pr.l2[i] * f[i]);
  Vector out = pr.Z.transpose() * g / static_cast<double>(pr.n());
  out.tail(out.size() - 1) += 2.0 * lambda * beta.tail(beta.size() - 1);
  return out;
}

template <class Fns>
Matrix hessian(const WeightedProblem& pr, const Fns& fns, double lambda, const Vector& beta) {
  const Vector f = pr.Z * beta;
  Vector h(f.size());
  for (Eigen::Index i = 0; i < f.size(); ++i)
    h[i] = pr.w1[i] * fns.hess(pr.l1[i] * f[i]) + pr.w2[i] * fns.hess(pr.l2[i] * f[i]);
  Matrix H = Matrix::Zero(pr.q(), pr.q());
  H.selfadjointView<Eigen::Lower>().rankUpdate(pr.Z.transpose() * h.cwiseSqrt().asDiagonal());
  H = H.selfadjointView<Eigen::Lower>();
  H /= static_cast<double>(pr.n());
  H.diagonal().tail(H.rows() - 1).array() += 2.0 * lambda;
  return H;
}

struct SolveResult {
  Vector beta;
  double value;
  FitDiagnostics diag;
};

// Damped Newton with Armijo backtracking. Stops when |grad| < tol.
template <class Fns>
SolveResult newton(const WeightedProblem& pr, const Fns& fns, double lambda, Vector beta, double tol,
                   int max_iterations) {
  double F = objective(pr, fns, lambda, beta);
  if (!std::isfinite(F)) throw NumericalError("objective is not finite at the starting point");
  Vector g = gradient(pr, fns, lambda, beta);
  SolveResult best{beta, F, {0, g.norm(), false}};
  int it = 0;
  for (; it < max_iterations; ++it) {
    const double gn = g.norm();
    if (gn < tol) {
      best = {beta, F, {it, gn, true}};
      return best;
    }
    Matrix H = hessian(pr, fns, lambda, beta);
    const double scale = std::max(1e-300, H.diagonal().cwiseAbs().maxCoeff());
    double mu = 0.0;
    Vector d;
    for (int tries = 0;; ++tries) {
      Matrix Hm = H;
      Hm.diagonal().array() += mu;
      Eigen::LDLT<Matrix> ldlt(Hm);
      if (ldlt.info() == Eigen::Success && ldlt.isPositive() &&
          ldlt.vectorD().minCoeff() > 1e-13 * scale) {
        d = -ldlt.solve(g);
        if (d.allFinite() && g.dot(d) < 0) break;
      }
      mu = mu == 0.0 ? 1e-10 * scale + 1e-12 : mu * 10.0;
      if (tries > 40) {
        d = -g;
        break;
      }
    }
    const double slope = g.dot(d);
    double t = 1.0;
    bool accepted = false;
    Vector next;
    double Fn = F;
    Vector gnext;
    while (t > 1e-14) {
      next = beta + t * d;
      Fn = objective(pr, fns, lambda, next);
      if (!std::isfinite(Fn)) {
        t *= 0.5;
        continue;
      }
      if (Fn <= F + 1e-4 * t * slope) {
        accepted = true;
        gnext = gradient(pr, fns, lambda, next);
        break;
      }
      // Near the optimum rounding hides the decrease; accept when the
      // gradient still shrinks and the objective is flat to rounding.
      if (Fn <= F + 1e-14 * (1.0 + std::abs(F))) {
        gnext = gradient(pr, fns, lambda, next);
        if (gnext.norm() < gn) {
          accepted = true;
          break;
        }
      }
      t *= 0.5;
    }
    if (!accepted) break;
    beta = std::move(next);
    F = Fn;
    g = std::move(gnext);
    if (!std::isfinite(F) || !beta.allFinite())
      throw NumericalError("objective became non-finite during optimization");
    if (F <= best.value) best = {beta, F, {it + 1, g.norm(), false}};
  }
  const double gn = g.norm();
  if (gn < tol) return {beta, F, {it, gn, true}};
  best.diag.iterations = it;
  return best;
}

// Minimizes the hinge objective over the intercept alone (a weighted median
// of the instance breakpoints), keeping the other coefficients fixed.
inline double hinge_best_intercept(const WeightedProblem& pr, const Vector& beta) {
  const Vector r = pr.Z.rightCols(pr.q() - 1) * beta.tail(beta.size() - 1);
  std::vector<std::pair<double, double>> bp;  // (breakpoint, weight)
  bp.reserve(static_cast<std::size_t>(2 * pr.n()));
  double slope = 0.0;
  auto add = [&](double label, double w, double ri) {
    if (w == 0.0) return;
    bp.emplace_back(label - ri, w);  // term w * max(0, 1 - label (b + r))
    if (label > 0) slope -= w;       // active as b -> -inf
  };
  for (Eigen::Index i = 0; i < pr.n(); ++i) {
    add(pr.l1[i], pr.w1[i], r[i]);
    add(pr.l2[i], pr.w2[i], r[i]);
  }
  if (bp.empty()) return beta[0];
  std::sort(bp.begin(), bp.end());
  if (slope >= 0) return bp.front().first;
  for (const auto& [b, w] : bp) {
    slope += w;
    if (slope >= 0) return b;
  }
  return bp.back().first;
}

inline SolveResult hinge_solve(const WeightedProblem& pr, double lambda, double tol, int max_newton,
                               int subgradient_iterations) {
  const LossFns hinge{Loss::hinge};
  const Eigen::Index q = pr.q();
  Vector beta = Vector::Zero(q);
  // Continuation over smoothed hinges gives a near-optimal starting point.
  for (double delta : {1.0, 0.3, 0.1, 0.03, 0.01, 0.003, 0.001})
    beta = newton(pr, SmoothedHinge{delta}, lambda, beta, tol, std::min(max_newton, 200)).beta;
  Vector best = beta;
  double best_F = objective(pr, hinge, lambda, best);

  // Subgradient descent with steps c / sqrt(t), keeping the best iterate and
  // the running average.
  Vector x = beta, avg = beta;
  Vector g0 = gradient(pr, hinge, lambda, x);
  const double c = 0.1 * std::max(1.0, x.norm()) / std::max(g0.norm(), 1e-12);
  int since_improvement = 0;
  int t = 1;
  for (; t <= subgradient_iterations && since_improvement < 1000; ++t) {
    const Vector g = gradient(pr, hinge, lambda, x);
    const double gn = g.norm();
    if (gn == 0.0) break;
    x -= (c / std::sqrt(static_cast<double>(t))) * g;
    avg += (x - avg) / static_cast<double>(t + 1);
    ++since_improvement;
    for (const Vector* cand : {&x, &avg}) {
      const double F = objective(pr, hinge, lambda, *cand);
      if (F < best_F - 1e-15 * std::abs(best_F)) {
        best_F = F;
        best = *cand;
        since_improvement = 0;
      }
    }
  }

  // Polish: exact intercept, then a golden-section search over the scale of
  // the non-intercept coefficients with the intercept re-optimized.
  auto with_best_b = [&](Vector v) {
    v[0] = hinge_best_intercept(pr, v);
    return v;
  };
  auto consider = [&](const Vector& v) {
    const double F = objective(pr, hinge, lambda, v);
    if (F < best_F) best_F = F, best = v;
  };
  consider(with_best_b(best));
  const Vector dir = best;
  auto h = [&](double s) {
    Vector v = dir;
    v.tail(q - 1) *= s;
    v = with_best_b(v);
    return std::make_pair(objective(pr, hinge, lambda, v), v);
  };
  double a = 0.0, b = 2.0;
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double c1 = b - gr * (b - a), c2 = a + gr * (b - a);
  auto h1 = h(c1), h2 = h(c2);
  for (int k = 0; k < 60; ++k) {
    if (h1.first <= h2.first) {
      b = c2, c2 = c1, h2 = h1;
      c1 = b - gr * (b - a), h1 = h(c1);
    } else {
      a = c1, c1 = c2, h1 = h2;
      c2 = a + gr * (b - a), h2 = h(c2);
    }
  }
  consider(h1.second);
  consider(h2.second);
  consider(h(1.0).second);

  const Vector g = gradient(pr, hinge, lambda, best);
  return {best, best_F, {t - 1, g.norm(), false}};
}

}  // namespace detail

/// P_n[ |W_1| phi(sgn(W_1) f(X)) + |W_-1| phi(-sgn(W_-1) f(X)) ] + lambda |beta|^2,
/// the penalty leaving the intercept out.
inline double earl_objective(const LinearRule& rule, std::span<const WeightPair> weights,
                             const Dataset& data, Loss loss, double lambda) {
  const WeightedProblem pr(rule.map().design(data.X()), weights);
  return detail::objective(pr, detail::LossFns{loss}, lambda, rule.coefficients());
}

/// Gradient of earl_objective with respect to (beta0, beta).
inline Vector earl_gradient(const LinearRule& rule, std::span<const WeightPair> weights,
                            const Dataset& data, Loss loss, double lambda) {
  const WeightedProblem pr(rule.map().design(data.X()), weights);
  return detail::gradient(pr, detail::LossFns{loss}, lambda, rule.coefficients());
}

/// Weighted 0-1 objective whose minimizer over rules is the AIPWE maximizer:
/// P_n[ |W_1| I{sgn(W_1) d < 0} + |W_-1| I{-sgn(W_-1) d < 0} ] for decisions d.
inline double weighted_zero_one_objective(std::span<const WeightPair> weights,
                                          const Eigen::VectorXi& decisions) {
  if (static_cast<std::size_t>(decisions.size()) != weights.size())
    throw ShapeError("decisions are not aligned with the weights");
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const int d = decisions[static_cast<Eigen::Index>(i)];
    for (const auto& inst : classification_view(weights[i], i))
      if (inst.label * d < 0) s += inst.weight;
  }
  return s / static_cast<double>(weights.size());
}

/// Minimizes the EARL objective over linear rules. Smooth losses use damped
/// Newton; hinge uses smoothed-hinge continuation followed by subgradient
/// descent and an exact one-dimensional polish.
inline EarlFit earl_fit(const Dataset& data, std::span<const WeightPair> weights, const EarlConfig& config) {
  config.validate();
  const FeatureMap map = config.rule_map_for(data.p());
  const WeightedProblem pr(map.design(data.X()), weights);
  const Vector zero = Vector::Zero(pr.q());

  detail::SolveResult res;
  if (config.loss == Loss::hinge) {
    res = detail::hinge_solve(pr, config.lambda, config.tolerance, config.max_iterations,
                              config.hinge_iterations);
  } else {
    res = detail::newton(pr, detail::LossFns{config.loss}, config.lambda, zero, config.tolerance,
                         config.max_iterations);
  }
  const double F0 = detail::objective(pr, detail::LossFns{config.loss}, config.lambda, zero);
  if (!std::isfinite(res.value)) throw NumericalError("EARL objective is not finite at the solution");
  if (res.value > F0) {
    res.beta = zero;
    res.value = F0;
  }
  EarlFit fit;
  fit.rule = LinearRule::from_coefficients(map, res.beta);
  fit.objective_value = res.value;
  fit.lambda_used = config.lambda;
  fit.diagnostics = res.diag;
  return fit;
}

inline bool propensity_needs_both_arms(const NuisanceSpec& spec) {
  return !spec.known_propensity && !spec.propensity_map.empty() && spec.ridge == 0.0;
}

/// Sample-splitting EARL: nuisances fitted on fold I_k, the rule fitted on
/// the complement with those nuisances, and the K rules averaged
/// coefficient-wise. Folds lacking a treatment arm are merged into a
/// neighbour while K > 2.
/// The folds must partition 0..n-1, each sorted.
inline EarlFit earl_fit_crossfit(const Dataset& data, const NuisanceSpec& spec, const EarlConfig& config,
                                 std::vector<std::vector<std::size_t>> folds) {
  config.validate();
  if (folds.size() < 2) throw ConfigError("cross-fitting needs at least two folds");
  {
    std::vector<std::size_t> all;
    for (const auto& f : folds) {
      if (f.empty() || !std::is_sorted(f.begin(), f.end())) throw ConfigError("folds must be nonempty and sorted");
      all.insert(all.end(), f.begin(), f.end());
    }
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i)
      if (all[i] != i || all.size() != data.n()) throw ConfigError("folds must partition the rows");
  }
  std::vector<std::string> warnings;

  auto single_arm = [&](const std::vector<std::size_t>& rows) {
    bool pos = false, neg = false;
    for (auto i : rows) (data.a(i) == 1 ? pos : neg) = true;
    return !(pos && neg);
  };
  if (propensity_needs_both_arms(spec)) {
    for (std::size_t k = 0; k < folds.size();) {
      if (!single_arm(folds[k])) {
        ++k;
        continue;
      }
      if (folds.size() <= 2)
        throw DomainError("cross-fitting fold " + std::to_string(k + 1) +
                          " contains a single treatment arm and K = 2 leaves nothing to merge");
      const std::size_t other = k + 1 < folds.size() ? k + 1 : k - 1;
      folds[other].insert(folds[other].end(), folds[k].begin(), folds[k].end());
      std::sort(folds[other].begin(), folds[other].end());
      folds.erase(folds.begin() + static_cast<std::ptrdiff_t>(k));
      warnings.push_back("fold with a single treatment arm merged; K reduced to " +
                         std::to_string(folds.size()));
      k = 0;
    }
  }

  const FeatureMap map = config.rule_map_for(data.p());
  std::vector<CrossFitFold> out(folds.size());
  std::vector<EarlFit> fits(folds.size());
  parallel_for(folds.size(), config.threads, [&](std::size_t k) {
    CrossFitFold& f = out[k];
    f.nuisance_rows = folds[k];
    f.rule_rows = complement(data.n(), folds[k]);
    f.nuisance = fit_nuisance(data.subset(f.nuisance_rows), spec);
    const Dataset part = data.subset(f.rule_rows);
    const auto w = compute_weights(part, f.nuisance);
    EarlConfig c = config;
    c.rule_map = map;
    fits[k] = earl_fit(part, w, c);
    f.rule = fits[k].rule;
  });

  Vector sum = Vector::Zero(static_cast<Eigen::Index>(map.size()) + 1);
  for (const auto& f : out) sum += f.rule.coefficients();
  const Vector mean = sum / static_cast<double>(out.size());

  EarlFit agg;
  agg.rule = LinearRule::from_coefficients(map, mean);
  agg.lambda_used = config.lambda;
  double obj = 0.0;
  for (std::size_t k = 0; k < out.size(); ++k) {
    const Dataset part = data.subset(out[k].rule_rows);
    obj += earl_objective(agg.rule, compute_weights(part, out[k].nuisance), part, config.loss,
                          config.lambda);
    agg.diagnostics.iterations += fits[k].diagnostics.iterations;
  }
  agg.objective_value = obj / static_cast<double>(out.size());
  agg.diagnostics.converged = std::all_of(fits.begin(), fits.end(), [](const EarlFit& f) {
    return f.diagnostics.converged;
  });
  agg.per_fold = std::move(out);
  agg.warnings = std::move(warnings);
  return agg;
}

inline EarlFit earl_fit_crossfit(const Dataset& data, const NuisanceSpec& spec, const EarlConfig& config) {
  config.validate();
  const auto K = static_cast<std::size_t>(config.folds);
  if (data.n() < 2 * K) throw ShapeError("cross-fitting needs n >= 2K");
  Rng rng = make_stream(config.seed, 0);
  return earl_fit_crossfit(data, spec, config, random_folds(data.n(), K, rng));
}

struct CvRow {
  double lambda = 0.0;
  double mean_value = 0.0;
  std::vector<double> fold_values;
};

struct LambdaSelection {
  double lambda = 0.0;
  std::vector<CvRow> table;
};

/// Cross-validated choice of lambda. For every split the nuisances are
/// refitted on the training folds; each lambda's rule is fitted on the
/// training folds and scored by the AIPWE on the held-out fold with those
/// training-fold nuisances. The largest mean held-out value wins, ties going
/// to the larger lambda.
inline LambdaSelection select_lambda(const Dataset& data, const NuisanceSpec& spec, const EarlConfig& config) {
  config.validate();
  const auto V = static_cast<std::size_t>(config.cv_folds);
  if (data.n() < V) throw ShapeError("cross-validation needs n >= cv_folds");
  const FeatureMap map = config.rule_map_for(data.p());
  Rng rng = make_stream(config.seed, 1);
  const auto folds = random_folds(data.n(), V, rng);
  const std::size_t G = config.lambda_grid.size();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<double>> values(G, std::vector<double>(V, nan));

  parallel_for(V, config.threads, [&](std::size_t v) {
    const Dataset train = data.subset(complement(data.n(), folds[v]));
    const Dataset test = data.subset(folds[v]);
    NuisanceFit nf;
    try {
      nf = fit_nuisance(train, spec);
    } catch (const NumericalError&) {
      return;
    }
    const auto w = compute_weights(train, nf);
    const auto pred = predict_nuisance(nf, test);
    for (std::size_t g = 0; g < G; ++g) {
      EarlConfig c = config;
      c.rule_map = map;
      c.lambda = config.lambda_grid[g];
      c.threads = 1;
      try {
        const EarlFit fit = earl_fit(train, w, c);
        values[g][v] = value_aipwe(test, fit.rule.decisions(test.X()), pred).estimate;
      } catch (const NumericalError&) {
      }
    }
  });

  LambdaSelection sel;
  bool found = false;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < G; ++g) {
    CvRow row{config.lambda_grid[g], 0.0, values[g]};
    for (double v : values[g]) row.mean_value += v;
    row.mean_value /= static_cast<double>(V);
    if (std::isfinite(row.mean_value) &&
        (!found || row.mean_value > best || (row.mean_value == best && row.lambda > sel.lambda))) {
      found = true;
      best = row.mean_value;
      sel.lambda = row.lambda;
    }
    sel.table.push_back(std::move(row));
  }
  if (!found) throw NumericalError("every cross-validated value was non-finite");
  return sel;
}

/// Full-sample EARL pipeline: nuisances on all data, optional CV choice of
/// lambda, then the rule fit.
struct PipelineFit {
  NuisanceFit nuisance;
  EarlFit fit;
  std::optional<LambdaSelection> selection;
};

inline PipelineFit fit_pipeline(const Dataset& data, const NuisanceSpec& spec, EarlConfig config,
                                bool select) {
  PipelineFit out;
  if (select) {
    out.selection = select_lambda(data, spec, config);
    config.lambda = out.selection->lambda;
  }
  out.nuisance = fit_nuisance(data, spec);
  const auto w = compute_weights(data, out.nuisance);
  out.fit = earl_fit(data, w, config);
  if (out.nuisance.outcome.ridge_fallback)
    out.fit.warnings.push_back("outcome design rank deficient; 1e-8 ridge added");
  if (out.nuisance.outcome.bound_warning)
    out.fit.warnings.push_back("fitted |Q| exceeds 10 * max|Y|");
  return out;
}

}  // namespace earl
