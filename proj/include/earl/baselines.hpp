#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "earl/estimator.hpp"

namespace earl {

enum class Method { earl, qlearning, owl, aipwe_direct };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::earl: return "earl";
    case Method::qlearning: return "qlearning";
    case Method::owl: return "owl";
    case Method::aipwe_direct: return "aipwe";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  if (s == "earl") return Method::earl;
  if (s == "qlearning" || s == "ql") return Method::qlearning;
  if (s == "owl") return Method::owl;
  if (s == "aipwe" || s == "aipwe_direct") return Method::aipwe_direct;
  throw ConfigError("unknown method '" + std::string(s) + "' (expected earl|qlearning|owl|aipwe)");
}

/// A treatment rule either of linear form sgn f(x) or of argmax form
/// sgn{Q(x,1) - Q(x,-1)}.
class TreatmentRule {
 public:
  TreatmentRule() = default;
  TreatmentRule(LinearRule r) : rule_(std::move(r)) {}
  TreatmentRule(OutcomeModel q) : rule_(std::move(q)) {}

  bool is_linear() const { return std::holds_alternative<LinearRule>(rule_); }
  const LinearRule& linear() const { return std::get<LinearRule>(rule_); }
  const OutcomeModel& argmax_model() const { return std::get<OutcomeModel>(rule_); }

  Eigen::VectorXi decisions(const Matrix& X) const {
    if (is_linear()) return linear().decisions(X);
    const OutcomeModel& q = argmax_model();
    const Vector diff = q.predict(X, 1) - q.predict(X, -1);
    return diff.unaryExpr([](double v) { return sgn(v); }).cast<int>();
  }

 private:
  std::variant<LinearRule, OutcomeModel> rule_;
};

struct BaselineFit {
  Method method = Method::qlearning;
  TreatmentRule rule;
  double objective_value = 0.0;     // EARL objective (OWL) or best AIPWE (search)
  std::vector<double> best_by_generation;  // aipwe_direct only
  bool outcome_shifted = false;     // OWL only
  double outcome_shift = 0.0;
  std::vector<std::string> warnings;
};

/// Q-learning: least-squares Q, rule argmax_a Q(x, a) with ties to +1.
inline BaselineFit qlearning_fit(const Dataset& data, const FeatureMap& outcome_map) {
  BaselineFit out;
  out.method = Method::qlearning;
  OutcomeModel q = fit_outcome(data, outcome_map);
  if (q.ridge_fallback) out.warnings.push_back("outcome design rank deficient; 1e-8 ridge added");
  out.rule = TreatmentRule(std::move(q));
  return out;
}

/// OWL objective P_n[ Y / pi(A; X) * phi(A f(X)) ] + lambda |beta|^2, written
/// directly from outcomes and propensities.
inline double owl_objective(const LinearRule& rule, const Dataset& data, const PropensityModel& pi, Loss loss,
                            double lambda) {
  const Vector f = rule.scores(data.X());
  double s = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const int a = data.a(i);
    const Vector x = data.x(i);
    s += data.y(i) / predict_propensity(pi, x, a) * phi(loss, a * f[static_cast<Eigen::Index>(i)]);
  }
  return s / static_cast<double>(data.n()) + lambda * rule.beta().squaredNorm();
}

/// Outcome weighted learning: EARL with Q == 0 and the supplied propensity.
/// Negative outcomes are shifted up by -min(Y) first and the shift recorded.
inline BaselineFit owl_fit(const Dataset& data, const PropensityModel& propensity, const EarlConfig& config) {
  BaselineFit out;
  out.method = Method::owl;
  const double ymin = data.Y().minCoeff();
  const double shift = std::min(0.0, ymin);
  Dataset shifted = data;
  if (shift < 0.0) {
    Vector y = data.Y().array() - shift;
    shifted = Dataset(data.X(), data.A(), std::move(y));
    out.outcome_shifted = true;
    out.outcome_shift = -shift;
    out.warnings.push_back("outcomes shifted by " + std::to_string(-shift) + " to be nonnegative");
  }
  const NuisanceFit nf{propensity, OutcomeModel::zero(data.p())};
  const auto w = compute_weights(shifted, nf);
  EarlFit fit = earl_fit(shifted, w, config);
  out.objective_value = fit.objective_value;
  out.rule = TreatmentRule(std::move(fit.rule));
  return out;
}

struct SearchConfig {
  int population = 100;
  int generations = 200;
  double mutation_sd = 0.1;
  int tournament = 4;
  std::uint64_t seed = 0;
  std::optional<FeatureMap> rule_map;

  void validate() const {
    if (population < 10) throw ConfigError("search population must be >= 10");
    if (generations < 1) throw ConfigError("search generations must be >= 1");
    if (tournament < 1) throw ConfigError("tournament size must be >= 1");
    if (!(mutation_sd >= 0.0)) throw ConfigError("mutation s.d. must be >= 0");
  }
};

namespace detail {

// Rescale so the non-intercept part has unit norm; sgn f is unchanged.
inline void normalize_direction(Vector& c, Rng& rng) {
  auto tail = c.tail(c.size() - 1);
  double nrm = tail.norm();
  if (nrm == 0.0 || !std::isfinite(nrm)) {
    std::normal_distribution<double> N;
    for (Eigen::Index j = 0; j < tail.size(); ++j) tail[j] = N(rng);
    nrm = tail.norm();
    c[0] = 0.0;
  }
  c /= nrm;
}

}  // namespace detail

/// Evolutionary search for the linear rule maximizing the AIPWE. Candidates
/// have unit-norm slope and a free intercept; the initial population holds
/// the Q-learning contrast projected onto the rule features plus random
/// directions. Tournament selection, uniform crossover, Gaussian mutation and
/// an elite of one; the best rule ever evaluated is returned.
inline BaselineFit aipwe_direct_search(const Dataset& data, const NuisanceFit& nuisance,
                                       const SearchConfig& config) {
  config.validate();
  const FeatureMap map = config.rule_map ? *config.rule_map : FeatureMap::linear(data.p(), false);
  const auto pred = predict_nuisance(nuisance, data);
  const auto w = compute_weights(data, pred);
  const Eigen::Index n = static_cast<Eigen::Index>(data.n());
  Vector w_pos(n), w_neg(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    w_pos[i] = w[static_cast<std::size_t>(i)].w_pos;
    w_neg[i] = w[static_cast<std::size_t>(i)].w_neg;
  }
  Matrix Z(n, static_cast<Eigen::Index>(map.size()) + 1);
  Z.col(0).setOnes();
  Z.rightCols(Z.cols() - 1) = map.design(data.X());
  const Eigen::Index q = Z.cols();
  const int P = config.population;

  // AIPWE(d) = P_n[W_{d(X)}] for every candidate at once.
  auto fitness = [&](const Matrix& C) {
    const Matrix F = Z * C;
    Vector out(C.cols());
    for (Eigen::Index k = 0; k < C.cols(); ++k) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) s += F(i, k) >= 0.0 ? w_pos[i] : w_neg[i];
      out[k] = s / static_cast<double>(n);
    }
    return out;
  };

  Rng rng = make_stream(config.seed, 0);
  std::normal_distribution<double> N;
  std::uniform_int_distribution<int> pick(0, P - 1);
  std::bernoulli_distribution coin(0.5);

  Matrix pop(q, P);
  {
    const Vector contrast = nuisance.outcome.predict(data.X(), 1) - nuisance.outcome.predict(data.X(), -1);
    Vector seed_rule = Z.colPivHouseholderQr().solve(contrast);
    if (!seed_rule.allFinite()) seed_rule.setZero();
    detail::normalize_direction(seed_rule, rng);
    pop.col(0) = seed_rule;
  }
  for (int k = 1; k < P; ++k) {
    Vector c(q);
    for (Eigen::Index j = 0; j < q; ++j) c[j] = N(rng);
    detail::normalize_direction(c, rng);
    pop.col(k) = c;
  }
  Vector fit = fitness(pop);

  BaselineFit out;
  out.method = Method::aipwe_direct;
  Eigen::Index best_k = 0;
  fit.maxCoeff(&best_k);
  Vector best = pop.col(best_k);
  double best_value = fit[best_k];

  auto tournament = [&]() {
    int winner = pick(rng);
    for (int t = 1; t < config.tournament; ++t) {
      const int c = pick(rng);
      if (fit[c] > fit[winner]) winner = c;
    }
    return winner;
  };

  for (int g = 0; g < config.generations; ++g) {
    Matrix next(q, P);
    next.col(0) = best;
    for (int k = 1; k < P; ++k) {
      const int a = tournament(), b = tournament();
      Vector child(q);
      for (Eigen::Index j = 0; j < q; ++j) child[j] = coin(rng) ? pop(j, a) : pop(j, b);
      for (Eigen::Index j = 0; j < q; ++j) child[j] += config.mutation_sd * N(rng);
      detail::normalize_direction(child, rng);
      next.col(k) = child;
    }
    pop = std::move(next);
    fit = fitness(pop);
    fit.maxCoeff(&best_k);
    if (fit[best_k] > best_value) {
      best_value = fit[best_k];
      best = pop.col(best_k);
    }
    out.best_by_generation.push_back(best_value);
  }
  out.rule = TreatmentRule(LinearRule::from_coefficients(map, best));
  out.objective_value = best_value;
  return out;
}

}  // namespace earl
