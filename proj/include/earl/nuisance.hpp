#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "earl/core.hpp"

namespace earl {

/// Probability bounds applied to every propensity prediction.
struct Clip {
  double lo = 0.01;
  double hi = 0.99;

  void validate() const {
    if (!(lo > 0.0 && lo <= hi && hi < 1.0))
      throw ConfigError("propensity clip must satisfy 0 < lo <= hi < 1");
  }
  double apply(double p) const { return std::clamp(p, lo, hi); }
};

inline double expit(double eta) {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

/// log(1 + e^t) without overflow.
inline double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

/// Logistic model for P(A = +1 | x) over a feature map of x.
class PropensityModel {
 public:
  PropensityModel() = default;

  PropensityModel(FeatureMap map, Vector gamma, Clip clip = {}, double ridge = 0.0)
      : map_(std::move(map)), gamma_(std::move(gamma)), clip_(clip), ridge_(ridge) {
    clip_.validate();
    if (map_.uses_treatment()) throw ConfigError("propensity map must not use the treatment");
    if (static_cast<std::size_t>(gamma_.size()) != map_.size())
      throw ShapeError("propensity coefficients do not match the feature map");
    if (ridge_ < 0) throw ConfigError("ridge must be nonnegative");
  }

  const FeatureMap& map() const { return map_; }
  const Vector& gamma() const { return gamma_; }
  const Clip& clip() const { return clip_; }
  double ridge() const { return ridge_; }

  /// Unclipped P(A = +1 | x).
  double raw(std::span<const double> x) const {
    return map_.empty() ? 0.5 : expit(gamma_.dot(map_.features(x)));
  }

  /// Unclipped P(A = +1 | x) for every row.
  Vector raw(const Matrix& X) const {
    if (map_.empty()) return Vector::Constant(X.rows(), 0.5);
    Vector eta = map_.design(X) * gamma_;
    return eta.unaryExpr([](double e) { return expit(e); });
  }

  // IRLS diagnostics; empty for models built from known coefficients.
  std::vector<double> objective_trace;
  int iterations = 0;

 private:
  FeatureMap map_;
  Vector gamma_;
  Clip clip_;
  double ridge_ = 0.0;
};

/// Clipped propensity pi(a; x). The pair pi(1;x), pi(-1;x) sums to one
/// before clipping but need not afterwards when the clip is asymmetric.
inline double predict_propensity(const PropensityModel& model, std::span<const double> x, int a) {
  check_treatment(a);
  const double p1 = model.raw(x);
  return model.clip().apply(a == 1 ? p1 : 1.0 - p1);
}

inline double predict_propensity(const PropensityModel& model, const Vector& x, int a) {
  return predict_propensity(model, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), a);
}

/// Maximizes the Bernoulli log-likelihood of I(A = 1) given features(x),
/// minus (ridge / 2) * |gamma|^2 over every non-intercept coefficient, by
/// Newton-Raphson (IRLS) with step halving. Converged when the largest
/// absolute score component, divided by n, drops below 1e-8.
inline PropensityModel fit_propensity(const Dataset& data, const FeatureMap& map, double ridge = 0.0,
                                      Clip clip = {}) {
  clip.validate();
  if (ridge < 0) throw ConfigError("ridge must be nonnegative");
  if (map.uses_treatment()) throw ConfigError("propensity map must not use the treatment");
  const auto q = static_cast<Eigen::Index>(map.size());
  if (q == 0) return PropensityModel(map, Vector(), clip, ridge);
  if (ridge == 0.0 && (data.count_arm(1) == 0 || data.count_arm(-1) == 0))
    throw NumericalError(
        "propensity fit cannot converge: only one treatment arm is present (perfect separation); "
        "use ridge > 0");

  const Matrix Z = map.design(data.X());
  const Vector z = (data.A().array() == 1).cast<double>();
  const double n = static_cast<double>(data.n());
  Vector penalty = Vector::Constant(q, ridge);
  if (map.has_intercept()) penalty[0] = 0.0;

  auto objective = [&](const Vector& g) {
    const Vector eta = Z * g;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i)
      ll += z[i] > 0.5 ? -softplus(-eta[i]) : -softplus(eta[i]);
    return ll - 0.5 * (penalty.array() * g.array().square()).sum();
  };

  Vector gamma = Vector::Zero(q);
  double obj = objective(gamma);
  std::vector<double> trace{obj};
  bool converged = false;
  int it = 0;
  for (; it < 100; ++it) {
    const Vector eta = Z * gamma;
    Vector mu(eta.size()), w(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      mu[i] = expit(eta[i]);
      w[i] = mu[i] * (1.0 - mu[i]);
    }
    const Vector score = Z.transpose() * (z - mu) - (penalty.array() * gamma.array()).matrix();
    if (score.cwiseAbs().maxCoeff() / n < 1e-8) {
      converged = true;
      break;
    }
    Matrix H = Z.transpose() * w.asDiagonal() * Z;
    H.diagonal() += penalty;
    Eigen::LDLT<Matrix> ldlt(H);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 1e-14 * std::max(1.0, ldlt.vectorD().maxCoeff()))
      throw NumericalError("propensity fit: singular weighted normal equations");
    const Vector step = ldlt.solve(score);
    double t = 1.0;
    Vector next = gamma + step;
    double next_obj = objective(next);
    while (!(next_obj >= obj) && t > 1e-10) {
      t *= 0.5;
      next = gamma + t * step;
      next_obj = objective(next);
    }
    if (!(next_obj >= obj)) break;  // no ascent possible at machine precision
    gamma = std::move(next);
    obj = next_obj;
    trace.push_back(obj);
    if (ridge == 0.0 && gamma.cwiseAbs().maxCoeff() > 50.0)
      throw NumericalError(
          "propensity fit diverging (perfect or quasi-complete separation); use ridge > 0");
  }
  if (ridge == 0.0) {
    // Under complete separation the score vanishes numerically long before
    // the coefficients stop growing; every fitted probability is saturated.
    const Vector eta = Z * gamma;
    bool saturated = true;
    for (Eigen::Index i = 0; i < eta.size() && saturated; ++i)
      saturated = std::abs(z[i] - expit(eta[i])) < 1e-6;
    if (saturated)
      throw NumericalError("propensity fit diverging (perfect separation); use ridge > 0");
  }
  if (!converged) {
    // Accept a stalled iterate only when it is a stationary point to within
    // floating-point resolution.
    const Vector eta = Z * gamma;
    Vector mu = eta.unaryExpr([](double e) { return expit(e); });
    const Vector score = Z.transpose() * (z - mu) - (penalty.array() * gamma.array()).matrix();
    if (score.cwiseAbs().maxCoeff() / n > 1e-6)
      throw NumericalError(ridge == 0.0
                               ? "propensity fit did not converge in 100 iterations; use ridge > 0"
                               : "propensity fit did not converge in 100 iterations");
  }
  PropensityModel model(map, std::move(gamma), clip, ridge);
  model.objective_trace = std::move(trace);
  model.iterations = it;
  return model;
}

/// Linear model Q(x, a) = theta' features(x, a).
class OutcomeModel {
 public:
  OutcomeModel() = default;

  OutcomeModel(FeatureMap map, Vector theta) : map_(std::move(map)), theta_(std::move(theta)) {
    if (static_cast<std::size_t>(theta_.size()) != map_.size())
      throw ShapeError("outcome coefficients do not match the feature map");
  }

  /// Q == 0 everywhere.
  static OutcomeModel zero(std::size_t p) { return OutcomeModel(FeatureMap(p, {}), Vector()); }

  const FeatureMap& map() const { return map_; }
  const Vector& theta() const { return theta_; }
  bool is_zero() const { return map_.empty() || theta_.isZero(0.0); }

  Vector predict(const Matrix& X, int a) const {
    if (map_.empty()) return Vector::Zero(X.rows());
    return map_.design(X, a) * theta_;
  }

  // Set when the design was rank deficient and a 1e-8 ridge was added.
  bool ridge_fallback = false;
  // Set when some fitted |Q| exceeds 10 * max|Y| on the training data.
  bool bound_warning = false;

 private:
  FeatureMap map_;
  Vector theta_;
};

inline double predict_q(const OutcomeModel& model, std::span<const double> x, int a) {
  check_treatment(a);
  if (model.map().empty()) return 0.0;
  return model.theta().dot(model.map().features(x, a));
}

inline double predict_q(const OutcomeModel& model, const Vector& x, int a) {
  return predict_q(model, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), a);
}

/// Ordinary least squares of Y on features(x, a). A rank-deficient design
/// gets 1e-8 added to the normal-equation diagonal and `ridge_fallback` set.
inline OutcomeModel fit_outcome(const Dataset& data, const FeatureMap& map) {
  const auto q = static_cast<Eigen::Index>(map.size());
  if (q == 0) return OutcomeModel(map, Vector());
  const Matrix Z = map.design(data.X(), data.A());
  Eigen::ColPivHouseholderQR<Matrix> qr(Z);
  Vector theta;
  bool fallback = false;
  if (qr.rank() == q) {
    theta = qr.solve(data.Y());
  } else {
    Matrix G = Z.transpose() * Z;
    G.diagonal().array() += 1e-8;
    theta = G.ldlt().solve(Z.transpose() * data.Y());
    fallback = true;
  }
  if (!theta.allFinite()) throw NumericalError("outcome regression produced non-finite coefficients");
  OutcomeModel model(map, std::move(theta));
  model.ridge_fallback = fallback;
  const double ymax = data.Y().cwiseAbs().maxCoeff();
  const double qmax = std::max(model.predict(data.X(), 1).cwiseAbs().maxCoeff(),
                               model.predict(data.X(), -1).cwiseAbs().maxCoeff());
  model.bound_warning = qmax > 10.0 * ymax;
  return model;
}

/// How to obtain the two nuisance models from a sample. Known models, when
/// present, are used as-is instead of being fitted.
struct NuisanceSpec {
  FeatureMap propensity_map;
  FeatureMap outcome_map;
  double ridge = 0.0;
  Clip clip{};
  std::optional<PropensityModel> known_propensity;
  std::optional<OutcomeModel> known_outcome;
};

struct NuisanceFit {
  PropensityModel propensity;
  OutcomeModel outcome;
};

inline NuisanceFit fit_nuisance(const Dataset& data, const NuisanceSpec& spec) {
  return {spec.known_propensity ? *spec.known_propensity
                                : fit_propensity(data, spec.propensity_map, spec.ridge, spec.clip),
          spec.known_outcome ? *spec.known_outcome : fit_outcome(data, spec.outcome_map)};
}

/// Per-subject clipped propensities and outcome predictions for both arms.
struct NuisancePredictions {
  Vector pi_pos, pi_neg, q_pos, q_neg;

  std::size_t size() const { return static_cast<std::size_t>(pi_pos.size()); }
  double pi(std::size_t i, int a) const {
    return a == 1 ? pi_pos[static_cast<Eigen::Index>(i)] : pi_neg[static_cast<Eigen::Index>(i)];
  }
  double q(std::size_t i, int a) const {
    return a == 1 ? q_pos[static_cast<Eigen::Index>(i)] : q_neg[static_cast<Eigen::Index>(i)];
  }
};

inline NuisancePredictions predict_nuisance(const NuisanceFit& fit, const Matrix& X) {
  NuisancePredictions out;
  const Vector raw = fit.propensity.raw(X);
  const Clip& c = fit.propensity.clip();
  out.pi_pos = raw.unaryExpr([&](double p) { return c.apply(p); });
  out.pi_neg = raw.unaryExpr([&](double p) { return c.apply(1.0 - p); });
  out.q_pos = fit.outcome.predict(X, 1);
  out.q_neg = fit.outcome.predict(X, -1);
  return out;
}

inline NuisancePredictions predict_nuisance(const NuisanceFit& fit, const Dataset& data) {
  return predict_nuisance(fit, data.X());
}

}  // namespace earl
