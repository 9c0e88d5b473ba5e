#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "earl/nuisance.hpp"

namespace earl {

/// Doubly-robust per-arm weights (W_1, W_-1) of one subject.
struct WeightPair {
  double w_pos = 0.0;
  double w_neg = 0.0;

  double operator[](int a) const { return a == 1 ? w_pos : w_neg; }
};

/// One row of the weighted-classification view: fitting f so that
/// label * f(x) >= 0 avoids losing `weight`.
struct ClassificationInstance {
  int label = 1;
  double weight = 0.0;
  std::size_t subject = 0;
};

/// W_a = Y I(A=a) / pi(a) - (I(A=a) - pi(a)) / pi(a) * Q(a), for a = +1, -1.
/// The unobserved arm reduces to W_a = Q(a).
inline WeightPair compute_weights(double y, int a, double pi_pos, double pi_neg, double q_pos,
                                  double q_neg) {
  check_treatment(a);
  if (!(pi_pos > 0.0 && pi_pos < 1.0) || !(pi_neg > 0.0 && pi_neg < 1.0))
    throw DomainError("propensity must lie strictly inside (0, 1)");
  auto arm = [&](int arm, double pi, double q) {
    const double ind = a == arm ? 1.0 : 0.0;
    return y * ind / pi - (ind - pi) / pi * q;
  };
  return {arm(1, pi_pos, q_pos), arm(-1, pi_neg, q_neg)};
}

inline std::vector<WeightPair> compute_weights(const Dataset& data, const NuisancePredictions& pred) {
  if (pred.size() != data.n()) throw ShapeError("nuisance predictions do not match the dataset");
  std::vector<WeightPair> w(data.n());
  for (std::size_t i = 0; i < data.n(); ++i)
    w[i] = compute_weights(data.y(i), data.a(i), pred.pi(i, 1), pred.pi(i, -1), pred.q(i, 1),
                           pred.q(i, -1));
  return w;
}

inline std::vector<WeightPair> compute_weights(const Dataset& data, const NuisanceFit& fit) {
  return compute_weights(data, predict_nuisance(fit, data));
}

/// The two weighted-classification instances a subject contributes:
/// (sgn(W_1) * 1, |W_1|) and (sgn(W_-1) * -1, |W_-1|). Zero weights stay.
inline std::array<ClassificationInstance, 2> classification_view(const WeightPair& wp,
                                                                  std::size_t subject = 0) {
  return {{{sgn(wp.w_pos), std::abs(wp.w_pos), subject},
           {-sgn(wp.w_neg), std::abs(wp.w_neg), subject}}};
}

}  // namespace earl
