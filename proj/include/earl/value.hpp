#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "earl/nuisance.hpp"

namespace earl {

enum class EstimatorKind { ipwe, aipwe, ipwe_normalized, crossfit_aggregate };

inline const char* estimator_name(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::ipwe: return "ipwe";
    case EstimatorKind::aipwe: return "aipwe";
    case EstimatorKind::ipwe_normalized: return "ipwe_normalized";
    case EstimatorKind::crossfit_aggregate: return "crossfit_aggregate";
  }
  return "?";
}

/// `n_effective` counts subjects whose observed treatment agrees with the
/// rule, i.e. those carrying an inverse-probability weight.
struct ValueEstimate {
  double estimate = 0.0;
  EstimatorKind kind = EstimatorKind::ipwe;
  std::size_t n_effective = 0;
};

namespace detail {
inline void check_decisions(const Dataset& data, const Eigen::VectorXi& d, const NuisancePredictions& pred) {
  if (static_cast<std::size_t>(d.size()) != data.n() || pred.size() != data.n())
    throw ShapeError("decisions and nuisance predictions must match the dataset");
}
}  // namespace detail

/// P_n[ Y I{A = d(X)} / pi(A; X) ].
inline ValueEstimate value_ipwe(const Dataset& data, const Eigen::VectorXi& decisions,
                                const NuisancePredictions& pred) {
  detail::check_decisions(data, decisions, pred);
  double sum = 0.0;
  std::size_t matched = 0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const int a = data.a(i);
    if (decisions[static_cast<Eigen::Index>(i)] != a) continue;
    ++matched;
    sum += data.y(i) / pred.pi(i, a);
  }
  return {sum / static_cast<double>(data.n()), EstimatorKind::ipwe, matched};
}

/// P_n[ Y I{A=d} / pi(d) - (I{A=d} - pi(d)) / pi(d) * Q(X, d) ].
inline ValueEstimate value_aipwe(const Dataset& data, const Eigen::VectorXi& decisions,
                                 const NuisancePredictions& pred) {
  detail::check_decisions(data, decisions, pred);
  double sum = 0.0;
  std::size_t matched = 0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const int d = decisions[static_cast<Eigen::Index>(i)];
    const double ind = data.a(i) == d ? 1.0 : 0.0;
    const double pi = pred.pi(i, d);
    matched += data.a(i) == d;
    sum += data.y(i) * ind / pi - (ind - pi) / pi * pred.q(i, d);
  }
  return {sum / static_cast<double>(data.n()), EstimatorKind::aipwe, matched};
}

/// Self-normalized IPWE: P_n[Y I{A=d} / pi(A)] / P_n[I{A=d} / pi(A)].
inline ValueEstimate value_ipwe_normalized(const Dataset& data, const Eigen::VectorXi& decisions,
                                           const NuisancePredictions& pred) {
  detail::check_decisions(data, decisions, pred);
  double num = 0.0, den = 0.0;
  std::size_t matched = 0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const int a = data.a(i);
    if (decisions[static_cast<Eigen::Index>(i)] != a) continue;
    ++matched;
    num += data.y(i) / pred.pi(i, a);
    den += 1.0 / pred.pi(i, a);
  }
  if (matched == 0)
    throw DomainError("rule is unsupported by the data: no subject received the recommended treatment");
  return {num / den, EstimatorKind::ipwe_normalized, matched};
}

inline ValueEstimate value_ipwe(const Dataset& data, const LinearRule& rule, const PropensityModel& pi) {
  return value_ipwe(data, rule.decisions(data.X()),
                    predict_nuisance({pi, OutcomeModel::zero(data.p())}, data));
}

inline ValueEstimate value_aipwe(const Dataset& data, const LinearRule& rule, const NuisanceFit& fit) {
  return value_aipwe(data, rule.decisions(data.X()), predict_nuisance(fit, data));
}

inline ValueEstimate value_ipwe_normalized(const Dataset& data, const LinearRule& rule,
                                           const PropensityModel& pi) {
  return value_ipwe_normalized(data, rule.decisions(data.X()),
                               predict_nuisance({pi, OutcomeModel::zero(data.p())}, data));
}

/// Artifacts of one cross-fitting fold: nuisances fitted on `nuisance_rows`
/// (I_k) and the rule fitted on `rule_rows` (the complement).
struct CrossFitFold {
  std::vector<std::size_t> nuisance_rows;
  std::vector<std::size_t> rule_rows;
  NuisanceFit nuisance;
  LinearRule rule;
};

/// Mean of per-fold value estimates.
inline ValueEstimate value_crossfit_aggregate(std::span<const double> per_fold, std::size_t n_effective = 0) {
  if (per_fold.size() < 2) throw ShapeError("cross-fit aggregation needs at least two folds");
  const double s = std::accumulate(per_fold.begin(), per_fold.end(), 0.0);
  return {s / static_cast<double>(per_fold.size()), EstimatorKind::crossfit_aggregate, n_effective};
}

/// Averages, over folds, the AIPWE of each fold's rule on its rule rows
/// using that fold's nuisance models.
inline ValueEstimate value_crossfit_aggregate(const Dataset& data, std::span<const CrossFitFold> folds) {
  if (folds.size() < 2) throw ShapeError("cross-fit aggregation needs at least two folds");
  std::vector<double> values;
  std::size_t eff = 0;
  for (const auto& f : folds) {
    if (f.rule_rows.empty()) throw ShapeError("cross-fit fold has no rule rows");
    const Dataset part = data.subset(f.rule_rows);
    const ValueEstimate v = value_aipwe(part, f.rule, f.nuisance);
    values.push_back(v.estimate);
    eff += v.n_effective;
  }
  return value_crossfit_aggregate(values, eff);
}

}  // namespace earl
