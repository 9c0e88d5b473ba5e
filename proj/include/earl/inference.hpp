#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "earl/estimator.hpp"
#include "earl/csv.hpp"

namespace earl {

/// Maps a dataset to a fitted linear rule; must be deterministic in its input.
using RulePipeline = std::function<LinearRule(const Dataset&)>;

/// Refits nuisances and the EARL rule (optionally with CV lambda) on every call.
inline RulePipeline make_earl_pipeline(NuisanceSpec spec, EarlConfig config, bool select = false) {
  config.threads = 1;
  return [spec = std::move(spec), config, select](const Dataset& d) {
    return fit_pipeline(d, spec, config, select).fit.rule;
  };
}

struct PermutationEntry {
  std::size_t covariate = 0;  // 0-based column index
  std::string term;           // rule term whose coefficient is tested
  double coefficient = 0.0;
  double p_value = 1.0;
  int permutations = 0;       // successful refits
  int failures = 0;
};

namespace detail {

inline int linear_term_index(const LinearRule& rule, std::size_t j) {
  const int k = rule.map().find("x" + std::to_string(j + 1));
  if (k < 0)
    throw ConfigError("rule feature map has no linear term for x" + std::to_string(j + 1));
  return k;
}

inline PermutationEntry permutation_from_observed(const Dataset& data, const RulePipeline& pipeline,
                                                  const LinearRule& observed, std::size_t j, int B,
                                                  std::uint64_t seed, unsigned threads) {
  if (B < 1) throw ConfigError("permutation count must be >= 1");
  if (j >= data.p()) throw ShapeError("covariate index out of range");
  const int k = linear_term_index(observed, j);
  const double stat = std::abs(observed.beta()[k]);
  std::vector<double> perm_stat(static_cast<std::size_t>(B), std::numeric_limits<double>::quiet_NaN());
  parallel_for(static_cast<std::size_t>(B), threads, [&](std::size_t b) {
    Rng rng = make_stream(seed, (static_cast<std::uint64_t>(j) << 32) | b);
    std::vector<Eigen::Index> order(data.n());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
    std::shuffle(order.begin(), order.end(), rng);
    Vector col(static_cast<Eigen::Index>(data.n()));
    const auto jj = static_cast<Eigen::Index>(j);
    for (std::size_t i = 0; i < order.size(); ++i) col[static_cast<Eigen::Index>(i)] = data.X()(order[i], jj);
    try {
      const LinearRule r = pipeline(data.with_column(j, col));
      perm_stat[b] = std::abs(r.beta()[linear_term_index(r, j)]);
    } catch (const NumericalError&) {
    } catch (const DomainError&) {
    }
  });
  PermutationEntry e;
  e.covariate = j;
  e.term = observed.map().terms()[static_cast<std::size_t>(k)].name();
  e.coefficient = observed.beta()[k];
  int exceed = 0;
  for (double s : perm_stat) {
    if (std::isnan(s)) {
      ++e.failures;
      continue;
    }
    ++e.permutations;
    if (s >= stat) ++exceed;
  }
  if (e.failures * 20 > B)
    throw NumericalError("refit failed in more than 5% of permutations for x" + std::to_string(j + 1));
  e.p_value = (1.0 + exceed) / (1.0 + e.permutations);
  return e;
}

}  // namespace detail

/// Permutation p-value for the coefficient of covariate j: column j is
/// permuted across subjects B times, the whole pipeline refitted, and
/// p = (1 + #{|beta_j^(b)| >= |beta_j|}) / (B + 1).
inline PermutationEntry permutation_test(const Dataset& data, const RulePipeline& pipeline, std::size_t j,
                                         int B = 2000, std::uint64_t seed = 0, unsigned threads = 1) {
  const LinearRule observed = pipeline(data);
  return detail::permutation_from_observed(data, pipeline, observed, j, B, seed, threads);
}

struct PermutationReport {
  double intercept = 0.0;
  std::vector<PermutationEntry> entries;
  int permutations = 0;
};

/// Tests every covariate that enters the rule linearly.
inline PermutationReport permutation_report(const Dataset& data, const RulePipeline& pipeline, int B = 2000,
                                            std::uint64_t seed = 0, unsigned threads = 1) {
  const LinearRule observed = pipeline(data);
  PermutationReport rep;
  rep.intercept = observed.beta0();
  rep.permutations = B;
  for (std::size_t j = 0; j < data.p(); ++j)
    if (observed.map().find("x" + std::to_string(j + 1)) >= 0)
      rep.entries.push_back(detail::permutation_from_observed(data, pipeline, observed, j, B, seed, threads));
  return rep;
}

/// covariate,coefficient,p_value with the intercept first (p-value "-").
inline void write_permutation_report(const PermutationReport& rep, std::ostream& out) {
  out << "covariate,coefficient,p_value\n";
  out << "intercept," << detail::format_double(rep.intercept) << ",-\n";
  for (const auto& e : rep.entries)
    out << e.term << ',' << detail::format_double(e.coefficient) << ',' << detail::format_double(e.p_value)
        << '\n';
}

}  // namespace earl
