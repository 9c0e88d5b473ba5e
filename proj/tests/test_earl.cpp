#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "support.hpp"

using namespace earl;

namespace {

std::vector<WeightPair> random_weights(Rng& rng, std::size_t n) {
  std::normal_distribution<double> N(0.0, 2.0);
  std::vector<WeightPair> w(n);
  for (auto& x : w) x = {N(rng), N(rng)};
  return w;
}

EarlConfig config_for(Loss loss, double lambda) {
  EarlConfig c;
  c.loss = loss;
  c.lambda = lambda;
  return c;
}

}  // namespace

TEST(Objective, HandEvaluatedExample) {
  Matrix X(1, 1);
  X << 0.5;
  const Dataset d(X, Eigen::VectorXi::Ones(1), Vector::Zero(1));
  const std::vector<WeightPair> w{{2.0, -1.0}};
  const LinearRule r(FeatureMap::linear(1, false), 0.2, Vector::Constant(1, 1.0));
  EXPECT_NEAR(earl_objective(r, w, d, Loss::logistic, 0.0), 3.0 * std::log1p(std::exp(-0.7)), 1e-14);
  EXPECT_NEAR(earl_objective(r, w, d, Loss::logistic, 0.25), 3.0 * std::log1p(std::exp(-0.7)) + 0.25, 1e-14);
  const LinearRule z = LinearRule::zero(FeatureMap::linear(1, false));
  EXPECT_NEAR(earl_objective(z, w, d, Loss::logistic, 3.0), 3.0 * std::log(2.0), 1e-14);
  EXPECT_NEAR(earl_objective(z, w, d, Loss::hinge, 3.0), 3.0, 1e-14);
}

TEST(Objective, InterceptIsNotPenalized) {
  Rng rng = make_stream(50);
  const Dataset d = earl::testing::random_dataset(rng, 20, 2);
  const auto w = random_weights(rng, 20);
  const LinearRule a(FeatureMap::linear(2, false), 0.0, Vector::Zero(2));
  const LinearRule b(FeatureMap::linear(2, false), 5.0, Vector::Zero(2));
  for (Loss l : {Loss::logistic, Loss::exponential, Loss::squared_hinge, Loss::hinge})
    EXPECT_NEAR(earl_objective(b, w, d, l, 100.0) - earl_objective(b, w, d, l, 0.0), 0.0, 1e-12);
  EXPECT_NEAR(earl_objective(a, w, d, Loss::logistic, 7.0), earl_objective(a, w, d, Loss::logistic, 0.0), 1e-14);
}

TEST(ZeroOne, CountsMisclassifiedWeight) {
  const std::vector<WeightPair> w{{2.0, -1.0}, {-3.0, 0.5}};
  // Subject 1: instances (+1, 2), (+1, 1). Subject 2: (-1, 3), (-1, 0.5).
  Eigen::VectorXi d(2);
  d << 1, 1;
  EXPECT_DOUBLE_EQ(weighted_zero_one_objective(w, d), 3.5 / 2.0);
  d << -1, -1;
  EXPECT_DOUBLE_EQ(weighted_zero_one_objective(w, d), 3.0 / 2.0);
  EXPECT_THROW(weighted_zero_one_objective(w, Eigen::VectorXi::Ones(3)), ShapeError);
}

TEST(Fit, InterceptOnlyExponentialHasClosedForm) {
  // 4 exp(-b) + exp(b) is minimized at b = ln(4) / 2.
  const std::size_t n = 10;
  const Dataset d(Matrix::Zero(n, 1), Eigen::VectorXi::Ones(n), Vector::Zero(n));
  const std::vector<WeightPair> w(n, WeightPair{4.0, 1.0});
  EarlConfig c = config_for(Loss::exponential, 0.0);
  c.rule_map = FeatureMap::parse("zero", 1);
  const EarlFit fit = earl_fit(d, w, c);
  EXPECT_NEAR(fit.rule.beta0(), 0.5 * std::log(4.0), 1e-8);

  double best = 0.0, best_val = std::numeric_limits<double>::infinity();
  for (double b = -2.0; b <= 2.0; b += 1e-4) {
    const double v = 4.0 * std::exp(-b) + std::exp(b);
    if (v < best_val) best_val = v, best = b;
  }
  EXPECT_NEAR(fit.rule.beta0(), best, 1e-4);
  EXPECT_NEAR(fit.objective_value, best_val, 1e-7);
}

TEST(Fit, AllPositiveLabelsGivePositiveIntercept) {
  Rng rng = make_stream(51);
  std::uniform_real_distribution<double> U(0.1, 2.0);
  const Dataset d = earl::testing::random_dataset(rng, 40, 1);
  std::vector<WeightPair> w(40);
  for (auto& x : w) x = {U(rng), -U(rng)};
  for (Loss l : {Loss::logistic, Loss::exponential, Loss::squared_hinge, Loss::hinge}) {
    EarlConfig c = config_for(l, 0.0);
    c.rule_map = FeatureMap::parse("zero", 1);
    const EarlFit fit = earl_fit(d, w, c);
    EXPECT_GT(fit.rule.beta0(), 0.0) << loss_name(l);
    EXPECT_TRUE((fit.rule.decisions(d.X()).array() == 1).all());
  }
}

TEST(Fit, NegatedWeightsNegateTheRule) {
  Rng rng = make_stream(52);
  const Dataset d = earl::testing::random_dataset(rng, 60, 3);
  const auto w = random_weights(rng, 60);
  std::vector<WeightPair> neg(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) neg[i] = {-w[i].w_pos, -w[i].w_neg};
  for (Loss l : {Loss::logistic, Loss::exponential, Loss::squared_hinge}) {
    const EarlConfig c = config_for(l, 0.1);
    const Vector a = earl_fit(d, w, c).rule.coefficients();
    const Vector b = earl_fit(d, neg, c).rule.coefficients();
    EXPECT_LT((a + b).norm(), 1e-7) << loss_name(l);
  }
}

TEST(Fit, SmoothLossesReachStationaryPoint) {
  Rng rng = make_stream(53);
  for (Loss l : {Loss::logistic, Loss::exponential, Loss::squared_hinge}) {
    for (int t = 0; t < 5; ++t) {
      const Dataset d = earl::testing::random_dataset(rng, 100, 4);
      const auto w = random_weights(rng, 100);
      const EarlConfig c = config_for(l, 0.05);
      const EarlFit fit = earl_fit(d, w, c);
      EXPECT_TRUE(fit.diagnostics.converged);
      EXPECT_LT(earl_gradient(fit.rule, w, d, l, c.lambda).norm(), 1e-6) << loss_name(l);
    }
  }
}

TEST(Fit, ObjectiveNeverExceedsZeroRule) {
  Rng rng = make_stream(54);
  for (Loss l : {Loss::logistic, Loss::exponential, Loss::squared_hinge, Loss::hinge}) {
    for (int t = 0; t < 5; ++t) {
      const Dataset d = earl::testing::random_dataset(rng, 50, 3);
      const auto w = random_weights(rng, 50);
      const EarlConfig c = config_for(l, 0.2);
      const EarlFit fit = earl_fit(d, w, c);
      const double F0 = earl_objective(LinearRule::zero(FeatureMap::linear(3, false)), w, d, l, c.lambda);
      EXPECT_LE(fit.objective_value, F0 + 1e-12);
      EXPECT_NEAR(earl_objective(fit.rule, w, d, l, c.lambda), fit.objective_value, 1e-10);
      EXPECT_EQ(fit.lambda_used, 0.2);
    }
  }
}

TEST(Fit, HingeMatchesBruteForceGrid) {
  Rng rng = make_stream(55);
  const std::size_t n = 30;
  const Dataset d = earl::testing::random_dataset(rng, n, 1);
  const auto w = random_weights(rng, n);
  const double lambda = 0.1;
  const EarlFit fit = earl_fit(d, w, config_for(Loss::hinge, lambda));

  auto oracle = [&](double b0, double b1) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double f = b0 + b1 * d.X()(static_cast<Eigen::Index>(i), 0);
      const double l1 = w[i].w_pos >= 0 ? 1.0 : -1.0;
      const double l2 = w[i].w_neg >= 0 ? -1.0 : 1.0;
      s += std::abs(w[i].w_pos) * std::max(0.0, 1.0 - l1 * f) + std::abs(w[i].w_neg) * std::max(0.0, 1.0 - l2 * f);
    }
    return s / static_cast<double>(n) + lambda * b1 * b1;
  };
  double grid_min = std::numeric_limits<double>::infinity();
  for (double b0 = -4.0; b0 <= 4.0; b0 += 0.01)
    for (double b1 = -4.0; b1 <= 4.0; b1 += 0.01) grid_min = std::min(grid_min, oracle(b0, b1));
  EXPECT_LE(fit.objective_value, grid_min + 1e-4);
  EXPECT_NEAR(oracle(fit.rule.beta0(), fit.rule.beta()[0]), fit.objective_value, 1e-10);
}

TEST(Fit, PenaltyShrinksWithLambda) {
  Rng rng = make_stream(56);
  const Dataset d = earl::testing::random_dataset(rng, 200, 3);
  const auto w = random_weights(rng, 200);
  for (Loss l : {Loss::logistic, Loss::exponential, Loss::squared_hinge}) {
    double prev = std::numeric_limits<double>::infinity();
    for (double lambda : {0.01, 0.1, 1.0, 10.0}) {
      const double nrm = earl_fit(d, w, config_for(l, lambda)).rule.beta().norm();
      EXPECT_LE(nrm, prev + 1e-8) << loss_name(l) << " lambda " << lambda;
      prev = nrm;
    }
  }
}

TEST(Fit, RuleMapDimensionMismatchIsShapeError) {
  Rng rng = make_stream(57);
  const Dataset d = earl::testing::random_dataset(rng, 20, 2);
  EarlConfig c;
  c.rule_map = FeatureMap::linear(3, false);
  EXPECT_THROW(earl_fit(d, random_weights(rng, 20), c), ShapeError);
}

TEST(Config, InvalidValuesAreConfigErrors) {
  EarlConfig c;
  c.lambda = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = EarlConfig{};
  c.folds = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = EarlConfig{};
  c.lambda_grid.clear();
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(CrossFit, AggregateIsMeanOfFoldCoefficients) {
  const Dataset d = generate_scenario({2, 400, 5}, 58);
  for (int K : {2, 3, 5}) {
    EarlConfig c;
    c.folds = K;
    c.seed = 9;
    const EarlFit fit = earl_fit_crossfit(d, model_spec(SpecCode::CC, 2, 5), c);
    ASSERT_EQ(fit.per_fold.size(), static_cast<std::size_t>(K));
    Vector sum = Vector::Zero(6);
    for (const auto& f : fit.per_fold) sum += f.rule.coefficients();
    EXPECT_LT((fit.rule.coefficients() - sum / K).norm(), 1e-15);
    std::vector<std::size_t> seen;
    for (const auto& f : fit.per_fold) {
      EXPECT_EQ(f.nuisance_rows.size() + f.rule_rows.size(), d.n());
      seen.insert(seen.end(), f.nuisance_rows.begin(), f.nuisance_rows.end());
    }
    std::sort(seen.begin(), seen.end());
    for (std::size_t i = 0; i < seen.size(); ++i) EXPECT_EQ(seen[i], i);
  }
}

TEST(CrossFit, DuplicatedHalvesGiveTheSingleFoldRule) {
  const Dataset half = generate_scenario({2, 150, 3}, 59);
  Matrix X(300, 3);
  X << half.X(), half.X();
  Eigen::VectorXi A(300);
  A << half.A(), half.A();
  Vector Y(300);
  Y << half.Y(), half.Y();
  const Dataset dup(X, A, Y);
  std::vector<std::size_t> f1(150), f2(150);
  std::iota(f1.begin(), f1.end(), 0);
  std::iota(f2.begin(), f2.end(), 150);
  const NuisanceSpec spec = model_spec(SpecCode::CC, 2, 3);
  const EarlFit fit = earl_fit_crossfit(dup, spec, EarlConfig{}, {f1, f2});
  const NuisanceFit nf = fit_nuisance(half, spec);
  const EarlFit single = earl_fit(half, compute_weights(half, nf), EarlConfig{});
  EXPECT_LT((fit.rule.coefficients() - single.rule.coefficients()).norm(), 1e-12);
}

TEST(CrossFit, ExplicitFoldsMustPartition) {
  const Dataset d = generate_scenario({2, 10, 2}, 60);
  const NuisanceSpec spec = model_spec(SpecCode::II, 2, 2);
  EXPECT_THROW(earl_fit_crossfit(d, spec, EarlConfig{}, {{0, 1, 2, 3, 4}}), ConfigError);
  EXPECT_THROW(earl_fit_crossfit(d, spec, EarlConfig{}, {{0, 1, 2, 3}, {5, 6, 7, 8, 9}}), ConfigError);
  EXPECT_THROW(earl_fit_crossfit(d, spec, EarlConfig{}, {{0, 1, 2, 3, 4, 5}, {4, 5, 6, 7, 8, 9}}), ConfigError);
}

TEST(CrossFit, SingleArmFoldWithTwoFoldsIsDomainError) {
  Rng rng = make_stream(61);
  Eigen::VectorXi A(20);
  A << Eigen::VectorXi::Ones(10), earl::testing::random_arms(rng, 10);
  A[10] = 1;
  A[11] = -1;
  const Dataset d(earl::testing::normal_matrix(rng, 20, 2), A, Vector::Ones(20));
  std::vector<std::size_t> f1(10), f2(10);
  std::iota(f1.begin(), f1.end(), 0);
  std::iota(f2.begin(), f2.end(), 10);
  try {
    earl_fit_crossfit(d, model_spec(SpecCode::II, 2, 2), EarlConfig{}, {f1, f2});
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("single treatment arm"), std::string::npos);
  }
}

TEST(CrossFit, TooFewRowsIsShapeError) {
  const Dataset d = generate_scenario({2, 5, 2}, 62);
  EarlConfig c;
  c.folds = 3;
  EXPECT_THROW(earl_fit_crossfit(d, model_spec(SpecCode::II, 2, 2), c), ShapeError);
}

TEST(CrossFit, ValueNearOptimumAtModerateN) {
  const Dataset d = generate_scenario({2, 2000, 10}, 63);
  EarlConfig c;
  c.seed = 63;
  c.lambda = 0.1;
  const EarlFit fit = earl_fit_crossfit(d, model_spec(SpecCode::CC, 2, 10), c);
  const ValidationSet vs(10, 100000, 630);
  const double v = vs.value(fit.rule).value;
  const double vstar = vs.value(OptimalRule{}).value;
  EXPECT_GT(v, vstar - 0.15);
}

TEST(SelectLambda, SingleValueGridReturnsIt) {
  const Dataset d = generate_scenario({2, 200, 3}, 64);
  EarlConfig c;
  c.lambda_grid = {0.3};
  c.cv_folds = 5;
  const LambdaSelection s = select_lambda(d, model_spec(SpecCode::CC, 2, 3), c);
  EXPECT_EQ(s.lambda, 0.3);
  ASSERT_EQ(s.table.size(), 1u);
  EXPECT_EQ(s.table[0].fold_values.size(), 5u);
}

TEST(SelectLambda, TiesGoToTheLargerLambda) {
  const Dataset base = generate_scenario({2, 200, 3}, 65);
  const Dataset d(base.X(), base.A(), Vector::Zero(200));
  EarlConfig c;
  c.cv_folds = 5;
  const LambdaSelection s = select_lambda(d, model_spec(SpecCode::CI, 2, 3), c);
  EXPECT_EQ(s.lambda, 32.0);
  for (const auto& row : s.table) EXPECT_EQ(row.mean_value, 0.0);
}

TEST(SelectLambda, DefaultGridIsPowersOfTwo) {
  const auto g = default_lambda_grid();
  ASSERT_EQ(g.size(), 11u);
  EXPECT_EQ(g.front(), 1.0 / 32.0);
  EXPECT_EQ(g.back(), 32.0);
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_EQ(g[i], 2.0 * g[i - 1]);
}

TEST(SelectLambda, DeterministicAndThreadInvariant) {
  const Dataset d = generate_scenario({2, 300, 4}, 66);
  const NuisanceSpec spec = model_spec(SpecCode::CC, 2, 4);
  EarlConfig c;
  c.cv_folds = 5;
  c.lambda_grid = {0.01, 0.1, 1.0, 10.0};
  c.seed = 17;
  const LambdaSelection a = select_lambda(d, spec, c);
  c.threads = 4;
  const LambdaSelection b = select_lambda(d, spec, c);
  EXPECT_EQ(a.lambda, b.lambda);
  ASSERT_EQ(a.table.size(), b.table.size());
  for (std::size_t g = 0; g < a.table.size(); ++g) {
    EXPECT_EQ(a.table[g].mean_value, b.table[g].mean_value);
    EXPECT_EQ(a.table[g].fold_values, b.table[g].fold_values);
  }
}

TEST(Pipeline, SelectedLambdaIsUsed) {
  const Dataset d = generate_scenario({2, 200, 3}, 67);
  EarlConfig c;
  c.cv_folds = 4;
  c.lambda_grid = {0.05, 5.0};
  const PipelineFit pf = fit_pipeline(d, model_spec(SpecCode::CC, 2, 3), c, true);
  ASSERT_TRUE(pf.selection.has_value());
  EXPECT_EQ(pf.fit.lambda_used, pf.selection->lambda);
}
