#include "dfmdp/ope.hpp"
#include "dfmdp/simulate.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace dfmdp {
namespace {

using testing::make_trajectory;

/// Fixed per-state probabilities, for hand-built target policies.
class TablePolicy final : public Policy {
 public:
  explicit TablePolicy(Matrix probs) : probs_(std::move(probs)) {}
  int num_actions() const override { return static_cast<int>(probs_.rows()); }
  Vector probabilities(const std::vector<double>& s) const override { return probs_.col(static_cast<int>(s[0])); }

 private:
  Matrix probs_;
};

std::vector<Trajectory> uniform_batch(int k, int h, Rng& rng) {
  std::vector<Trajectory> out;
  for (int i = 0; i < k; ++i) {
    std::vector<int> s, a;
    std::vector<double> r, b;
    for (int t = 0; t < h; ++t) {
      s.push_back(uniform_index(rng, 3));
      a.push_back(uniform_index(rng, 2));
      r.push_back(normal(rng));
      b.push_back(0.5);
    }
    out.push_back(make_trajectory(s, a, r, b, uniform_index(rng, 3)));
  }
  return out;
}

TEST(Ope, OnPolicyRatiosAreOneAndValueIsDiscountedMean) {
  Rng rng(3);
  const auto trajs = uniform_batch(3, 2, rng);
  const UniformPolicy pi(2);
  const Matrix rho = importance_ratios(trajs, pi);
  EXPECT_TRUE(rho.isApprox(Matrix::Ones(3, 2)));
  const OpeReport rep = eval_metric(trajs, pi, OpeConfig{0.9, 1.0, 0.0});
  double expected = 0.0;
  for (int t = 0; t < 2; ++t) {
    double mean = 0.0;
    for (const auto& tr : trajs) mean += tr.steps[t].reward / 3.0;
    expected += std::pow(0.9, t + 1) * mean;
  }
  EXPECT_NEAR(rep.cwpdis_value, expected, 1e-12);
  EXPECT_DOUBLE_EQ(rep.ess, 6.0);
  EXPECT_NEAR(rep.eval, expected - 1.0 / std::sqrt(6.0), 1e-12);
}

TEST(Ope, DoublingTargetProbabilityAtStepOneDoublesLaterRatios) {
  const auto tr = make_trajectory({0, 1}, {0, 0}, {1.0, 1.0}, {0.25, 0.5});
  Matrix probs(2, 2);
  probs << 0.5, 0.5, 0.5, 0.5;  // state 0: 0.5 = 2 x 0.25
  const Matrix rho = importance_ratios({tr}, TablePolicy(probs));
  EXPECT_DOUBLE_EQ(rho(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(rho(0, 1), 2.0);
}

TEST(Ope, SingleTrajectoryValueIsDiscountedReturn) {
  const auto tr = make_trajectory({0, 0}, {0, 1}, {1.0, 2.0}, {0.5, 0.5});
  const OpeReport rep = eval_metric({tr}, UniformPolicy(2), OpeConfig{0.95, 0.0, 0.0});
  EXPECT_NEAR(rep.cwpdis_value, 0.95 * 1.0 + 0.9025 * 2.0, 1e-12);
  EXPECT_NEAR(rep.cwpdis_value, 2.755, 1e-12);
}

TEST(Ope, TwoTrajectoriesMatchDirectFormula) {
  const auto a = make_trajectory({0, 1}, {0, 1}, {1.0, -1.0}, {0.5, 0.5});
  const auto b = make_trajectory({1, 0}, {1, 0}, {2.0, 3.0}, {0.5, 0.5});
  Matrix probs(2, 2);
  probs << 0.8, 0.3, 0.2, 0.7;  // column = state
  const double r1a = 0.8 / 0.5, r2a = r1a * 0.7 / 0.5;
  const double r1b = 0.7 / 0.5, r2b = r1b * 0.8 / 0.5;
  const double g = 0.95;
  const double v = g * (r1a * 1.0 + r1b * 2.0) / (r1a + r1b) + g * g * (r2a * -1.0 + r2b * 3.0) / (r2a + r2b);
  const double ess = (r1a + r1b) * (r1a + r1b) / (r1a * r1a + r1b * r1b) +
                     (r2a + r2b) * (r2a + r2b) / (r2a * r2a + r2b * r2b);
  const OpeReport rep = eval_metric({a, b}, TablePolicy(probs), OpeConfig{g, 0.5, 0.0});
  EXPECT_NEAR(rep.cwpdis_value, v, 1e-12);
  EXPECT_NEAR(rep.ess, ess, 1e-12);
  EXPECT_NEAR(rep.eval, v - 0.5 / std::sqrt(ess), 1e-12);
}

TEST(Ope, EmptyBatchAndBadBehaviorProbabilitiesAreRejected) {
  EXPECT_THROW(eval_metric({}, UniformPolicy(2)), OpeError);
  const auto bad = make_trajectory({0}, {0}, {1.0}, {0.0});
  EXPECT_THROW(eval_metric({bad}, UniformPolicy(2)), OpeError);
  const auto one = make_trajectory({0}, {0}, {1.0}, {0.5});
  const auto two = make_trajectory({0, 0}, {0, 0}, {1.0, 1.0}, {0.5, 0.5});
  EXPECT_THROW(eval_metric({one, two}, UniformPolicy(2)), OpeError);
}

TEST(Ope, ZeroTargetMassAtAStepIsAnError) {
  const auto tr = make_trajectory({0}, {0}, {1.0}, {0.5});
  Matrix probs(2, 1);
  probs << 0.0, 1.0;
  EXPECT_THROW(eval_metric({tr}, TablePolicy(probs)), OpeError);
}

TEST(Ope, LambdaZeroRemovesPenalty) {
  Rng rng(8);
  const auto trajs = uniform_batch(5, 3, rng);
  const auto q = QFunction::tabular(testing::random_table(2, 3, rng));
  const auto res = eval_grad(trajs, q, 1.0, OpeConfig{0.95, 0.0, 0.0});
  EXPECT_DOUBLE_EQ(res.report.eval, res.report.cwpdis_value);
}

TEST(OpeGrad, SingleTrajectoryGradientVanishes) {
  // With one trajectory the self-normalized ratio cancels and ESS = h.
  const auto tr = make_trajectory({0, 1, 0}, {1, 0, 0}, {1.0, -2.0, 0.5}, {0.3, 0.6, 0.5});
  Rng rng(2);
  const auto q = QFunction::tabular(testing::random_table(2, 2, rng));
  const auto res = eval_grad({tr}, q, 1.5);
  EXPECT_LT(res.grad.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(res.report.ess, 3.0, 1e-12);
}

TEST(OpeGrad, ReportMatchesEvalMetric) {
  Rng rng(5);
  const auto trajs = uniform_batch(6, 4, rng);
  const auto q = QFunction::tabular(testing::random_table(2, 3, rng));
  const auto res = eval_grad(trajs, q, 0.7);
  const auto rep = eval_metric(trajs, SoftPolicy(q, 0.7));
  EXPECT_NEAR(res.report.eval, rep.eval, 1e-12);
  EXPECT_NEAR(res.report.ess, rep.ess, 1e-10);
}

TEST(OpeGrad, TabularGradientMatchesFiniteDifferences) {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const auto trajs = uniform_batch(4 + trial, 3, rng);
    const auto q = QFunction::tabular(testing::random_table(2, 3, rng));
    const double beta = 0.5 + trial * 0.5;
    const OpeConfig cfg{0.9, 1.0, 0.0};
    const auto res = eval_grad(trajs, q, beta, cfg);
    const Vector fd = ad::finite_diff_grad(
        [&](const Vector& v) { return eval_metric(trajs, SoftPolicy(q.with_values(v), beta), cfg).eval; },
        q.params().values(), 1e-6);
    EXPECT_LT(ad::relative_error_inf(res.grad, fd), 1e-4) << "trial " << trial;
  }
}

TEST(OpeGrad, NetworkGradientMatchesFiniteDifferences) {
  Rng rng(13);
  const MlpShape shape{3, {5}, 2};
  const auto q = QFunction::mlp(shape, init_mlp(shape, rng));
  std::vector<Trajectory> trajs;
  for (int i = 0; i < 5; ++i) {
    Trajectory tr;
    for (int t = 0; t < 3; ++t) {
      Step s;
      s.state = {normal(rng), normal(rng), normal(rng)};
      s.action = uniform_index(rng, 2);
      s.reward = normal(rng);
      s.behavior_prob = 0.5;
      tr.steps.push_back(s);
    }
    trajs.push_back(tr);
  }
  const auto res = eval_grad(trajs, q, 2.0);
  const Vector fd = ad::finite_diff_grad(
      [&](const Vector& v) { return eval_metric(trajs, SoftPolicy(q.with_values(v), 2.0)).eval; },
      q.params().values(), 1e-6);
  EXPECT_LT(ad::relative_error_inf(res.grad, fd), 1e-4);
}

TEST(OpeProperty, EssBoundedWithEqualityForEqualRatios) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 2 + uniform_index(rng, 6), h = 1 + uniform_index(rng, 5);
    Matrix rho(k, h), r(k, h);
    for (int i = 0; i < k; ++i)
      for (int t = 0; t < h; ++t) {
        rho(i, t) = std::exp(normal(rng));
        r(i, t) = normal(rng);
      }
    const auto rep = eval_from_ratios(rho, r, {});
    EXPECT_GT(rep.ess, 0.0);
    EXPECT_LE(rep.ess, h * k + 1e-9);
    const auto flat = eval_from_ratios(Matrix::Constant(k, h, 2.5), r, {});
    EXPECT_NEAR(flat.ess, h * k, 1e-9);
  }
}

TEST(OpeProperty, ValueLiesWithinDiscountedRewardRange) {
  Rng rng(22);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 1 + uniform_index(rng, 6), h = 1 + uniform_index(rng, 5);
    Matrix rho(k, h), r(k, h);
    for (int i = 0; i < k; ++i)
      for (int t = 0; t < h; ++t) {
        rho(i, t) = std::exp(2.0 * normal(rng));
        r(i, t) = uniform(rng, -1.0, 3.0);
      }
    const auto rep = eval_from_ratios(rho, r, {0.9, 1.0, 0.0});
    double lo = 0.0, hi = 0.0;
    for (int t = 0; t < h; ++t) {
      lo += std::pow(0.9, t + 1) * r.col(t).minCoeff();
      hi += std::pow(0.9, t + 1) * r.col(t).maxCoeff();
    }
    EXPECT_GE(rep.cwpdis_value, lo - 1e-12);
    EXPECT_LE(rep.cwpdis_value, hi + 1e-12);
  }
}

TEST(OpeProperty, RescalingBehaviorAtOneStepLeavesValueUnchanged) {
  Rng rng(23);
  auto trajs = uniform_batch(5, 4, rng);
  const auto q = QFunction::tabular(testing::random_table(2, 3, rng));
  const SoftPolicy pi(q, 1.0);
  const auto before = eval_metric(trajs, pi);
  for (auto& tr : trajs) tr.steps[2].behavior_prob *= 0.37;
  const auto after = eval_metric(trajs, pi);
  EXPECT_NEAR(before.cwpdis_value, after.cwpdis_value, 1e-12);
  EXPECT_NEAR(before.ess, after.ess, 1e-10);
}

}  // namespace
}  // namespace dfmdp
