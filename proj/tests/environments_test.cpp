#include "dfmdp/instance.hpp"
#include "dfmdp/simulate.hpp"
#include "dfmdp/solver.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

namespace dfmdp {

namespace {

FeatureGenerator generator_for(Domain d, const EnvConfig& cfg = {}) { return make_feature_generator(cfg.block(d), 99); }

MdpInstance instance(Domain d, std::uint64_t seed, const EnvConfig& cfg = {}) {
  return generate_instance(d, seed, cfg, generator_for(d, cfg));
}

// ---------------------------------------------------------------------------
// Instances

TEST(Gridworld, TwentyFiveRewardsWithExactlyFiveCliffs) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto inst = instance(Domain::gridworld, seed);
    ASSERT_EQ(inst.true_params.size(), 25);
    ASSERT_EQ(inst.cliffs.size(), 5u);
    const int start = grid::start_cell(5);
    const int safe = grid::safe_cell(5);
    EXPECT_EQ(std::count(inst.cliffs.begin(), inst.cliffs.end(), start), 0);
    EXPECT_EQ(std::count(inst.cliffs.begin(), inst.cliffs.end(), safe), 0);
    for (int c : inst.cliffs) EXPECT_LT(inst.true_params[c], -4.0);
    EXPECT_GT(inst.true_params[safe], 0.0);
  }
}

TEST(Gridworld, CliffRewardsCentredAtMinusTen) {
  double sum = 0.0;
  int count = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto inst = instance(Domain::gridworld, seed);
    for (int c : inst.cliffs) {
      sum += inst.true_params[c];
      ++count;
    }
  }
  EXPECT_NEAR(sum / count, -10.0, 0.15);
}

TEST(Gridworld, StartAndSafeCorners) {
  EXPECT_EQ(grid::start_cell(5), 20);
  EXPECT_EQ(grid::safe_cell(5), 4);
}

TEST(Gridworld, MovesOffTheGridStayInPlace) {
  EXPECT_EQ(grid::move(5, grid::safe_cell(5), grid::north), grid::safe_cell(5));
  EXPECT_EQ(grid::move(5, grid::safe_cell(5), grid::east), grid::safe_cell(5));
  EXPECT_EQ(grid::move(5, grid::start_cell(5), grid::south), grid::start_cell(5));
  EXPECT_EQ(grid::move(5, grid::start_cell(5), grid::west), grid::start_cell(5));
  EXPECT_EQ(grid::move(5, 12, grid::north), 7);
  EXPECT_EQ(grid::move(5, 12, grid::south), 17);
  EXPECT_EQ(grid::move(5, 12, grid::east), 13);
  EXPECT_EQ(grid::move(5, 12, grid::west), 11);
  EXPECT_EQ(grid::move(5, 12, grid::stay), 12);
}

TEST(Snare, FourHighRiskSitesAroundPointEight) {
  double high_sum = 0.0, low_sum = 0.0;
  int high_n = 0, low_n = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto inst = instance(Domain::snare, seed);
    ASSERT_EQ(inst.true_params.size(), 20);
    ASSERT_EQ(inst.high_risk.size(), 4u);
    for (int i = 0; i < 20; ++i) {
      const double p = inst.true_params[i];
      EXPECT_GE(p, 0.01);
      EXPECT_LE(p, 0.99);
      if (std::binary_search(inst.high_risk.begin(), inst.high_risk.end(), i)) {
        high_sum += p;
        ++high_n;
      } else {
        low_sum += p;
        ++low_n;
      }
    }
  }
  EXPECT_NEAR(high_sum / high_n, 0.8, 0.02);
  EXPECT_NEAR(low_sum / low_n, 0.1, 0.01);
}

TEST(Tb, TransitionRowsValidAndClipped) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto inst = instance(Domain::tb, seed);
    ASSERT_EQ(inst.true_params.size(), 40);
    for (Eigen::Index k = 0; k < 40; ++k) {
      EXPECT_GE(inst.true_params[k], 0.05 - 1e-12);
      EXPECT_LE(inst.true_params[k], 0.95 + 1e-12);
    }
    for (Eigen::Index k = 0; k < 40; k += 2) EXPECT_NEAR(inst.true_params[k] + inst.true_params[k + 1], 1.0, 1e-12);
  }
}

TEST(Tb, InterventionRaisesAdherence) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto inst = instance(Domain::tb, seed);
    for (int i = 0; i < 5; ++i)
      for (int s = 0; s < 2; ++s)
        EXPECT_GE(inst.true_params[tb_index(i, s, 1, 1)], inst.true_params[tb_index(i, s, 0, 1)]);
  }
}

TEST(Instances, SameSeedGivesIdenticalInstance) {
  for (Domain d : {Domain::gridworld, Domain::snare, Domain::tb}) {
    const auto a = instance(d, 42);
    const auto b = instance(d, 42);
    EXPECT_EQ(a.true_params, b.true_params);
    EXPECT_EQ(a.features, b.features);
    EXPECT_EQ(a.cliffs, b.cliffs);
    EXPECT_EQ(a.high_risk, b.high_risk);
    EXPECT_NE(instance(d, 43).true_params, a.true_params);
  }
}

TEST(Instances, FeatureRowsMatchEntities) {
  EXPECT_EQ(instance(Domain::gridworld, 1).features.rows(), 25);
  EXPECT_EQ(instance(Domain::snare, 1).features.rows(), 20);
  EXPECT_EQ(instance(Domain::tb, 1).features.rows(), 5);
}

// ---------------------------------------------------------------------------
// Belief updates

TEST(SnareBelief, EmptyUnvisitedSiteGainsArrivals) {
  Vector p = Vector::Constant(3, 0.3);
  const auto b = belief_step_snare({0.0, 0.0, 0.0}, p, 2, SnareOutcome::not_found);
  EXPECT_DOUBLE_EQ(b[0], 0.3);
}

TEST(SnareBelief, FoundResetsThenArrives) {
  Vector p(2);
  p << 0.2, 0.5;
  const auto b = belief_step_snare({1.0, 0.0}, p, 0, SnareOutcome::found);
  EXPECT_DOUBLE_EQ(b[0], 0.2);
}

TEST(SnareBelief, NotFoundPosteriorIsBayesRule) {
  const Vector p = Vector::Zero(2);
  const auto b = belief_step_snare({0.5, 0.0}, p, 0, SnareOutcome::not_found);
  EXPECT_NEAR(b[0], 0.05 / 0.55, 1e-15);
  EXPECT_NEAR(b[0], 0.0909, 1e-4);
}

TEST(SnareBelief, OutOfRangeSiteRejected) {
  EXPECT_THROW(belief_step_snare({0.0, 0.0}, Vector::Zero(2), 2, SnareOutcome::found), std::out_of_range);
  EXPECT_THROW(belief_step_snare({0.0, 0.0}, Vector::Zero(2), -1, SnareOutcome::found), std::out_of_range);
}

TEST(SnareBelief, StaysInUnitIntervalUnderRandomRollouts) {
  Rng rng(5);
  for (int run = 0; run < 200; ++run) {
    Vector p(6);
    for (int i = 0; i < 6; ++i) p[i] = uniform01(rng);
    std::vector<double> b(6, 0.0);
    for (int t = 0; t < 40; ++t) {
      const auto outcome = uniform01(rng) < 0.5 ? SnareOutcome::found : SnareOutcome::not_found;
      b = belief_step_snare(b, p, uniform_index(rng, 6), outcome);
      for (double v : b) {
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
      }
    }
  }
}

Vector tb_theta_from_rows(double p1_given_1_passive, double p1_given_0_passive, double p1_given_1_act,
                          double p1_given_0_act) {
  Vector th(8);
  auto set = [&](int s, int a, double p1) {
    th[tb_index(0, s, a, 1)] = p1;
    th[tb_index(0, s, a, 0)] = 1.0 - p1;
  };
  set(1, 0, p1_given_1_passive);
  set(0, 0, p1_given_0_passive);
  set(1, 1, p1_given_1_act);
  set(0, 1, p1_given_0_act);
  return th;
}

TEST(TbBelief, DegenerateBeliefReproducesTransitionRow) {
  Vector th(16);
  th.head(8) = tb_theta_from_rows(0.8, 0.3, 0.9, 0.6);
  th.tail(8) = tb_theta_from_rows(0.7, 0.2, 0.95, 0.5);
  const auto b = belief_step_tb({1.0, 0.0}, th, 1, 1);
  EXPECT_DOUBLE_EQ(b[0], 0.8);   // patient 0 passive from adhering
  EXPECT_DOUBLE_EQ(b[1], 0.95);  // patient 1 observed adhering, then intervened
  const auto c = belief_step_tb({0.0, 1.0}, th, 1, 0);
  EXPECT_DOUBLE_EQ(c[0], 0.3);
  EXPECT_DOUBLE_EQ(c[1], 0.5);
}

TEST(TbBelief, IdentityPassiveKeepsUnobservedBeliefs) {
  Vector th(16);
  th.head(8) = tb_theta_from_rows(1.0, 0.0, 0.9, 0.6);
  th.tail(8) = tb_theta_from_rows(1.0, 0.0, 0.9, 0.6);
  const auto b = belief_step_tb({0.37, 0.2}, th, 1, 0);
  EXPECT_DOUBLE_EQ(b[0], 0.37);
}

TEST(TbBelief, MixtureOfRows) {
  Vector th(16);
  th.head(8) = tb_theta_from_rows(0.9, 0.3, 0.5, 0.5);
  th.tail(8) = tb_theta_from_rows(0.5, 0.5, 0.5, 0.5);
  const auto b = belief_step_tb({0.5, 0.0}, th, 1, 0);
  EXPECT_NEAR(b[0], 0.6, 1e-15);
}

TEST(TbBelief, InvalidPatientRejected) {
  EXPECT_THROW(belief_step_tb({0.0}, Vector::Constant(8, 0.5), 1, 0), std::out_of_range);
}

TEST(TbBelief, StaysInUnitIntervalUnderRandomRollouts) {
  Rng rng(6);
  for (int run = 0; run < 50; ++run) {
    const auto inst = instance(Domain::tb, static_cast<std::uint64_t>(run));
    std::vector<double> b(5, uniform01(rng));
    for (int t = 0; t < 60; ++t) {
      b = belief_step_tb(b, inst.true_params, uniform_index(rng, 5), uniform_index(rng, 2));
      for (double v : b) {
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Simulation

TEST(Simulation, SingleActionDomainHasUnitBehaviorProbability) {
  TabularMdp m;
  m.num_states = 2;
  m.num_actions = 1;
  m.horizon = 7;
  m.resize();
  m.next_fixed = {1, 0};
  m.reward_param = {0, 1};
  TabularSimulator sim(m, Vector::Ones(2));
  const UniformPolicy pi(1);
  for (const auto& tr : simulate_trajectories(sim, pi, 5, 3)) {
    ASSERT_EQ(tr.horizon(), 7);
    for (const auto& s : tr.steps) EXPECT_EQ(s.behavior_prob, 1.0);
  }
}

TEST(Simulation, GridworldRecordsNoLatentEvents) {
  const auto inst = instance(Domain::gridworld, 3);
  auto sim = make_simulator(Domain::gridworld, inst.config, inst.true_params);
  const UniformPolicy pi(5);
  for (const auto& tr : simulate_trajectories(*sim, pi, 10, 1)) {
    EXPECT_EQ(tr.horizon(), 20);
    for (const auto& s : tr.steps) EXPECT_TRUE(s.events.empty());
  }
}

TEST(Simulation, GridworldRewardIsEnteredCell) {
  const auto inst = instance(Domain::gridworld, 4);
  auto sim = make_simulator(Domain::gridworld, inst.config, inst.true_params);
  const UniformPolicy pi(5);
  for (const auto& tr : simulate_trajectories(*sim, pi, 10, 2)) {
    EXPECT_EQ(tr.steps[0].state[0], grid::start_cell(5));
    for (std::size_t t = 0; t < tr.steps.size(); ++t) {
      const int next = static_cast<int>(tr.next_state(t)[0]);
      EXPECT_EQ(next, grid::move(5, static_cast<int>(tr.steps[t].state[0]), tr.steps[t].action));
      EXPECT_EQ(tr.steps[t].reward, inst.true_params[next]);
      EXPECT_EQ(tr.steps[t].reward_param, next);
    }
  }
}

TEST(Simulation, CertainArrivalKeepsSiteOccupied) {
  Vector p = Vector::Constant(4, 0.1);
  p[0] = 1.0;
  SnareSimulator sim(p, 20);
  const UniformPolicy pi(4);
  int checked = 0;
  for (const auto& tr : simulate_trajectories(sim, pi, 50, 8)) {
    for (std::size_t t = 1; t < tr.steps.size(); ++t) {
      EXPECT_EQ(tr.steps[t].latent[0], 1);
      EXPECT_DOUBLE_EQ(tr.steps[t].state[0], 1.0);
      ++checked;
    }
    EXPECT_EQ(tr.final_latent[0], 1);
    ++checked;
  }
  EXPECT_EQ(checked, 1000);
}

TEST(Simulation, SnareAndTbRewardRanges) {
  const UniformPolicy snare_pi(20);
  const auto snare = instance(Domain::snare, 2);
  auto ss = make_simulator(Domain::snare, snare.config, snare.true_params);
  for (const auto& tr : simulate_trajectories(*ss, snare_pi, 20, 3))
    for (const auto& s : tr.steps) EXPECT_TRUE(s.reward == 1.0 || s.reward == -1.0);

  const UniformPolicy tb_pi(5);
  const auto tb = instance(Domain::tb, 2);
  auto ts = make_simulator(Domain::tb, tb.config, tb.true_params);
  for (const auto& tr : simulate_trajectories(*ts, tb_pi, 20, 3)) {
    EXPECT_EQ(tr.horizon(), 30);
    for (const auto& s : tr.steps) {
      EXPECT_GE(s.reward, 0.0);
      EXPECT_LE(s.reward, 5.0);
      EXPECT_EQ(s.reward, std::round(s.reward));
    }
  }
}

TEST(Simulation, SnareEventTermsMatchDirectLikelihood) {
  const auto inst = instance(Domain::snare, 9);
  const Vector& p = inst.true_params;
  auto sim = make_simulator(Domain::snare, inst.config, p);
  const UniformPolicy pi(20);
  for (const auto& tr : simulate_trajectories(*sim, pi, 20, 4)) {
    double direct = 0.0;
    for (std::size_t t = 0; t < tr.steps.size(); ++t) {
      const auto& s = tr.steps[t];
      std::vector<int> present = s.latent;
      if (s.observation == 1) present[s.action] = 0;
      const auto& after = t + 1 < tr.steps.size() ? tr.steps[t + 1].latent : tr.final_latent;
      for (int i = 0; i < 20; ++i) {
        if (present[i]) continue;
        direct += after[i] ? std::log(p[i]) : std::log(1.0 - p[i]);
      }
    }
    EXPECT_NEAR(transition_log_likelihood(tr, p), direct, 1e-9);
  }
}

TEST(Simulation, TbEventTermsMatchDirectLikelihood) {
  const auto inst = instance(Domain::tb, 9);
  const Vector& th = inst.true_params;
  auto sim = make_simulator(Domain::tb, inst.config, th);
  const UniformPolicy pi(5);
  for (const auto& tr : simulate_trajectories(*sim, pi, 20, 4)) {
    double direct = 0.0;
    for (std::size_t t = 0; t < tr.steps.size(); ++t) {
      const auto& s = tr.steps[t];
      const auto& after = t + 1 < tr.steps.size() ? tr.steps[t + 1].latent : tr.final_latent;
      for (int i = 0; i < 5; ++i) direct += std::log(th[tb_index(i, s.latent[i], i == s.action ? 1 : 0, after[i])]);
    }
    EXPECT_NEAR(transition_log_likelihood(tr, th), direct, 1e-9);
  }
}

TEST(Simulation, FixedSeedIsBitReproducible) {
  for (Domain d : {Domain::gridworld, Domain::snare, Domain::tb}) {
    const auto inst = instance(d, 5);
    const UniformPolicy pi(inst.config.num_actions(d));
    auto s1 = make_simulator(d, inst.config, inst.true_params);
    auto s2 = make_simulator(d, inst.config, inst.true_params);
    EXPECT_TRUE(simulate_trajectories(*s1, pi, 5, 11) == simulate_trajectories(*s2, pi, 5, 11));
  }
}

TEST(Simulation, ZeroProbabilityActionRejected) {
  class Broken final : public Policy {
   public:
    int num_actions() const override { return 5; }
    Vector probabilities(const std::vector<double>&) const override { return Vector::Zero(5); }
  };
  const auto inst = instance(Domain::gridworld, 1);
  auto sim = make_simulator(Domain::gridworld, inst.config, inst.true_params);
  EXPECT_THROW(simulate_trajectories(*sim, Broken{}, 1, 0), std::runtime_error);
}

// ---------------------------------------------------------------------------
// Behavior policies

TEST(BehaviorPolicy, RandomIsUniform) {
  const auto inst = instance(Domain::gridworld, 1);
  const auto pi = behavior_policy(Regime::random, inst, forward_solver(Domain::gridworld, inst.config), 0);
  const Vector probs = pi->probabilities({0.0});
  ASSERT_EQ(probs.size(), 5);
  for (Eigen::Index a = 0; a < 5; ++a) EXPECT_DOUBLE_EQ(probs[a], 0.2);
}

TEST(BehaviorPolicy, NearOptimalTemperaturesAndBudgets) {
  const EnvConfig cfg;
  const auto g = near_optimal_solver(Domain::gridworld, cfg);
  EXPECT_EQ(g.vi_beta, 1.0);
  EXPECT_EQ(g.vi_iterations, 50000);
  const auto s = near_optimal_solver(Domain::snare, cfg);
  EXPECT_EQ(s.ddqn.beta, 5.0);
  EXPECT_EQ(s.ddqn.train_steps, 50000);
  const auto t = near_optimal_solver(Domain::tb, cfg);
  EXPECT_EQ(t.ddqn.beta, 20.0);
  EXPECT_EQ(t.ddqn.train_steps, 100000);
}

TEST(BehaviorPolicy, NearOptimalGridworldIsSoftmaxWithTemperatureOne) {
  const auto inst = instance(Domain::gridworld, 2);
  const auto sc = near_optimal_solver(Domain::gridworld, inst.config);
  const auto pi = behavior_policy(Regime::near_optimal, inst, sc, 0);
  const auto res = solve(Domain::gridworld, inst.config, inst.true_params, sc, 0);
  const Vector q = res.q.values({static_cast<double>(grid::start_cell(5))}).col(0);
  const Vector expected = (q.array() - q.maxCoeff()).exp() / (q.array() - q.maxCoeff()).exp().sum();
  EXPECT_TRUE(pi->probabilities({static_cast<double>(grid::start_cell(5))}).isApprox(expected, 1e-12));
}

TEST(BehaviorPolicy, NearOptimalNeedsTrueParameters) {
  auto inst = instance(Domain::snare, 1);
  inst.true_params.resize(0);
  EXPECT_THROW(behavior_policy(Regime::near_optimal, inst, near_optimal_solver(Domain::snare, inst.config), 0),
               std::invalid_argument);
}

}  // namespace
}  // namespace dfmdp
