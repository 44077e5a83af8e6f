#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "circform/formation_env.hpp"

using namespace circform;

namespace {

WorldState on_circle(const std::vector<double>& thetas, double radius = 70.0) {
  WorldState s;
  s.spec = FormationSpec::regular({{0, 0}, radius}, thetas.size());
  for (double t : thetas) s.poses.push_back({Vec2::polar(radius, t), wrap_angle(t + kPi / 2)});
  return s;
}

WorldState random_state(std::size_t n, Rng& rng, double spread = 150.0) {
  std::uniform_real_distribution<double> u(-spread, spread);
  WorldState s;
  s.spec = FormationSpec::regular({{3, -4}, 70.0}, n);
  for (std::size_t i = 0; i < n; ++i) s.poses.push_back({{u(rng), u(rng)}, wrap_angle(u(rng))});
  return s;
}

// Independent reference for the per-agent reward: neighbors by full sort,
// slots by sorting the traversal angle measured from agent 0.
double reference_reward(const WorldState& s, std::size_t i) {
  const std::size_t n = s.poses.size();
  const Vec2 c = s.spec.path.center;
  const double R = s.spec.path.radius;
  std::vector<std::pair<double, std::size_t>> by_dist;
  for (std::size_t j = 0; j < n; ++j)
    if (j != i) by_dist.push_back({distance(s.poses[i].p, s.poses[j].p), j});
  std::sort(by_dist.begin(), by_dist.end());
  std::vector<std::size_t> nb{by_dist[0].second, by_dist[n > 2 ? 1 : 0].second};

  std::vector<std::pair<double, std::size_t>> ring;
  const double a0 = std::atan2(s.poses[0].p.y - c.y, s.poses[0].p.x - c.x);
  for (std::size_t j = 0; j < n; ++j) {
    double a = std::atan2(s.poses[j].p.y - c.y, s.poses[j].p.x - c.x) - a0;
    while (a < 0) a += 2 * kPi;
    while (a >= 2 * kPi) a -= 2 * kPi;
    ring.push_back({j == 0 ? 0.0 : a, j});
  }
  std::sort(ring.begin(), ring.end());
  std::vector<double> slot_angle(n);
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    slot_angle[ring[k].second] = acc;
    acc += s.spec.arc_angles[k];
  }
  double r = -std::abs(R - distance(s.poses[i].p, c));
  for (std::size_t j : nb) {
    const double want = 2 * R * std::sin(std::abs(slot_angle[i] - slot_angle[j]) / 2);
    r -= std::abs(distance(s.poses[i].p, s.poses[j].p) - want);
  }
  return r;
}

EnvConfig quiet_config(std::size_t n = 3) {
  EnvConfig cfg;
  cfg.reset.n_agents = n;
  cfg.noise = NoiseModel::off();
  return cfg;
}

}  // namespace

TEST(FormationSpec, ChordsAndValidation) {
  const FormationSpec eq{{{0, 0}, 70.0}, {kTwoPi / 3, kTwoPi / 3, kTwoPi / 3}};
  EXPECT_NO_THROW(eq.validate());
  EXPECT_NEAR(eq.slot_chord(0, 1), 121.2436, 1e-4);
  EXPECT_NEAR(eq.slot_chord(0, 2), 121.2436, 1e-4);
  const FormationSpec bad{{{0, 0}, 70.0}, {1.0, 1.0, 1.0}};
  EXPECT_THROW(bad.validate(), InvalidArgument);
  const FormationSpec neg{{{0, 0}, 70.0}, {kTwoPi + 1, -1}};
  EXPECT_THROW(neg.validate(), InvalidArgument);
}

TEST(Reset, ZeroOffsetsPlaceAgentsOnTangent) {
  ResetDistribution d;
  d.offset_max = 0;
  d.heading_max = 0;
  Rng rng(1);
  for (int k = 0; k < 100; ++k) {
    const WorldState s = sample_initial_state(d, rng);
    EXPECT_EQ(s.step_index, 0u);
    for (std::size_t i = 0; i < s.n_agents(); ++i) {
      const auto proj = project_to_circle(s.poses[i].p, s.spec.path);
      EXPECT_NEAR(proj.signed_distance, 0.0, 1e-9);
      const Observation o = observe(s, i, NoiseModel::off(), 40.0, rng);
      EXPECT_NEAR(o.alpha, 0.0, 1e-9);
    }
  }
}

TEST(Reset, Distributions) {
  ResetDistribution d;
  Rng rng(2);
  double mean_r = 0.0;
  constexpr int kN = 10000;
  for (int k = 0; k < kN; ++k) {
    const WorldState s = sample_initial_state(d, rng);
    const double R = s.spec.path.radius;
    ASSERT_GE(R, 60.0);
    ASSERT_LE(R, 90.0);
    mean_r += R / kN;
    ASSERT_NO_THROW(s.spec.validate());
    for (const auto& p : s.poses) {
      const auto proj = project_to_circle(p.p, s.spec.path);
      ASSERT_LE(std::abs(proj.signed_distance), 20.0 + 1e-9);
      const double off = wrap_angle(p.alpha - tangent_heading(proj.point, s.spec.path));
      ASSERT_LE(std::abs(off), 0.2 * kPi + 1e-9);
    }
  }
  EXPECT_NEAR(mean_r, 75.0, 1.0);
}

TEST(Reset, RandomSpacingsRespectMinimumArc) {
  ResetDistribution d;
  d.n_agents = 5;
  d.arcs = ArcDistribution::RandomSpacing;
  Rng rng(3);
  for (int k = 0; k < 2000; ++k) {
    const auto arcs = sample_arcs(d, rng);
    ASSERT_NEAR(std::accumulate(arcs.begin(), arcs.end(), 0.0), kTwoPi, 1e-9);
    for (double a : arcs) ASSERT_GE(a, 0.25 * kTwoPi / 5 - 1e-12);
  }
  d.arcs = ArcDistribution::Equal;
  for (double a : sample_arcs(d, rng)) EXPECT_DOUBLE_EQ(a, kTwoPi / 5);
}

TEST(Neighbors, ThreeAgentsSeeEachOther) {
  const WorldState s = on_circle({0.0, 2.0, 4.0});
  for (std::size_t i = 0; i < 3; ++i) {
    const auto nb = neighbors(s, i);
    EXPECT_NE(nb[0], i);
    EXPECT_NE(nb[1], i);
    EXPECT_NE(nb[0], nb[1]);
  }
}

TEST(Neighbors, SquareCornersAreAdjacent) {
  const WorldState s = on_circle({0.0, kPi / 2, kPi, 3 * kPi / 2});
  for (std::size_t i = 0; i < 4; ++i) {
    auto nb = neighbors(s, i);
    std::sort(nb.begin(), nb.end());
    std::vector<std::size_t> want{(i + 1) % 4, (i + 3) % 4};
    std::sort(want.begin(), want.end());
    EXPECT_EQ(nb[0], want[0]);
    EXPECT_EQ(nb[1], want[1]);
  }
}

TEST(Neighbors, TiesGoToLowerId) {
  WorldState s = on_circle({0.0, kPi / 2, kPi, 3 * kPi / 2});
  // Agent 0 at (70,0) is equidistant from agents 1 and 3.
  const auto nb = neighbors(s, 0);
  EXPECT_EQ(nb[0], 1u);
  EXPECT_EQ(nb[1], 3u);
}

TEST(Neighbors, TwoAgentsDuplicate) {
  const WorldState s = on_circle({0.0, kPi});
  const auto nb = neighbors(s, 0);
  EXPECT_EQ(nb[0], 1u);
  EXPECT_EQ(nb[1], 1u);
  Rng rng(0);
  const Observation o = observe(s, 0, NoiseModel::off(), 40.0, rng);
  EXPECT_EQ(o.d_nb[0], o.d_nb[1]);
  EXPECT_NEAR(o.d_nb[0], 140.0, 1e-9);
}

TEST(Neighbors, MatchesBruteForceSort) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const WorldState s = random_state(10, rng);
    for (std::size_t i = 0; i < 10; ++i) {
      std::vector<std::pair<double, std::size_t>> all;
      for (std::size_t j = 0; j < 10; ++j)
        if (j != i) all.push_back({distance(s.poses[i].p, s.poses[j].p), j});
      std::sort(all.begin(), all.end());
      const auto nb = neighbors(s, i);
      ASSERT_EQ(nb[0], all[0].second);
      ASSERT_EQ(nb[1], all[1].second);
    }
  }
}

TEST(Observe, OnCircleAlongTangent) {
  Rng rng(5);
  for (double R : {60.0, 70.0, 90.0}) {
    const WorldState s = on_circle({0.0, 2.0, 4.0}, R);
    const Observation o = observe(s, 0, NoiseModel::off(), 40.0, rng);
    EXPECT_NEAR(o.alpha, 0.0, 1e-12);
    EXPECT_NEAR(o.d, 0.0, 1e-12);
    // Counter-clockwise traversal: the lookahead point lies to the left.
    EXPECT_NEAR(o.beta, std::asin(40.0 / (2 * R)), 1e-12);
  }
  WorldState cw = on_circle({0.0, 2.0, 4.0});
  cw.spec.path.orientation = Orientation::Clockwise;
  for (auto& p : cw.poses) p.alpha = wrap_angle(p.alpha + kPi);
  const Observation o = observe(cw, 0, NoiseModel::off(), 40.0, rng);
  EXPECT_NEAR(o.alpha, 0.0, 1e-12);
  EXPECT_NEAR(o.beta, -std::asin(40.0 / 140.0), 1e-12);
}

TEST(Observe, OppositeAgentsAreOneDiameterApart) {
  Rng rng(6);
  const WorldState s = on_circle({0.0, kPi});
  const Observation o = observe(s, 1, NoiseModel::off(), 40.0, rng);
  EXPECT_NEAR(o.d_nb[0], 140.0, 1e-12);
  EXPECT_NEAR(o.d_hat[0], 140.0, 1e-12);
}

TEST(Observe, HeadingWrapInvariance) {
  Rng a(7), b(7);
  WorldState s = on_circle({0.3, 2.0, 4.4});
  WorldState t = s;
  t.poses[1].alpha += kTwoPi;
  const auto oa = observe(s, 1, NoiseModel{}, 40.0, a).to_array();
  const auto ob = observe(t, 1, NoiseModel{}, 40.0, b).to_array();
  for (std::size_t k = 0; k < oa.size(); ++k) EXPECT_NEAR(oa[k], ob[k], 1e-9);
}

TEST(Observe, ComponentsAndNormalization) {
  Rng rng(8);
  const WorldState s = random_state(5, rng);
  const Observation o = observe(s, 2, NoiseModel{}, 40.0, rng);
  const auto raw = o.to_array();
  const auto norm = o.normalized();
  ASSERT_EQ(raw.size(), 11u);
  for (std::size_t k : {0u, 1u, 5u, 6u, 7u, 8u}) {
    EXPECT_GT(raw[k], -kPi);
    EXPECT_LE(raw[k], kPi);
    EXPECT_DOUBLE_EQ(norm[k], raw[k] / kPi);
  }
  for (std::size_t k : {2u, 3u, 4u, 9u, 10u}) EXPECT_DOUBLE_EQ(norm[k], raw[k] / 100.0);
  EXPECT_LE(o.d_nb[0], o.d_nb[1] + 20.0);  // nearest first, up to noise
}

TEST(Observe, RigidMotionInvariance) {
  Rng gen(9);
  for (int trial = 0; trial < 200; ++trial) {
    const WorldState s = random_state(6, gen);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    const double th = u(gen);
    const Vec2 shift{50 * u(gen), 50 * u(gen)};
    WorldState t = s;
    t.spec.path.center = rotate(s.spec.path.center, th) + shift;
    for (auto& p : t.poses) {
      p.p = rotate(p.p, th) + shift;
      p.alpha = wrap_angle(p.alpha + th);
    }
    Rng a(trial), b(trial);
    for (std::size_t i = 0; i < 6; ++i) {
      if (distance(s.poses[i].p, s.spec.path.center) < 1e-3) continue;
      const auto oa = observe(s, i, NoiseModel::off(), 40.0, a).to_array();
      const auto ob = observe(t, i, NoiseModel::off(), 40.0, b).to_array();
      for (std::size_t k = 0; k < oa.size(); ++k) ASSERT_NEAR(std::remainder(oa[k] - ob[k], kTwoPi), 0.0, 1e-7);
    }
    // Translation alone leaves even the noisy observation unchanged.
    WorldState m = s;
    m.spec.path.center = s.spec.path.center + shift;
    for (auto& p : m.poses) p.p = p.p + shift;
    Rng c(trial), d(trial);
    const auto na = observe(s, 0, NoiseModel{}, 40.0, c).to_array();
    const auto nb = observe(m, 0, NoiseModel{}, 40.0, d).to_array();
    for (std::size_t k = 0; k < na.size(); ++k) ASSERT_NEAR(na[k], nb[k], 1e-7);
  }
}

TEST(Reward, PerfectFormationIsZero) {
  const WorldState s = on_circle({0.4, 0.4 + kTwoPi / 3, 0.4 + 2 * kTwoPi / 3});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(reward(s, i), 0.0, 1e-9);
}

TEST(Reward, RadialErrorOnly) {
  // Agent 0 ten cm outside; the others sit where its chords stay exact.
  WorldState s;
  s.spec = FormationSpec::regular({{0, 0}, 70.0}, 2);
  s.poses = {{{80, 0}, kPi / 2}, {{-60, 0}, -kPi / 2}};
  EXPECT_NEAR(reward(s, 0), -10.0, 1e-12);
  EXPECT_NEAR(reward(s, 1), -10.0, 1e-12);
}

TEST(Reward, MatchesReferenceAndIsNonPositive) {
  Rng rng(10);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + trial % 9;
    WorldState s = random_state(n, rng);
    std::vector<double> arcs(n);
    std::uniform_real_distribution<double> u(0.2, 1.0);
    double sum = 0.0;
    for (double& a : arcs) sum += (a = u(rng));
    for (double& a : arcs) a *= kTwoPi / sum;
    s.spec.arc_angles = arcs;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = reward(s, i);
      ASSERT_NEAR(r, reference_reward(s, i), 1e-9);
      ASSERT_LE(r, 0.0);
    }
  }
}

TEST(Step, StraightMoveNoNoise) {
  FormationEnv env(quiet_config(), 1);
  env.reset();
  const WorldState before = env.state();
  const std::vector<int> acts{12, 12, 12};
  const StepResult r = env.step(acts);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(distance(before.poses[i].p, r.true_state.poses[i].p), 1.670, 1e-12);
    EXPECT_DOUBLE_EQ(r.per_agent_rewards[i], reward(r.true_state, i));
  }
  EXPECT_DOUBLE_EQ(r.team_reward,
                   r.per_agent_rewards[0] + r.per_agent_rewards[1] + r.per_agent_rewards[2]);
  EXPECT_EQ(r.true_state.step_index, 1u);
}

TEST(Step, EpisodeEndsAtThreeHundred) {
  FormationEnv env(quiet_config(), 2);
  env.reset();
  const std::vector<int> acts{7, 7, 7};
  for (int k = 1; k <= 300; ++k) {
    const StepResult r = env.step(acts);
    ASSERT_EQ(r.done, k == 300);
  }
  EXPECT_THROW(env.step(acts), EpisodeFinished);
}

TEST(Step, InvalidActions) {
  FormationEnv env(quiet_config(), 3);
  env.reset();
  const std::vector<int> bad{7, 15, 7};
  EXPECT_THROW(env.step(bad), InvalidAction);
  const std::vector<int> short_list{7, 7};
  EXPECT_THROW(env.step(short_list), InvalidAction);
}

TEST(Step, PermutingAgentsPermutesResults) {
  Rng gen(11);
  const EnvConfig cfg = quiet_config(4);
  for (int trial = 0; trial < 50; ++trial) {
    WorldState s = random_state(4, gen, 100.0);
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    WorldState t = s;
    std::vector<int> acts(4), pacts(4);
    std::uniform_int_distribution<int> pick(0, 14);
    for (auto& a : acts) a = pick(gen);
    for (std::size_t k = 0; k < 4; ++k) {
      t.poses[k] = s.poses[perm[k]];
      pacts[k] = acts[perm[k]];
    }
    Rng a(1), b(1);
    const StepResult ra = step(s, acts, cfg, a);
    const StepResult rb = step(t, pacts, cfg, b);
    for (std::size_t k = 0; k < 4; ++k) {
      ASSERT_EQ(rb.true_state.poses[k].p, ra.true_state.poses[perm[k]].p);
      ASSERT_EQ(rb.true_state.poses[k].alpha, ra.true_state.poses[perm[k]].alpha);
    }
  }
}

TEST(Step, DeterministicUnderSeed) {
  EnvConfig cfg;
  FormationEnv a(cfg, 99), b(cfg, 99);
  a.reset();
  b.reset();
  const std::vector<int> acts{3, 9, 12};
  for (int k = 0; k < 50; ++k) {
    const StepResult ra = a.step(acts), rb = b.step(acts);
    ASSERT_EQ(ra.team_reward, rb.team_reward);
    for (std::size_t i = 0; i < 3; ++i) ASSERT_EQ(ra.next_observations[i].to_array(), rb.next_observations[i].to_array());
  }
}

TEST(Assignment, RingOrderSlots) {
  WorldState s = on_circle({1.0, 0.0, 3.0, 5.0});
  s.spec.arc_angles = {1.0, 2.0, 1.5, kTwoPi - 4.5};
  const Assignment a = assign(s);
  // From agent 0 at angle 1 going counter-clockwise: agent 2 (3), agent 3 (5), agent 1 (0).
  EXPECT_EQ(a.slot[0], 0u);
  EXPECT_EQ(a.slot[2], 1u);
  EXPECT_EQ(a.slot[3], 2u);
  EXPECT_EQ(a.slot[1], 3u);
  EXPECT_NEAR(desired_distance(s, a, 0, 2), chord_length(70, 1.0), 1e-12);
  EXPECT_NEAR(desired_distance(s, a, 0, 1), chord_length(70, 4.5), 1e-12);
}

TEST(Trajectory, CsvSchema) {
  FormationEnv env(quiet_config(), 5);
  env.reset();
  Trajectory t;
  t.states.push_back(env.state());
  const std::vector<int> acts{7, 8, 9};
  t.states.push_back(env.step(acts).true_state);
  t.actions.push_back(acts);
  std::ostringstream os;
  write_trajectory_csv(os, t);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "step,agent_id,x,y,heading,action_id,d_i,reward");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 6);
  EXPECT_NE(os.str().find("\n0,0,"), std::string::npos);
  EXPECT_NE(os.str().find(",-1,"), std::string::npos);
}
