#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "circform/dynamics.hpp"

using namespace circform;

namespace {

// Upper 1% point of chi-square with 35 degrees of freedom.
constexpr double kChi2Crit35 = 57.342;

}  // namespace

TEST(ActionCatalog, MatchesMeasuredTable) {
  const double dp[3][5] = {{0.383, 0.430, 0.423, 0.421, 0.382},
                           {0.748, 0.851, 0.856, 0.817, 0.738},
                           {1.230, 1.330, 1.670, 1.323, 1.194}};
  const double da[3][5] = {{-0.0171, -0.0082, 0.0, 0.0110, 0.0181},
                           {-0.0323, -0.0172, 0.0, 0.02105, 0.0295},
                           {-0.0484, -0.0308, 0.0, 0.0336, 0.0480}};
  ASSERT_EQ(action_catalog().size(), 15u);
  for (int s = 0; s < 3; ++s)
    for (int t = 0; t < 5; ++t) {
      const ActionEntry& a = action(action_id(static_cast<SpeedClass>(s), static_cast<TurnClass>(t)));
      EXPECT_EQ(a.dp, dp[s][t]);
      EXPECT_EQ(a.dalpha, da[s][t]);
      EXPECT_EQ(static_cast<int>(a.speed), s);
      EXPECT_EQ(static_cast<int>(a.turn), t);
    }
  const ActionEntry& hs = action(action_id(SpeedClass::High, TurnClass::Straight));
  EXPECT_EQ(hs.dp, 1.670);
  EXPECT_EQ(hs.dalpha, 0.0);
  EXPECT_EQ(action_id(SpeedClass::Middle, TurnClass::Straight), 7);
}

TEST(ActionCatalog, InvariantsAndTurnBalance) {
  int left = 0, right = 0, straight = 0, sign_sum = 0;
  for (int id = 0; id < kNumActions; ++id) {
    const ActionEntry& a = action(id);
    EXPECT_EQ(a.id, id);
    EXPECT_GT(a.dp, 0.0);
    EXPECT_LT(std::abs(a.dalpha), 0.1);
    sign_sum += (a.dalpha > 0) - (a.dalpha < 0);
    left += a.dalpha < 0;
    right += a.dalpha > 0;
    straight += a.dalpha == 0;
  }
  EXPECT_EQ(sign_sum, 0);
  EXPECT_EQ(left, 6);
  EXPECT_EQ(right, 6);
  EXPECT_EQ(straight, 3);
  EXPECT_THROW(action(-1), InvalidAction);
  EXPECT_THROW(action(15), InvalidAction);
}

TEST(ActionCatalog, CsvExport) {
  std::ostringstream os;
  write_action_catalog_csv(os);
  const std::string s = os.str();
  EXPECT_EQ(s.rfind("id,turn_class,speed_class,dp,dalpha\n", 0), 0u);
  EXPECT_NE(s.find("12,straight,high,1.67,0\n"), std::string::npos);
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 16);
}

TEST(StepPose, StraightStep) {
  const AgentPose p = step_pose({{0, 0}, 0.0}, action(12), {0, 0});
  EXPECT_DOUBLE_EQ(p.p.x, 1.670);
  EXPECT_DOUBLE_EQ(p.p.y, 0.0);
  EXPECT_DOUBLE_EQ(p.alpha, 0.0);
}

TEST(StepPose, OneSecondStraight) {
  AgentPose p{{0, 0}, 0.0};
  for (int k = 0; k < 25; ++k) p = step_pose(p, action(12), {0, 0});
  EXPECT_NEAR(p.p.x, 41.75, 1e-9);
  EXPECT_LT(p.p.x, 50.0);
  EXPECT_EQ(kTimeStep, 1.0 / 25.0);
}

TEST(StepPose, FullTurnAccumulation) {
  AgentPose p{{0, 0}, 0.0};
  double total = 0.0;
  for (int k = 0; k < 368; ++k) {
    const double before = p.alpha;
    p = step_pose(p, action(0), {0, 0});
    total += wrap_angle(p.alpha - before);
  }
  EXPECT_NEAR(std::abs(total), 368 * 0.0171, 1e-9);
  EXPECT_NEAR(std::abs(total), kTwoPi, 0.01);
}

TEST(StepPose, PureTranslationAndNormalizedHeading) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int k = 0; k < 1000; ++k) {
    const AgentPose a{{u(rng), u(rng)}, wrap_angle(u(rng))};
    for (int id : {2, 7, 12}) {
      const AgentPose b = step_pose(a, action(id), {0, 0});
      ASSERT_NEAR(distance(a.p, b.p), action(id).dp, 1e-12);
      ASSERT_EQ(b.alpha, a.alpha);
    }
    const AgentPose c = step_pose({{0, 0}, kPi - 0.001}, action(14), {0, 0});
    ASSERT_GT(c.alpha, -kPi);
    ASSERT_LE(c.alpha, kPi);
  }
}

TEST(StepPose, TranslateThenTurnUsesOldHeading) {
  const AgentPose p = step_pose({{0, 0}, 0.0}, action(14), {0, 0}, MotionOrder::TranslateThenTurn);
  EXPECT_DOUBLE_EQ(p.p.x, 1.194);
  EXPECT_DOUBLE_EQ(p.p.y, 0.0);
  EXPECT_DOUBLE_EQ(p.alpha, 0.0480);
}

TEST(StepPose, TurningRadius) {
  for (int id = 0; id < kNumActions; ++id) {
    const ActionEntry& a = action(id);
    if (a.dalpha == 0.0) continue;
    // The traced polygon is inscribed in the turning circle.
    const int steps = static_cast<int>(std::round(kTwoPi / std::abs(a.dalpha)));
    AgentPose p{{0, 0}, 0.3};
    std::vector<Vec2> pts;
    for (int k = 0; k < steps; ++k) {
      p = step_pose(p, a, {0, 0});
      pts.push_back(p.p);
    }
    const Vec2 A = pts[0], B = pts[steps / 3], C = pts[2 * steps / 3];
    const double d = 2 * (A.x * (B.y - C.y) + B.x * (C.y - A.y) + C.x * (A.y - B.y));
    const double a2 = dot(A, A), b2 = dot(B, B), c2 = dot(C, C);
    const Vec2 O{(a2 * (B.y - C.y) + b2 * (C.y - A.y) + c2 * (A.y - B.y)) / d,
                 (a2 * (C.x - B.x) + b2 * (A.x - C.x) + c2 * (B.x - A.x)) / d};
    const double expected = a.dp / (2 * std::sin(std::abs(a.dalpha) / 2));
    for (const Vec2& q : pts) ASSERT_NEAR(distance(q, O), expected, 1e-6) << "action " << id;
  }
}

TEST(Noise, ZeroStdGivesExactMagnitude) {
  Rng rng(3);
  NoiseModel m;
  m.motion_std = 0.0;
  for (int k = 0; k < 1000; ++k) ASSERT_NEAR(sample_motion_noise(m, rng).norm(), m.motion_mean, 1e-15);
  NoiseModel off = NoiseModel::off();
  for (int k = 0; k < 100; ++k) ASSERT_EQ(perturb_position({3, 4}, off, rng), (Vec2{3, 4}));
}

TEST(Noise, MotionMagnitudeAndDirection) {
  Rng rng(4);
  NoiseModel m;
  constexpr int kN = 100000;
  double mean = 0.0;
  std::vector<int> bins(36, 0);
  for (int k = 0; k < kN; ++k) {
    const Vec2 v = sample_motion_noise(m, rng);
    mean += v.norm() / kN;
    double ang = v.angle();
    if (ang < 0) ang += kTwoPi;
    bins[std::min(35, static_cast<int>(ang / kTwoPi * 36))]++;
  }
  EXPECT_NEAR(mean, 0.5, 0.01);
  double chi2 = 0.0;
  const double expect = kN / 36.0;
  for (int b : bins) chi2 += (b - expect) * (b - expect) / expect;
  EXPECT_LT(chi2, kChi2Crit35);
}

TEST(Noise, ObservationMagnitudeAndIsotropy) {
  Rng rng(5);
  NoiseModel m;
  constexpr int kN = 100000;
  double mag = 0.0;
  Vec2 sum{};
  for (int k = 0; k < kN; ++k) {
    const Vec2 d = perturb_position({10, -20}, m, rng) - Vec2{10, -20};
    mag += d.norm() / kN;
    sum += (1.0 / kN) * d;
  }
  EXPECT_NEAR(mag, 4.0, 0.05);
  EXPECT_NEAR(sum.x, 0.0, 0.05);
  EXPECT_NEAR(sum.y, 0.0, 0.05);
}

TEST(Noise, SeededStreamsAreIdentical) {
  NoiseModel m;
  Rng a(42), b(42);
  for (int k = 0; k < 1000; ++k) {
    const Vec2 x = sample_motion_noise(m, a), y = sample_motion_noise(m, b);
    ASSERT_EQ(x, y);
  }
}

TEST(Noise, HeadingNoiseDefaultsOff) {
  Rng rng(6);
  NoiseModel m;
  EXPECT_FALSE(m.heading_noise);
  EXPECT_EQ(sample_heading_noise(m, rng), 0.0);
  m.heading_noise = true;
  double sq = 0.0;
  for (int k = 0; k < 20000; ++k) sq += std::pow(sample_heading_noise(m, rng), 2) / 20000;
  EXPECT_NEAR(std::sqrt(sq), 0.005, 0.0002);
}

TEST(Noise, RejectsNegativeStd) {
  NoiseModel m;
  m.obs_std = -1;
  EXPECT_THROW(m.validate(), InvalidArgument);
}

TEST(CpgParameters, EveryActionHasAValidOscillator) {
  for (const auto& a : action_catalog()) {
    const cpg::CpgConfig cfg = cpg_parameters(a);
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_EQ(cfg.joints(), 3u);
  }
  // Straight actions carry no bending offset.
  for (double x : cpg_parameters(action(7)).offset_targets) EXPECT_EQ(x, 0.0);
  EXPECT_GT(cpg_parameters(action(12)).freq, cpg_parameters(action(2)).freq);
}
