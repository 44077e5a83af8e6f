#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "circform/cpg.hpp"
#include "circform/errors.hpp"
#include "circform/geom2d.hpp"

namespace circform {

using Rng = std::mt19937_64;

inline constexpr int kNumActions = 15;
inline constexpr double kStepsPerSecond = 25.0;
inline constexpr double kTimeStep = 1.0 / kStepsPerSecond;

enum class TurnClass { LeftSharp, LeftGradual, Straight, RightGradual, RightSharp };
enum class SpeedClass { Low, Middle, High };

inline constexpr std::string_view to_string(TurnClass t) {
  switch (t) {
    case TurnClass::LeftSharp: return "left_sharp";
    case TurnClass::LeftGradual: return "left_gradual";
    case TurnClass::Straight: return "straight";
    case TurnClass::RightGradual: return "right_gradual";
    case TurnClass::RightSharp: return "right_sharp";
  }
  return "?";
}

inline constexpr std::string_view to_string(SpeedClass s) {
  switch (s) {
    case SpeedClass::Low: return "low";
    case SpeedClass::Middle: return "middle";
    case SpeedClass::High: return "high";
  }
  return "?";
}

/// Measured per-step kinematic effect of one CPG parameter set.
struct ActionEntry {
  int id;
  TurnClass turn;
  SpeedClass speed;
  double dp;      // cm per step
  double dalpha;  // rad per step
};

// Ids run speed-major: id = 5 * speed + turn. Turn labels are those of the
// robot's recorded data, where a left turn has negative dalpha; the
// simulator applies dalpha as-is in its y-up frame.
inline constexpr std::array<ActionEntry, kNumActions> kActionCatalog{{
    {0, TurnClass::LeftSharp, SpeedClass::Low, 0.383, -0.0171},
    {1, TurnClass::LeftGradual, SpeedClass::Low, 0.430, -0.0082},
    {2, TurnClass::Straight, SpeedClass::Low, 0.423, 0.0},
    {3, TurnClass::RightGradual, SpeedClass::Low, 0.421, 0.0110},
    {4, TurnClass::RightSharp, SpeedClass::Low, 0.382, 0.0181},
    {5, TurnClass::LeftSharp, SpeedClass::Middle, 0.748, -0.0323},
    {6, TurnClass::LeftGradual, SpeedClass::Middle, 0.851, -0.0172},
    {7, TurnClass::Straight, SpeedClass::Middle, 0.856, 0.0},
    {8, TurnClass::RightGradual, SpeedClass::Middle, 0.817, 0.02105},
    {9, TurnClass::RightSharp, SpeedClass::Middle, 0.738, 0.0295},
    {10, TurnClass::LeftSharp, SpeedClass::High, 1.230, -0.0484},
    {11, TurnClass::LeftGradual, SpeedClass::High, 1.330, -0.0308},
    {12, TurnClass::Straight, SpeedClass::High, 1.670, 0.0},
    {13, TurnClass::RightGradual, SpeedClass::High, 1.323, 0.0336},
    {14, TurnClass::RightSharp, SpeedClass::High, 1.194, 0.0480},
}};

inline constexpr const std::array<ActionEntry, kNumActions>& action_catalog() { return kActionCatalog; }

inline const ActionEntry& action(int id) {
  if (id < 0 || id >= kNumActions) throw InvalidAction("action id out of range: " + std::to_string(id));
  return kActionCatalog[static_cast<std::size_t>(id)];
}

inline constexpr int action_id(SpeedClass s, TurnClass t) { return 5 * static_cast<int>(s) + static_cast<int>(t); }

inline void write_action_catalog_csv(std::ostream& os) {
  os << "id,turn_class,speed_class,dp,dalpha\n";
  for (const auto& a : kActionCatalog)
    os << a.id << ',' << to_string(a.turn) << ',' << to_string(a.speed) << ',' << a.dp << ',' << a.dalpha << '\n';
}

/// Illustrative CPG parameterisation for each action class: speed sets
/// frequency and amplitude, turn sets a body-bending offset. The simulator
/// never integrates these; it uses the measured table above.
inline cpg::CpgConfig cpg_parameters(const ActionEntry& a) {
  constexpr std::array<double, 3> freq{0.8, 1.2, 1.6};
  constexpr std::array<double, 3> amp{0.30, 0.40, 0.50};
  constexpr std::array<double, 5> offset{-0.35, -0.17, 0.0, 0.17, 0.35};
  constexpr std::array<double, 3> amp_profile{0.35, 0.65, 1.0};
  constexpr std::array<double, 3> offset_profile{1.0, 0.6, 0.3};
  const auto s = static_cast<std::size_t>(a.speed);
  const auto t = static_cast<std::size_t>(a.turn);
  std::vector<double> amps(3), offsets(3);
  for (std::size_t i = 0; i < 3; ++i) {
    amps[i] = amp[s] * amp_profile[i];
    offsets[i] = offset[t] * offset_profile[i];
  }
  return cpg::robot_config(std::move(amps), std::move(offsets), freq[s]);
}

struct NoiseModel {
  double obs_mean = 4.0;  // cm, magnitude of the observation error
  double obs_std = 0.5;
  double motion_mean = 0.5;  // cm, magnitude of the per-step motion error
  double motion_std = 0.1;
  bool heading_noise = false;
  double heading_std = 0.005;  // rad per step, only when heading_noise

  static NoiseModel off() { return {0.0, 0.0, 0.0, 0.0, false, 0.0}; }
  bool observation_enabled() const { return obs_mean != 0.0 || obs_std != 0.0; }

  void validate() const {
    if (obs_std < 0.0 || motion_std < 0.0 || heading_std < 0.0)
      throw InvalidArgument("noise standard deviations must be non-negative");
  }
};

namespace detail {
inline double sample_normal(double mean, double std, Rng& rng) {
  if (std == 0.0) return mean;
  return std::normal_distribution<double>(mean, std)(rng);
}

// Magnitude ~ Normal(mean, std) clamped at zero, direction uniform.
inline Vec2 sample_isotropic(double mean, double std, Rng& rng) {
  const double m = std::max(0.0, sample_normal(mean, std, rng));
  const double u = std::uniform_real_distribution<double>(0.0, kTwoPi)(rng);
  return Vec2::polar(m, u);
}
}  // namespace detail

inline Vec2 sample_motion_noise(const NoiseModel& model, Rng& rng) {
  return detail::sample_isotropic(model.motion_mean, model.motion_std, rng);
}

inline Vec2 perturb_position(Vec2 p, const NoiseModel& model, Rng& rng) {
  return p + detail::sample_isotropic(model.obs_mean, model.obs_std, rng);
}

inline double sample_heading_noise(const NoiseModel& model, Rng& rng) {
  return model.heading_noise ? detail::sample_normal(0.0, model.heading_std, rng) : 0.0;
}

struct AgentPose {
  Vec2 p{};
  double alpha = 0.0;  // heading, (-pi, pi]
};

enum class MotionOrder { TurnThenTranslate, TranslateThenTurn };

inline AgentPose step_pose(const AgentPose& pose, const ActionEntry& a, Vec2 noise,
                           MotionOrder order = MotionOrder::TurnThenTranslate) {
  const double turned = wrap_angle(pose.alpha + a.dalpha);
  const double travel = order == MotionOrder::TurnThenTranslate ? turned : pose.alpha;
  return {pose.p + Vec2::polar(a.dp, travel) + noise, turned};
}

}  // namespace circform
