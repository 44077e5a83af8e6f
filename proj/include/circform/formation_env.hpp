#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "circform/dynamics.hpp"
#include "circform/errors.hpp"
#include "circform/geom2d.hpp"

namespace circform {

inline constexpr int kObsDim = 11;
// Network inputs are the raw observation divided by these.
inline constexpr double kDistanceScale = 100.0;
inline constexpr double kAngleScale = kPi;

inline double chord_length(double radius, double central_angle) { return 2.0 * radius * std::sin(central_angle / 2.0); }

/// Target distribution of agents on the circle, as the arcs between
/// consecutive slots (slot k sits at the sum of the first k arcs).
struct FormationSpec {
  CirclePath path{};
  std::vector<double> arc_angles;

  std::size_t n_agents() const { return arc_angles.size(); }

  void validate() const {
    if (!(path.radius > 0.0)) throw InvalidArgument("circle radius must be positive");
    if (arc_angles.size() < 2) throw InvalidArgument("formation needs at least two agents");
    double sum = 0.0;
    for (double a : arc_angles) {
      if (!(a > 0.0)) throw InvalidArgument("formation arc angles must be positive");
      sum += a;
    }
    if (std::abs(sum - kTwoPi) > 1e-9) throw InvalidArgument("formation arc angles must sum to 2*pi");
  }

  double slot_angle(std::size_t k) const {
    double s = 0.0;
    for (std::size_t m = 0; m < k; ++m) s += arc_angles[m];
    return s;
  }

  /// Desired distance between whoever occupies slots k and l.
  double slot_chord(std::size_t k, std::size_t l) const {
    return chord_length(path.radius, std::abs(slot_angle(k) - slot_angle(l)));
  }

  static FormationSpec regular(CirclePath path, std::size_t n) {
    return {path, std::vector<double>(n, kTwoPi / static_cast<double>(n))};
  }
};

struct WorldState {
  std::vector<AgentPose> poses;
  std::size_t step_index = 0;
  FormationSpec spec;

  // The tracked target is the circle center.
  Vec2 target() const { return spec.path.center; }
  std::size_t n_agents() const { return poses.size(); }
};

/// Two closest agents to `i` by true position, nearest first, ties to the
/// lower id. With two agents the single other agent fills both slots.
inline std::array<std::size_t, 2> neighbors(const WorldState& s, std::size_t i) {
  const std::size_t n = s.n_agents();
  if (n < 2) throw InvalidArgument("neighbors need at least two agents");
  std::array<std::size_t, 2> best{n, n};
  std::array<double, 2> best_d{INFINITY, INFINITY};
  for (std::size_t j = 0; j < n; ++j) {
    if (j == i) continue;
    const double d = distance(s.poses[i].p, s.poses[j].p);
    // Strict comparison keeps the lower id on ties since j increases.
    if (d < best_d[0]) {
      best[1] = best[0];
      best_d[1] = best_d[0];
      best[0] = j;
      best_d[0] = d;
    } else if (d < best_d[1]) {
      best[1] = j;
      best_d[1] = d;
    }
  }
  if (n == 2) best[1] = best[0];
  return best;
}

/// Per-step bookkeeping shared by observations, rewards and metrics: the
/// neighbor pairs and which formation slot each agent currently occupies.
/// Slots follow the agents' cyclic order around the center in the
/// traversal direction, starting with agent 0 in slot 0.
struct Assignment {
  std::vector<std::array<std::size_t, 2>> neighbors;
  std::vector<std::size_t> slot;
};

inline Assignment assign(const WorldState& s) {
  const std::size_t n = s.n_agents();
  if (s.spec.n_agents() != n) throw InvalidArgument("formation spec and world disagree on agent count");
  Assignment a;
  a.neighbors.reserve(n);
  for (std::size_t i = 0; i < n; ++i) a.neighbors.push_back(neighbors(s, i));

  const double sign = orientation_sign(s.spec.path.orientation);
  const double base = (s.poses[0].p - s.spec.path.center).angle();
  std::vector<double> key(n);
  for (std::size_t i = 0; i < n; ++i) {
    double k = std::fmod(sign * ((s.poses[i].p - s.spec.path.center).angle() - base), kTwoPi);
    if (k < 0.0) k += kTwoPi;
    key[i] = i == 0 ? 0.0 : k;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return key[x] < key[y]; });
  a.slot.assign(n, 0);
  for (std::size_t k = 0; k < n; ++k) a.slot[order[k]] = k;
  return a;
}

inline double desired_distance(const WorldState& s, const Assignment& a, std::size_t i, std::size_t j) {
  return s.spec.slot_chord(a.slot[i], a.slot[j]);
}

struct Observation {
  double alpha = 0.0;  // heading relative to the path tangent at the projection
  double beta = 0.0;   // bearing of the traction point
  double d = 0.0;      // signed distance to the path
  std::array<double, 2> d_nb{};
  std::array<double, 2> alpha_nb{};  // heading difference to neighbor
  std::array<double, 2> phi_nb{};    // bearing of neighbor
  std::array<double, 2> d_hat{};

  std::array<double, kObsDim> to_array() const {
    return {alpha, beta, d, d_nb[0], d_nb[1], alpha_nb[0], alpha_nb[1], phi_nb[0], phi_nb[1], d_hat[0], d_hat[1]};
  }

  std::array<double, kObsDim> normalized() const {
    auto v = to_array();
    constexpr std::array<bool, kObsDim> is_angle{true, true, false, false, false, true, true, true, true, false, false};
    for (std::size_t k = 0; k < v.size(); ++k) v[k] /= is_angle[k] ? kAngleScale : kDistanceScale;
    return v;
  }
};

namespace detail {
inline double bearing_or_zero(Vec2 from, double heading, Vec2 to) {
  // Agents have no collision model and may momentarily overlap.
  if (distance(from, to) < 1e-9) return 0.0;
  return relative_bearing(from, heading, to);
}
}  // namespace detail

/// Local observation of agent `i`. Every position that enters it is
/// independently perturbed by the observation noise: own position first,
/// then the neighbors in order.
inline Observation observe(const WorldState& s, const Assignment& asg, std::size_t i, const NoiseModel& noise,
                           double lookahead, Rng& rng) {
  const CirclePath& path = s.spec.path;
  const AgentPose& me = s.poses[i];
  const Vec2 own = perturb_position(me.p, noise, rng);
  const auto nb = asg.neighbors[i];
  std::array<Vec2, 2> seen{};
  seen[0] = perturb_position(s.poses[nb[0]].p, noise, rng);
  seen[1] = nb[1] == nb[0] ? seen[0] : perturb_position(s.poses[nb[1]].p, noise, rng);

  Observation o;
  const Projection proj = project_to_circle(own, path);
  o.d = proj.signed_distance;
  o.alpha = wrap_angle(me.alpha - tangent_heading(proj.point, path));
  const Vec2 q = traction_point(own, path, lookahead);
  o.beta = detail::bearing_or_zero(own, me.alpha, q);
  for (std::size_t k = 0; k < 2; ++k) {
    const std::size_t j = nb[k];
    o.d_nb[k] = distance(own, seen[k]);
    o.alpha_nb[k] = wrap_angle(me.alpha - s.poses[j].alpha);
    o.phi_nb[k] = detail::bearing_or_zero(own, me.alpha, seen[k]);
    o.d_hat[k] = desired_distance(s, asg, i, j);
  }
  return o;
}

inline Observation observe(const WorldState& s, std::size_t i, const NoiseModel& noise, double lookahead, Rng& rng) {
  return observe(s, assign(s), i, noise, lookahead, rng);
}

/// Per-agent reward from true positions: -|d_i| - sum_j |d_ij - dhat_ij|.
inline double reward(const WorldState& s, const Assignment& asg, std::size_t i) {
  const Vec2 p = s.poses[i].p;
  double r = -std::abs(s.spec.path.radius - distance(p, s.spec.path.center));
  for (std::size_t j : asg.neighbors[i]) r -= std::abs(distance(p, s.poses[j].p) - desired_distance(s, asg, i, j));
  return r;
}

inline double reward(const WorldState& s, std::size_t i) { return reward(s, assign(s), i); }

enum class ArcDistribution { Equal, RandomSpacing, Mixed };

/// Initial-condition distribution for an episode.
struct ResetDistribution {
  std::size_t n_agents = 3;
  double radius_min = 60.0;  // cm
  double radius_max = 90.0;
  double offset_max = 20.0;  // |d_i| bound, cm
  double heading_max = 0.2 * kPi;
  Vec2 center{};
  Orientation orientation = Orientation::CounterClockwise;
  ArcDistribution arcs = ArcDistribution::Mixed;
  double min_arc_fraction = 0.25;  // of the equal arc, for random spacings
  std::optional<std::vector<double>> fixed_arcs;

  void validate() const {
    if (n_agents < 2) throw InvalidArgument("need at least two agents");
    if (!(radius_min > 0.0) || radius_max < radius_min) throw InvalidArgument("invalid radius range");
    if (offset_max < 0.0 || heading_max < 0.0) throw InvalidArgument("offset and heading bounds must be >= 0");
    if (offset_max >= radius_min) throw InvalidArgument("offset bound must be smaller than the radius");
    if (min_arc_fraction < 0.0 || min_arc_fraction > 1.0) throw InvalidArgument("min_arc_fraction must be in [0,1]");
    if (fixed_arcs && fixed_arcs->size() != n_agents) throw InvalidArgument("fixed arcs must match agent count");
  }
};

namespace detail {
inline double uniform(double lo, double hi, Rng& rng) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::vector<double> random_spacings(std::size_t n, double min_arc, Rng& rng) {
  std::vector<double> cuts(n - 1);
  for (double& c : cuts) c = uniform(0.0, 1.0, rng);
  std::sort(cuts.begin(), cuts.end());
  std::vector<double> arcs(n);
  const double free = kTwoPi - static_cast<double>(n) * min_arc;
  double prev = 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    arcs[k] = min_arc + free * (cuts[k] - prev);
    prev = cuts[k];
  }
  arcs[n - 1] = min_arc + free * (1.0 - prev);
  // Absorb rounding so the arcs sum to 2*pi.
  const double sum = std::accumulate(arcs.begin(), arcs.end() - 1, 0.0);
  arcs[n - 1] = kTwoPi - sum;
  return arcs;
}
}  // namespace detail

inline std::vector<double> sample_arcs(const ResetDistribution& dist, Rng& rng) {
  const std::size_t n = dist.n_agents;
  if (dist.fixed_arcs) return *dist.fixed_arcs;
  const std::vector<double> equal(n, kTwoPi / static_cast<double>(n));
  switch (dist.arcs) {
    case ArcDistribution::Equal: return equal;
    case ArcDistribution::RandomSpacing:
      return detail::random_spacings(n, dist.min_arc_fraction * kTwoPi / static_cast<double>(n), rng);
    case ArcDistribution::Mixed:
      if (detail::uniform(0.0, 1.0, rng) < 0.5) return equal;
      return detail::random_spacings(n, dist.min_arc_fraction * kTwoPi / static_cast<double>(n), rng);
  }
  return equal;
}

/// Fresh world: radius, formation, then per agent an arc position, a
/// signed radial offset and a heading perturbation from the tangent.
inline WorldState sample_initial_state(const ResetDistribution& dist, Rng& rng) {
  dist.validate();
  WorldState s;
  s.spec.path = {dist.center, detail::uniform(dist.radius_min, dist.radius_max, rng), dist.orientation};
  s.spec.arc_angles = sample_arcs(dist, rng);
  s.spec.validate();
  s.poses.reserve(dist.n_agents);
  for (std::size_t i = 0; i < dist.n_agents; ++i) {
    const double theta = detail::uniform(0.0, kTwoPi, rng);
    const double d = detail::uniform(-dist.offset_max, dist.offset_max, rng);
    const double dh = detail::uniform(-dist.heading_max, dist.heading_max, rng);
    const Vec2 on_circle = s.spec.path.center + Vec2::polar(s.spec.path.radius, theta);
    const Vec2 p = s.spec.path.center + Vec2::polar(s.spec.path.radius - d, theta);
    s.poses.push_back({p, wrap_angle(tangent_heading(on_circle, s.spec.path) + dh)});
  }
  return s;
}

struct EnvConfig {
  ResetDistribution reset{};
  NoiseModel noise{};
  double lookahead = 40.0;  // cm
  std::size_t episode_length = 300;
  MotionOrder motion_order = MotionOrder::TurnThenTranslate;

  void validate() const {
    reset.validate();
    noise.validate();
    if (!(lookahead > 0.0)) throw InvalidArgument("lookahead radius must be positive");
    if (episode_length == 0) throw InvalidArgument("episode length must be positive");
  }
};

inline std::vector<Observation> observe_all(const WorldState& s, const Assignment& a, const EnvConfig& cfg, Rng& rng) {
  std::vector<Observation> obs;
  obs.reserve(s.n_agents());
  for (std::size_t i = 0; i < s.n_agents(); ++i) obs.push_back(observe(s, a, i, cfg.noise, cfg.lookahead, rng));
  return obs;
}

struct StepResult {
  std::vector<Observation> next_observations;
  double team_reward = 0.0;
  std::vector<double> per_agent_rewards;
  bool done = false;
  WorldState true_state;
};

/// Simultaneous move of every agent, then rewards on the new true state and
/// noisy observations of it. Motion noise is drawn per agent in id order.
inline StepResult step(const WorldState& s, std::span<const int> joint_action, const EnvConfig& cfg, Rng& rng) {
  if (joint_action.size() != s.n_agents()) throw InvalidAction("joint action size does not match agent count");
  for (int a : joint_action) (void)action(a);
  if (s.step_index >= cfg.episode_length) throw EpisodeFinished("episode already finished");

  StepResult r;
  r.true_state = s;
  WorldState& next = r.true_state;
  for (std::size_t i = 0; i < s.n_agents(); ++i) {
    const Vec2 e = sample_motion_noise(cfg.noise, rng);
    AgentPose pose = step_pose(s.poses[i], action(joint_action[i]), e, cfg.motion_order);
    pose.alpha = wrap_angle(pose.alpha + sample_heading_noise(cfg.noise, rng));
    next.poses[i] = pose;
  }
  ++next.step_index;

  const Assignment asg = assign(next);
  r.per_agent_rewards.resize(s.n_agents());
  for (std::size_t i = 0; i < s.n_agents(); ++i) {
    r.per_agent_rewards[i] = reward(next, asg, i);
    r.team_reward += r.per_agent_rewards[i];
  }
  r.next_observations = observe_all(next, asg, cfg, rng);
  r.done = next.step_index == cfg.episode_length;
  return r;
}

/// Owns one world and its random stream.
class FormationEnv {
 public:
  FormationEnv(EnvConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), rng_(seed) { cfg_.validate(); }

  std::vector<Observation> reset() {
    state_ = sample_initial_state(cfg_.reset, rng_);
    return observe_all(state_, assign(state_), cfg_, rng_);
  }

  /// Switch the target distribution mid-episode; radius and center too.
  std::vector<Observation> set_formation(FormationSpec spec) {
    spec.validate();
    if (spec.n_agents() != state_.n_agents()) throw InvalidArgument("formation does not match agent count");
    state_.spec = std::move(spec);
    return observe_all(state_, assign(state_), cfg_, rng_);
  }

  StepResult step(std::span<const int> joint_action) {
    StepResult r = circform::step(state_, joint_action, cfg_, rng_);
    state_ = r.true_state;
    return r;
  }

  const WorldState& state() const { return state_; }
  const EnvConfig& config() const { return cfg_; }
  EnvConfig& config() { return cfg_; }
  Rng& rng() { return rng_; }

 private:
  EnvConfig cfg_;
  Rng rng_;
  WorldState state_;
};

/// Sequence of world states with the joint action that produced each state
/// after the first.
struct Trajectory {
  std::vector<WorldState> states;
  std::vector<std::vector<int>> actions;
};

/// One row per agent per state: step, agent_id, x, y, heading, action_id,
/// d_i, reward. action_id is -1 for the initial state.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& t) {
  os << "step,agent_id,x,y,heading,action_id,d_i,reward\n";
  const auto old_precision = os.precision(10);
  for (std::size_t k = 0; k < t.states.size(); ++k) {
    const WorldState& s = t.states[k];
    const Assignment asg = assign(s);
    for (std::size_t i = 0; i < s.n_agents(); ++i) {
      const int a = k == 0 ? -1 : t.actions.at(k - 1).at(i);
      const double d = s.spec.path.radius - distance(s.poses[i].p, s.spec.path.center);
      os << s.step_index << ',' << i << ',' << s.poses[i].p.x << ',' << s.poses[i].p.y << ',' << s.poses[i].alpha
         << ',' << a << ',' << d << ',' << reward(s, asg, i) << '\n';
    }
  }
  os.precision(old_precision);
}

}  // namespace circform
