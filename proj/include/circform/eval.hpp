#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "circform/errors.hpp"
#include "circform/formation_env.hpp"
#include "circform/marl.hpp"
#include "circform/neuralnet.hpp"

namespace circform::eval {

struct ErrorSummary {
  double err_t_mse = 0.0;  // cm^2
  double err_f_mse = 0.0;  // cm^2
  double err_t_rmse = 0.0;
  double err_f_rmse = 0.0;
  std::size_t steps = 0;
};

/// Tracking and formation errors over a sequence of true states:
///   err_t = 1/(N T) sum_i sum_k (d_i0(k) - R_C)^2
///   err_f = 1/(2 N T) sum_i sum_k sum_{j in N_i} (d_ij(k) - dhat_ij(k))^2
/// with neighbors and desired distances resolved at every state.
inline ErrorSummary compute_errors(std::span<const WorldState> traj) {
  if (traj.empty()) throw EmptyTrajectory("cannot score an empty trajectory");
  double sum_t = 0.0, sum_f = 0.0;
  const std::size_t n = traj.front().n_agents();
  for (const WorldState& s : traj) {
    if (s.n_agents() != n) throw InvalidArgument("agent count changes within trajectory");
    const Assignment asg = assign(s);
    for (std::size_t i = 0; i < n; ++i) {
      const double et = distance(s.poses[i].p, s.spec.path.center) - s.spec.path.radius;
      sum_t += et * et;
      for (std::size_t j : asg.neighbors[i]) {
        const double ef = distance(s.poses[i].p, s.poses[j].p) - desired_distance(s, asg, i, j);
        sum_f += ef * ef;
      }
    }
  }
  ErrorSummary e;
  e.steps = traj.size();
  const double nt = static_cast<double>(n * traj.size());
  e.err_t_mse = sum_t / nt;
  e.err_f_mse = sum_f / (2.0 * nt);
  e.err_t_rmse = std::sqrt(e.err_t_mse);
  e.err_f_rmse = std::sqrt(e.err_f_mse);
  return e;
}

/// Timeline of target formations. Phase k is in force from its start step
/// until the next phase starts.
struct ScenarioScript {
  struct Phase {
    std::size_t start = 0;
    FormationSpec spec;
  };
  std::vector<Phase> phases;
  std::size_t duration = 0;  // steps

  std::size_t n_agents() const { return phases.front().spec.n_agents(); }

  void validate() const {
    if (phases.empty()) throw InvalidArgument("scenario has no phases");
    if (phases.front().start != 0) throw InvalidArgument("scenario must start at step 0");
    for (std::size_t k = 0; k < phases.size(); ++k) {
      phases[k].spec.validate();
      if (phases[k].spec.n_agents() != n_agents()) throw InvalidArgument("scenario phases disagree on agent count");
      if (k > 0 && phases[k].start <= phases[k - 1].start)
        throw InvalidArgument("scenario phase starts must be strictly increasing");
    }
    if (duration <= phases.back().start) throw InvalidArgument("scenario ends before its last phase");
  }

  /// Index of the phase in force while taking step `k` (0-based).
  std::size_t phase_at(std::size_t k) const {
    std::size_t p = 0;
    while (p + 1 < phases.size() && phases[p + 1].start <= k) ++p;
    return p;
  }
};

// 75 s at 25 steps per second.
inline constexpr std::size_t kDefaultPhaseSteps = 1875;

inline ScenarioScript static_scenario(FormationSpec spec, std::size_t duration = kDefaultPhaseSteps) {
  ScenarioScript s{{{0, std::move(spec)}}, duration};
  s.validate();
  return s;
}

/// Central arcs of the three-robot formations. Triangle names refer to
/// interior angles of the inscribed triangle; each central arc is twice the
/// opposite inscribed angle.
inline std::vector<double> equilateral_arcs() { return {kTwoPi / 3, kTwoPi / 3, kTwoPi / 3}; }
inline std::vector<double> isosceles_right_arcs() { return {kPi / 2, kPi / 2, kPi}; }
inline std::vector<double> right_30_60_arcs() { return {kPi, 2 * kPi / 3, kPi / 3}; }

inline ScenarioScript formation_switch_scenario(double radius = 70.0, std::size_t interval = kDefaultPhaseSteps) {
  const CirclePath path{{0.0, 0.0}, radius, Orientation::CounterClockwise};
  ScenarioScript s;
  s.phases = {{0, {path, equilateral_arcs()}},
              {interval, {path, isosceles_right_arcs()}},
              {2 * interval, {path, right_30_60_arcs()}}};
  s.duration = 3 * interval;
  s.validate();
  return s;
}

/// Named target distributions understood by the command line.
inline FormationSpec named_formation(const std::string& name, std::size_t n_agents, double radius) {
  const CirclePath path{{0.0, 0.0}, radius, Orientation::CounterClockwise};
  auto need = [&](std::size_t n) {
    if (n_agents != n) throw InvalidArgument("formation '" + name + "' needs " + std::to_string(n) + " agents");
  };
  if (name == "equilateral" || name == "isosceles-right" || name == "right-30-60") {
    need(3);
    if (name == "equilateral") return {path, equilateral_arcs()};
    if (name == "isosceles-right") return {path, isosceles_right_arcs()};
    return {path, right_30_60_arcs()};
  }
  if (name == "square") {
    need(4);
    return FormationSpec::regular(path, 4);
  }
  if (name == "decagon") {
    need(10);
    return FormationSpec::regular(path, 10);
  }
  if (name == "regular") {
    if (n_agents < 2) throw InvalidArgument("regular formation needs at least two agents");
    return FormationSpec::regular(path, n_agents);
  }
  throw InvalidArgument("unknown formation: " + name);
}

struct EvalOptions {
  ScenarioScript scenario;
  std::size_t episodes = 20;
  bool noise = true;
  std::uint64_t seed = 0;
  // Steps after each formation change that are not scored.
  std::size_t settle_steps = 1575;
  double lookahead = 40.0;
  double offset_max = 20.0;
  double heading_max = 0.2 * kPi;
  unsigned threads = 0;  // 0: hardware concurrency
  bool keep_trajectories = false;
};

struct EpisodeReport {
  std::uint64_t seed = 0;
  ErrorSummary errors;
};

struct EvalReport {
  std::string algorithm;
  std::size_t n_agents = 0;
  std::size_t n_episodes = 0;
  double err_t_mse = 0.0;
  double err_t_rmse = 0.0;
  double err_f_mse = 0.0;
  double err_f_rmse = 0.0;
  // Spread of the per-episode rmse values.
  double err_t_rmse_mean = 0.0;
  double err_t_rmse_std = 0.0;
  double err_f_rmse_mean = 0.0;
  double err_f_rmse_std = 0.0;
  std::vector<EpisodeReport> episodes;
  std::uint64_t seed = 0;
  bool noise = true;

  std::vector<Trajectory> trajectories;  // only with keep_trajectories
};

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["algorithm"] = r.algorithm;
  j["n_agents"] = r.n_agents;
  j["n_episodes"] = r.n_episodes;
  j["seed"] = r.seed;
  j["noise"] = r.noise;
  j["err_t_mse"] = r.err_t_mse;
  j["err_t_rmse"] = r.err_t_rmse;
  j["err_f_mse"] = r.err_f_mse;
  j["err_f_rmse"] = r.err_f_rmse;
  j["err_t_rmse_mean"] = r.err_t_rmse_mean;
  j["err_t_rmse_std"] = r.err_t_rmse_std;
  j["err_f_rmse_mean"] = r.err_f_rmse_mean;
  j["err_f_rmse_std"] = r.err_f_rmse_std;
  auto& eps = j["episodes"] = nlohmann::json::array();
  for (const auto& e : r.episodes)
    eps.push_back({{"seed", e.seed},
                   {"scored_steps", e.errors.steps},
                   {"err_t_mse", e.errors.err_t_mse},
                   {"err_t_rmse", e.errors.err_t_rmse},
                   {"err_f_mse", e.errors.err_f_mse},
                   {"err_f_rmse", e.errors.err_f_rmse}});
  return j;
}

inline void check_compatible(const nn::NetworkSet& net) {
  if (net.shape.inputs != kObsDim || net.shape.actions != kNumActions || net.agents.empty())
    throw IncompatibleCheckpoint("checkpoint network does not map 11 observations to 15 actions");
}

/// Greedy rollout of one episode along the scenario; returns the trajectory
/// and the scored sub-sequence.
inline std::pair<Trajectory, std::vector<WorldState>> rollout(const nn::NetworkSet& net, const EvalOptions& opt,
                                                              std::uint64_t episode_seed) {
  const ScenarioScript& sc = opt.scenario;
  const FormationSpec& first = sc.phases.front().spec;
  EnvConfig cfg;
  cfg.reset.n_agents = sc.n_agents();
  cfg.reset.radius_min = cfg.reset.radius_max = first.path.radius;
  cfg.reset.center = first.path.center;
  cfg.reset.orientation = first.path.orientation;
  cfg.reset.fixed_arcs = first.arc_angles;
  cfg.reset.offset_max = opt.offset_max;
  cfg.reset.heading_max = opt.heading_max;
  cfg.noise = opt.noise ? NoiseModel{} : NoiseModel::off();
  cfg.lookahead = opt.lookahead;
  cfg.episode_length = sc.duration;

  FormationEnv env(cfg, episode_seed);
  marl::GreedyPolicy policy(net, sc.n_agents());
  std::vector<Observation> obs = env.reset();
  Trajectory traj;
  std::vector<WorldState> scored;
  traj.states.push_back(env.state());
  std::size_t phase = 0;
  for (std::size_t k = 0; k < sc.duration; ++k) {
    const std::size_t p = sc.phase_at(k);
    if (p != phase) {
      phase = p;
      obs = env.set_formation(sc.phases[p].spec);
    }
    const std::vector<int> a = policy.act(marl::normalized(obs));
    StepResult r = env.step(a);
    obs = std::move(r.next_observations);
    if (k + 1 > sc.phases[p].start + opt.settle_steps) scored.push_back(r.true_state);
    if (opt.keep_trajectories) {
      traj.states.push_back(std::move(r.true_state));
      traj.actions.push_back(a);
    }
  }
  if (!opt.keep_trajectories) traj = {};
  return {std::move(traj), std::move(scored)};
}

inline EvalReport evaluate(const nn::Checkpoint& ck, const EvalOptions& opt) {
  check_compatible(ck.net);
  opt.scenario.validate();
  if (opt.episodes == 0) throw InvalidArgument("evaluation needs at least one episode");

  EvalReport rep;
  rep.algorithm = ck.metadata.value("algorithm", std::string("unknown"));
  rep.n_agents = opt.scenario.n_agents();
  rep.n_episodes = opt.episodes;
  rep.seed = opt.seed;
  rep.noise = opt.noise;
  rep.episodes.resize(opt.episodes);
  if (opt.keep_trajectories) rep.trajectories.resize(opt.episodes);

  std::atomic<std::size_t> next{0};
  std::vector<std::string> failures(opt.episodes);
  auto worker = [&] {
    for (std::size_t e = next++; e < opt.episodes; e = next++) {
      try {
        const std::uint64_t s = marl::mix_seed(opt.seed + e);
        auto [traj, scored] = rollout(ck.net, opt, s);
        rep.episodes[e] = {s, compute_errors(scored)};
        if (opt.keep_trajectories) rep.trajectories[e] = std::move(traj);
      } catch (const std::exception& ex) {
        failures[e] = ex.what();
      }
    }
  };
  unsigned threads = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, opt.episodes));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (const auto& f : failures)
    if (!f.empty()) throw Error("evaluation episode failed: " + f);

  const auto n = static_cast<double>(opt.episodes);
  for (const auto& e : rep.episodes) {
    rep.err_t_mse += e.errors.err_t_mse / n;
    rep.err_f_mse += e.errors.err_f_mse / n;
    rep.err_t_rmse_mean += e.errors.err_t_rmse / n;
    rep.err_f_rmse_mean += e.errors.err_f_rmse / n;
  }
  rep.err_t_rmse = std::sqrt(rep.err_t_mse);
  rep.err_f_rmse = std::sqrt(rep.err_f_mse);
  for (const auto& e : rep.episodes) {
    rep.err_t_rmse_std += std::pow(e.errors.err_t_rmse - rep.err_t_rmse_mean, 2) / n;
    rep.err_f_rmse_std += std::pow(e.errors.err_f_rmse - rep.err_f_rmse_mean, 2) / n;
  }
  rep.err_t_rmse_std = std::sqrt(rep.err_t_rmse_std);
  rep.err_f_rmse_std = std::sqrt(rep.err_f_rmse_std);
  return rep;
}

namespace detail {
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}
}  // namespace detail

/// SVG plot: the path of the first state's formation, one polyline per
/// agent, a start marker per agent and an end marker when the trajectory
/// has more than one state. The y axis points up.
inline std::string render_svg(const Trajectory& t) {
  if (t.states.empty()) throw EmptyTrajectory("cannot render an empty trajectory");
  static constexpr const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  const CirclePath& path = t.states.front().spec.path;
  double xmin = path.center.x - path.radius, xmax = path.center.x + path.radius;
  double ymin = path.center.y - path.radius, ymax = path.center.y + path.radius;
  for (const auto& s : t.states)
    for (const auto& p : s.poses) {
      xmin = std::min(xmin, p.p.x);
      xmax = std::max(xmax, p.p.x);
      ymin = std::min(ymin, p.p.y);
      ymax = std::max(ymax, p.p.y);
    }
  const double pad = 10.0;
  xmin -= pad, ymin -= pad, xmax += pad, ymax += pad;
  using detail::fmt;
  auto X = [&](double x) { return fmt(x - xmin); };
  auto Y = [&](double y) { return fmt(ymax - y); };

  std::string out;
  out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(4 * (xmax - xmin)) + "\" height=\"" +
         fmt(4 * (ymax - ymin)) + "\" viewBox=\"0 0 " + fmt(xmax - xmin) + " " + fmt(ymax - ymin) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<circle class=\"path\" cx=\"" + X(path.center.x) + "\" cy=\"" + Y(path.center.y) + "\" r=\"" +
         fmt(path.radius) + "\" fill=\"none\" stroke=\"#999\" stroke-width=\"0.5\" stroke-dasharray=\"2,2\"/>\n";
  out += "<circle class=\"target\" cx=\"" + X(path.center.x) + "\" cy=\"" + Y(path.center.y) +
         "\" r=\"1.5\" fill=\"black\"/>\n";
  const std::size_t n = t.states.front().n_agents();
  for (std::size_t i = 0; i < n; ++i) {
    const char* color = palette[i % std::size(palette)];
    if (t.states.size() > 1) {
      out += "<polyline class=\"track\" fill=\"none\" stroke=\"" + std::string(color) +
             "\" stroke-width=\"0.4\" points=\"";
      for (std::size_t k = 0; k < t.states.size(); ++k) {
        const Vec2 p = t.states[k].poses[i].p;
        out += (k ? " " : "") + X(p.x) + "," + Y(p.y);
      }
      out += "\"/>\n";
    }
    const Vec2 s = t.states.front().poses[i].p;
    out += "<circle class=\"marker start\" cx=\"" + X(s.x) + "\" cy=\"" + Y(s.y) + "\" r=\"1.5\" fill=\"" + color +
           "\"/>\n";
    if (t.states.size() > 1) {
      const Vec2 e = t.states.back().poses[i].p;
      out += "<rect class=\"marker end\" x=\"" + fmt(e.x - xmin - 1.5) + "\" y=\"" + fmt(ymax - e.y - 1.5) +
             "\" width=\"3\" height=\"3\" fill=\"" + color + "\"/>\n";
    }
  }
  out += "</svg>\n";
  return out;
}

inline void render_trajectory(const Trajectory& t, const std::string& file) {
  const std::string svg = render_svg(t);
  std::ofstream os(file, std::ios::binary);
  if (!os) throw IoFailure("cannot open " + file + " for writing");
  os << svg;
  if (!os) throw IoFailure("failed writing " + file);
}

}  // namespace circform::eval
