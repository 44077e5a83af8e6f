#pragma once

// Declarative experiment configuration (JSON). Every key is optional and
// falls back to the library default; unknown keys are rejected.

#include <cstdint>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "circform/errors.hpp"
#include "circform/formation_env.hpp"
#include "circform/marl.hpp"

namespace circform {

struct ExperimentConfig {
  marl::TrainingConfig training{};
  std::string output_dir = "runs/default";
};

namespace config_detail {

using nlohmann::json;

inline std::string orientation_name(Orientation o) { return o == Orientation::CounterClockwise ? "ccw" : "cw"; }

inline std::string arc_name(ArcDistribution a) {
  switch (a) {
    case ArcDistribution::Equal: return "equal";
    case ArcDistribution::RandomSpacing: return "random";
    case ArcDistribution::Mixed: return "mixed";
  }
  return "?";
}

inline std::string motion_name(MotionOrder m) {
  return m == MotionOrder::TurnThenTranslate ? "turn_then_translate" : "translate_then_turn";
}

// Reads the members of one JSON object, remembering which keys were used.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  template <class T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer() || (std::is_unsigned_v<T> && it->template get<long long>() < 0))
          throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError("");
      } else {
        if (!it->is_string()) throw ConfigError("");
      }
      out = it->template get<T>();
    } catch (const std::exception&) {
      throw ConfigError(where(key) + ": value has the wrong type");
    }
  }

  template <class E>
  void read_enum(const char* key, E& out, const std::vector<std::pair<std::string, E>>& names) {
    std::string s;
    bool present = j_.contains(key);
    read(key, s);
    if (!present) return;
    for (const auto& [n, v] : names)
      if (n == s) {
        out = v;
        return;
      }
    std::string allowed;
    for (const auto& [n, v] : names) allowed += (allowed.empty() ? "" : ", ") + n;
    throw ConfigError(where(key) + ": unknown value '" + s + "' (expected one of: " + allowed + ")");
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(where(it.key()) + ": unknown key");
  }

  std::string where(const std::string& key = "") const {
    std::string p = path_;
    if (!key.empty()) p += (p.empty() ? "" : ".") + key;
    return p.empty() ? "<root>" : p;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace config_detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  using namespace config_detail;
  const auto& t = c.training;
  const auto& l = t.learner;
  const auto& e = t.env;
  json j;
  j["seed"] = t.seed;
  j["output_dir"] = c.output_dir;
  j["record_wall_time"] = t.record_wall_time;
  j["best_window"] = t.best_window;
  j["learner"] = {{"algorithm", marl::to_string(l.algorithm)},
                  {"gamma", l.gamma},
                  {"lr", l.lr},
                  {"batch_size", l.batch_size},
                  {"buffer_capacity", l.buffer_capacity},
                  {"target_update_period", l.target_update_period},
                  {"warmup", l.warmup},
                  {"epsilon_start", l.epsilon_start},
                  {"epsilon_end", l.epsilon_end},
                  {"epsilon_decay_steps", l.epsilon_decay_steps},
                  {"episodes", l.episodes},
                  {"share_advantage_heads", l.share_advantage_heads},
                  {"vdn_dueling", l.vdn_dueling},
                  {"subtract_mean", l.subtract_mean},
                  {"hidden", l.hidden},
                  {"reward_scale", l.reward_scale},
                  {"grad_clip_norm", l.grad_clip_norm},
                  {"param_average", l.param_average}};
  j["env"] = {{"n_agents", e.reset.n_agents},
              {"radius_min", e.reset.radius_min},
              {"radius_max", e.reset.radius_max},
              {"offset_max", e.reset.offset_max},
              {"heading_max", e.reset.heading_max},
              {"orientation", orientation_name(e.reset.orientation)},
              {"arc_distribution", arc_name(e.reset.arcs)},
              {"min_arc_fraction", e.reset.min_arc_fraction},
              {"lookahead_radius", e.lookahead},
              {"episode_length", e.episode_length},
              {"motion_order", motion_name(e.motion_order)}};
  j["noise"] = {{"obs_mean", e.noise.obs_mean},         {"obs_std", e.noise.obs_std},
                {"motion_mean", e.noise.motion_mean},   {"motion_std", e.noise.motion_std},
                {"heading_noise", e.noise.heading_noise}, {"heading_std", e.noise.heading_std}};
  j["validation"] = {{"period", t.validation_period},
                     {"episodes", t.validation_episodes},
                     {"steps", t.validation_steps}};
  return j;
}

/// Overlays `j` on the defaults. Throws ConfigError naming the offending key.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using namespace config_detail;
  ExperimentConfig c;
  auto& t = c.training;
  auto& l = t.learner;
  auto& e = t.env;
  ObjectReader root(j, "");
  root.read("seed", t.seed);
  root.read("output_dir", c.output_dir);
  root.read("record_wall_time", t.record_wall_time);
  root.read("best_window", t.best_window);
  if (const json* lj = root.child("learner")) {
    ObjectReader r(*lj, "learner");
    r.read_enum("algorithm", l.algorithm,
                {{"c2vdn", marl::Algorithm::C2VDN}, {"vdn", marl::Algorithm::VDN}, {"iql_dqn", marl::Algorithm::IQL_DQN}});
    r.read("gamma", l.gamma);
    r.read("lr", l.lr);
    r.read("batch_size", l.batch_size);
    r.read("buffer_capacity", l.buffer_capacity);
    r.read("target_update_period", l.target_update_period);
    r.read("warmup", l.warmup);
    r.read("epsilon_start", l.epsilon_start);
    r.read("epsilon_end", l.epsilon_end);
    r.read("epsilon_decay_steps", l.epsilon_decay_steps);
    r.read("episodes", l.episodes);
    r.read("share_advantage_heads", l.share_advantage_heads);
    r.read("vdn_dueling", l.vdn_dueling);
    r.read("subtract_mean", l.subtract_mean);
    r.read("hidden", l.hidden);
    r.read("reward_scale", l.reward_scale);
    r.read("grad_clip_norm", l.grad_clip_norm);
    r.read("param_average", l.param_average);
    r.finish();
  }
  if (const json* ej = root.child("env")) {
    ObjectReader r(*ej, "env");
    r.read("n_agents", e.reset.n_agents);
    r.read("radius_min", e.reset.radius_min);
    r.read("radius_max", e.reset.radius_max);
    r.read("offset_max", e.reset.offset_max);
    r.read("heading_max", e.reset.heading_max);
    r.read_enum("orientation", e.reset.orientation,
                {{"ccw", Orientation::CounterClockwise}, {"cw", Orientation::Clockwise}});
    r.read_enum("arc_distribution", e.reset.arcs,
                {{"equal", ArcDistribution::Equal},
                 {"random", ArcDistribution::RandomSpacing},
                 {"mixed", ArcDistribution::Mixed}});
    r.read("min_arc_fraction", e.reset.min_arc_fraction);
    r.read("lookahead_radius", e.lookahead);
    r.read("episode_length", e.episode_length);
    r.read_enum("motion_order", e.motion_order,
                {{"turn_then_translate", MotionOrder::TurnThenTranslate},
                 {"translate_then_turn", MotionOrder::TranslateThenTurn}});
    r.finish();
  }
  if (const json* nj = root.child("noise")) {
    ObjectReader r(*nj, "noise");
    r.read("obs_mean", e.noise.obs_mean);
    r.read("obs_std", e.noise.obs_std);
    r.read("motion_mean", e.noise.motion_mean);
    r.read("motion_std", e.noise.motion_std);
    r.read("heading_noise", e.noise.heading_noise);
    r.read("heading_std", e.noise.heading_std);
    r.finish();
  }
  if (const json* vj = root.child("validation")) {
    ObjectReader r(*vj, "validation");
    r.read("period", t.validation_period);
    r.read("episodes", t.validation_episodes);
    r.read("steps", t.validation_steps);
    r.finish();
  }
  root.finish();
  try {
    l.validate();
    e.validate();
  } catch (const InvalidArgument& ex) {
    throw ConfigError(std::string("invalid configuration: ") + ex.what());
  }
  if (t.best_window == 0) throw ConfigError("best_window: must be positive");
  if (t.validation_period > 0 && (t.validation_episodes == 0 || t.validation_steps < 2))
    throw ConfigError("validation: needs at least one episode of two or more steps");
  return c;
}

/// Parses JSON text; syntax errors report line and column.
inline ExperimentConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& ex) {
    std::size_t line = 1, col = 1;
    const std::size_t stop = std::min<std::size_t>(ex.byte ? ex.byte - 1 : 0, text.size());
    for (std::size_t k = 0; k < stop; ++k) {
      if (text[k] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError("line " + std::to_string(line) + ", column " + std::to_string(col) + ": " + ex.what());
  }
  return config_from_json(j);
}

/// FNV-1a of the canonical JSON dump. The output directory is left out so
/// the same experiment hashes the same wherever it is written.
inline std::string config_hash(const ExperimentConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("output_dir");
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace circform
