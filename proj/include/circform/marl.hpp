#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "circform/dynamics.hpp"
#include "circform/errors.hpp"
#include "circform/formation_env.hpp"
#include "circform/neuralnet.hpp"

namespace circform::marl {

using nn::Matrix;
using nn::NetworkSet;
using ObsVec = std::array<double, kObsDim>;

enum class Algorithm { C2VDN, VDN, IQL_DQN };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::C2VDN: return "c2vdn";
    case Algorithm::VDN: return "vdn";
    case Algorithm::IQL_DQN: return "iql_dqn";
  }
  return "?";
}

inline Algorithm algorithm_from_string(const std::string& s) {
  if (s == "c2vdn") return Algorithm::C2VDN;
  if (s == "vdn") return Algorithm::VDN;
  if (s == "iql_dqn") return Algorithm::IQL_DQN;
  throw InvalidArgument("unknown algorithm: " + s);
}

struct LearnerConfig {
  Algorithm algorithm = Algorithm::C2VDN;
  double gamma = 0.99;
  double lr = 3e-4;
  std::size_t batch_size = 64;
  std::size_t buffer_capacity = 100000;
  std::size_t target_update_period = 200;  // gradient steps
  std::size_t warmup = 1000;               // transitions before learning starts
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  std::size_t epsilon_decay_steps = 50000;  // env steps
  std::size_t episodes = 1500;
  bool share_advantage_heads = true;  // C2VDN: share trunk and A-head, not just V
  bool vdn_dueling = false;
  bool subtract_mean = false;
  int hidden = 64;
  // Rewards enter the TD target multiplied by this (cm -> m by default).
  double reward_scale = 0.01;
  // Global gradient-norm clip; 0 disables.
  double grad_clip_norm = 10.0;
  // Decay of an exponential moving average of the online parameters, taken
  // after every gradient step; checkpoints hold the average. 0 disables it.
  double param_average = 0.9999;

  void validate() const {
    if (gamma < 0.0 || gamma > 1.0) throw InvalidArgument("gamma must be in [0,1]");
    if (epsilon_start < 0.0 || epsilon_start > 1.0 || epsilon_end < 0.0 || epsilon_end > 1.0)
      throw InvalidArgument("epsilon must be in [0,1]");
    if (!(lr > 0.0)) throw InvalidArgument("learning rate must be positive");
    if (batch_size == 0) throw InvalidArgument("batch size must be positive");
    if (buffer_capacity < batch_size) throw InvalidArgument("buffer capacity must be at least the batch size");
    if (warmup < batch_size) throw InvalidArgument("warmup must be at least the batch size");
    if (target_update_period == 0) throw InvalidArgument("target update period must be positive");
    if (hidden <= 0) throw InvalidArgument("hidden width must be positive");
    if (!(reward_scale > 0.0)) throw InvalidArgument("reward scale must be positive");
    if (grad_clip_norm < 0.0) throw InvalidArgument("gradient clip must be >= 0");
    if (param_average < 0.0 || param_average >= 1.0) throw InvalidArgument("parameter average decay must be in [0,1)");
  }
};

/// Network structure and loss form of each algorithm.
struct Variant {
  nn::QNetShape shape;
  nn::Sharing sharing;
  bool decomposed;  // Q_tot = sum_i Q_i trained on one team TD error
};

inline Variant algorithm_variant(const LearnerConfig& cfg) {
  nn::QNetShape shape;
  shape.hidden = cfg.hidden;
  shape.subtract_mean = cfg.subtract_mean;
  switch (cfg.algorithm) {
    case Algorithm::C2VDN:
      shape.dueling = true;
      return {shape, cfg.share_advantage_heads ? nn::Sharing::Full : nn::Sharing::ValueHead, true};
    case Algorithm::VDN:
      shape.dueling = cfg.vdn_dueling;
      return {shape, nn::Sharing::None, true};
    case Algorithm::IQL_DQN:
      shape.dueling = false;
      return {shape, nn::Sharing::None, false};
  }
  throw InvalidArgument("unknown algorithm");
}

struct Transition {
  std::vector<ObsVec> joint_obs;
  std::vector<int> joint_action;
  double team_reward = 0.0;
  std::vector<ObsVec> next_joint_obs;
  bool done = false;
};

/// Columns of one sampled minibatch, grouped per agent.
struct Batch {
  std::vector<Matrix> obs;       // per agent: kObsDim x B
  std::vector<Matrix> next_obs;  // per agent: kObsDim x B
  std::vector<std::vector<int>> actions;  // per agent: B
  std::vector<double> rewards;
  std::vector<double> done;

  std::size_t size() const { return rewards.size(); }
  std::size_t n_agents() const { return obs.size(); }
};

class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::size_t n_agents)
      : capacity_(capacity),
        n_agents_(n_agents),
        obs_(capacity * n_agents * kObsDim),
        next_obs_(capacity * n_agents * kObsDim),
        actions_(capacity * n_agents),
        rewards_(capacity),
        done_(capacity) {
    if (capacity == 0 || n_agents == 0) throw InvalidArgument("replay buffer needs positive capacity and agents");
  }

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t n_agents() const { return n_agents_; }

  void push(const Transition& t) {
    if (t.joint_obs.size() != n_agents_ || t.next_joint_obs.size() != n_agents_ || t.joint_action.size() != n_agents_)
      throw ShapeMismatch("transition agent count differs from buffer");
    const std::size_t row = cursor_;
    for (std::size_t i = 0; i < n_agents_; ++i) {
      std::copy(t.joint_obs[i].begin(), t.joint_obs[i].end(), obs_.begin() + offset(row, i));
      std::copy(t.next_joint_obs[i].begin(), t.next_joint_obs[i].end(), next_obs_.begin() + offset(row, i));
      actions_[row * n_agents_ + i] = t.joint_action[i];
    }
    rewards_[row] = t.team_reward;
    done_[row] = t.done;
    cursor_ = (cursor_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
  }

  Transition at(std::size_t k) const {
    if (k >= size_) throw InvalidArgument("replay index out of range");
    Transition t;
    for (std::size_t i = 0; i < n_agents_; ++i) {
      ObsVec o{}, n{};
      std::copy_n(obs_.begin() + offset(k, i), kObsDim, o.begin());
      std::copy_n(next_obs_.begin() + offset(k, i), kObsDim, n.begin());
      t.joint_obs.push_back(o);
      t.next_joint_obs.push_back(n);
      t.joint_action.push_back(actions_[k * n_agents_ + i]);
    }
    t.team_reward = rewards_[k];
    t.done = done_[k];
    return t;
  }

  /// Distinct uniform indices (Floyd's algorithm).
  template <class Gen>
  std::vector<std::size_t> sample_indices(std::size_t batch, Gen& rng) const {
    if (batch == 0) throw EmptyBatch("cannot sample an empty batch");
    if (batch > size_) throw InvalidArgument("batch larger than replay contents");
    std::vector<std::size_t> picked;
    picked.reserve(batch);
    for (std::size_t j = size_ - batch; j < size_; ++j) {
      const std::size_t t = std::uniform_int_distribution<std::size_t>(0, j)(rng);
      if (std::find(picked.begin(), picked.end(), t) == picked.end())
        picked.push_back(t);
      else
        picked.push_back(j);
    }
    return picked;
  }

  Batch gather(std::span<const std::size_t> idx) const {
    Batch b;
    const auto B = static_cast<Eigen::Index>(idx.size());
    b.obs.assign(n_agents_, Matrix(kObsDim, B));
    b.next_obs.assign(n_agents_, Matrix(kObsDim, B));
    b.actions.assign(n_agents_, std::vector<int>(idx.size()));
    b.rewards.resize(idx.size());
    b.done.resize(idx.size());
    for (std::size_t c = 0; c < idx.size(); ++c) {
      const std::size_t k = idx[c];
      for (std::size_t i = 0; i < n_agents_; ++i) {
        for (int r = 0; r < kObsDim; ++r) {
          b.obs[i](r, static_cast<Eigen::Index>(c)) = obs_[offset(k, i) + static_cast<std::size_t>(r)];
          b.next_obs[i](r, static_cast<Eigen::Index>(c)) = next_obs_[offset(k, i) + static_cast<std::size_t>(r)];
        }
        b.actions[i][c] = actions_[k * n_agents_ + i];
      }
      b.rewards[c] = rewards_[k];
      b.done[c] = done_[k] ? 1.0 : 0.0;
    }
    return b;
  }

  template <class Gen>
  Batch sample(std::size_t batch, Gen& rng) const {
    const auto idx = sample_indices(batch, rng);
    return gather(idx);
  }

 private:
  std::size_t offset(std::size_t row, std::size_t agent) const { return (row * n_agents_ + agent) * kObsDim; }

  std::size_t capacity_;
  std::size_t n_agents_;
  std::size_t cursor_ = 0;
  std::size_t size_ = 0;
  std::vector<double> obs_;
  std::vector<double> next_obs_;
  std::vector<int> actions_;
  std::vector<double> rewards_;
  std::vector<bool> done_;
};

inline Batch make_batch(std::span<const Transition> ts) {
  if (ts.empty()) throw EmptyBatch("empty batch");
  ReplayBuffer buf(ts.size(), ts.front().joint_obs.size());
  for (const auto& t : ts) buf.push(t);
  std::vector<std::size_t> idx(ts.size());
  for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
  return buf.gather(idx);
}

namespace detail {
inline Matrix column(const ObsVec& o) {
  Matrix m(kObsDim, 1);
  for (int r = 0; r < kObsDim; ++r) m(r, 0) = o[static_cast<std::size_t>(r)];
  return m;
}
}  // namespace detail

/// Q_tot = sum_i Q_i(o_i, u_i).
inline double q_tot(const NetworkSet& nets, std::span<const ObsVec> joint_obs, std::span<const int> joint_action) {
  if (joint_obs.size() != nets.n_agents() || joint_action.size() != nets.n_agents())
    throw ShapeMismatch("joint observation/action size does not match agent count");
  double total = 0.0;
  for (std::size_t i = 0; i < nets.n_agents(); ++i) {
    const auto c = nn::forward(nets, i, detail::column(joint_obs[i]));
    total += c.q(action(joint_action[i]).id, 0);
  }
  return total;
}

/// r + gamma (1 - done) sum_i max_u Q^target_i(o'_i, u). The greedy
/// per-agent maxima jointly maximise the summed team value.
inline double td_target(const NetworkSet& target, const Transition& t, double gamma, double reward_scale = 1.0) {
  double next = 0.0;
  if (!t.done && gamma != 0.0) {
    for (std::size_t i = 0; i < target.n_agents(); ++i)
      next += nn::forward(target, i, detail::column(t.next_joint_obs[i])).q.col(0).maxCoeff();
  }
  return reward_scale * t.team_reward + gamma * (t.done ? 0.0 : 1.0) * next;
}

/// Greedy with probability 1 - epsilon (lowest id on ties), uniform
/// otherwise. Always consumes one uniform draw for the coin flip.
template <class Gen>
int epsilon_greedy(std::span<const double> q, double epsilon, Gen& rng) {
  if (epsilon < 0.0 || epsilon > 1.0) throw InvalidArgument("epsilon must be in [0,1]");
  const double coin = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  if (coin < epsilon) return std::uniform_int_distribution<int>(0, static_cast<int>(q.size()) - 1)(rng);
  return static_cast<int>(std::max_element(q.begin(), q.end()) - q.begin());
}

template <class Gen>
int select_action(const NetworkSet& net, std::size_t agent, const ObsVec& obs, double epsilon, Gen& rng) {
  const auto c = nn::forward(net, agent, detail::column(obs));
  return epsilon_greedy(std::span<const double>(c.q.data(), static_cast<std::size_t>(c.q.size())), epsilon, rng);
}

/// Groups of agents that evaluate through identical layers, so they can be
/// batched into a single forward pass.
struct AgentGroup {
  std::size_t net_agent;  // representative agent index in the network set
  std::vector<std::size_t> members;
};

inline std::vector<AgentGroup> group_agents(const NetworkSet& net, std::size_t n_agents,
                                            const std::function<std::size_t(std::size_t)>& net_index) {
  std::vector<AgentGroup> groups;
  for (std::size_t i = 0; i < n_agents; ++i) {
    const std::size_t k = net_index(i);
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const AgentGroup& g) { return net.agents[g.net_agent] == net.agents[k]; });
    if (it == groups.end())
      groups.push_back({k, {i}});
    else
      it->members.push_back(i);
  }
  return groups;
}

/// Greedy joint action of a deployed policy for any number of agents. Agent
/// i uses the network of trained agent i mod K.
class GreedyPolicy {
 public:
  GreedyPolicy(const NetworkSet& net, std::size_t n_agents)
      : net_(&net), groups_(group_agents(net, n_agents, [&](std::size_t i) { return i % net.n_agents(); })) {}

  std::vector<int> act(std::span<const ObsVec> obs) {
    std::vector<int> out(obs.size());
    for (const auto& g : groups_) {
      Matrix x(kObsDim, static_cast<Eigen::Index>(g.members.size()));
      for (std::size_t c = 0; c < g.members.size(); ++c)
        for (int r = 0; r < kObsDim; ++r)
          x(r, static_cast<Eigen::Index>(c)) = obs[g.members[c]][static_cast<std::size_t>(r)];
      nn::forward(*net_, g.net_agent, x, cache_);
      for (std::size_t c = 0; c < g.members.size(); ++c) {
        Eigen::Index best = 0;
        cache_.q.col(static_cast<Eigen::Index>(c)).maxCoeff(&best);
        out[g.members[c]] = static_cast<int>(best);
      }
    }
    return out;
  }


 private:
  const NetworkSet* net_;
  std::vector<AgentGroup> groups_;
  nn::ForwardCache cache_;
};

class Learner {
 public:
  Learner(const LearnerConfig& cfg, std::size_t n_agents, std::uint64_t seed) : cfg_(cfg), rng_(seed) {
    cfg_.validate();
    variant_ = algorithm_variant(cfg_);
    online_ = NetworkSet::create(variant_.shape, n_agents, variant_.sharing, rng_);
    target_ = online_;
    averaged_ = online_;
    grads_ = nn::Gradients::zeros_like(online_);
    adam_.lr = cfg_.lr;
    groups_ = group_agents(online_, n_agents, [](std::size_t i) { return i; });
  }

  const LearnerConfig& config() const { return cfg_; }
  const Variant& variant() const { return variant_; }
  const NetworkSet& online() const { return online_; }
  const NetworkSet& target() const { return target_; }
  /// Parameters to deploy: the moving average when enabled, else online.
  const NetworkSet& deployed() const { return cfg_.param_average > 0.0 ? averaged_ : online_; }
  NetworkSet& mutable_online() { return online_; }
  std::size_t n_agents() const { return online_.n_agents(); }
  std::size_t gradient_steps() const { return grad_steps_; }
  const nn::Gradients& last_gradients() const { return grads_; }
  Rng& rng() { return rng_; }

  void sync_target() { target_.copy_parameters_from(online_); }

  template <class Gen>
  std::vector<int> select_actions(std::span<const ObsVec> obs, double epsilon, Gen& rng) {
    std::vector<int> out(obs.size());
    for (const auto& g : groups_) {
      Matrix x(kObsDim, static_cast<Eigen::Index>(g.members.size()));
      for (std::size_t c = 0; c < g.members.size(); ++c)
        for (int r = 0; r < kObsDim; ++r)
          x(r, static_cast<Eigen::Index>(c)) = obs[g.members[c]][static_cast<std::size_t>(r)];
      nn::forward(online_, g.net_agent, x, act_cache_);
      for (std::size_t c = 0; c < g.members.size(); ++c) {
        const auto col = act_cache_.q.col(static_cast<Eigen::Index>(c));
        out[g.members[c]] = epsilon_greedy(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())),
                                           epsilon, rng);
      }
    }
    return out;
  }

  /// Loss and its gradients into last_gradients(), without updating.
  double compute_gradients(const Batch& b) {
    if (b.size() == 0) throw EmptyBatch("empty batch");
    if (b.n_agents() != n_agents()) throw ShapeMismatch("batch agent count differs from learner");
    const auto B = static_cast<Eigen::Index>(b.size());
    const std::size_t N = n_agents();

    // Selected-action values and next-state maxima per agent.
    std::vector<Eigen::RowVectorXd> q_sel(N, Eigen::RowVectorXd(B));
    std::vector<Eigen::RowVectorXd> next_max(N, Eigen::RowVectorXd(B));
    caches_.resize(groups_.size());
    for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
      const auto& g = groups_[gi];
      const auto cols = static_cast<Eigen::Index>(g.members.size()) * B;
      Matrix x(kObsDim, cols), xn(kObsDim, cols);
      for (std::size_t m = 0; m < g.members.size(); ++m) {
        x.middleCols(static_cast<Eigen::Index>(m) * B, B) = b.obs[g.members[m]];
        xn.middleCols(static_cast<Eigen::Index>(m) * B, B) = b.next_obs[g.members[m]];
      }
      nn::forward(online_, g.net_agent, x, caches_[gi]);
      nn::forward(target_, g.net_agent, xn, target_cache_);
      const Eigen::RowVectorXd maxes = target_cache_.q.colwise().maxCoeff();
      for (std::size_t m = 0; m < g.members.size(); ++m) {
        const std::size_t i = g.members[m];
        for (Eigen::Index c = 0; c < B; ++c)
          q_sel[i](c) = caches_[gi].q(b.actions[i][static_cast<std::size_t>(c)], static_cast<Eigen::Index>(m) * B + c);
        next_max[i] = maxes.segment(static_cast<Eigen::Index>(m) * B, B);
      }
    }

    Eigen::RowVectorXd reward(B), cont(B);
    for (Eigen::Index c = 0; c < B; ++c) {
      reward(c) = cfg_.reward_scale * b.rewards[static_cast<std::size_t>(c)];
      cont(c) = cfg_.gamma * (1.0 - b.done[static_cast<std::size_t>(c)]);
    }

    // dL/dq on each agent's selected action.
    std::vector<Eigen::RowVectorXd> dsel(N);
    double loss = 0.0;
    if (variant_.decomposed) {
      Eigen::RowVectorXd pred = Eigen::RowVectorXd::Zero(B), next = Eigen::RowVectorXd::Zero(B);
      for (std::size_t i = 0; i < N; ++i) {
        pred += q_sel[i];
        next += next_max[i];
      }
      const Eigen::RowVectorXd err = pred - (reward + cont.cwiseProduct(next));
      loss = err.squaredNorm() / static_cast<double>(B);
      for (std::size_t i = 0; i < N; ++i) dsel[i] = (2.0 / static_cast<double>(B)) * err;
    } else {
      for (std::size_t i = 0; i < N; ++i) {
        const Eigen::RowVectorXd err = q_sel[i] - (reward + cont.cwiseProduct(next_max[i]));
        loss += err.squaredNorm() / static_cast<double>(B);
        dsel[i] = (2.0 / static_cast<double>(B)) * err;
      }
    }

    grads_.set_zero();
    for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
      const auto& g = groups_[gi];
      Matrix dq = Matrix::Zero(caches_[gi].q.rows(), caches_[gi].q.cols());
      for (std::size_t m = 0; m < g.members.size(); ++m) {
        const std::size_t i = g.members[m];
        for (Eigen::Index c = 0; c < B; ++c)
          dq(b.actions[i][static_cast<std::size_t>(c)], static_cast<Eigen::Index>(m) * B + c) = dsel[i](c);
      }
      nn::backward(online_, caches_[gi], dq, grads_);
    }
    return loss;
  }

  /// One optimisation step on the mean squared TD error; returns the loss.
  double learn_step(const Batch& b) {
    const double loss = compute_gradients(b);
    if (cfg_.grad_clip_norm > 0.0) {
      const double norm = std::sqrt(grads_.squared_norm());
      if (norm > cfg_.grad_clip_norm) grads_.scale(cfg_.grad_clip_norm / norm);
    }
    nn::adam_step(online_, grads_, adam_);
    if (cfg_.param_average > 0.0) {
      const double d = cfg_.param_average;
      for (std::size_t l = 0; l < averaged_.layers.size(); ++l) {
        auto& a = averaged_.layers[l];
        const auto& o = online_.layers[l];
        a.weights = d * a.weights + (1.0 - d) * o.weights;
        a.biases = d * a.biases + (1.0 - d) * o.biases;
      }
      ++averaged_.revision;
    }
    ++grad_steps_;
    if (grad_steps_ % cfg_.target_update_period == 0) sync_target();
    return loss;
  }

 private:
  LearnerConfig cfg_;
  Rng rng_;
  Variant variant_{};
  NetworkSet online_;
  NetworkSet target_;
  NetworkSet averaged_;
  nn::Gradients grads_;
  nn::AdamState adam_;
  std::vector<AgentGroup> groups_;
  std::vector<nn::ForwardCache> caches_;
  nn::ForwardCache target_cache_;
  nn::ForwardCache act_cache_;
  std::size_t grad_steps_ = 0;
};

inline std::vector<ObsVec> normalized(std::span<const Observation> obs) {
  std::vector<ObsVec> out;
  out.reserve(obs.size());
  for (const auto& o : obs) out.push_back(o.normalized());
  return out;
}

inline double epsilon_at(const LearnerConfig& cfg, std::size_t env_steps) {
  if (cfg.epsilon_decay_steps == 0 || env_steps >= cfg.epsilon_decay_steps) return cfg.epsilon_end;
  const double frac = static_cast<double>(env_steps) / static_cast<double>(cfg.epsilon_decay_steps);
  return cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start);
}

struct TrainingConfig {
  LearnerConfig learner{};
  EnvConfig env{};
  std::uint64_t seed = 0;
  bool record_wall_time = false;
  // Episodes in the moving average that selects the best checkpoint when
  // validation is off.
  std::size_t best_window = 20;
  // Greedy rollouts on the training distribution every validation_period
  // episodes; the best scoring parameters become the best checkpoint.
  // A period of 0 turns validation off.
  std::size_t validation_period = 50;
  std::size_t validation_episodes = 16;
  std::size_t validation_steps = 600;
  nlohmann::json metadata = nlohmann::json::object();
};

struct EpisodeLog {
  std::size_t episode = 0;
  double mean_team_reward = 0.0;  // cm, per step
  double epsilon = 0.0;
  double loss_mean = 0.0;
  double wall_seconds = 0.0;
};

struct ValidationLog {
  std::size_t episode = 0;
  double score = 0.0;  // cm, mean team reward per step over the second half
};

struct TrainingResult {
  nn::Checkpoint best;
  nn::Checkpoint final;
  std::size_t best_episode = 0;
  std::vector<EpisodeLog> log;
  std::vector<ValidationLog> validation;
};

using EnvFactory = std::function<FormationEnv(const EnvConfig&, std::uint64_t seed)>;

inline FormationEnv default_env_factory(const EnvConfig& cfg, std::uint64_t seed) { return FormationEnv(cfg, seed); }

/// SplitMix64 finaliser for deriving independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline nn::Checkpoint make_checkpoint(const NetworkSet& net, const TrainingConfig& cfg, std::size_t episode) {
  nn::Checkpoint ck{net, cfg.metadata};
  ck.metadata["algorithm"] = to_string(cfg.learner.algorithm);
  ck.metadata["n_agents_trained"] = net.n_agents();
  ck.metadata["obs_dim"] = kObsDim;
  ck.metadata["distance_scale"] = kDistanceScale;
  ck.metadata["angle_scale"] = kAngleScale;
  ck.metadata["episode"] = episode;
  ck.metadata["seed"] = cfg.seed;
  return ck;
}

/// Greedy score of a network on the training distribution. Every call
/// replays the same episodes, so scores are comparable across training.
/// Only the second half of each episode counts, where the formation should
/// already hold.
inline double validation_score(const NetworkSet& net, const TrainingConfig& cfg, const EnvFactory& make_env) {
  EnvConfig ec = cfg.env;
  ec.episode_length = cfg.validation_steps;
  const std::size_t n = ec.reset.n_agents;
  GreedyPolicy policy(net, n);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t e = 0; e < cfg.validation_episodes; ++e) {
    FormationEnv env = make_env(ec, mix_seed((cfg.seed ^ 0x05) + 0x100 * e));
    std::vector<ObsVec> obs = normalized(env.reset());
    for (std::size_t k = 0; k < cfg.validation_steps; ++k) {
      StepResult r = env.step(policy.act(obs));
      obs = normalized(r.next_observations);
      if (2 * k >= cfg.validation_steps) {
        sum += r.team_reward;
        ++count;
      }
    }
  }
  return sum / static_cast<double>(count);
}

/// Episode loop: reset, epsilon-greedy rollout, replay insertion, one
/// learning step per environment step after warmup, periodic target sync.
/// Time-limit ends are stored as non-terminal so values keep bootstrapping.
inline TrainingResult train(const TrainingConfig& cfg, const EnvFactory& make_env = default_env_factory,
                            const std::function<void(const EpisodeLog&)>& on_episode = {}) {
  cfg.learner.validate();
  cfg.env.validate();
  if (cfg.validation_period > 0 && (cfg.validation_episodes == 0 || cfg.validation_steps < 2))
    throw InvalidArgument("validation needs at least one episode of two or more steps");
  const std::size_t n = cfg.env.reset.n_agents;
  FormationEnv env = make_env(cfg.env, mix_seed(cfg.seed ^ 0x01));
  Learner learner(cfg.learner, n, mix_seed(cfg.seed ^ 0x02));
  Rng explore(mix_seed(cfg.seed ^ 0x03));
  Rng sampler(mix_seed(cfg.seed ^ 0x04));
  ReplayBuffer buffer(cfg.learner.buffer_capacity, n);

  TrainingResult result;
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t env_steps = 0;
  double best_avg = -INFINITY;
  Transition tr;
  for (std::size_t ep = 1; ep <= cfg.learner.episodes; ++ep) {
    std::vector<ObsVec> obs = normalized(env.reset());
    double reward_sum = 0.0, loss_sum = 0.0, eps = 0.0;
    std::size_t losses = 0, steps = 0;
    bool done = false;
    while (!done) {
      eps = epsilon_at(cfg.learner, env_steps);
      const std::vector<int> actions = learner.select_actions(obs, eps, explore);
      StepResult r = env.step(actions);
      std::vector<ObsVec> next = normalized(r.next_observations);
      tr.joint_obs = std::move(obs);
      tr.joint_action = actions;
      tr.team_reward = r.team_reward;
      tr.next_joint_obs = next;
      tr.done = false;
      buffer.push(tr);
      obs = std::move(next);
      reward_sum += r.team_reward;
      done = r.done;
      ++env_steps;
      ++steps;
      if (buffer.size() >= cfg.learner.warmup) {
        loss_sum += learner.learn_step(buffer.sample(cfg.learner.batch_size, sampler));
        ++losses;
      }
    }
    EpisodeLog row;
    row.episode = ep;
    row.mean_team_reward = reward_sum / static_cast<double>(steps);
    row.epsilon = eps;
    row.loss_mean = losses ? loss_sum / static_cast<double>(losses) : 0.0;
    if (cfg.record_wall_time)
      row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(row);

    if (cfg.validation_period > 0) {
      if (ep % cfg.validation_period == 0 && buffer.size() >= cfg.learner.warmup) {
        const double score = validation_score(learner.deployed(), cfg, make_env);
        result.validation.push_back({ep, score});
        if (score > best_avg) {
          best_avg = score;
          result.best = make_checkpoint(learner.deployed(), cfg, ep);
          result.best_episode = ep;
        }
      }
    } else if (ep >= cfg.best_window && buffer.size() >= cfg.learner.warmup) {
      double avg = 0.0;
      for (std::size_t k = result.log.size() - cfg.best_window; k < result.log.size(); ++k)
        avg += result.log[k].mean_team_reward;
      avg /= static_cast<double>(cfg.best_window);
      if (avg > best_avg) {
        best_avg = avg;
        result.best = make_checkpoint(learner.deployed(), cfg, ep);
        result.best_episode = ep;
      }
    }
    if (on_episode) on_episode(row);
  }
  result.final = make_checkpoint(learner.deployed(), cfg, cfg.learner.episodes);
  if (result.best.net.agents.empty()) {
    result.best = result.final;
    result.best_episode = cfg.learner.episodes;
  }
  return result;
}

inline void write_validation_log_csv(std::ostream& os, std::span<const ValidationLog> log) {
  os << "episode,score\n";
  const auto old = os.precision(10);
  for (const auto& v : log) os << v.episode << ',' << v.score << '\n';
  os.precision(old);
}

inline void write_training_log_csv(std::ostream& os, std::span<const EpisodeLog> log) {
  os << "episode,mean_team_reward,epsilon,loss_mean,wall_seconds\n";
  const auto old = os.precision(10);
  for (const auto& r : log)
    os << r.episode << ',' << r.mean_team_reward << ',' << r.epsilon << ',' << r.loss_mean << ',' << r.wall_seconds
       << '\n';
  os.precision(old);
}

}  // namespace circform::marl
