#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "circform/errors.hpp"

namespace circform::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

enum class Activation { ReLU, Identity };

struct DenseLayer {
  Matrix weights;  // out x in
  Vector biases;   // out
  Activation activation = Activation::Identity;

  Eigen::Index inputs() const { return weights.cols(); }
  Eigen::Index outputs() const { return weights.rows(); }
  std::size_t parameter_count() const { return static_cast<std::size_t>(weights.size() + biases.size()); }

  /// Uniform in +-1/sqrt(fan_in).
  template <class Gen>
  static DenseLayer uniform_init(Eigen::Index in, Eigen::Index out, Activation act, Gen& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseLayer l{Matrix(out, in), Vector(out), act};
    for (Eigen::Index c = 0; c < in; ++c)
      for (Eigen::Index r = 0; r < out; ++r) l.weights(r, c) = u(rng);
    for (Eigen::Index r = 0; r < out; ++r) l.biases(r) = u(rng);
    return l;
  }

  static DenseLayer zeros(Eigen::Index in, Eigen::Index out, Activation act) {
    return {Matrix::Zero(out, in), Vector::Zero(out), act};
  }
};

struct QNetShape {
  int inputs = 11;
  int hidden = 64;
  int actions = 15;
  bool dueling = true;
  // Q = V + A - mean(A) instead of Q = V + A.
  bool subtract_mean = false;

  friend bool operator==(const QNetShape&, const QNetShape&) = default;
};

/// Which layers the agents of one network set hold in common.
enum class Sharing { None, ValueHead, Full };

inline std::string to_string(Sharing s) {
  switch (s) {
    case Sharing::None: return "none";
    case Sharing::ValueHead: return "value_head";
    case Sharing::Full: return "full";
  }
  return "?";
}

inline Sharing sharing_from_string(const std::string& s) {
  if (s == "none") return Sharing::None;
  if (s == "value_head") return Sharing::ValueHead;
  if (s == "full") return Sharing::Full;
  throw InvalidArgument("unknown sharing mode: " + s);
}

inline constexpr std::size_t kNoLayer = static_cast<std::size_t>(-1);

// Indices into NetworkSet::layers for one agent's Q-network.
struct Topology {
  std::size_t trunk1 = 0;
  std::size_t trunk2 = 0;
  std::size_t value = kNoLayer;
  std::size_t advantage = 0;

  std::array<std::size_t, 4> as_array() const { return {trunk1, trunk2, value, advantage}; }
  friend bool operator==(const Topology&, const Topology&) = default;
};

/// Per-agent Q-networks over a pool of uniquely stored layers. Agents that
/// share a layer refer to the same pool entry, so its parameters are stored
/// and optimized once.
class NetworkSet {
 public:
  QNetShape shape{};
  Sharing sharing = Sharing::Full;
  std::vector<DenseLayer> layers;
  std::vector<Topology> agents;
  // Bumped on every parameter mutation; forward caches record it.
  std::uint64_t revision = 0;

  template <class Gen>
  static NetworkSet create(const QNetShape& shape, std::size_t n_agents, Sharing sharing, Gen& rng) {
    return build(shape, n_agents, sharing, [&](Eigen::Index in, Eigen::Index out, Activation act) {
      return DenseLayer::uniform_init(in, out, act, rng);
    });
  }

  static NetworkSet zeros(const QNetShape& shape, std::size_t n_agents, Sharing sharing) {
    return build(shape, n_agents, sharing,
                 [](Eigen::Index in, Eigen::Index out, Activation act) { return DenseLayer::zeros(in, out, act); });
  }

  std::size_t n_agents() const { return agents.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.parameter_count();
    return n;
  }

  /// Weights then biases of every pool layer, in pool order.
  std::vector<std::span<double>> parameter_spans() {
    std::vector<std::span<double>> out;
    for (auto& l : layers) {
      out.emplace_back(l.weights.data(), static_cast<std::size_t>(l.weights.size()));
      out.emplace_back(l.biases.data(), static_cast<std::size_t>(l.biases.size()));
    }
    return out;
  }

  void copy_parameters_from(const NetworkSet& other) {
    if (other.shape != shape || other.agents != agents || other.layers.size() != layers.size())
      throw ShapeMismatch("network sets differ in structure");
    layers = other.layers;
    ++revision;
  }

 private:
  template <class Make>
  static NetworkSet build(const QNetShape& shape, std::size_t n_agents, Sharing sharing, Make make) {
    if (n_agents == 0) throw InvalidArgument("network set needs at least one agent");
    NetworkSet s;
    s.shape = shape;
    s.sharing = sharing;
    auto add = [&](Eigen::Index in, Eigen::Index out, Activation act) {
      s.layers.push_back(make(in, out, act));
      return s.layers.size() - 1;
    };
    const bool full = sharing == Sharing::Full;
    std::optional<std::size_t> shared_value;
    std::optional<Topology> shared_all;
    for (std::size_t i = 0; i < n_agents; ++i) {
      if (full && shared_all) {
        s.agents.push_back(*shared_all);
        continue;
      }
      Topology t;
      t.trunk1 = add(shape.inputs, shape.hidden, Activation::ReLU);
      t.trunk2 = add(shape.hidden, shape.hidden, Activation::ReLU);
      if (shape.dueling) {
        if (sharing == Sharing::None || !shared_value) {
          t.value = add(shape.hidden, 1, Activation::Identity);
          if (sharing != Sharing::None) shared_value = t.value;
        } else {
          t.value = *shared_value;
        }
      }
      t.advantage = add(shape.hidden, shape.actions, Activation::Identity);
      s.agents.push_back(t);
      if (full) shared_all = t;
    }
    return s;
  }
};

/// Gradient storage matching a NetworkSet's layer pool.
struct Gradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  static Gradients zeros_like(const NetworkSet& net) {
    Gradients g;
    for (const auto& l : net.layers) {
      g.weights.push_back(Matrix::Zero(l.weights.rows(), l.weights.cols()));
      g.biases.push_back(Vector::Zero(l.biases.size()));
    }
    return g;
  }

  void set_zero() {
    for (auto& w : weights) w.setZero();
    for (auto& b : biases) b.setZero();
  }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& w : weights) s += w.squaredNorm();
    for (const auto& b : biases) s += b.squaredNorm();
    return s;
  }

  void scale(double f) {
    for (auto& w : weights) w *= f;
    for (auto& b : biases) b *= f;
  }

  std::vector<std::span<const double>> spans() const {
    std::vector<std::span<const double>> out;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      out.emplace_back(weights[k].data(), static_cast<std::size_t>(weights[k].size()));
      out.emplace_back(biases[k].data(), static_cast<std::size_t>(biases[k].size()));
    }
    return out;
  }
};

/// Activations of one batched forward pass (one column per sample), kept
/// for the backward pass.
struct ForwardCache {
  Matrix input;
  Matrix h1;
  Matrix h2;
  RowVector v;  // empty when the network has no value head
  Matrix a;
  Matrix q;

  const NetworkSet* owner = nullptr;
  std::size_t agent = 0;
  std::uint64_t revision = 0;

  Eigen::Index batch() const { return q.cols(); }
};

namespace detail {
inline void affine(const DenseLayer& l, const Matrix& x, Matrix& out) {
  out.noalias() = l.weights * x;
  out.colwise() += l.biases;
  if (l.activation == Activation::ReLU) out = out.cwiseMax(0.0);
}
}  // namespace detail

/// Batched forward pass of agent `agent`'s network; `obs` holds one
/// normalized observation per column.
inline void forward(const NetworkSet& net, std::size_t agent, const Matrix& obs, ForwardCache& c) {
  if (agent >= net.n_agents()) throw InvalidArgument("agent index out of range");
  if (obs.rows() != net.shape.inputs) throw ShapeMismatch("observation width does not match network input");
  if (!obs.allFinite()) throw NonFiniteInput("non-finite network input");
  const Topology& t = net.agents[agent];
  c.input = obs;
  detail::affine(net.layers[t.trunk1], c.input, c.h1);
  detail::affine(net.layers[t.trunk2], c.h1, c.h2);
  detail::affine(net.layers[t.advantage], c.h2, c.a);
  c.q = c.a;
  if (net.shape.subtract_mean) c.q.rowwise() -= c.a.colwise().mean();
  if (t.value != kNoLayer) {
    const DenseLayer& vl = net.layers[t.value];
    c.v.noalias() = vl.weights * c.h2;
    c.v.array() += vl.biases(0);
    c.q.rowwise() += c.v;
  } else {
    c.v.resize(0);
  }
  c.owner = &net;
  c.agent = agent;
  c.revision = net.revision;
}

inline ForwardCache forward(const NetworkSet& net, std::size_t agent, const Matrix& obs) {
  ForwardCache c;
  forward(net, agent, obs, c);
  return c;
}

struct QValues {
  std::vector<double> q;
  double v = 0.0;  // zero for networks without a value head
  std::vector<double> a;
};

inline QValues forward_one(const NetworkSet& net, std::size_t agent, std::span<const double> obs) {
  Matrix x(static_cast<Eigen::Index>(obs.size()), 1);
  for (std::size_t k = 0; k < obs.size(); ++k) x(static_cast<Eigen::Index>(k), 0) = obs[k];
  const ForwardCache c = forward(net, agent, x);
  QValues out;
  out.q.assign(c.q.data(), c.q.data() + c.q.size());
  out.a.assign(c.a.data(), c.a.data() + c.a.size());
  out.v = c.v.size() ? c.v(0) : 0.0;
  return out;
}

/// Accumulates into `grads` the parameter gradients of the loss whose
/// gradient with respect to the cached q-values is `dq` (actions x batch).
inline void backward(const NetworkSet& net, const ForwardCache& c, const Matrix& dq, Gradients& grads) {
  if (c.owner != &net || c.revision != net.revision || c.agent >= net.n_agents())
    throw StaleCache("forward cache does not belong to the current parameters");
  if (dq.rows() != c.q.rows() || dq.cols() != c.q.cols()) throw ShapeMismatch("dL/dq does not match cached q");
  if (grads.weights.size() != net.layers.size()) throw ShapeMismatch("gradient storage does not match network");
  const Topology& t = net.agents[c.agent];

  Matrix da = dq;
  if (net.shape.subtract_mean) da.rowwise() -= dq.colwise().mean();
  grads.weights[t.advantage].noalias() += da * c.h2.transpose();
  grads.biases[t.advantage] += da.rowwise().sum();
  Matrix dh2 = net.layers[t.advantage].weights.transpose() * da;

  if (t.value != kNoLayer) {
    const RowVector dv = dq.colwise().sum();
    grads.weights[t.value].noalias() += dv * c.h2.transpose();
    grads.biases[t.value](0) += dv.sum();
    dh2.noalias() += net.layers[t.value].weights.transpose() * dv;
  }

  const Matrix dz2 = dh2.cwiseProduct((c.h2.array() > 0.0).cast<double>().matrix());
  grads.weights[t.trunk2].noalias() += dz2 * c.h1.transpose();
  grads.biases[t.trunk2] += dz2.rowwise().sum();
  const Matrix dh1 = net.layers[t.trunk2].weights.transpose() * dz2;
  const Matrix dz1 = dh1.cwiseProduct((c.h1.array() > 0.0).cast<double>().matrix());
  grads.weights[t.trunk1].noalias() += dz1 * c.input.transpose();
  grads.biases[t.trunk1] += dz1.rowwise().sum();
}

struct AdamState {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Eigen::ArrayXd> m;
  std::vector<Eigen::ArrayXd> v;
};

/// One bias-corrected Adam update; moments are allocated on first use.
inline void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
                      AdamState& st) {
  if (params.size() != grads.size()) throw ShapeMismatch("parameter and gradient tensor counts differ");
  if (st.m.empty()) {
    for (const auto& p : params) {
      st.m.push_back(Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(p.size())));
      st.v.push_back(Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(p.size())));
    }
  }
  if (st.m.size() != params.size()) throw ShapeMismatch("Adam state does not match parameters");
  for (std::size_t k = 0; k < params.size(); ++k)
    if (params[k].size() != grads[k].size() || static_cast<Eigen::Index>(params[k].size()) != st.m[k].size())
      throw ShapeMismatch("parameter, gradient and moment shapes differ");

  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto n = static_cast<Eigen::Index>(params[k].size());
    Eigen::Map<Eigen::ArrayXd> p(params[k].data(), n);
    Eigen::Map<const Eigen::ArrayXd> g(grads[k].data(), n);
    st.m[k] = st.beta1 * st.m[k] + (1.0 - st.beta1) * g;
    st.v[k] = st.beta2 * st.v[k] + (1.0 - st.beta2) * g.square();
    p -= st.lr * (st.m[k] / bc1) / ((st.v[k] / bc2).sqrt() + st.eps);
  }
}

inline void adam_step(NetworkSet& net, const Gradients& grads, AdamState& st) {
  const auto p = net.parameter_spans();
  const auto g = grads.spans();
  adam_step(std::span<const std::span<double>>(p), std::span<const std::span<const double>>(g), st);
  ++net.revision;
}

// ---------------------------------------------------------------------------
// Checkpoint container
//
//   "CIRCFORM"  8-byte magic
//   u32         format version
//   u64         header length, then a JSON header: network shape, sharing,
//               per-agent topology, array table (name, shape, offset) and
//               free-form metadata
//   f64[]       raw little-endian column-major array payload
//   u64         FNV-1a hash of header and payload

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::array<char, 8> kCheckpointMagic{'C', 'I', 'R', 'C', 'F', 'O', 'R', 'M'};

struct Checkpoint {
  NetworkSet net;
  nlohmann::json metadata = nlohmann::json::object();
};

namespace detail {
inline std::uint64_t fnv1a(const char* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
  for (std::size_t k = 0; k < n; ++k) {
    h ^= static_cast<unsigned char>(data[k]);
    h *= 1099511628211ULL;
  }
  return h;
}

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T take(const std::string& in, std::size_t& pos) {
  if (in.size() < pos + sizeof(T)) throw CorruptCheckpoint("checkpoint is truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

inline std::string activation_name(Activation a) { return a == Activation::ReLU ? "relu" : "identity"; }
}  // namespace detail

inline std::string serialize(const Checkpoint& ck) {
  using nlohmann::json;
  const NetworkSet& net = ck.net;
  json header;
  header["shape"] = {{"inputs", net.shape.inputs},
                     {"hidden", net.shape.hidden},
                     {"actions", net.shape.actions},
                     {"dueling", net.shape.dueling},
                     {"subtract_mean", net.shape.subtract_mean}};
  header["sharing"] = to_string(net.sharing);
  header["shared_value_head"] = net.sharing != Sharing::None && net.shape.dueling;
  json topo = json::array();
  for (const auto& t : net.agents) {
    topo.push_back({{"trunk1", t.trunk1},
                    {"trunk2", t.trunk2},
                    {"value", t.value == kNoLayer ? json(nullptr) : json(t.value)},
                    {"advantage", t.advantage}});
  }
  header["agents"] = topo;
  json arrays = json::array();
  std::size_t offset = 0;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const auto& l = net.layers[k];
    arrays.push_back({{"name", "layer" + std::to_string(k) + ".weights"},
                      {"shape", {l.weights.rows(), l.weights.cols()}},
                      {"offset", offset},
                      {"activation", detail::activation_name(l.activation)}});
    offset += static_cast<std::size_t>(l.weights.size());
    arrays.push_back({{"name", "layer" + std::to_string(k) + ".biases"},
                      {"shape", {l.biases.size()}},
                      {"offset", offset}});
    offset += static_cast<std::size_t>(l.biases.size());
  }
  header["arrays"] = arrays;
  header["order"] = "column_major";
  header["metadata"] = ck.metadata;
  const std::string hdr = header.dump();

  std::string body;
  detail::put<std::uint64_t>(body, hdr.size());
  body += hdr;
  for (const auto& l : net.layers) {
    body.append(reinterpret_cast<const char*>(l.weights.data()), static_cast<std::size_t>(l.weights.size()) * 8);
    body.append(reinterpret_cast<const char*>(l.biases.data()), static_cast<std::size_t>(l.biases.size()) * 8);
  }
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  out += body;
  detail::put<std::uint64_t>(out, detail::fnv1a(body.data(), body.size()));
  return out;
}

inline Checkpoint deserialize(const std::string& bytes) {
  using nlohmann::json;
  if (bytes.size() < kCheckpointMagic.size() || !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin()))
    throw CorruptCheckpoint("not a checkpoint file (bad magic)");
  std::size_t pos = kCheckpointMagic.size();
  const auto version = detail::take<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion)
    throw VersionMismatch("checkpoint format version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  const std::size_t body_start = pos;
  const auto hdr_len = detail::take<std::uint64_t>(bytes, pos);
  if (bytes.size() < pos + hdr_len + 8) throw CorruptCheckpoint("checkpoint is truncated");
  json header;
  try {
    header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                         bytes.begin() + static_cast<std::ptrdiff_t>(pos + hdr_len));
  } catch (const json::exception& e) {
    throw CorruptCheckpoint(std::string("checkpoint header unreadable: ") + e.what());
  }
  pos += hdr_len;

  Checkpoint ck;
  try {
    NetworkSet& net = ck.net;
    const auto& sh = header.at("shape");
    net.shape = {sh.at("inputs").get<int>(), sh.at("hidden").get<int>(), sh.at("actions").get<int>(),
                 sh.at("dueling").get<bool>(), sh.at("subtract_mean").get<bool>()};
    net.sharing = sharing_from_string(header.at("sharing").get<std::string>());
    const auto& arrays = header.at("arrays");
    if (arrays.size() % 2 != 0) throw CorruptCheckpoint("array table is malformed");
    std::size_t expected_offset = 0;
    for (std::size_t k = 0; k < arrays.size(); k += 2) {
      const auto& w = arrays[k];
      const auto& b = arrays[k + 1];
      const auto rows = w.at("shape").at(0).get<Eigen::Index>();
      const auto cols = w.at("shape").at(1).get<Eigen::Index>();
      const auto nb = b.at("shape").at(0).get<Eigen::Index>();
      if (rows <= 0 || cols <= 0 || nb != rows) throw CorruptCheckpoint("array shapes are inconsistent");
      if (w.at("offset").get<std::size_t>() != expected_offset ||
          b.at("offset").get<std::size_t>() != expected_offset + static_cast<std::size_t>(rows * cols))
        throw CorruptCheckpoint("array offsets are inconsistent");
      expected_offset += static_cast<std::size_t>(rows * cols + nb);
      DenseLayer l{Matrix(rows, cols), Vector(nb),
                   w.at("activation").get<std::string>() == "relu" ? Activation::ReLU : Activation::Identity};
      const std::size_t nbytes = static_cast<std::size_t>(rows * cols + nb) * 8;
      if (bytes.size() < pos + nbytes + 8) throw CorruptCheckpoint("checkpoint is truncated");
      std::memcpy(l.weights.data(), bytes.data() + pos, static_cast<std::size_t>(rows * cols) * 8);
      pos += static_cast<std::size_t>(rows * cols) * 8;
      std::memcpy(l.biases.data(), bytes.data() + pos, static_cast<std::size_t>(nb) * 8);
      pos += static_cast<std::size_t>(nb) * 8;
      net.layers.push_back(std::move(l));
    }
    for (const auto& t : header.at("agents")) {
      Topology topo;
      topo.trunk1 = t.at("trunk1").get<std::size_t>();
      topo.trunk2 = t.at("trunk2").get<std::size_t>();
      topo.value = t.at("value").is_null() ? kNoLayer : t.at("value").get<std::size_t>();
      topo.advantage = t.at("advantage").get<std::size_t>();
      for (std::size_t idx : topo.as_array())
        if (idx != kNoLayer && idx >= net.layers.size()) throw CorruptCheckpoint("topology refers to missing layer");
      auto dims = [&](std::size_t idx, int in, int out) {
        const DenseLayer& l = net.layers[idx];
        if (l.inputs() != in || l.outputs() != out) throw CorruptCheckpoint("layer dimensions disagree with shape");
      };
      const QNetShape& sh2 = net.shape;
      dims(topo.trunk1, sh2.inputs, sh2.hidden);
      dims(topo.trunk2, sh2.hidden, sh2.hidden);
      dims(topo.advantage, sh2.hidden, sh2.actions);
      if (sh2.dueling != (topo.value != kNoLayer)) throw CorruptCheckpoint("value head disagrees with shape");
      if (topo.value != kNoLayer) dims(topo.value, sh2.hidden, 1);
      net.agents.push_back(topo);
    }
    if (net.agents.empty()) throw CorruptCheckpoint("checkpoint has no agents");
    ck.metadata = header.at("metadata");
  } catch (const json::exception& e) {
    throw CorruptCheckpoint(std::string("checkpoint header malformed: ") + e.what());
  }
  if (bytes.size() != pos + 8) throw CorruptCheckpoint("checkpoint has trailing or missing bytes");
  const auto stored = detail::take<std::uint64_t>(bytes, pos);
  if (stored != detail::fnv1a(bytes.data() + body_start, pos - 8 - body_start))
    throw CorruptCheckpoint("checkpoint checksum mismatch");
  return ck;
}

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  const std::string bytes = serialize(ck);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoFailure("failed to write checkpoint");
}

inline Checkpoint read_checkpoint(std::istream& is) {
  std::ostringstream ss;
  ss << is.rdbuf();
  return deserialize(ss.str());
}

}  // namespace circform::nn
