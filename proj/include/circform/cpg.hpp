#pragma once

// Coupled-oscillator central pattern generator driving the tail joints.
//
// Per joint i (n joints):
//   dR_i/dt   = zeta_r (Rhat_i - R_i)
//   dX_i/dt   = zeta_x (Xhat_i - X_i)
//   d2Phi_i/dt2 = -zeta_phi^2 sum_{j != i} (Phi_i - Phi_j - bias_ij)
//                 - 2 (n - 1) zeta_phi (dPhi_i/dt - 2 pi f)
//   theta_i   = X_i + R_i sin(Phi_i)
//
// bias_ij is the steady-state value of Phi_i - Phi_j, so bias must be
// antisymmetric with a zero diagonal.

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <ostream>
#include <vector>

#include "circform/errors.hpp"
#include "circform/geom2d.hpp"

namespace circform::cpg {

// Constants fixed on the robot while recording its motion data.
inline constexpr double kZetaR = 11.68;
inline constexpr double kZetaPhi = 5.84;
inline constexpr double kBias12 = -0.698;
inline constexpr double kBias13 = -2.513;

struct CpgConfig {
  std::vector<double> amp_targets;     // Rhat_i, rad
  std::vector<double> offset_targets;  // Xhat_i, rad
  std::vector<double> phase_bias;      // n*n row-major, bias(i,j) = target Phi_i - Phi_j
  double freq = 1.0;                   // Hz
  double zeta_r = kZetaR;
  double zeta_x = kZetaR;
  double zeta_phi = kZetaPhi;
  double rate_cap = 100.0;  // |dPhi/dt| bound, rad/s

  std::size_t joints() const { return amp_targets.size(); }
  double bias(std::size_t i, std::size_t j) const { return phase_bias[i * joints() + j]; }

  void validate() const {
    const std::size_t n = joints();
    if (n < 2) throw InvalidArgument("CPG needs at least two joints");
    if (offset_targets.size() != n || phase_bias.size() != n * n)
      throw InvalidArgument("CPG config arrays disagree on joint count");
    if (!(freq > 0.0) || !(zeta_r > 0.0) || !(zeta_x > 0.0) || !(zeta_phi > 0.0))
      throw InvalidArgument("CPG frequency and gains must be positive");
    for (std::size_t i = 0; i < n; ++i) {
      if (bias(i, i) != 0.0) throw InvalidArgument("CPG phase bias diagonal must be zero");
      for (std::size_t j = 0; j < n; ++j)
        if (std::abs(bias(i, j) + bias(j, i)) > 1e-12)
          throw InvalidArgument("CPG phase bias must be antisymmetric");
    }
  }
};

/// Consistent bias matrix from the biases of joint 1 against every other
/// joint: bias(i,j) = bias(0,j) - bias(0,i).
inline std::vector<double> bias_from_first_row(const std::vector<double>& first_row) {
  const std::size_t n = first_row.size() + 1;
  std::vector<double> row0(n, 0.0);
  for (std::size_t j = 1; j < n; ++j) row0[j] = first_row[j - 1];
  std::vector<double> m(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m[i * n + j] = row0[j] - row0[i];
  return m;
}

/// Three-joint configuration with the robot's fixed gains and phase biases.
inline CpgConfig robot_config(std::vector<double> amp_targets, std::vector<double> offset_targets, double freq) {
  CpgConfig cfg;
  cfg.amp_targets = std::move(amp_targets);
  cfg.offset_targets = std::move(offset_targets);
  cfg.phase_bias = bias_from_first_row({kBias12, kBias13});
  cfg.freq = freq;
  return cfg;
}

struct CpgState {
  std::vector<double> amp;        // R_i
  std::vector<double> offset;     // X_i
  std::vector<double> phase;      // Phi_i
  std::vector<double> phase_rate; // dPhi_i/dt
  double t = 0.0;

  static CpgState zero(std::size_t n) {
    return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0),
            std::vector<double>(n, 0.0), 0.0};
  }
};

/// Time derivative of the state; the `phase_rate` field of the result holds
/// the phase acceleration and `t` is 1.
inline CpgState cpg_derivative(const CpgState& s, const CpgConfig& cfg) {
  const std::size_t n = cfg.joints();
  if (s.amp.size() != n || s.offset.size() != n || s.phase.size() != n || s.phase_rate.size() != n)
    throw InvalidArgument("CPG state does not match config joint count");
  const double omega = kTwoPi * cfg.freq;
  const double z2 = cfg.zeta_phi * cfg.zeta_phi;
  CpgState d = CpgState::zero(n);
  d.t = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    d.amp[i] = cfg.zeta_r * (cfg.amp_targets[i] - s.amp[i]);
    d.offset[i] = cfg.zeta_x * (cfg.offset_targets[i] - s.offset[i]);
    d.phase[i] = s.phase_rate[i];
    double coupling = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) coupling += s.phase[i] - s.phase[j] - cfg.bias(i, j);
    d.phase_rate[i] = -z2 * coupling - 2.0 * static_cast<double>(n - 1) * cfg.zeta_phi * (s.phase_rate[i] - omega);
  }
  return d;
}

namespace detail {
inline CpgState axpy(const CpgState& s, double h, const CpgState& d) {
  CpgState r = s;
  for (std::size_t i = 0; i < s.amp.size(); ++i) {
    r.amp[i] += h * d.amp[i];
    r.offset[i] += h * d.offset[i];
    r.phase[i] += h * d.phase[i];
    r.phase_rate[i] += h * d.phase_rate[i];
  }
  r.t += h * d.t;
  return r;
}
}  // namespace detail

/// One classical Runge-Kutta step. dt must lie in (0, 0.01] s.
inline CpgState step_cpg(const CpgState& s, const CpgConfig& cfg, double dt) {
  if (!(dt > 0.0 && dt <= 0.01)) throw InvalidArgument("CPG step must be in (0, 0.01] s");
  const CpgState k1 = cpg_derivative(s, cfg);
  const CpgState k2 = cpg_derivative(detail::axpy(s, dt / 2, k1), cfg);
  const CpgState k3 = cpg_derivative(detail::axpy(s, dt / 2, k2), cfg);
  const CpgState k4 = cpg_derivative(detail::axpy(s, dt, k3), cfg);

  CpgState out = s;
  for (std::size_t i = 0; i < s.amp.size(); ++i) {
    out.amp[i] += dt / 6 * (k1.amp[i] + 2 * k2.amp[i] + 2 * k3.amp[i] + k4.amp[i]);
    out.offset[i] += dt / 6 * (k1.offset[i] + 2 * k2.offset[i] + 2 * k3.offset[i] + k4.offset[i]);
    out.phase[i] += dt / 6 * (k1.phase[i] + 2 * k2.phase[i] + 2 * k3.phase[i] + k4.phase[i]);
    out.phase_rate[i] +=
        dt / 6 * (k1.phase_rate[i] + 2 * k2.phase_rate[i] + 2 * k3.phase_rate[i] + k4.phase_rate[i]);
    const bool finite = std::isfinite(out.amp[i]) && std::isfinite(out.offset[i]) &&
                        std::isfinite(out.phase[i]) && std::isfinite(out.phase_rate[i]);
    if (!finite || std::abs(out.phase_rate[i]) > cfg.rate_cap)
      throw IntegrationDiverged("CPG state left its bounds");
  }
  out.t = s.t + dt;
  return out;
}

inline std::vector<double> joint_angle(const CpgState& s) {
  std::vector<double> theta(s.amp.size());
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] = s.offset[i] + s.amp[i] * std::sin(s.phase[i]);
  return theta;
}

/// Integrates from the zero state and writes one row per step:
/// t,theta_1..theta_n. The initial state itself is not written.
inline void write_trace_csv(std::ostream& os, const CpgConfig& cfg, double seconds, double dt = 1e-3) {
  cfg.validate();
  if (!(seconds > 0.0)) throw InvalidArgument("trace duration must be positive");
  const std::size_t n = cfg.joints();
  const auto steps = static_cast<std::size_t>(std::llround(seconds / dt));
  os << "t";
  for (std::size_t i = 0; i < n; ++i) os << ",theta_" << i + 1;
  os << "\n";
  CpgState s = CpgState::zero(n);
  char buf[32];
  for (std::size_t k = 1; k <= steps; ++k) {
    s = step_cpg(s, cfg, dt);
    std::snprintf(buf, sizeof buf, "%.3f", static_cast<double>(k) * dt);
    os << buf;
    for (double th : joint_angle(s)) {
      std::snprintf(buf, sizeof buf, ",%.9f", th);
      os << buf;
    }
    os << "\n";
  }
}

}  // namespace circform::cpg
