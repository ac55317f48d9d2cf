#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "linewatch/particle_filter.hpp"
#include "linewatch/rng.hpp"
#include "oracles.hpp"

// Linear-Gaussian single-machine state-space model used to validate the
// particle filter against a Kalman oracle. The state is the deviation
// (delta, omega) of one machine from its operating point with a linear
// synchronizing torque K*delta:
//   delta' = delta + ws * omega * dt
//   omega' = omega + dt/M (-K delta - D omega) + q * xi
//   y      = K delta + r * eta
// Parameters keep the explicit-Euler map stable (|eig| < 1 needs D > ws K dt).
namespace toy {

struct ToySsm {
  double ws = linewatch::kTwoPi * 60.0;
  double dt = 1.0 / 30.0;
  double m = 10.0;
  double d = 20.0;
  double k = 1.0;
  // The speed noise is kept small against the measurement noise so the
  // bootstrap proposal stays close to the posterior (weights nearly uniform);
  // the Kalman-agreement bound assumes that near-i.i.d. regime.
  double q = 5e-5;        // process noise std on omega, per step
  double r = 0.05;        // measurement noise std
  double p0_delta = 1e-2; // initial uncertainty stds
  double p0_omega = 1e-3;
};

inline Eigen::Matrix2d system_matrix(const ToySsm& s) {
  Eigen::Matrix2d a;
  a << 1.0, s.ws * s.dt, -s.k * s.dt / s.m, 1.0 - s.d * s.dt / s.m;
  return a;
}

// Draws one data realization from the model.
inline std::vector<double> simulate_outputs(const ToySsm& s, int steps, std::uint64_t seed) {
  const linewatch::RngStream rng = linewatch::RngStream::of(seed, 301);
  Eigen::Vector2d x(s.p0_delta * rng.normal(0), s.p0_omega * rng.normal(1));
  const Eigen::Matrix2d a = system_matrix(s);
  std::vector<double> ys;
  ys.reserve(steps);
  for (int t = 0; t < steps; ++t) {
    x = a * x;
    x(1) += s.q * rng.normal(2 + 2 * t);
    ys.push_back(s.k * x(0) + s.r * rng.normal(3 + 2 * t));
  }
  return ys;
}

inline oracles::KalmanResult kalman_reference(const ToySsm& s, const std::vector<double>& ys) {
  Eigen::Matrix2d q = Eigen::Matrix2d::Zero();
  q(1, 1) = s.q * s.q;
  Eigen::RowVectorXd h(2);
  h << s.k, 0.0;
  Eigen::Vector2d x0 = Eigen::Vector2d::Zero();
  Eigen::Matrix2d p0 = Eigen::Matrix2d::Zero();
  p0(0, 0) = s.p0_delta * s.p0_delta;
  p0(1, 1) = s.p0_omega * s.p0_omega;
  return oracles::kalman_filter(system_matrix(s), q, h, s.r * s.r, x0, p0, ys);
}

struct ToyPfRun {
  std::vector<Eigen::Vector2d> mean;  // posterior mean after each correction
  int resamples = 0;
};

// Bootstrap particle filter on the toy model built from the library's
// sequential Monte Carlo primitives.
inline ToyPfRun run_particle_filter(const ToySsm& s, const std::vector<double>& ys, int n,
                                    std::uint64_t seed) {
  using namespace linewatch;
  ParticleSet ps = make_particle_set(n, 2);
  const RngStream init = RngStream::of(seed, 311);
  for (int i = 0; i < n; ++i) {
    ps.x(i, 0) = s.p0_delta * init.normal(2 * i);
    ps.x(i, 1) = s.p0_omega * init.normal(2 * i + 1);
  }
  const RngStream prop = RngStream::of(seed, 312);
  const RngStream res = RngStream::of(seed, 313);

  ToyPfRun out;
  Eigen::VectorXd log_lik(n);
  for (std::size_t t = 0; t < ys.size(); ++t) {
    for (int i = 0; i < n; ++i) {
      const double dl = ps.x(i, 0);
      const double om = ps.x(i, 1);
      ps.x(i, 0) = dl + s.ws * om * s.dt;
      ps.x(i, 1) = om + s.dt / s.m * (-s.k * dl - s.d * om) +
                   s.q * prop.normal(t * static_cast<std::uint64_t>(n) + i);
      const double z = (ys[t] - s.k * ps.x(i, 0)) / s.r;
      log_lik(i) = -0.5 * z * z;
    }
    correct_log_weights(ps, log_lik);
    out.mean.emplace_back(ps.w.dot(ps.x.col(0)), ps.w.dot(ps.x.col(1)));
    if (ess(ps.w) <= 0.5 * n) {
      systematic_resample(ps, res, t);
      ++out.resamples;
    }
    ++ps.k;
  }
  return out;
}

}  // namespace toy
