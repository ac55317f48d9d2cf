#include "linewatch/particle_filter.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "linewatch/simulator.hpp"

namespace linewatch {

ParticleSet make_particle_set(int num_particles, int state_dim) {
  if (num_particles < 1) throw Error("particles: need at least one particle");
  if (state_dim < 1) throw Error("particles: state dimension must be positive");
  ParticleSet ps;
  ps.x = Eigen::MatrixXd::Zero(num_particles, state_dim);
  ps.w = Eigen::VectorXd::Constant(num_particles, 1.0 / num_particles);
  return ps;
}

double ess(const Eigen::VectorXd& w) {
  const double s = w.squaredNorm();
  if (s <= 0.0 || !std::isfinite(s)) throw Error("ess: weights are not normalized");
  const double n = static_cast<double>(w.size());
  return std::clamp(1.0 / s, 1.0, n);
}

void normalize_weights(Eigen::VectorXd& w) {
  if (w.size() == 0) throw Error("weights: empty vector");
  if ((w.array() < 0.0).any()) throw Error("weights: negative entry");
  const double s = w.sum();
  if (!(s > 0.0) || !std::isfinite(s)) throw Error("weights: sum is not positive and finite");
  w /= s;
}

std::vector<int> systematic_offspring(const Eigen::VectorXd& w, double u1, int n_out) {
  const int n_in = static_cast<int>(w.size());
  if (n_in < 1) throw Error("resample: empty weight vector");
  if (n_out < 0) n_out = n_in;
  if (n_out < 1) throw Error("resample: need at least one offspring");
  if (!(u1 > 0.0) || u1 > 1.0 / n_out)
    throw Error("resample: stratum offset must lie in (0, 1/n]");
  const double s = w.sum();
  if (std::abs(s - 1.0) > 1e-9) throw Error("resample: weights must be normalized");

  std::vector<int> counts(n_in, 0);
  double cum = 0.0;
  int j = 0;
  for (int i = 0; i < n_in && j < n_out; ++i) {
    cum = (i == n_in - 1) ? 1.0 : cum + w(i);
    while (j < n_out && u1 + static_cast<double>(j) / n_out <= cum) {
      ++counts[i];
      ++j;
    }
  }
  return counts;
}

void systematic_resample(ParticleSet& ps, const RngStream& stream, std::uint64_t counter) {
  const int n = ps.size();
  // uniform() is on (0, 1], so the offset lands in (0, 1/n] as required.
  const double u1 = stream.uniform(counter) / n;
  const std::vector<int> counts = systematic_offspring(ps.w, u1, n);
  Eigen::MatrixXd x(n, ps.dim());
  int row = 0;
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < counts[i]; ++c) x.row(row++) = ps.x.row(i);
  ps.x = std::move(x);
  ps.w.setConstant(1.0 / n);
}

bool correct_log_weights(ParticleSet& ps, const Eigen::VectorXd& log_lik) {
  const int n = ps.size();
  if (log_lik.size() != n) throw Error("correct: log-likelihood size mismatch");
  const double top = log_lik.maxCoeff();
  if (!std::isfinite(top)) {
    ps.w.setConstant(1.0 / n);
    return true;
  }
  Eigen::VectorXd w = ps.w.array() * (log_lik.array() - top).exp();
  const double s = w.sum();
  if (!(s > 0.0) || !std::isfinite(s)) {
    ps.w.setConstant(1.0 / n);
    return true;
  }
  ps.w = w / s;
  return false;
}

// ---------------------------------------------------------------------------
// GeneratorTracker
// ---------------------------------------------------------------------------

GeneratorTracker::GeneratorTracker(const NetworkCase& net, const SteadyState& ss,
                                   LoadModel load_model, double dt, const TrackerOptions& opts)
    : net_(net), load_model_(load_model), dt_(dt), opts_(opts) {
  if (dt <= 0.0) throw Error("tracker: dt must be positive");
  if (opts.num_particles < 2) throw Error("tracker: need at least two particles");
  if (opts.init_delta_std < 0.0 || opts.init_omega_std < 0.0 || opts.omega_jitter < 0.0 ||
      opts.process_noise_scale < 0.0)
    throw Error("tracker: noise levels must be nonnegative");
  if (ss.emf.size() != net.num_generators())
    throw Error("tracker: steady state is missing generator EMFs");

  observable_ = observable_buses(net);
  if (observable_.empty()) throw Error("tracker: no observable buses");
  const std::vector<int> cols = pmu_columns(net);
  for (int bus_id : observable_) {
    const int bi = net.bus_index(bus_id);
    const int pos = net.generator_at(bi);
    channel_machine_.push_back(pos);
    if (pos < 0) continue;
    gen_channels_.push_back(static_cast<int>(channel_machine_.size()) - 1);
    machines_.push_back(pos);
    machine_pmu_col_.push_back(cols[bi]);
    const Generator& gen = net.generators()[pos];
    emf_.push_back(ss.emf(pos));
    xdp_.push_back(gen.xd_prime);
    inertia_.push_back(gen.inertia_m);
    damping_.push_back(gen.damping_d);
    pm_.push_back(generator_electrical_power(ss.emf(pos), gen.xd_prime, ss.rotor_angle(pos),
                                             ss.v_mag(bi), ss.v_ang(bi)));
    rotor_anchor_.push_back(ss.rotor_angle(pos));
    v0_.push_back(ss.v_mag(bi));
    p_load_.push_back(net.buses()[bi].p_load);
  }
  if (machines_.empty()) throw Error("tracker: no observable generator terminals to track");

  const int m = static_cast<int>(machines_.size());
  ps_ = make_particle_set(opts.num_particles, 3 * m);
}

double GeneratorTracker::machine_power(int pos, double delta, double v, double theta) const {
  return generator_electrical_power(emf_[pos], xdp_[pos], delta, v, theta);
}

double GeneratorTracker::channel_net_power(int pos, double delta, double v,
                                           double theta) const {
  double load = p_load_[pos];
  if (load_model_ == LoadModel::kConstantImpedance) {
    const double ratio = v / v0_[pos];
    load *= ratio * ratio;
  }
  return machine_power(pos, delta, v, theta) - load;
}

void GeneratorTracker::init(const Eigen::VectorXd& pmu_vmag, const Eigen::VectorXd& pmu_vang) {
  const int num_pmu = static_cast<int>(net_.pmu_buses().size());
  if (pmu_vmag.size() != num_pmu || pmu_vang.size() != num_pmu)
    throw Error("tracker: phasor row size does not match the instrumented channels");

  const int n = ps_.size();
  const int m = static_cast<int>(machines_.size());
  const RngStream seed_stream = RngStream::of(opts_.seed, streams::kParticleInit);
  // Cloud around the solved operating point.
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      const std::uint64_t base = (static_cast<std::uint64_t>(i) * m + j) * 2;
      ps_.x(i, j) = rotor_anchor_[j] + opts_.init_delta_std * seed_stream.normal(base);
      ps_.x(i, m + j) = 1.0 + opts_.init_omega_std * seed_stream.normal(base + 1);
      const int col = machine_pmu_col_[j];
      ps_.x(i, 2 * m + j) =
          channel_net_power(j, ps_.x(i, j), pmu_vmag(col), pmu_vang(col));
    }
  }
  ps_.w.setConstant(1.0 / n);
  ps_.k = 0;

  prev_net_mean_.resize(m);
  for (int j = 0; j < m; ++j) prev_net_mean_(j) = ps_.x.col(2 * m + j).mean();
  prev_vmag_ = pmu_vmag;
  prev_vang_ = pmu_vang;
  last_ess_ = static_cast<double>(n);
  initialized_ = true;
}

FilterStepResult GeneratorTracker::step(const Eigen::VectorXd& pmu_vmag,
                                        const Eigen::VectorXd& pmu_vang,
                                        const Eigen::VectorXd& y, const Eigen::VectorXd& sigma) {
  if (!initialized_) throw Error("tracker: step before init");
  const int num_pmu = static_cast<int>(net_.pmu_buses().size());
  if (pmu_vmag.size() != num_pmu || pmu_vang.size() != num_pmu)
    throw Error("tracker: phasor row size does not match the instrumented channels");
  const int nc = static_cast<int>(observable_.size());
  if (y.size() != nc || sigma.size() != nc)
    throw Error("tracker: output row size does not match the observable channels");
  for (int gc : gen_channels_)
    if (!(sigma(gc) > 0.0)) throw Error("tracker: generator-channel sigma must be positive");

  const int n = ps_.size();
  const int m = static_cast<int>(machines_.size());
  const int k_new = ps_.k + 1;
  const double ws = net_.omega_s();

  FilterStepResult res;
  if (last_ess_ <= 0.5 * n) {
    systematic_resample(ps_, RngStream::of(opts_.seed, streams::kResample),
                        static_cast<std::uint64_t>(k_new));
    res.resampled = true;
  }

  const RngStream prop = RngStream::of(opts_.seed, streams::kParticleProp);
  Eigen::VectorXd log_lik = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      const int col = machine_pmu_col_[j];
      double& delta = ps_.x(i, j);
      double& omega = ps_.x(i, m + j);
      double& prev_net = ps_.x(i, 2 * m + j);

      // Euler propagation at the incoming state, driven by the previously
      // assimilated terminal phasors (mirrors the simulator's update order).
      const double pg_in = machine_power(j, delta, prev_vmag_(col), prev_vang_(col));
      const double power_noise_std =
          dt_ / inertia_[j] * opts_.process_noise_scale * std::abs(pm_[j]);
      const double noise_std = std::hypot(power_noise_std, opts_.omega_jitter);
      const std::uint64_t ctr = (static_cast<std::uint64_t>(k_new) * n + i) * m + j;
      const double speed_dev = omega - 1.0;
      const double omega_new =
          omega + dt_ / inertia_[j] * (pm_[j] - pg_in - damping_[j] * speed_dev) -
          noise_std * prop.normal(ctr);
      const double delta_new = delta + ws * speed_dev * dt_;
      delta = delta_new;
      omega = omega_new;

      // Predicted output change on this generator channel.
      const double net_new = channel_net_power(j, delta, pmu_vmag(col), pmu_vang(col));
      const double predicted = net_new - prev_net;
      const int gc = gen_channels_[j];
      const double z = (y(gc) - predicted) / sigma(gc);
      log_lik(i) -= 0.5 * z * z;
      prev_net = net_new;
    }
  }

  res.degenerate = correct_log_weights(ps_, log_lik);
  last_ess_ = ess(ps_.w);
  res.ess = last_ess_;

  res.delta_mean.resize(m);
  res.omega_mean.resize(m);
  res.pg_mean.resize(m);
  res.dpg = Eigen::VectorXd::Zero(nc);
  for (int j = 0; j < m; ++j) {
    res.delta_mean(j) = ps_.w.dot(ps_.x.col(j));
    res.omega_mean(j) = ps_.w.dot(ps_.x.col(m + j));
    const int col = machine_pmu_col_[j];
    double pg = 0.0;
    for (int i = 0; i < n; ++i)
      pg += ps_.w(i) * machine_power(j, ps_.x(i, j), pmu_vmag(col), pmu_vang(col));
    res.pg_mean(j) = pg;
    const double net_mean = ps_.w.dot(ps_.x.col(2 * m + j));
    res.dpg(gen_channels_[j]) = net_mean - prev_net_mean_(j);
    prev_net_mean_(j) = net_mean;
  }

  prev_vmag_ = pmu_vmag;
  prev_vang_ = pmu_vang;
  ps_.k = k_new;
  return res;
}

}  // namespace linewatch
