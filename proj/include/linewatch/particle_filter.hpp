#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "linewatch/measurement.hpp"
#include "linewatch/network.hpp"
#include "linewatch/rng.hpp"

// Bootstrap particle filtering: generic sequential Monte Carlo primitives
// (weighting, effective sample size, systematic resampling) plus a tracker
// for generator rotor states driven by measured PMU phasors and the
// observable output-change signal.
namespace linewatch {

// ---------------------------------------------------------------------------
// Generic primitives
// ---------------------------------------------------------------------------

struct ParticleSet {
  Eigen::MatrixXd x;  // num_particles x state_dim
  Eigen::VectorXd w;  // normalized weights
  int k = 0;          // assimilation steps applied

  int size() const { return static_cast<int>(x.rows()); }
  int dim() const { return static_cast<int>(x.cols()); }
};

// Zero states, uniform weights.
ParticleSet make_particle_set(int num_particles, int state_dim);

// Effective sample size (sum w_i^2)^-1, clamped to [1, n].
double ess(const Eigen::VectorXd& w);

// Scales weights to sum to one; throws Error when the sum is not positive
// and finite.
void normalize_weights(Eigen::VectorXd& w);

// Offspring counts of systematic resampling for one stratum offset
// u1 in (0, 1/n_out]: particle i is selected once for every grid point
// u1 + j/n_out falling inside its weight interval.
std::vector<int> systematic_offspring(const Eigen::VectorXd& w, double u1, int n_out = -1);

// In-place systematic resample of the particle states; weights reset to
// uniform. The stratum offset is drawn from `stream` at `counter`.
void systematic_resample(ParticleSet& ps, const RngStream& stream, std::uint64_t counter);

// Bayes correction in log space with max subtraction: w_i <- w_i e^{ll_i}.
// Returns true (and resets to uniform weights) when every weight underflows
// to zero, which callers should treat as a degenerate step.
bool correct_log_weights(ParticleSet& ps, const Eigen::VectorXd& log_lik);

// ---------------------------------------------------------------------------
// Generator-state tracker
// ---------------------------------------------------------------------------

struct TrackerOptions {
  int num_particles = 2000;
  double init_delta_std = 0.01;  // rad around the solved rotor angle
  double init_omega_std = 1e-4;  // p.u. speed around synchronous
  // Speed-update noise mirroring the simulator: std dt/M_g * scale * |Pm_g|.
  double process_noise_scale = 1e-4;
  // Extra speed roughening (p.u. std per step) keeping the cloud alive when
  // the configured process noise is very small.
  double omega_jitter = 1e-5;
  std::uint64_t seed = 0;
};

// Posterior summaries after one assimilation step.
struct FilterStepResult {
  Eigen::VectorXd delta_mean;  // per tracked machine, rad
  Eigen::VectorXd omega_mean;  // per tracked machine, p.u.
  Eigen::VectorXd pg_mean;     // per tracked machine electrical power, p.u.
  // Change in the posterior-mean predicted net power per output channel
  // (difference of successive weighted means); zero on load channels, which
  // the tracker does not model.
  Eigen::VectorXd dpg;
  double ess = 0.0;
  bool resampled = false;
  bool degenerate = false;
};

// Bootstrap particle filter over the rotor states (delta, omega) of every
// machine whose terminal bus is observable. Propagation mirrors the
// simulator's Euler swing update driven by the measured terminal phasors;
// the correction weights particles by the measured output change on the
// generator channels. Per-particle state also carries the previously
// predicted net power per generator channel so that predictions difference
// correctly across resampling.
class GeneratorTracker {
 public:
  // `ss` anchors the internal EMFs, the mechanical-power lock and the load
  // model reference voltages, exactly as the simulator does.
  GeneratorTracker(const NetworkCase& net, const SteadyState& ss,
                   LoadModel load_model = LoadModel::kConstantImpedance, double dt = 1.0 / 30.0,
                   const TrackerOptions& opts = {});

  // Seeds the cloud around the steady-state rotor angles using the first
  // measured phasor row (instrumented channels, ascending bus id).
  void init(const Eigen::VectorXd& pmu_vmag, const Eigen::VectorXd& pmu_vang);

  // Assimilates one sample: resample-if-needed (previous ESS <= n/2), Euler
  // propagation to the new sample, correction against the measured output
  // change `y` (all output channels, generator channels weighted with std
  // `sigma`). Phasor rows are the current measured instrumented channels.
  FilterStepResult step(const Eigen::VectorXd& pmu_vmag, const Eigen::VectorXd& pmu_vang,
                        const Eigen::VectorXd& y, const Eigen::VectorXd& sigma);

  const ParticleSet& particles() const { return ps_; }
  const std::vector<int>& tracked_machines() const { return machines_; }
  const std::vector<int>& observable() const { return observable_; }
  const std::vector<int>& channel_machine() const { return channel_machine_; }
  int step_index() const { return ps_.k; }

 private:
  double machine_power(int pos, double delta, double v, double theta) const;
  double channel_net_power(int channel, double delta, double v, double theta) const;

  const NetworkCase& net_;
  LoadModel load_model_;
  double dt_;
  TrackerOptions opts_;

  std::vector<int> observable_;       // observable bus ids, ascending
  std::vector<int> channel_machine_;  // generator position per channel, -1 load
  std::vector<int> gen_channels_;     // channel indices backed by a machine
  std::vector<int> machines_;         // generator position per gen channel
  std::vector<int> machine_pmu_col_;  // phasor column of each tracked terminal
  std::vector<double> emf_, xdp_, inertia_, damping_, pm_, rotor_anchor_;
  std::vector<double> v0_, p_load_;   // load-model anchor at each terminal

  ParticleSet ps_;          // [delta_0..m-1, omega_0..m-1, prev_net_0..g-1]
  Eigen::VectorXd prev_vmag_, prev_vang_;  // last assimilated phasor row
  Eigen::VectorXd prev_net_mean_;          // posterior-mean net power per gen channel
  double last_ess_ = 0.0;
  bool initialized_ = false;
};

}  // namespace linewatch
