#pragma once

#include <cstdint>
#include <vector>

#include "linewatch/network.hpp"
#include "linewatch/rng.hpp"

// Fixed-step transient simulator for classical machine models: explicit Euler
// on the rotor swing states coupled to a full algebraic network solve at
// every sample. A line outage is applied by swapping the admittance matrix at
// a configured sample index.
namespace linewatch {

enum class LoadModel {
  kConstantImpedance,  // loads scale with (V / V0)^2
  kConstantPower,      // loads fixed at their scheduled value
};

struct SimulationOptions {
  double dt = 1.0 / 30.0;  // sample interval, s
  int num_steps = 300;     // Euler steps; trajectory has num_steps + 1 rows
  // First sample index computed with the outage applied (1..num_steps).
  // Ignored when outage_ids is empty.
  int onset_step = -1;
  std::vector<int> outage_ids;
  LoadModel load_model = LoadModel::kConstantImpedance;
  // Per-step mechanical power perturbation: machine g's speed update receives
  // a draw with std dt/M_g * scale * |Pm_g| (a power fluctuation of relative
  // size `scale` passed through the Euler factor). Zero disables process
  // noise and makes the run fully deterministic.
  double process_noise_scale = 1e-4;
  std::uint64_t seed = 0;
  // Any rotor angle beyond this magnitude aborts the run as a loss of
  // synchronism; the classical model is meaningless there.
  double max_angle_rad = 10.0 * kTwoPi;
  PowerFlowOptions solver;  // governs the initial power flow and each algebraic solve
};

// Simulated system trajectory. Row k corresponds to time k * dt; row 0 is the
// pre-disturbance steady state.
struct Trajectory {
  Eigen::MatrixXd v_mag, v_ang;   // (num_steps+1) x n buses
  Eigen::MatrixXd delta, omega;   // (num_steps+1) x m machines
  Eigen::MatrixXd pg;             // machine electrical power, p.u.
  SteadyState initial;            // solved operating point incl. EMFs
  std::vector<double> pm;         // mechanical input locked to the initial Pe
  int onset_step = -1;            // -1 when no outage was applied
  double dt = 0.0;

  int steps() const { return static_cast<int>(v_mag.rows()) - 1; }
};

// Classical-model electrical power: E V sin(delta - theta) / X'd.
double generator_electrical_power(double emf, double xd_prime, double delta, double v_mag,
                                  double v_ang);

// One explicit-Euler update of every machine's (delta, omega), both evaluated
// at the incoming state:
//   delta' = delta + ws (omega - 1) dt
//   omega' = omega + dt/M (pm - pg - D (omega - 1)) - noise
// The noise entry is applied to the speed directly; callers model power
// fluctuations by pre-scaling their draws with dt/M.
void step_generator_states(const NetworkCase& net, const std::vector<double>& pm,
                           const Eigen::VectorXd& pg, const Eigen::VectorXd& noise, double dt,
                           Eigen::VectorXd& delta, Eigen::VectorXd& omega);

struct AlgebraicSolution {
  Eigen::VectorXd v_mag, v_ang;
  int iterations = 0;
  double max_mismatch = 0.0;
};

// Solves the network algebraic equations for all bus phasors given frozen
// machine internal states (EMF magnitudes from ref, angles from delta) and
// the voltage-dependent load model anchored at ref. The guess is used as the
// Newton warm start; when it already satisfies the equations within
// opts.tolerance it is returned unchanged (zero iterations), so a system at
// equilibrium reproduces its state bit-for-bit.
AlgebraicSolution solve_network_algebraic(const NetworkCase& net, const AdmittanceMatrix& y,
                                          const Eigen::VectorXd& delta, const SteadyState& ref,
                                          LoadModel load_model, Eigen::VectorXd v_mag_guess,
                                          Eigen::VectorXd v_ang_guess,
                                          const PowerFlowOptions& opts = {});

// Full scenario: initial power flow, EMF initialization, Pm lock, then
// num_steps Euler/algebraic updates with the outage admittance in effect from
// onset_step onward. Throws Error for invalid options or an outage that
// would split the network.
Trajectory simulate_scenario(const NetworkCase& net, const SimulationOptions& opts);

}  // namespace linewatch
