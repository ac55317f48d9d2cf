#pragma once

#include <cstdint>
#include <vector>

#include "linewatch/network.hpp"
#include "linewatch/simulator.hpp"

// Synthetic PMU measurement generation and phasor-based reconstruction of net
// active-power output signals at observable buses.
namespace linewatch {

// A bus is observable when it and every neighbor over in-service branches are
// instrumented: the nodal power balance at the bus then involves measured
// phasors only. Returns sorted bus ids.
std::vector<int> observable_buses(const NetworkCase& net);

// Dense bus index -> instrumented channel column, -1 when not instrumented.
std::vector<int> pmu_columns(const NetworkCase& net);

// Net active power at an observable bus evaluated from instrumented phasor
// channels and one admittance row. Throws when the bus or a neighbor carrying
// nonzero admittance is not instrumented.
double reconstruct_net_power(const NetworkCase& net, const AdmittanceMatrix& y,
                             const std::vector<int>& pmu_cols, const Eigen::VectorXd& pmu_vmag,
                             const Eigen::VectorXd& pmu_vang, int bus_index);

// One output-signal sample: the change in reconstructed net active power per
// observable bus between two consecutive phasor snapshots,
//   Y_c = P_c(curr) - P_c(prev).
Eigen::VectorXd compute_output_signal(const NetworkCase& net, const AdmittanceMatrix& y,
                                      const std::vector<int>& pmu_cols,
                                      const Eigen::VectorXd& prev_vmag,
                                      const Eigen::VectorXd& prev_vang,
                                      const Eigen::VectorXd& curr_vmag,
                                      const Eigen::VectorXd& curr_vang,
                                      const std::vector<int>& observable);

enum class NoiseModel {
  kDirectOutput,  // additive white noise on the output-change channels, clean phasors
  kPhasor,        // additive noise on phasor channels, outputs derived from them
};

struct MeasurementOptions {
  NoiseModel noise_model = NoiseModel::kPhasor;
  // Direct model: sigma_c = max(output_noise_frac * |scheduled load|, floor).
  double output_noise_frac = 0.01;
  double output_noise_floor = 1e-3;  // p.u.; keeps zero-load channels observable
  // Phasor model: independent white noise per phasor channel. The 3e-4
  // defaults make the induced output-change std on the 39-bus case's load
  // channel (bus 20, 6.8 p.u. load) come out at 0.067 p.u., i.e. 1% of the
  // served load -- the same scale the direct model injects.
  double phasor_mag_noise = 3e-4;  // p.u. std on V
  double phasor_ang_noise = 3e-4;  // rad std on theta
  std::uint64_t seed = 0;
};

struct MeasurementSet {
  std::vector<int> pmu_buses;        // instrumented bus ids, ascending
  std::vector<int> observable;       // observable bus ids, ascending
  std::vector<int> channel_machine;  // per output channel: generator position or -1
  Eigen::MatrixXd v_mag, v_ang;      // (steps+1) x |pmu| measured phasors
  Eigen::MatrixXd level;             // (steps+1) x |observable| reconstructed net power
  // Output-change signal: row 0 is zero (no predecessor sample); row k >= 1 is
  // level(k) - level(k-1), plus white noise per channel in the direct model.
  Eigen::MatrixXd output;
  Eigen::VectorXd output_sigma;  // direct-model noise std per channel (zero otherwise)
  double dt = 0.0;

  int steps() const { return static_cast<int>(output.rows()) - 1; }
  int num_channels() const { return static_cast<int>(output.cols()); }
};

// Builds the measured phasor channels and observable output signals for one
// simulated trajectory. Output signals always use the pre-outage admittance
// rows: the monitoring side has no knowledge of the applied outage.
MeasurementSet synthesize_measurements(const NetworkCase& net, const Trajectory& traj,
                                       const MeasurementOptions& opts);

}  // namespace linewatch
