#include "linewatch/measurement.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "linewatch/rng.hpp"

namespace linewatch {

std::vector<int> observable_buses(const NetworkCase& net) {
  const std::set<int> instrumented(net.pmu_buses().begin(), net.pmu_buses().end());
  std::vector<int> out;
  for (int id : net.pmu_buses()) {
    const int i = net.bus_index(id);
    bool ok = true;
    for (int j : net.neighbors(i))
      if (!instrumented.count(net.buses()[j].id)) {
        ok = false;
        break;
      }
    if (ok) out.push_back(id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> pmu_columns(const NetworkCase& net) {
  std::vector<int> cols(net.size(), -1);
  for (std::size_t c = 0; c < net.pmu_buses().size(); ++c)
    cols[net.bus_index(net.pmu_buses()[c])] = static_cast<int>(c);
  return cols;
}

double reconstruct_net_power(const NetworkCase& net, const AdmittanceMatrix& y,
                             const std::vector<int>& pmu_cols, const Eigen::VectorXd& pmu_vmag,
                             const Eigen::VectorXd& pmu_vang, int bus_index) {
  const int n = net.size();
  if (y.size() != n || static_cast<int>(pmu_cols.size()) != n)
    throw Error("reconstruct_net_power: sizes do not match the case");
  if (bus_index < 0 || bus_index >= n) throw Error("reconstruct_net_power: bus index out of range");
  const int ci = pmu_cols[bus_index];
  if (ci < 0)
    throw Error("reconstruct_net_power: bus " + std::to_string(net.buses()[bus_index].id) +
                " is not instrumented");
  double acc = 0.0;
  for (int j = 0; j < n; ++j) {
    const double yij = y.magnitude(bus_index, j);
    if (yij == 0.0) continue;
    const int cj = pmu_cols[j];
    if (cj < 0)
      throw Error("reconstruct_net_power: neighbor bus " + std::to_string(net.buses()[j].id) +
                  " of bus " + std::to_string(net.buses()[bus_index].id) + " is not instrumented");
    acc += pmu_vmag[cj] * yij * std::cos(pmu_vang[ci] - pmu_vang[cj] - y.angle(bus_index, j));
  }
  return pmu_vmag[ci] * acc;
}

Eigen::VectorXd compute_output_signal(const NetworkCase& net, const AdmittanceMatrix& y,
                                      const std::vector<int>& pmu_cols,
                                      const Eigen::VectorXd& prev_vmag,
                                      const Eigen::VectorXd& prev_vang,
                                      const Eigen::VectorXd& curr_vmag,
                                      const Eigen::VectorXd& curr_vang,
                                      const std::vector<int>& observable) {
  Eigen::VectorXd out(static_cast<int>(observable.size()));
  for (std::size_t c = 0; c < observable.size(); ++c) {
    const int i = net.bus_index(observable[c]);
    out[static_cast<int>(c)] = reconstruct_net_power(net, y, pmu_cols, curr_vmag, curr_vang, i) -
                               reconstruct_net_power(net, y, pmu_cols, prev_vmag, prev_vang, i);
  }
  return out;
}

MeasurementSet synthesize_measurements(const NetworkCase& net, const Trajectory& traj,
                                       const MeasurementOptions& opts) {
  if (traj.v_mag.cols() != net.size() || traj.v_mag.rows() < 2)
    throw Error("synthesize_measurements: trajectory does not match the case");
  if (opts.output_noise_frac < 0 || opts.output_noise_floor < 0 || opts.phasor_mag_noise < 0 ||
      opts.phasor_ang_noise < 0)
    throw Error("synthesize_measurements: noise parameters must be nonnegative");
  if (net.pmu_buses().empty()) throw Error("synthesize_measurements: case has no instrumented buses");

  MeasurementSet ms;
  ms.pmu_buses = net.pmu_buses();
  ms.observable = observable_buses(net);
  if (ms.observable.empty())
    throw Error(
        "synthesize_measurements: no observable buses; every instrumented bus has an "
        "uninstrumented neighbor");
  ms.dt = traj.dt;

  const int rows = static_cast<int>(traj.v_mag.rows());
  const int np = static_cast<int>(ms.pmu_buses.size());
  const int nc = static_cast<int>(ms.observable.size());
  const std::vector<int> cols = pmu_columns(net);

  ms.channel_machine.resize(nc);
  for (int c = 0; c < nc; ++c)
    ms.channel_machine[c] = net.generator_at(net.bus_index(ms.observable[c]));

  // Phasor channels: exact trajectory values, plus white noise in phasor mode.
  ms.v_mag.resize(rows, np);
  ms.v_ang.resize(rows, np);
  for (int p = 0; p < np; ++p) {
    const int i = net.bus_index(ms.pmu_buses[p]);
    ms.v_mag.col(p) = traj.v_mag.col(i);
    ms.v_ang.col(p) = traj.v_ang.col(i);
  }
  if (opts.noise_model == NoiseModel::kPhasor) {
    const RngStream mag_stream = RngStream::of(opts.seed, streams::kPhasorNoise, 0ull);
    const RngStream ang_stream = RngStream::of(opts.seed, streams::kPhasorNoise, 1ull);
    for (int k = 0; k < rows; ++k)
      for (int p = 0; p < np; ++p) {
        const std::uint64_t ctr = static_cast<std::uint64_t>(k) * np + p;
        ms.v_mag(k, p) += opts.phasor_mag_noise * mag_stream.normal(ctr);
        ms.v_ang(k, p) += opts.phasor_ang_noise * ang_stream.normal(ctr);
      }
  }

  // Net-power levels from the measured phasors and the pre-outage admittance
  // rows, then the output-change signal as consecutive level differences. In
  // the direct model the phasors (hence levels) are exact and white noise is
  // added to each change sample; in the phasor model the noisy phasors carry
  // all the error through the reconstruction.
  const AdmittanceMatrix y_base = build_admittance(net);
  ms.level.resize(rows, nc);
  ms.output = Eigen::MatrixXd::Zero(rows, nc);
  ms.output_sigma = Eigen::VectorXd::Zero(nc);
  if (opts.noise_model == NoiseModel::kDirectOutput) {
    for (int c = 0; c < nc; ++c) {
      const int i = net.bus_index(ms.observable[c]);
      ms.output_sigma[c] =
          std::max(opts.output_noise_frac * std::abs(net.buses()[i].p_load), opts.output_noise_floor);
    }
  }

  const RngStream out_stream = RngStream::of(opts.seed, streams::kOutputNoise);
  Eigen::VectorXd vm(np), va(np);
  for (int k = 0; k < rows; ++k) {
    vm = ms.v_mag.row(k).transpose();
    va = ms.v_ang.row(k).transpose();
    for (int c = 0; c < nc; ++c) {
      const int i = net.bus_index(ms.observable[c]);
      ms.level(k, c) = reconstruct_net_power(net, y_base, cols, vm, va, i);
    }
    if (k == 0) continue;
    for (int c = 0; c < nc; ++c) {
      double o = ms.level(k, c) - ms.level(k - 1, c);
      if (opts.noise_model == NoiseModel::kDirectOutput)
        o += ms.output_sigma[c] * out_stream.normal(static_cast<std::uint64_t>(k) * nc + c);
      ms.output(k, c) = o;
    }
  }
  return ms;
}

}  // namespace linewatch
