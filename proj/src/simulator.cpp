#include "linewatch/simulator.hpp"

#include <cmath>
#include <sstream>

#include "linewatch/rng.hpp"

namespace linewatch {

double generator_electrical_power(double emf, double xd_prime, double delta, double v_mag,
                                  double v_ang) {
  return emf * v_mag / xd_prime * std::sin(delta - v_ang);
}

void step_generator_states(const NetworkCase& net, const std::vector<double>& pm,
                           const Eigen::VectorXd& pg, const Eigen::VectorXd& noise, double dt,
                           Eigen::VectorXd& delta, Eigen::VectorXd& omega) {
  const int m = net.num_generators();
  if (static_cast<int>(pm.size()) != m || pg.size() != m || noise.size() != m ||
      delta.size() != m || omega.size() != m)
    throw Error("step_generator_states: vector sizes do not match the machine count");
  const double ws = net.omega_s();
  for (int g = 0; g < m; ++g) {
    const Generator& gen = net.generators()[g];
    const double speed_dev = omega[g] - 1.0;
    const double d_new = delta[g] + ws * speed_dev * dt;
    const double o_new =
        omega[g] + dt / gen.inertia_m * (pm[g] - pg[g] - gen.damping_d * speed_dev) - noise[g];
    delta[g] = d_new;
    omega[g] = o_new;
  }
}

AlgebraicSolution solve_network_algebraic(const NetworkCase& net, const AdmittanceMatrix& y,
                                          const Eigen::VectorXd& delta, const SteadyState& ref,
                                          LoadModel load_model, Eigen::VectorXd v_mag_guess,
                                          Eigen::VectorXd v_ang_guess,
                                          const PowerFlowOptions& opts) {
  const int n = net.size();
  const int m = net.num_generators();
  if (y.size() != n) throw Error("algebraic solve: admittance size does not match case");
  if (delta.size() != m || ref.emf.size() != m)
    throw Error("algebraic solve: machine state sizes do not match the case");
  if (ref.v_mag.size() != n)
    throw Error("algebraic solve: reference state size does not match the case");
  if (v_mag_guess.size() != n || v_ang_guess.size() != n)
    throw Error("algebraic solve: guess size does not match the case");
  if (m == 0) throw Error("algebraic solve: case has no machines to anchor bus angles");
  for (int i = 0; i < n; ++i)
    if (v_mag_guess[i] <= 0.0) throw Error("algebraic solve: nonpositive voltage in guess");

  AlgebraicSolution sol;
  sol.v_mag = std::move(v_mag_guess);
  sol.v_ang = std::move(v_ang_guess);
  Eigen::VectorXd& vm = sol.v_mag;
  Eigen::VectorXd& va = sol.v_ang;

  Eigen::VectorXd p_net(n), q_net(n);
  Eigen::VectorXd f(2 * n);

  // Residual of the bus balance: machine output minus load minus network sum.
  auto eval_residual = [&]() {
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
      p_net[i] = net_active_power(vm, va, y, i);
      q_net[i] = net_reactive_power(vm, va, y, i);
      double pg_i = 0.0, qg_i = 0.0;
      const int g = net.generator_at(i);
      if (g >= 0) {
        const Generator& gen = net.generators()[g];
        pg_i = generator_electrical_power(ref.emf[g], gen.xd_prime, delta[g], vm[i], va[i]);
        qg_i = (ref.emf[g] * vm[i] * std::cos(delta[g] - va[i]) - vm[i] * vm[i]) / gen.xd_prime;
      }
      double pl = net.buses()[i].p_load;
      double ql = net.buses()[i].q_load;
      if (load_model == LoadModel::kConstantImpedance) {
        const double scale = vm[i] / ref.v_mag[i];
        pl *= scale * scale;
        ql *= scale * scale;
      }
      f[i] = pg_i - pl - p_net[i];
      f[n + i] = qg_i - ql - q_net[i];
      worst = std::max(worst, std::max(std::abs(f[i]), std::abs(f[n + i])));
    }
    return worst;
  };

  double worst = eval_residual();
  int iter = 0;
  if (worst < opts.tolerance) {
    // Warm start already satisfies the equations: hand it back untouched so a
    // system at rest stays numerically frozen.
    sol.iterations = 0;
    sol.max_mismatch = worst;
    return sol;
  }

  Eigen::MatrixXd G(n, n), B(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      G(i, j) = y.magnitude(i, j) * std::cos(y.angle(i, j));
      B(i, j) = y.magnitude(i, j) * std::sin(y.angle(i, j));
    }

  while (worst >= opts.tolerance) {
    if (iter >= opts.max_iterations) {
      std::ostringstream os;
      os << "network algebraic solve did not converge in " << opts.max_iterations
         << " iterations (max mismatch " << worst << " p.u., admittance revision " << y.revision
         << ")";
      throw Error(os.str());
    }

    // Unknowns x = [theta; V]; rows are [active residual; reactive residual].
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (j == i) {
          jac(i, i) -= -q_net[i] - B(i, i) * vm[i] * vm[i];
          jac(i, n + i) -= p_net[i] / vm[i] + G(i, i) * vm[i];
          jac(n + i, i) -= p_net[i] - G(i, i) * vm[i] * vm[i];
          jac(n + i, n + i) -= q_net[i] / vm[i] - B(i, i) * vm[i];
        } else if (y.magnitude(i, j) != 0.0) {
          const double th = va[i] - va[j];
          const double dp_dthj = vm[i] * vm[j] * (G(i, j) * std::sin(th) - B(i, j) * std::cos(th));
          const double dp_dvj = vm[i] * (G(i, j) * std::cos(th) + B(i, j) * std::sin(th));
          jac(i, j) -= dp_dthj;
          jac(i, n + j) -= dp_dvj;
          jac(n + i, j) -= -vm[j] * dp_dvj;
          jac(n + i, n + j) -= dp_dthj / vm[j];
        }
      }
      const int g = net.generator_at(i);
      if (g >= 0) {
        const Generator& gen = net.generators()[g];
        const double c = ref.emf[g] * std::cos(delta[g] - va[i]) / gen.xd_prime;
        const double s = ref.emf[g] * std::sin(delta[g] - va[i]) / gen.xd_prime;
        jac(i, i) += -vm[i] * c;               // dPgen/dtheta
        jac(i, n + i) += s;                    // dPgen/dV
        jac(n + i, i) += vm[i] * s;            // dQgen/dtheta
        jac(n + i, n + i) += c - 2.0 * vm[i] / gen.xd_prime;  // dQgen/dV
      }
      if (load_model == LoadModel::kConstantImpedance) {
        const double v0 = ref.v_mag[i];
        jac(i, n + i) -= 2.0 * net.buses()[i].p_load * vm[i] / (v0 * v0);
        jac(n + i, n + i) -= 2.0 * net.buses()[i].q_load * vm[i] / (v0 * v0);
      }
    }

    const Eigen::VectorXd dx = jac.partialPivLu().solve(-f);
    if (!dx.allFinite())
      throw Error("network algebraic solve: singular Jacobian (revision " + y.revision + ")");
    va += dx.head(n);
    vm += dx.tail(n);
    for (int i = 0; i < n; ++i)
      if (vm[i] <= 0.0)
        throw Error("network algebraic solve: voltage collapsed below zero (revision " +
                    y.revision + ")");

    worst = eval_residual();
    ++iter;
  }

  sol.iterations = iter;
  sol.max_mismatch = worst;
  return sol;
}

Trajectory simulate_scenario(const NetworkCase& net, const SimulationOptions& opts) {
  if (opts.dt <= 0.0) throw Error("simulate: dt must be positive");
  if (opts.num_steps < 1) throw Error("simulate: num_steps must be at least 1");
  if (net.num_generators() == 0) throw Error("simulate: case has no machines");
  const bool has_outage = !opts.outage_ids.empty();
  if (has_outage && (opts.onset_step < 1 || opts.onset_step > opts.num_steps))
    throw Error("simulate: onset_step must lie in [1, num_steps] when an outage is given");
  if (opts.process_noise_scale < 0.0) throw Error("simulate: process_noise_scale must be >= 0");
  if (opts.max_angle_rad <= 0.0) throw Error("simulate: max_angle_rad must be positive");

  const AdmittanceMatrix y_base = build_admittance(net);
  // Build the post-outage matrix up front so islanding outages fail fast.
  const AdmittanceMatrix y_out = has_outage ? build_admittance(net, opts.outage_ids) : y_base;

  SteadyState ss = solve_power_flow(net, y_base, opts.solver);
  init_generator_emf(ss, net);

  const int n = net.size();
  const int m = net.num_generators();
  const int rows = opts.num_steps + 1;

  Trajectory traj;
  traj.v_mag.resize(rows, n);
  traj.v_ang.resize(rows, n);
  traj.delta.resize(rows, m);
  traj.omega.resize(rows, m);
  traj.pg.resize(rows, m);
  traj.dt = opts.dt;
  traj.onset_step = has_outage ? opts.onset_step : -1;

  // Lock the mechanical input to the electrical power expression evaluated at
  // the solved operating point. The identical expression is used at every
  // later step, so with zero noise and no outage the imbalance is exactly
  // zero and the trajectory holds the steady state bit-for-bit.
  traj.pm.resize(m);
  Eigen::VectorXd delta(m), omega(m), pg(m);
  for (int g = 0; g < m; ++g) {
    const Generator& gen = net.generators()[g];
    const int i = net.bus_index(gen.bus);
    delta[g] = ss.rotor_angle[g];
    omega[g] = 1.0;
    pg[g] = generator_electrical_power(ss.emf[g], gen.xd_prime, delta[g], ss.v_mag[i], ss.v_ang[i]);
    traj.pm[g] = pg[g];
  }

  Eigen::VectorXd vm = ss.v_mag;
  Eigen::VectorXd va = ss.v_ang;
  traj.v_mag.row(0) = vm.transpose();
  traj.v_ang.row(0) = va.transpose();
  traj.delta.row(0) = delta.transpose();
  traj.omega.row(0) = omega.transpose();
  traj.pg.row(0) = pg.transpose();

  const RngStream noise_stream = RngStream::of(opts.seed, streams::kSwingNoise);
  Eigen::VectorXd eps = Eigen::VectorXd::Zero(m);

  for (int k = 1; k < rows; ++k) {
    if (opts.process_noise_scale > 0.0) {
      // Power-fluctuation draws with std scale*|Pm|, entering the speed update
      // through the same dt/M factor as the accelerating power.
      for (int g = 0; g < m; ++g)
        eps[g] = opts.dt / net.generators()[g].inertia_m * opts.process_noise_scale *
                 std::abs(traj.pm[g]) * noise_stream.normal(static_cast<std::uint64_t>(k) * m + g);
    }
    step_generator_states(net, traj.pm, pg, eps, opts.dt, delta, omega);

    for (int g = 0; g < m; ++g)
      if (!std::isfinite(delta[g]) || !std::isfinite(omega[g]) ||
          std::abs(delta[g]) > opts.max_angle_rad)
        throw Error("simulate: loss of synchronism at step " + std::to_string(k) + ": machine at bus " +
                    std::to_string(net.generators()[g].bus) + " left the angle window");

    const AdmittanceMatrix& yk = (has_outage && k >= opts.onset_step) ? y_out : y_base;
    AlgebraicSolution sol =
        solve_network_algebraic(net, yk, delta, ss, opts.load_model, vm, va, opts.solver);
    vm = std::move(sol.v_mag);
    va = std::move(sol.v_ang);

    for (int g = 0; g < m; ++g) {
      const Generator& gen = net.generators()[g];
      const int i = net.bus_index(gen.bus);
      pg[g] = generator_electrical_power(ss.emf[g], gen.xd_prime, delta[g], vm[i], va[i]);
    }

    traj.v_mag.row(k) = vm.transpose();
    traj.v_ang.row(k) = va.transpose();
    traj.delta.row(k) = delta.transpose();
    traj.omega.row(k) = omega.transpose();
    traj.pg.row(k) = pg.transpose();
  }

  traj.initial = std::move(ss);
  return traj;
}

}  // namespace linewatch
