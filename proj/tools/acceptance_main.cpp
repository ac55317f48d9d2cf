// Acceptance gate: nine pass/fail checks covering filter/oracle agreement,
// Monte Carlo convergence, resampling exactness, chart calibration accuracy,
// power-flow and simulator soundness, the qualitative detection study, the
// smoothing-weight sensitivity direction and CLI determinism. Each criterion
// prints one PASS/FAIL line with its key metrics; the process exits 0 only
// when every requested criterion passes.
#include <array>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "linewatch/experiment.hpp"
#include "linewatch/measurement.hpp"
#include "linewatch/mewma.hpp"
#include "linewatch/network.hpp"
#include "linewatch/particle_filter.hpp"
#include "linewatch/simulator.hpp"
#include "oracles.hpp"
#include "toy_ssm.hpp"

namespace {

using namespace linewatch;
using Clock = std::chrono::steady_clock;

std::string case_path() { return std::string(LINEWATCH_DATA_DIR) + "/case39"; }

NetworkCase case39() {
  static NetworkCase net = NetworkCase::parse_file(case_path());
  return net;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// 1. Filter posterior matches the Kalman oracle on a linear-Gaussian model.
// ---------------------------------------------------------------------------
bool criterion_1(std::string& msg) {
  const auto t0 = Clock::now();
  const toy::ToySsm s;
  const int n = 10000, steps = 100;
  const std::vector<double> ys = toy::simulate_outputs(s, steps, 2024);
  const oracles::KalmanResult kf = toy::kalman_reference(s, ys);
  const toy::ToyPfRun pf = toy::run_particle_filter(s, ys, n, 56);
  double worst = 0.0;
  for (int t = 0; t < steps; ++t)
    for (int j = 0; j < 2; ++j) {
      const double bound = 3.0 * std::sqrt(kf.cov[t](j, j) / n);
      worst = std::max(worst, std::abs(pf.mean[t](j) - kf.mean[t](j)) / bound);
    }
  const double el = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "worst |pf-kf| = %.3f of the 3*std/sqrt(n) bound, %d resamples, %.1fs", worst,
                pf.resamples, el);
  msg = buf;
  return worst < 1.0 && el < 30.0;
}

// ---------------------------------------------------------------------------
// 2. Posterior-mean error shrinks at the O(n^-1/2) Monte Carlo rate.
// ---------------------------------------------------------------------------
bool criterion_2(std::string& msg) {
  const toy::ToySsm s;
  const std::array<int, 3> ns = {100, 1000, 10000};
  const int reps = 40, steps = 100;
  std::array<double, 3> rmse{};
  for (int rep = 0; rep < reps; ++rep) {
    const std::vector<double> ys = toy::simulate_outputs(s, steps, 515 + rep);
    const oracles::KalmanResult kf = toy::kalman_reference(s, ys);
    for (std::size_t q = 0; q < ns.size(); ++q) {
      const toy::ToyPfRun pf = toy::run_particle_filter(s, ys, ns[q], 9000 + rep);
      double se = 0.0;
      int cnt = 0;
      for (int t = 10; t < steps; ++t) {
        const double e = pf.mean[t](0) - kf.mean[t](0);
        se += e * e;
        ++cnt;
      }
      rmse[q] += se / cnt;
    }
  }
  // Least-squares slope of log10 RMSE against log10 n.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t q = 0; q < ns.size(); ++q) {
    rmse[q] = std::sqrt(rmse[q] / reps);
    const double x = std::log10(double(ns[q])), y = std::log10(rmse[q]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double slope = (3 * sxy - sx * sy) / (3 * sxx - sx * sx);
  char buf[160];
  std::snprintf(buf, sizeof buf, "log-log slope %.3f (rmse %.2e / %.2e / %.2e)", slope, rmse[0],
                rmse[1], rmse[2]);
  msg = buf;
  return slope > -0.65 && slope < -0.35;
}

// ---------------------------------------------------------------------------
// 3. Systematic resampling: deterministic offspring and unbiased counts.
// ---------------------------------------------------------------------------
bool criterion_3(std::string& msg) {
  Eigen::VectorXd w(3);
  w << 0.5, 0.3, 0.2;
  const RngStream u_stream = RngStream::of(99, 1);
  bool frozen_ok = true;
  for (int k = 0; k < 100; ++k) {
    const double u1 = u_stream.uniform(k) / 10.0;  // (0, 1/n]
    const std::vector<int> counts = systematic_offspring(w, u1, 10);
    frozen_ok = frozen_ok && counts == std::vector<int>{5, 3, 2};
  }
  // Unbiasedness on weights without lattice alignment: mean offspring count
  // per particle must match n*w within 3 standard errors over 1e4 draws.
  Eigen::VectorXd v(4);
  v << 0.37, 0.24, 0.21, 0.18;
  const int n_out = 7, trials = 10000;
  const RngStream t_stream = RngStream::of(1234, 2);
  Eigen::MatrixXd counts(trials, 4);
  for (int t = 0; t < trials; ++t) {
    const double u1 = t_stream.uniform(t) / n_out;
    const std::vector<int> c = systematic_offspring(v, u1, n_out);
    for (int i = 0; i < 4; ++i) counts(t, i) = c[i];
  }
  double worst_z = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double mean = counts.col(i).mean();
    const double sd = std::sqrt((counts.col(i).array() - mean).square().sum() / (trials - 1));
    const double se = sd / std::sqrt(double(trials));
    worst_z = std::max(worst_z, std::abs(mean - n_out * v(i)) / se);
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "frozen counts (5,3,2) on 100 draws: %s; worst |z| %.2f",
                frozen_ok ? "exact" : "MISMATCH", worst_z);
  msg = buf;
  return frozen_ok && worst_z < 3.0;
}

// ---------------------------------------------------------------------------
// 4. Chart calibration hits its in-control target; lambda=1 is exact.
// ---------------------------------------------------------------------------
bool criterion_4(std::string& msg) {
  const auto t0 = Clock::now();
  const int dim = static_cast<int>(observable_buses(case39()).size());
  CalibrationOptions opts;
  opts.seed = kHarnessCalibrationSeed;
  const Calibration cal = calibrate_threshold(0.5, 1e4, dim, opts);

  // Independent verification: fresh seed, 2e4 streams at the returned H.
  CalibrationOptions vopt = opts;
  vopt.num_streams = 20000;
  vopt.seed = opts.seed + 777;
  const ArlEstimate est = estimate_arl(cal.threshold, 0.5, dim, vopt, 0);
  const double rel = std::abs(est.mean - 1e4) / 1e4;

  // lambda = 1: H must satisfy the chi-squared run-length identity
  // P(chi2_dim >= H) * (target - warmup + 1) = 1; for dim = 6 the survival
  // function has the closed Erlang form e^{-H/2} (1 + H/2 + H^2/8).
  const Calibration cal1 = calibrate_threshold(1.0, 1e4, dim, opts);
  const double surv =
      std::exp(-cal1.threshold / 2.0) *
      (1.0 + cal1.threshold / 2.0 + cal1.threshold * cal1.threshold / 8.0);
  const double identity = surv * (1e4 - opts.warmup_steps + 1);
  const double mc_z = std::abs(cal1.estimated_arl - 1e4) / cal1.standard_error;

  const double el = seconds_since(t0);
  char buf[240];
  std::snprintf(buf, sizeof buf,
                "H=%.3f, independent ARL %.0f (%.1f%% off), lambda=1 identity %.2e, MC z %.2f, "
                "%.0fs",
                cal.threshold, est.mean, 100 * rel, std::abs(identity - 1.0), mc_z, el);
  msg = buf;
  return rel <= 0.10 && std::abs(identity - 1.0) < 1e-9 && mc_z < 3.0 && el < 300.0;
}

// ---------------------------------------------------------------------------
// 5. Power flow converges tightly; polar sums match complex arithmetic.
// ---------------------------------------------------------------------------
bool criterion_5(std::string& msg) {
  const NetworkCase net = case39();
  const AdmittanceMatrix y = build_admittance(net);
  const SteadyState ss = solve_power_flow(net, y);
  const Eigen::MatrixXcd yc = oracles::complex_ybus(net);
  double worst = 0.0;
  SequentialRng rng = SequentialRng::of(4242u);
  for (int inst = 0; inst < 1000; ++inst) {
    Eigen::VectorXd vm(net.size()), va(net.size());
    for (int i = 0; i < net.size(); ++i) {
      vm[i] = 0.9 + 0.2 * rng.uniform();
      va[i] = 0.6 * (rng.uniform() - 0.5);
    }
    const int bus = static_cast<int>(rng.bits() % net.size());
    const std::complex<double> s = oracles::complex_power(yc, vm, va, bus);
    const double p = net_active_power(vm, va, y, bus);
    worst = std::max(worst, std::abs(p - s.real()) / std::max(1.0, std::abs(s)));
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "mismatch %.2e p.u., worst relative power error %.2e",
                ss.max_mismatch, worst);
  msg = buf;
  return ss.max_mismatch < 1e-8 && worst < 1e-12;
}

// ---------------------------------------------------------------------------
// 6. Simulator holds equilibria and converges at first order to RK4.
// ---------------------------------------------------------------------------
bool criterion_6(std::string& msg) {
  // Noise-free, outage-free: the trajectory must stay at the solved state.
  SimulationOptions opts;
  opts.num_steps = 300;
  opts.process_noise_scale = 0.0;
  const Trajectory traj = simulate_scenario(case39(), opts);
  const double drift =
      std::max((traj.omega.array() - 1.0).abs().maxCoeff(),
               (traj.delta.rowwise() - traj.delta.row(0)).array().abs().maxCoeff());

  // Euler global error against an RK4 reference of the same DAE on a toy
  // network (algebraic solve embedded in the stage evaluations).
  const char* text = R"(
[base]
f0 = 60
[bus]
1 slack 0.0 0.0 1.00
2 pv    0.0 0.0 1.00
3 pq    0.8 0.2 -
[branch]
1 1 3 0.0 0.15 0.0 1
2 2 3 0.0 0.20 0.0 1
3 1 2 0.0 0.30 0.0 1
[gen]
1 10.0 2.0 0.5 0.20
2  8.0 2.0 0.4 0.25
)";
  const NetworkCase net = NetworkCase::parse(text, "toy3");
  const AdmittanceMatrix y_out = build_admittance(net, {3});
  SteadyState ss = solve_power_flow(net, build_admittance(net), {1e-12, 50});
  init_generator_emf(ss, net);
  const int m = net.num_generators();
  std::vector<double> pm(m);
  for (int g = 0; g < m; ++g) {
    const int i = net.bus_index(net.generators()[g].bus);
    pm[g] = generator_electrical_power(ss.emf[g], net.generators()[g].xd_prime, ss.rotor_angle[g],
                                       ss.v_mag[i], ss.v_ang[i]);
  }
  const PowerFlowOptions tight{1e-12, 60};
  Eigen::VectorXd warm_vm = ss.v_mag, warm_va = ss.v_ang;
  auto f = [&](double, const Eigen::VectorXd& x) {
    const Eigen::VectorXd delta = x.head(m);
    const AlgebraicSolution sol = solve_network_algebraic(
        net, y_out, delta, ss, LoadModel::kConstantImpedance, warm_vm, warm_va, tight);
    warm_vm = sol.v_mag;
    warm_va = sol.v_ang;
    Eigen::VectorXd dx(2 * m);
    for (int g = 0; g < m; ++g) {
      const Generator& gen = net.generators()[g];
      const int i = net.bus_index(gen.bus);
      const double pg = generator_electrical_power(ss.emf[g], gen.xd_prime, delta[g],
                                                   sol.v_mag[i], sol.v_ang[i]);
      dx[g] = net.omega_s() * (x[m + g] - 1.0);
      dx[m + g] = (pm[g] - pg - gen.damping_d * (x[m + g] - 1.0)) / gen.inertia_m;
    }
    return dx;
  };
  Eigen::VectorXd x0(2 * m);
  x0.head(m) = ss.rotor_angle;
  x0.tail(m) = Eigen::VectorXd::Ones(m);
  const double t_end = 0.5;
  const Eigen::VectorXd ref = oracles::rk4_integrate(f, x0, 0.0, t_end, 4096);
  auto euler_error = [&](int steps) {
    const double dt = t_end / steps;
    Eigen::VectorXd delta = ss.rotor_angle, omega = Eigen::VectorXd::Ones(m);
    Eigen::VectorXd vm = ss.v_mag, va = ss.v_ang;
    Eigen::VectorXd pg(m), eps = Eigen::VectorXd::Zero(m);
    auto update_pg = [&]() {
      for (int g = 0; g < m; ++g) {
        const Generator& gen = net.generators()[g];
        const int i = net.bus_index(gen.bus);
        pg[g] = generator_electrical_power(ss.emf[g], gen.xd_prime, delta[g], vm[i], va[i]);
      }
    };
    AlgebraicSolution sol = solve_network_algebraic(net, y_out, delta, ss,
                                                    LoadModel::kConstantImpedance, vm, va, tight);
    vm = sol.v_mag;
    va = sol.v_ang;
    update_pg();
    for (int k = 0; k < steps; ++k) {
      step_generator_states(net, pm, pg, eps, dt, delta, omega);
      sol = solve_network_algebraic(net, y_out, delta, ss, LoadModel::kConstantImpedance, vm, va,
                                    tight);
      vm = sol.v_mag;
      va = sol.v_ang;
      update_pg();
    }
    Eigen::VectorXd x(2 * m);
    x.head(m) = delta;
    x.tail(m) = omega;
    return (x - ref).cwiseAbs().maxCoeff();
  };
  const double e80 = euler_error(80);
  const double e640 = euler_error(640);
  const double slope = std::log(e80 / e640) / std::log(8.0);
  char buf[160];
  std::snprintf(buf, sizeof buf, "equilibrium drift %.2e, Euler error slope %.3f vs RK4", drift,
                slope);
  msg = buf;
  return drift < 1e-9 && slope > 0.9 && slope < 1.1;
}

// ---------------------------------------------------------------------------
// Shared sweep for criteria 7 and 8.
// ---------------------------------------------------------------------------
struct SweepResults {
  ExperimentResult sweep;
  ExperimentResult null_study;
};

const SweepResults& shared_sweep() {
  static std::unique_ptr<SweepResults> cache;
  if (!cache) {
    cache = std::make_unique<SweepResults>();
    ExperimentConfig cfg;
    cfg.case_path = case_path();
    cfg.all_lines = true;
    cfg.replications = 50;
    cfg.lambdas = {0.1, 0.5, 0.8};
    cfg.arl0 = 1e6;
    cfg.seed = 8;
    std::printf("  [running the 35-line x 50-rep sweep at three smoothing weights...]\n");
    std::fflush(stdout);
    cache->sweep = run_experiment(cfg);

    ExperimentConfig null_cfg = cfg;
    null_cfg.all_lines = false;
    null_cfg.null_runs = true;
    null_cfg.replications = 100;
    null_cfg.lambdas = {0.5};
    cache->null_study = run_experiment(null_cfg);
  }
  return *cache;
}

// ---------------------------------------------------------------------------
// 7. Qualitative study: strong lines fast, a near-zero-flow line weak,
//    null runs consistent with the configured in-control ARL.
// ---------------------------------------------------------------------------
bool criterion_7(std::string& msg) {
  const SweepResults& sr = shared_sweep();
  const ExperimentResult& res = sr.sweep;

  // Strong / weak line sets from the pre-outage flow magnitudes.
  const NetworkCase net = case39();
  const SteadyState ss = solve_power_flow(net, build_admittance(net));
  std::set<int> strong, weak;
  for (const BranchFlow& f : branch_flows(net, ss.v_mag, ss.v_ang)) {
    if (!network_connected(net, {f.branch_id})) continue;
    if (std::abs(f.p_from) >= 5.0) strong.insert(f.branch_id);
    if (std::abs(f.p_from) <= 0.5) weak.insert(f.branch_id);
  }

  int s_det = 0, s_miss = 0, failures = 0;
  double delay_sum = 0.0;
  for (const RunRecord& r : res.runs) {
    failures += r.status == "failed";
    if (r.lambda != 0.5 || strong.count(r.line_id) == 0) continue;
    if (r.status == "detected") {
      ++s_det;
      delay_sum += r.delay_s;
    } else if (r.status == "missed") {
      ++s_miss;
    }
  }
  const double mean_delay = s_det > 0 ? delay_sum / s_det : -1.0;

  int weak_under_half = 0;
  for (const SummaryRow& row : res.summary)
    if (row.scope == "line" && row.lambda == 0.5 && weak.count(row.line_id) &&
        row.detected + row.missed > 0 && row.rate < 0.5)
      ++weak_under_half;

  int false_alarms = 0;
  for (const RunRecord& r : sr.null_study.runs) false_alarms += r.status == "false_alarm";
  // Per-run alarm probability under the geometric run-length model: one
  // eligible chart step per sample from the warmup to the horizon.
  const int chart_steps = 240, warmup = 30;
  const double p0 = (chart_steps - warmup + 1) / 1e6;
  const double pval = oracles::binomial_two_sided_p(false_alarms, 100, p0);

  const double sweep_s = res.wall_seconds + sr.null_study.wall_seconds;
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "strong lines {10,35}: %d/%d detected at lambda .5, mean delay %.3fs; %d/%d "
                "near-zero-flow lines under 50%%; %d failures; null alarms %d/100 (p=%.2f); "
                "%.0fs",
                s_det, s_det + s_miss, mean_delay, weak_under_half, int(weak.size()), failures,
                false_alarms, pval, sweep_s);
  msg = buf;
  return s_det > 0 && mean_delay >= 0.0 && mean_delay <= 0.2 && weak_under_half >= 1 &&
         pval > 0.01 && sweep_s < 3600.0;
}

// ---------------------------------------------------------------------------
// 8. Larger smoothing weight -> weakly more zero-delay detections.
// ---------------------------------------------------------------------------
bool criterion_8(std::string& msg) {
  const ExperimentResult& res = shared_sweep().sweep;
  std::vector<double> lam_order = {0.1, 0.5, 0.8};
  std::vector<double> prop;
  for (double lam : lam_order)
    for (const SummaryRow& row : res.summary)
      if (row.scope == "lambda" && row.lambda == lam)
        prop.push_back(double(row.zero_delay) / row.runs);
  const bool shape_ok = prop.size() == 3;
  const bool monotone = shape_ok && prop[0] <= prop[1] && prop[1] <= prop[2];
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "zero-delay proportion by lambda: %.4f (0.1) <= %.4f (0.5) <= %.4f (0.8): %s",
                shape_ok ? prop[0] : -1.0, shape_ok ? prop[1] : -1.0, shape_ok ? prop[2] : -1.0,
                monotone ? "holds" : "violated");
  msg = buf;
  return monotone;
}

// ---------------------------------------------------------------------------
// 9. Every CLI entry point is byte-reproducible for a fixed seed.
// ---------------------------------------------------------------------------
std::string run_cli(const std::string& args, int& status) {
  const std::string cmd = std::string("'") + LINEWATCH_CLI_PATH + "' " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) {
    status = -1;
    return {};
  }
  std::string out;
  char buf[4096];
  std::size_t got;
  while ((got = fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, got);
  status = pclose(pipe);
  return out;
}

bool criterion_9(std::string& msg) {
  const std::string cp = case_path();
  const std::vector<std::string> invocations = {
      "case-info '" + cp + "'",
      "simulate --case '" + cp + "' --line 35 --seed 3 --dump-trajectory -",
      "detect --case '" + cp + "' --line 35 --seed 12 --threshold 25 --chart-csv - "
          "--dump-filter -",
      "calibrate --lambda 1.0 --arl0 2000 --dim 6",
      "experiment --case '" + cp + "' --lines 35 --reps 2 --lambdas 0.5 --arl0 300 --seed 7",
  };
  int repro = 0, ran = 0;
  std::string first_diff;
  for (const std::string& inv : invocations) {
    int st1 = 0, st2 = 0;
    const std::string a = run_cli(inv, st1);
    const std::string b = run_cli(inv, st2);
    ++ran;
    if (st1 == 0 && st2 == 0 && !a.empty() && a == b) {
      ++repro;
    } else if (first_diff.empty()) {
      first_diff = inv.substr(0, inv.find(' '));
    }
  }
  char buf[200];
  std::snprintf(buf, sizeof buf, "%d/%d subcommand invocations byte-identical across reruns%s%s",
                repro, ran, first_diff.empty() ? "" : "; first mismatch: ",
                first_diff.c_str());
  msg = buf;
  return repro == ran;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  const std::array<std::pair<const char*, bool (*)(std::string&)>, 9> criteria = {{
      {"filter posterior matches the Kalman oracle", criterion_1},
      {"posterior error follows the Monte Carlo rate", criterion_2},
      {"systematic resampling exact and unbiased", criterion_3},
      {"chart threshold calibration hits its target", criterion_4},
      {"power flow tight and oracle-consistent", criterion_5},
      {"simulator holds equilibria, first-order accurate", criterion_6},
      {"strong outages fast, weak lines missed, nulls quiet", criterion_7},
      {"zero-delay share rises with the smoothing weight", criterion_8},
      {"CLI byte-reproducible", criterion_9},
  }};

  int passed = 0, ran = 0;
  for (int i = 0; i < 9; ++i) {
    if (!wanted.empty() && !wanted.count(i + 1)) continue;
    ++ran;
    std::string msg;
    bool ok = false;
    const auto t0 = Clock::now();
    try {
      ok = criteria[i].second(msg);
    } catch (const std::exception& e) {
      msg = std::string("exception: ") + e.what();
    }
    passed += ok;
    std::printf("criterion %d: %s  %s (%s) [%.1fs]\n", i + 1, ok ? "PASS" : "FAIL",
                criteria[i].first, msg.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("acceptance: %d/%d PASS\n", passed, ran);
  return passed == ran ? 0 : 1;
}
