#include "linewatch/particle_filter.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "linewatch/measurement.hpp"
#include "linewatch/simulator.hpp"
#include "oracles.hpp"
#include "toy_ssm.hpp"

using namespace linewatch;

namespace {

NetworkCase case39() {
  static NetworkCase net = NetworkCase::parse_file(std::string(LINEWATCH_DATA_DIR) + "/case39");
  return net;
}

}  // namespace

TEST_CASE("particle set construction and effective sample size") {
  ParticleSet ps = make_particle_set(4, 2);
  CHECK(ps.size() == 4);
  CHECK(ps.dim() == 2);
  CHECK(ps.w.sum() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(ess(ps.w) == doctest::Approx(4.0).epsilon(1e-12));

  Eigen::VectorXd half(2), point(4);
  half << 0.5, 0.5;
  point << 1.0, 0.0, 0.0, 0.0;
  CHECK(ess(half) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(ess(point) == doctest::Approx(1.0).epsilon(1e-14));

  Eigen::VectorXd raw(2);
  raw << 2.0, 2.0;
  normalize_weights(raw);
  CHECK(raw(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(std::abs(raw.sum() - 1.0) < 1e-12);

  Eigen::VectorXd bad(2);
  bad << -1.0, 2.0;
  CHECK_THROWS_AS(normalize_weights(bad), Error);
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(normalize_weights(zero), Error);
  CHECK_THROWS_AS(make_particle_set(0, 1), Error);
}

TEST_CASE("weight correction follows the likelihood in log space") {
  // Uniform prior, likelihood ratio 3:1.
  ParticleSet ps = make_particle_set(2, 1);
  Eigen::VectorXd ll(2);
  ll << 0.0, std::log(3.0);
  CHECK_FALSE(correct_log_weights(ps, ll));
  CHECK(ps.w(0) == doctest::Approx(0.25).epsilon(1e-13));
  CHECK(ps.w(1) == doctest::Approx(0.75).epsilon(1e-13));
  CHECK(std::abs(ps.w.sum() - 1.0) < 1e-12);

  // Identical particles keep uniform weights.
  ParticleSet same = make_particle_set(5, 1);
  CHECK_FALSE(correct_log_weights(same, Eigen::VectorXd::Constant(5, -7.3)));
  for (int i = 0; i < 5; ++i) CHECK(same.w(i) == doctest::Approx(0.2).epsilon(1e-13));

  // One particle matching the observation under a tiny sigma takes all mass.
  ParticleSet match = make_particle_set(2, 1);
  Eigen::VectorXd dominant(2);
  dominant << 0.0, -5000.0;
  CHECK_FALSE(correct_log_weights(match, dominant));
  CHECK(match.w(0) == doctest::Approx(1.0).epsilon(1e-13));

  // Prior weights multiply in.
  ParticleSet prior = make_particle_set(2, 1);
  prior.w << 0.8, 0.2;
  CHECK_FALSE(correct_log_weights(prior, Eigen::VectorXd::Zero(2)));
  CHECK(prior.w(0) == doctest::Approx(0.8).epsilon(1e-13));

  // Total collapse resets to uniform and reports degeneracy.
  ParticleSet dead = make_particle_set(3, 1);
  const double ninf = -std::numeric_limits<double>::infinity();
  CHECK(correct_log_weights(dead, Eigen::VectorXd::Constant(3, ninf)));
  CHECK(dead.w(1) == doctest::Approx(1.0 / 3.0).epsilon(1e-13));
}

TEST_CASE("systematic offspring counts match the deterministic example") {
  Eigen::VectorXd w(3);
  w << 0.5, 0.3, 0.2;
  const RngStream rng = RngStream::of(99, 17);
  for (int draw = 0; draw < 100; ++draw) {
    const double u1 = rng.uniform(draw) / 10.0;  // (0, 0.1]
    const std::vector<int> counts = systematic_offspring(w, u1, 10);
    REQUIRE(counts.size() == 3);
    CHECK(counts[0] == 5);
    CHECK(counts[1] == 3);
    CHECK(counts[2] == 2);
  }

  CHECK_THROWS_AS(systematic_offspring(w, 0.0, 10), Error);
  CHECK_THROWS_AS(systematic_offspring(w, 0.2, 10), Error);
  Eigen::VectorXd unnorm(2);
  unnorm << 0.5, 0.6;
  CHECK_THROWS_AS(systematic_offspring(unnorm, 0.05, 10), Error);
}

TEST_CASE("systematic resampling is unbiased and near-deterministic") {
  // Non-lattice weights: n * w_i is fractional, so counts genuinely vary
  // with the stratum offset and the unbiasedness check has teeth.
  Eigen::VectorXd w(4);
  w << 0.37, 0.24, 0.21, 0.18;
  const int n = 7;
  const int trials = 10000;
  const RngStream rng = RngStream::of(4, 18);
  Eigen::Vector4d sum = Eigen::Vector4d::Zero();
  Eigen::Vector4d sumsq = Eigen::Vector4d::Zero();
  for (int t = 0; t < trials; ++t) {
    const double u1 = rng.uniform(t) / n;
    const std::vector<int> counts = systematic_offspring(w, u1, n);
    int total = 0;
    for (int i = 0; i < 4; ++i) {
      total += counts[i];
      // Systematic property: counts never stray more than one from n w_i.
      CHECK(std::abs(counts[i] - n * w(i)) < 1.0);
      sum(i) += counts[i];
      sumsq(i) += static_cast<double>(counts[i]) * counts[i];
    }
    CHECK(total == n);
  }
  for (int i = 0; i < 4; ++i) {
    const double mean = sum(i) / trials;
    const double var = sumsq(i) / trials - mean * mean;
    const double se = std::sqrt(var / trials);
    CHECK(std::abs(mean - n * w(i)) < 3.0 * se + 1e-12);
  }
}

TEST_CASE("systematic resample rebuilds the particle set in place") {
  ParticleSet ps = make_particle_set(10, 1);
  for (int i = 0; i < 10; ++i) ps.x(i, 0) = static_cast<double>(i);
  ps.w.setZero();
  ps.w(0) = 0.5;
  ps.w(1) = 0.3;
  ps.w(2) = 0.2;
  systematic_resample(ps, RngStream::of(21, 5), 0);
  // Offspring (5, 3, 2) copied in stable order.
  for (int i = 0; i < 5; ++i) CHECK(ps.x(i, 0) == 0.0);
  for (int i = 5; i < 8; ++i) CHECK(ps.x(i, 0) == 1.0);
  for (int i = 8; i < 10; ++i) CHECK(ps.x(i, 0) == 2.0);
  CHECK(ess(ps.w) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(std::abs(ps.w.sum() - 1.0) < 1e-12);
}

TEST_CASE("toy filter matches the Kalman oracle at ten thousand particles") {
  const toy::ToySsm ssm;
  const std::vector<double> ys = toy::simulate_outputs(ssm, 100, 2024);
  const oracles::KalmanResult kf = toy::kalman_reference(ssm, ys);
  const toy::ToyPfRun pf = toy::run_particle_filter(ssm, ys, 10000, 56);
  REQUIRE(pf.mean.size() == kf.mean.size());
  double worst = 0.0;
  for (std::size_t t = 0; t < ys.size(); ++t) {
    for (int j = 0; j < 2; ++j) {
      const double tol = 3.0 * std::sqrt(kf.cov[t](j, j) / 10000.0);
      const double err = std::abs(pf.mean[t](j) - kf.mean[t](j));
      worst = std::max(worst, err / tol);
      CHECK(err < tol);
    }
  }
  // The filter resamples sometimes, but not every step, on this mild problem.
  CHECK(pf.resamples > 0);
  CHECK(pf.resamples < 100);
  MESSAGE("worst standardized deviation (fraction of bound): ", worst);
}

TEST_CASE("Monte Carlo error decays at the square-root rate") {
  const toy::ToySsm ssm;
  const std::vector<double> ys = toy::simulate_outputs(ssm, 100, 515);
  const oracles::KalmanResult kf = toy::kalman_reference(ssm, ys);
  const std::vector<int> sizes = {100, 1000, 10000};
  const int reps = 40;
  std::vector<double> log_err;
  for (int n : sizes) {
    double mse = 0.0;
    int count = 0;
    for (int rep = 0; rep < reps; ++rep) {
      const toy::ToyPfRun pf = toy::run_particle_filter(ssm, ys, n, 1000 + rep);
      for (std::size_t t = 10; t < ys.size(); ++t) {
        const double e = pf.mean[t](0) - kf.mean[t](0);
        mse += e * e;
        ++count;
      }
    }
    log_err.push_back(0.5 * std::log(mse / count));
  }
  // Least-squares slope of log error against log n.
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const double x = std::log(static_cast<double>(sizes[i]));
    sx += x;
    sy += log_err[i];
    sxx += x * x;
    sxy += x * log_err[i];
  }
  const double m = static_cast<double>(sizes.size());
  const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  MESSAGE("Monte Carlo log-log slope: ", slope);
  CHECK(slope < -0.35);
  CHECK(slope > -0.65);
}

TEST_CASE("tracker reproduces a noise-free trajectory to float accuracy") {
  const NetworkCase net = case39();
  SimulationOptions sim;
  sim.num_steps = 120;
  sim.process_noise_scale = 0.0;
  const Trajectory traj = simulate_scenario(net, sim);

  MeasurementOptions mo;
  mo.noise_model = NoiseModel::kDirectOutput;
  mo.output_noise_frac = 0.0;
  mo.output_noise_floor = 0.0;
  const MeasurementSet ms = synthesize_measurements(net, traj, mo);

  TrackerOptions topt;
  topt.num_particles = 10;
  topt.init_delta_std = 0.0;
  topt.init_omega_std = 0.0;
  topt.process_noise_scale = 0.0;
  topt.omega_jitter = 0.0;
  GeneratorTracker tracker(net, traj.initial, LoadModel::kConstantImpedance, sim.dt, topt);
  tracker.init(ms.v_mag.row(0).transpose(), ms.v_ang.row(0).transpose());

  const std::vector<int>& machines = tracker.tracked_machines();
  REQUIRE(machines.size() == 5);
  const Eigen::VectorXd sigma = Eigen::VectorXd::Constant(ms.num_channels(), 1e-3);
  for (int k = 1; k <= ms.steps(); ++k) {
    const FilterStepResult r = tracker.step(ms.v_mag.row(k).transpose(),
                                            ms.v_ang.row(k).transpose(),
                                            ms.output.row(k).transpose(), sigma);
    CHECK(r.ess == doctest::Approx(10.0).epsilon(1e-12));
    CHECK_FALSE(r.degenerate);
    for (std::size_t j = 0; j < machines.size(); ++j) {
      CHECK(std::abs(r.delta_mean(j) - traj.delta(k, machines[j])) < 1e-9);
      CHECK(std::abs(r.omega_mean(j) - traj.omega(k, machines[j])) < 1e-12);
      CHECK(std::abs(r.pg_mean(j) - traj.pg(k, machines[j])) < 1e-9);
    }
    // With exact tracking the predicted change matches the measured one.
    for (int c = 0; c < ms.num_channels(); ++c) {
      if (tracker.channel_machine()[c] < 0) continue;
      CHECK(std::abs(r.dpg(c) - ms.output(k, c)) < 1e-9);
    }
  }
}

TEST_CASE("tracker follows the swing states through noise and an outage") {
  const NetworkCase net = case39();
  SimulationOptions sim;
  sim.num_steps = 300;
  sim.process_noise_scale = 1e-4;
  sim.outage_ids = {35};
  sim.onset_step = 90;
  sim.seed = 12;
  const Trajectory traj = simulate_scenario(net, sim);

  MeasurementOptions mo;
  mo.seed = 12;
  const MeasurementSet ms = synthesize_measurements(net, traj, mo);

  TrackerOptions topt;
  topt.seed = 5;
  GeneratorTracker tracker(net, traj.initial, LoadModel::kConstantImpedance, sim.dt, topt);
  tracker.init(ms.v_mag.row(0).transpose(), ms.v_ang.row(0).transpose());
  const std::vector<int>& machines = tracker.tracked_machines();

  // Likelihood scale per channel from the warm-up spread of the output.
  Eigen::VectorXd sigma(ms.num_channels());
  for (int c = 0; c < ms.num_channels(); ++c) {
    double mean = 0.0, var = 0.0;
    for (int k = 1; k <= 60; ++k) mean += ms.output(k, c);
    mean /= 60.0;
    for (int k = 1; k <= 60; ++k) {
      const double d = ms.output(k, c) - mean;
      var += d * d;
    }
    sigma(c) = std::sqrt(var / 59.0);
  }

  double omega_sq = 0.0;
  int omega_n = 0;
  int resamples = 0;
  std::vector<double> est, truth;
  for (int k = 1; k <= ms.steps(); ++k) {
    const FilterStepResult r = tracker.step(ms.v_mag.row(k).transpose(),
                                            ms.v_ang.row(k).transpose(),
                                            ms.output.row(k).transpose(), sigma);
    CHECK(r.ess >= 1.0);
    CHECK(r.ess <= topt.num_particles);
    CHECK_FALSE(r.degenerate);
    if (r.resampled) ++resamples;
    for (std::size_t j = 0; j < machines.size(); ++j) {
      const double e = r.omega_mean(j) - traj.omega(k, machines[j]);
      omega_sq += e * e;
      ++omega_n;
    }
    if (k > traj.onset_step) {
      for (int c = 0; c < ms.num_channels(); ++c) {
        const int pos = tracker.channel_machine()[c];
        if (pos < 0) continue;
        est.push_back(r.dpg(c));
        truth.push_back(traj.pg(k, pos) - traj.pg(k - 1, pos));
      }
    }
  }
  const double omega_rmse = std::sqrt(omega_sq / omega_n);
  MESSAGE("omega RMSE: ", omega_rmse, ", resamples: ", resamples);
  CHECK(omega_rmse < 5e-4);
  CHECK(resamples > 0);

  // Estimated generation changes track the true ones after the outage.
  double me = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    me += est[i];
    mt += truth[i];
  }
  me /= est.size();
  mt /= truth.size();
  double cee = 0.0, cet = 0.0, ctt = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    cee += (est[i] - me) * (est[i] - me);
    cet += (est[i] - me) * (truth[i] - mt);
    ctt += (truth[i] - mt) * (truth[i] - mt);
  }
  const double corr = cet / std::sqrt(cee * ctt);
  MESSAGE("post-onset generation-change correlation: ", corr);
  CHECK(corr > 0.9);
}

TEST_CASE("tracker validates its configuration and inputs") {
  const NetworkCase net = case39();
  SimulationOptions sim;
  sim.num_steps = 2;
  sim.process_noise_scale = 0.0;
  const Trajectory traj = simulate_scenario(net, sim);

  TrackerOptions topt;
  topt.num_particles = 8;
  GeneratorTracker tracker(net, traj.initial, LoadModel::kConstantImpedance, sim.dt, topt);

  const int num_pmu = static_cast<int>(net.pmu_buses().size());
  const Eigen::VectorXd vm = Eigen::VectorXd::Ones(num_pmu);
  const Eigen::VectorXd va = Eigen::VectorXd::Zero(num_pmu);
  const Eigen::VectorXd y = Eigen::VectorXd::Zero(6);
  const Eigen::VectorXd sigma = Eigen::VectorXd::Constant(6, 0.01);

  CHECK_THROWS_AS(tracker.step(vm, va, y, sigma), Error);  // before init
  tracker.init(vm, va);
  CHECK_THROWS_AS(tracker.step(Eigen::VectorXd::Ones(3), va, y, sigma), Error);
  CHECK_THROWS_AS(tracker.step(vm, va, Eigen::VectorXd::Zero(2), sigma), Error);
  Eigen::VectorXd bad_sigma = sigma;
  bad_sigma(1) = 0.0;  // channel 1 is the first generator channel
  CHECK_THROWS_AS(tracker.step(vm, va, y, bad_sigma), Error);
  CHECK_THROWS_AS(tracker.init(Eigen::VectorXd::Ones(2), va), Error);

  TrackerOptions bad = topt;
  bad.num_particles = 1;
  CHECK_THROWS_AS(GeneratorTracker(net, traj.initial, LoadModel::kConstantImpedance, sim.dt, bad),
                  Error);

  // A placement that observes no generator terminal cannot be tracked.
  const char* text = R"(
[base]
f0 = 60
[bus]
1 slack 0.0 0.0 1.0
2 pq    0.3 0.1 -
3 pq    0.2 0.0 -
[branch]
1 1 2 0.01 0.1 0.0 1
2 2 3 0.01 0.1 0.0 1
[gen]
1 10.0 2.0 0.5 0.2
[pmu]
2 3
)";
  const NetworkCase chain = NetworkCase::parse(text, "chain");
  const AdmittanceMatrix y39 = build_admittance(chain);
  const SteadyState ss = [&] {
    SteadyState s = solve_power_flow(chain, y39);
    init_generator_emf(s, chain);
    return s;
  }();
  CHECK_THROWS_AS(GeneratorTracker(chain, ss, LoadModel::kConstantImpedance, 1.0 / 30.0, topt),
                  Error);
}
