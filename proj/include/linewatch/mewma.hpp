#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "linewatch/network.hpp"

// Multivariate EWMA control chart on output residuals: recursion
// Z_k = lam r_k + (1-lam) Z_{k-1}, statistic T^2 = Z' Sigma_Z^{-1} Z with the
// diagonal covariance Sigma_Z = (lam/(2-lam)) (1-(1-lam)^{2k}) sigma^2 I, and
// the stopping rule D = inf{k : T^2_k >= H} with a Monte Carlo calibrated H.
namespace linewatch {

struct MewmaState {
  Eigen::VectorXd z;   // EWMA of residual vectors
  double lambda = 0.5;
  int k = 0;           // updates applied; statistic defined for k >= 1
};

MewmaState mewma_init(int dim, double lambda);

// Z_k = lam r + (1-lam) Z_{k-1}; increments k.
void mewma_update(MewmaState& st, const Eigen::VectorXd& r);

// T^2 with per-channel sigma as a diagonal covariance. Throws for k = 0
// (covariance singular before the first update) or nonpositive sigma.
double t2_statistic(const MewmaState& st, const Eigen::VectorXd& sigma);

// Residual between the filter's generation-change estimate and the measured
// output change; load-bus entries of dpg_hat are zero by construction, so
// those channels reduce to -y.
Eigen::VectorXd residual(const Eigen::VectorXd& dpg_hat, const Eigen::VectorXd& y);

struct CalibrationOptions {
  // Streams for a full-fidelity ARL evaluation. Bisection probes far from the
  // target resolve their comparison direction early with fewer streams;
  // converged evaluations always use at least this many.
  int num_streams = 10000;
  double rel_tol = 0.05;      // accepted |ARL - target| / target
  double mc_max_target = 1e4; // larger targets use the extrapolation ladder
  int warmup_steps = 30;      // crossings ignored before this chart step
  int max_iterations = 60;    // bisection rounds before giving up
  std::uint64_t seed = 0;
};

struct Calibration {
  double threshold = 0.0;     // H
  double estimated_arl = 0.0; // Monte Carlo estimate at H (top rung when extrapolated)
  double standard_error = 0.0;
  bool extrapolated = false;  // true when target exceeded mc_max_target
  double lambda = 0.0;
  double target_arl = 0.0;
  int dim = 0;
};

// Monte Carlo mean run length of the chart at threshold h under i.i.d.
// N(0, I) residuals (per-channel sigma cancels in T^2, so unit scale is
// general). Run length = first chart step at/after warmup_steps with
// T^2 >= h, capped at 50x target for the stopping estimate.
struct ArlEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
  int streams = 0;
};
ArlEstimate estimate_arl(double h, double lambda, int dim, const CalibrationOptions& opts,
                         std::uint64_t substream, double decide_vs = -1.0);

// Bisection on H until the estimated ARL0 matches the target within rel_tol.
// Targets above mc_max_target are served by fitting H against log(ARL0) on a
// Monte Carlo ladder and extrapolating (documented in the implementation);
// lambda = 1 short-circuits to the exact chi-squared closed form.
Calibration calibrate_threshold(double lambda, double target_arl0, int dim,
                                const CalibrationOptions& opts = {});

struct DetectOptions {
  double lambda = 0.5;
  double threshold = 0.0;  // H; must be positive
  int warmup_steps = 30;   // first chart step eligible to alarm
  int onset_step = -1;     // chart step of the first outage-affected residual
  double dt = 1.0 / 30.0;  // seconds per chart step, for delay reporting
};

// Per-channel source traces feeding the chart, for the three-panel
// diagnostic decomposition: the filter's generation-change estimate on
// generator channels, the measured change on generator channels, and the
// measured change on load channels. Residual reconstruction:
//   generator channel c: r = dpg_hat - y ; load channel c: r = -y.
struct ResidualStream {
  Eigen::MatrixXd residuals;        // steps x channels, chart step s = row s-1
  Eigen::MatrixXd dpg_hat;          // steps x channels (zero on load channels)
  Eigen::MatrixXd y;                // steps x channels, measured output change
  std::vector<int> channel_machine; // generator position per channel, -1 = load
};

struct DetectionRecord {
  Eigen::VectorXd t2;        // chart statistic, entry s-1 for chart step s
  int alarm_step = -1;       // first eligible chart step with T^2 >= H; -1 missed
  bool missed = true;
  double delay_s = -1.0;     // (alarm - onset) * dt when both known
  double threshold = 0.0;
  double lambda = 0.0;
  // Group magnitude traces (L2 norm per chart step) for the CSV export.
  Eigen::VectorXd group_gen, group_genbus, group_load;
};

DetectionRecord detect(const ResidualStream& stream, const Eigen::VectorXd& sigma,
                       const DetectOptions& opts);

}  // namespace linewatch
