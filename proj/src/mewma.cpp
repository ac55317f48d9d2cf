#include "linewatch/mewma.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "linewatch/rng.hpp"

namespace linewatch {

MewmaState mewma_init(int dim, double lambda) {
  if (dim < 1) throw Error("mewma: dimension must be at least 1");
  if (lambda < 0.0 || lambda > 1.0) throw Error("mewma: lambda must lie in [0, 1]");
  MewmaState st;
  st.z = Eigen::VectorXd::Zero(dim);
  st.lambda = lambda;
  st.k = 0;
  return st;
}

void mewma_update(MewmaState& st, const Eigen::VectorXd& r) {
  if (r.size() != st.z.size()) throw Error("mewma: residual dimension mismatch");
  st.z = st.lambda * r + (1.0 - st.lambda) * st.z;
  ++st.k;
}

namespace {

// Variance factor c_k = (lam/(2-lam)) (1-(1-lam)^{2k}) of the EWMA of a unit
// white sequence after k updates.
double variance_factor(double lambda, int k) {
  const double decay = std::pow(1.0 - lambda, 2 * k);
  return lambda / (2.0 - lambda) * (1.0 - decay);
}

}  // namespace

double t2_statistic(const MewmaState& st, const Eigen::VectorXd& sigma) {
  if (st.k < 1) throw Error("mewma: statistic undefined before the first update");
  if (sigma.size() != st.z.size()) throw Error("mewma: sigma dimension mismatch");
  if ((sigma.array() <= 0.0).any()) throw Error("mewma: sigma entries must be positive");
  if (st.lambda <= 0.0) throw Error("mewma: statistic requires lambda > 0");
  const double ck = variance_factor(st.lambda, st.k);
  return (st.z.array() / sigma.array()).square().sum() / ck;
}

Eigen::VectorXd residual(const Eigen::VectorXd& dpg_hat, const Eigen::VectorXd& y) {
  if (dpg_hat.size() != y.size()) throw Error("residual: dimension mismatch");
  return dpg_hat - y;
}

ArlEstimate estimate_arl(double h, double lambda, int dim, const CalibrationOptions& opts,
                         std::uint64_t substream, double decide_vs) {
  if (h <= 0.0) throw Error("estimate_arl: threshold must be positive");
  if (dim < 1) throw Error("estimate_arl: dimension must be at least 1");
  if (lambda <= 0.0 || lambda > 1.0) throw Error("estimate_arl: lambda must lie in (0, 1]");

  const double cap = decide_vs > 0.0 ? 50.0 * decide_vs : 5e6;
  const double one_minus = 1.0 - lambda;
  const double cinf = lambda / (2.0 - lambda);
  std::vector<double> z(static_cast<std::size_t>(dim));

  double sum = 0.0, sum_sq = 0.0;
  int done = 0;
  const int batch = 500;
  while (done < opts.num_streams) {
    const int n_this = std::min(batch, opts.num_streams - done);
    for (int s = 0; s < n_this; ++s) {
      const RngStream rng =
          RngStream::of(opts.seed, streams::kCalibration, substream,
                        static_cast<std::uint64_t>(done + s));
      std::fill(z.begin(), z.end(), 0.0);
      double decay = 1.0;  // (1-lam)^{2k}, updated incrementally
      double rl = cap;
      for (int k = 1; k <= static_cast<int>(cap); ++k) {
        double q = 0.0;
        const std::uint64_t base = static_cast<std::uint64_t>(k - 1) * dim;
        for (int c = 0; c < dim; ++c) {
          z[c] = lambda * rng.normal(base + c) + one_minus * z[c];
          q += z[c] * z[c];
        }
        decay *= one_minus * one_minus;
        if (k < opts.warmup_steps) continue;
        if (q / (cinf * (1.0 - decay)) >= h) {
          rl = k;
          break;
        }
      }
      sum += rl;
      sum_sq += rl * rl;
    }
    done += n_this;
    // A probe far from the comparison target resolves its direction early.
    if (decide_vs > 0.0 && done >= 1000) {
      const double mean = sum / done;
      const double var = std::max(0.0, sum_sq / done - mean * mean);
      const double se = std::sqrt(var / done);
      if (std::abs(mean - decide_vs) > 4.0 * se) break;
    }
  }
  ArlEstimate est;
  est.streams = done;
  est.mean = sum / done;
  const double var = std::max(0.0, sum_sq / done - est.mean * est.mean);
  est.standard_error = std::sqrt(var / done);
  return est;
}

namespace {

double chi2_quantile(int dim, double p) {
  return boost::math::quantile(boost::math::chi_squared(static_cast<double>(dim)), p);
}

Calibration calibrate_direct(double lambda, double target, int dim,
                             const CalibrationOptions& opts) {
  Calibration cal;
  cal.lambda = lambda;
  cal.target_arl = target;
  cal.dim = dim;

  if (lambda == 1.0) {
    // Memoryless chart: run length past the warm-up is geometric with
    // p = P(chi^2_dim >= H), so E[RL] = warmup - 1 + 1/p has a closed form.
    const double effective = std::max(2.0, target - opts.warmup_steps + 1);
    cal.threshold = chi2_quantile(dim, 1.0 - 1.0 / effective);
    cal.estimated_arl = target;
    if (target <= opts.mc_max_target) {
      const ArlEstimate est = estimate_arl(cal.threshold, lambda, dim, opts, 9000);
      cal.estimated_arl = est.mean;
      cal.standard_error = est.standard_error;
    }
    return cal;
  }

  // The iid chi-squared quantile overshoots the target ARL for lambda < 1
  // (consecutive T^2 values are positively dependent, clumping exceedances),
  // so it brackets from above; a far smaller quantile brackets from below.
  double hi = chi2_quantile(dim, 1.0 - 1.0 / target);
  double lo = chi2_quantile(dim, 1.0 - 1.0 / std::max(10.0, target / 100.0));
  std::uint64_t probe = 0;
  for (int guard = 0; guard < 8; ++guard) {
    const ArlEstimate est = estimate_arl(lo, lambda, dim, opts, probe++, target);
    if (est.mean < target) break;
    lo = std::max(1e-3, lo - 0.3 * (hi - lo));
  }
  for (int guard = 0; guard < 8; ++guard) {
    const ArlEstimate est = estimate_arl(hi, lambda, dim, opts, probe++, target);
    if (est.mean > target) break;
    hi += 0.5 * (hi - lo);
  }

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const ArlEstimate est = estimate_arl(mid, lambda, dim, opts, probe++, target);
    if (est.streams >= opts.num_streams &&
        std::abs(est.mean - target) <= opts.rel_tol * target) {
      cal.threshold = mid;
      cal.estimated_arl = est.mean;
      cal.standard_error = est.standard_error;
      return cal;
    }
    (est.mean < target ? lo : hi) = mid;
    if (hi - lo < 1e-9)
      throw Error("calibrate_threshold: bracket collapsed before matching the target ARL");
  }
  throw Error("calibrate_threshold: bisection did not converge within the iteration budget");
}

}  // namespace

Calibration calibrate_threshold(double lambda, double target_arl0, int dim,
                                const CalibrationOptions& opts) {
  if (target_arl0 < 10.0) throw Error("calibrate_threshold: target ARL0 must be at least 10");
  if (dim < 1) throw Error("calibrate_threshold: dimension must be at least 1");
  if (lambda <= 0.0 || lambda > 1.0)
    throw Error("calibrate_threshold: lambda must lie in (0, 1]");
  if (opts.num_streams < 10000)
    throw Error("calibrate_threshold: ARL evaluations need at least 10^4 streams");

  if (lambda == 1.0 || target_arl0 <= opts.mc_max_target)
    return calibrate_direct(lambda, target_arl0, dim, opts);

  // Beyond the direct Monte Carlo budget, H grows linearly in log(ARL0) to
  // good approximation (chi-squared tails are exponential); fit the line on
  // a ladder of directly calibrated targets and extrapolate. The quantile
  // growth is mildly concave in log(ARL0), so the linear fit lands slightly
  // above the true threshold, erring on the quiet side of the target.
  std::vector<double> rungs;
  for (double f : {30.0, 10.0, 3.0, 1.0}) {
    const double t = opts.mc_max_target / f;
    if (t >= 100.0) rungs.push_back(t);
  }
  if (rungs.size() < 2)
    throw Error("calibrate_threshold: mc_max_target leaves no extrapolation ladder");

  // Fit against the effective run length past the warm-up, which is the
  // memoryless part that actually scales with the threshold.
  CalibrationOptions rung_opts = opts;
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  Calibration top;
  for (std::size_t i = 0; i < rungs.size(); ++i) {
    rung_opts.seed = opts.seed + 101 * (i + 1);
    top = calibrate_direct(lambda, rungs[i], dim, rung_opts);
    const double x = std::log(rungs[i] - opts.warmup_steps + 1);
    sx += x;
    sy += top.threshold;
    sxx += x * x;
    sxy += x * top.threshold;
  }
  const double n = static_cast<double>(rungs.size());
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double intercept = (sy - slope * sx) / n;
  if (slope <= 0.0)
    throw Error("calibrate_threshold: ladder fit lost threshold monotonicity");

  Calibration cal;
  cal.lambda = lambda;
  cal.target_arl = target_arl0;
  cal.dim = dim;
  cal.threshold = intercept + slope * std::log(target_arl0 - opts.warmup_steps + 1);
  cal.estimated_arl = top.estimated_arl;
  cal.standard_error = top.standard_error;
  cal.extrapolated = true;
  return cal;
}

DetectionRecord detect(const ResidualStream& stream, const Eigen::VectorXd& sigma,
                       const DetectOptions& opts) {
  const int steps = static_cast<int>(stream.residuals.rows());
  const int dim = static_cast<int>(stream.residuals.cols());
  if (steps < 1) throw Error("detect: residual stream is empty");
  if (sigma.size() != dim) throw Error("detect: sigma dimension mismatch");
  if (opts.threshold <= 0.0) throw Error("detect: threshold must be positive");
  if (opts.warmup_steps < 1) throw Error("detect: warmup_steps must be at least 1");
  const bool have_groups = stream.dpg_hat.rows() == steps && stream.y.rows() == steps &&
                           static_cast<int>(stream.channel_machine.size()) == dim;

  DetectionRecord rec;
  rec.threshold = opts.threshold;
  rec.lambda = opts.lambda;
  rec.t2.resize(steps);
  rec.group_gen = Eigen::VectorXd::Zero(steps);
  rec.group_genbus = Eigen::VectorXd::Zero(steps);
  rec.group_load = Eigen::VectorXd::Zero(steps);

  MewmaState st = mewma_init(dim, opts.lambda);
  for (int s = 1; s <= steps; ++s) {
    mewma_update(st, stream.residuals.row(s - 1).transpose());
    rec.t2[s - 1] = t2_statistic(st, sigma);
    if (have_groups) {
      double gg = 0.0, gb = 0.0, gl = 0.0;
      for (int c = 0; c < dim; ++c) {
        if (stream.channel_machine[c] >= 0) {
          gg += stream.dpg_hat(s - 1, c) * stream.dpg_hat(s - 1, c);
          gb += stream.y(s - 1, c) * stream.y(s - 1, c);
        } else {
          gl += stream.y(s - 1, c) * stream.y(s - 1, c);
        }
      }
      rec.group_gen[s - 1] = std::sqrt(gg);
      rec.group_genbus[s - 1] = std::sqrt(gb);
      rec.group_load[s - 1] = std::sqrt(gl);
    }
    if (rec.alarm_step < 0 && s >= opts.warmup_steps && rec.t2[s - 1] >= opts.threshold)
      rec.alarm_step = s;
  }
  rec.missed = rec.alarm_step < 0;
  if (!rec.missed && opts.onset_step >= 1)
    rec.delay_s = (rec.alarm_step - opts.onset_step) * opts.dt;
  return rec;
}

}  // namespace linewatch
