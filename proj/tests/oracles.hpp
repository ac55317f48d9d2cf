#pragma once

// Independent reference implementations used only by tests. Each oracle
// recomputes a quantity along a different route than the library code it
// checks (complex arithmetic instead of polar sums, bisection instead of
// Newton, RK4 instead of Euler, a Kalman filter instead of particles), so
// agreement is meaningful evidence rather than a tautology.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <stdexcept>
#include <vector>

#include "linewatch/network.hpp"

namespace oracles {

// ---------------------------------------------------------------------------
// Complex-arithmetic admittance assembly straight from the branch list.
inline Eigen::MatrixXcd complex_ybus(const linewatch::NetworkCase& net,
                                     const std::vector<int>& outage_ids = {}) {
  const int n = net.size();
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  for (const auto& br : net.branches()) {
    if (!br.in_service) continue;
    if (std::find(outage_ids.begin(), outage_ids.end(), br.id) != outage_ids.end()) continue;
    const std::complex<double> ys = 1.0 / std::complex<double>(br.r, br.x);
    const std::complex<double> ysh(0.0, br.b_shunt / 2.0);
    const int a = net.bus_index(br.from);
    const int b = net.bus_index(br.to);
    y(a, a) += ys + ysh;
    y(b, b) += ys + ysh;
    y(a, b) -= ys;
    y(b, a) -= ys;
  }
  return y;
}

// Complex nodal power S_i = V_i * conj(sum_j Y_ij V_j).
inline std::complex<double> complex_power(const Eigen::MatrixXcd& y, const Eigen::VectorXd& v_mag,
                                          const Eigen::VectorXd& v_ang, int i) {
  std::complex<double> acc(0.0, 0.0);
  for (int j = 0; j < y.cols(); ++j) acc += y(i, j) * std::polar(v_mag[j], v_ang[j]);
  return std::polar(v_mag[i], v_ang[i]) * std::conj(acc);
}

// ---------------------------------------------------------------------------
// Scalar bisection. Assumes f is continuous with a sign change on [lo, hi].
inline double bisect(const std::function<double(double)>& f, double lo, double hi,
                     double tol = 1e-13, int max_iter = 200) {
  double flo = f(lo);
  double fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if ((flo > 0) == (fhi > 0)) throw std::runtime_error("bisect: no sign change in bracket");
  for (int k = 0; k < max_iter && hi - lo > tol; ++k) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if ((fm > 0) == (flo > 0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Classic fixed-step RK4 for dx/dt = f(t, x).
inline Eigen::VectorXd rk4_integrate(
    const std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
    double t0, double t1, int steps) {
  const double h = (t1 - t0) / steps;
  double t = t0;
  for (int k = 0; k < steps; ++k) {
    const Eigen::VectorXd k1 = f(t, x);
    const Eigen::VectorXd k2 = f(t + h / 2, x + (h / 2) * k1);
    const Eigen::VectorXd k3 = f(t + h / 2, x + (h / 2) * k2);
    const Eigen::VectorXd k4 = f(t + h, x + h * k3);
    x += (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4);
    t += h;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Textbook Kalman filter for x' = A x + w, y = H x + v.
struct KalmanResult {
  std::vector<Eigen::VectorXd> mean;
  std::vector<Eigen::MatrixXd> cov;
};

inline KalmanResult kalman_filter(const Eigen::MatrixXd& a, const Eigen::MatrixXd& q,
                                  const Eigen::RowVectorXd& h, double r,
                                  const Eigen::VectorXd& x0, const Eigen::MatrixXd& p0,
                                  const std::vector<double>& ys) {
  KalmanResult out;
  Eigen::VectorXd x = x0;
  Eigen::MatrixXd p = p0;
  for (double y : ys) {
    x = a * x;
    p = a * p * a.transpose() + q;
    const double s = (h * p * h.transpose())(0) + r;
    const Eigen::VectorXd k = p * h.transpose() / s;
    x = x + k * (y - (h * x)(0));
    p = p - k * h * p;
    out.mean.push_back(x);
    out.cov.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// One-sample Kolmogorov-Smirnov statistic against a given CDF.
inline double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max(d, std::abs(f - static_cast<double>(i) / n));
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
  }
  return d;
}

inline double normal_cdf(double x, double mu = 0.0, double sigma = 1.0) {
  return 0.5 * std::erfc(-(x - mu) / (sigma * std::sqrt(2.0)));
}

// ---------------------------------------------------------------------------
// Exact two-sided binomial test p-value (doubled smaller tail, capped at 1).
inline double binomial_two_sided_p(int k, int n, double p) {
  std::vector<double> logpmf(n + 1);
  auto lgamma1 = [](double v) { return std::lgamma(v + 1.0); };
  for (int i = 0; i <= n; ++i)
    logpmf[i] = lgamma1(n) - lgamma1(i) - lgamma1(n - i) + i * std::log(p) + (n - i) * std::log1p(-p);
  double lower = 0.0, upper = 0.0;
  for (int i = 0; i <= k; ++i) lower += std::exp(logpmf[i]);
  for (int i = k; i <= n; ++i) upper += std::exp(logpmf[i]);
  return std::min(1.0, 2.0 * std::min(lower, upper));
}

}  // namespace oracles
