#pragma once

// Trajectory prediction errors, the trajectory-wise Gronwall bound, and
// log-log rate fits.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ikl/error.hpp"
#include "ikl/integrator.hpp"
#include "ikl/models.hpp"
#include "ikl/parallel.hpp"
#include "ikl/rng.hpp"
#include "ikl/system.hpp"
#include "ikl/trajectory.hpp"

namespace ikl {

// max over grid points t in [T0, T1] of |X(t) - Xhat(t)|_S.
inline double trajectory_error(const SystemSpec& spec, const std::vector<State>& truth, const std::vector<State>& est,
                               const std::vector<double>& times, double T0, double T1) {
  if (truth.size() != times.size() || est.size() != times.size())
    throw ShapeError("trajectory_error: trajectories must share the time grid");
  double worst = -1.0;
  for (std::size_t l = 0; l < times.size(); ++l) {
    if (times[l] < T0 || times[l] > T1) continue;
    worst = std::max(worst, snorm(spec, truth[l] - est[l]));
  }
  if (worst < 0.0) throw DomainError("trajectory_error: no grid points in window");
  return worst;
}

struct RateFit {
  double rate = 0.0;       // -slope
  double slope = 0.0;
  double intercept = 0.0;  // of ln(error) against ln(M)
  double residual = 0.0;   // root mean square of the fit residuals
};

// Ordinary least squares of ln(error) on ln(M).
inline RateFit fit_rate(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 3) throw DomainError("fit_rate: need at least 3 points");
  const auto n = static_cast<double>(points.size());
  double sx = 0, sy = 0;
  for (const auto& [M, e] : points) {
    if (!(M > 0.0) || !(e > 0.0)) throw DomainError("fit_rate: M and error values must be positive");
    sx += std::log(M);
    sy += std::log(e);
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (const auto& [M, e] : points) {
    const double dx = std::log(M) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(e) - my);
  }
  if (sxx == 0.0) throw DomainError("fit_rate: need at least two distinct M values");
  RateFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.rate = -f.slope;
  double ss = 0;
  for (const auto& [M, e] : points) {
    const double r = std::log(e) - (f.intercept + f.slope * std::log(M));
    ss += r * r;
  }
  f.residual = std::sqrt(ss / n);
  return f;
}

// Largest difference quotient of phi on a uniform grid over [0, R].
inline double lipschitz_estimate(const Kernel& phi, double R, double step) {
  if (!(step > 0.0) || !(R > 0.0)) throw DomainError("lipschitz_estimate: step and R must be positive");
  const auto n = static_cast<long>(std::ceil(R / step));
  double best = 0.0, prev = phi(0.0);
  for (long j = 1; j <= n; ++j) {
    const double r = std::min(R, j * step), h = r - std::min(R, (j - 1) * step);
    const double v = phi(r);
    if (h > 0.0) best = std::max(best, std::abs(v - prev) / h);
    prev = v;
  }
  return best;
}

inline double sup_estimate(const Kernel& phi, double R, double step) {
  const auto n = static_cast<long>(std::ceil(R / step));
  double best = 0.0;
  for (long j = 0; j <= n; ++j) best = std::max(best, std::abs(phi(std::min(R, j * step))));
  return best;
}

// max over both kernel sets of sup|phi| + Lip(phi) on [0, R].
inline double admissible_bound(const KernelSet& a, const KernelSet& b, double R, double step = 1e-4) {
  double S = 0.0;
  for (const auto* set : {&a, &b})
    for (const auto& phi : *set) S = std::max(S, sup_estimate(phi, R, step) + lipschitz_estimate(phi, R, step));
  return S;
}

struct GronwallCheck {
  double lhs = 0.0;       // sup_t |Xhat - X|_S^2
  double integral = 0.0;  // trapezoid of |dX/dt - f_est(X)|_S^2
  double rhs = 0.0;       // 2T exp(8 T^2 K^2 S^2) * integral (may be +inf)
  bool holds() const { return lhs <= rhs; }
};

// Both trajectories start from truth[0] and share `times` (times[0] = 0 start).
inline GronwallCheck gronwall_check(const SystemSpec& spec, const KernelSet& est, const std::vector<State>& truth,
                                    const std::vector<State>& predicted, const std::vector<double>& times, double S) {
  if (truth.size() != times.size() || predicted.size() != times.size() || times.size() < 2)
    throw ShapeError("gronwall_check: trajectories must share a grid of at least 2 points");
  GronwallCheck g;
  std::vector<double> resid(times.size());
  for (std::size_t l = 0; l < times.size(); ++l) {
    const State dx = eval_rhs(spec, truth[l]);
    const State fe = eval_rhs(spec, est, truth[l]);
    resid[l] = snorm_squared(spec, std::span<const double>((dx - fe).eval().data(), dx.size()));
    const State gap = predicted[l] - truth[l];
    g.lhs = std::max(g.lhs, snorm_squared(spec, std::span<const double>(gap.data(), gap.size())));
  }
  for (std::size_t l = 0; l + 1 < times.size(); ++l)
    g.integral += 0.5 * (resid[l] + resid[l + 1]) * (times[l + 1] - times[l]);
  const double T = times.back() - times.front();
  const double K = spec.K();
  const double expo = 8.0 * T * T * K * K * S * S;
  g.rhs = g.integral == 0.0 ? 0.0 : 2.0 * T * std::exp(expo) * g.integral;
  return g;
}

struct JensenCheck {
  double lhs = 0.0;  // (1/(ML)) sum |f_true(X) - f_est(X)|_S^2
  double rhs = 0.0;  // K * sum_{kk'} ||(est - true)(.).||^2 over the exact pair samples
  bool holds(double slack = 1e-12) const { return lhs <= rhs * (1.0 + slack) + 1e-300; }
};

// Finite-sample Jensen inequality between the trajectory residual of a kernel
// set and its kernel error, evaluated on the exact pairwise distances of `batch`
// (pair counting follows the measure conventions of build_measure).
inline JensenCheck jensen_check(const SystemSpec& spec, const KernelSet& est, const TrajectoryBatch& batch) {
  const int K = spec.K(), N = spec.N(), d = spec.d();
  std::vector<double> sum(static_cast<std::size_t>(K * K), 0.0);
  std::vector<double> cnt(static_cast<std::size_t>(K * K), 0.0);
  JensenCheck j;
  std::size_t states = 0;
  for (const auto& tr : batch.trajectories)
    for (const auto& x : tr.states) {
      const State gap = eval_rhs(spec, x) - eval_rhs(spec, est, x);
      j.lhs += snorm_squared(spec, std::span<const double>(gap.data(), gap.size()));
      ++states;
      std::span<const double> xs(x.data(), x.size());
      for (int i = 0; i < N; ++i)
        for (int ip = 0; ip < N; ++ip) {
          const int k = spec.type_of(i), kp = spec.type_of(ip);
          if (ip == i || (k == kp && ip < i)) continue;
          const double r = distance(xs, i, ip, d);
          const double dphi = (est[k * K + kp](r) - spec.kernel(k, kp)(r)) * r;
          sum[k * K + kp] += dphi * dphi;
          cnt[k * K + kp] += 1.0;
        }
    }
  if (states == 0) throw DomainError("jensen_check: empty batch");
  j.lhs /= static_cast<double>(states);
  for (std::size_t q = 0; q < sum.size(); ++q)
    if (cnt[q] > 0.0) j.rhs += sum[q] / cnt[q];
  j.rhs *= K;
  return j;
}

struct ClassErrors {
  std::string name;                 // training / random / large_n
  std::vector<double> train_window; // TM error on [t1, tL]
  std::vector<double> future_window;// TM error on [tL, tf]
  int failures = 0;
};

struct PredictionReport {
  std::vector<ClassErrors> classes;
};

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {NAN, NAN};
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0};
}

inline double median(std::vector<double> v) {
  if (v.empty()) return NAN;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct PredictionSetup {
  SystemSpec spec;
  std::vector<InitialSampler> samplers;
  double t1 = 0.0, tL = 1.0, tf = 2.0;
  int nodes = 200;           // per window
  int ics = 10;              // initial conditions per class
  int large_n_factor = 4;
  Tolerances tol;
  std::uint64_t seed = 0;
};

// Grid of `nodes` points on [t1, tL] followed by `nodes` on [tL, tf] (tL shared).
inline std::vector<double> prediction_grid(const PredictionSetup& s) {
  auto g = linspace(s.t1, s.tL, s.nodes);
  if (s.tf > s.tL) {
    const auto f = linspace(s.tL, s.tf, s.nodes);
    g.insert(g.end(), f.begin() + 1, f.end());
  }
  return g;
}

// Integrates truth and estimate from the same initial conditions for three
// classes: training ICs, fresh ICs, and fresh ICs with large_n_factor times
// as many agents per type.
inline PredictionReport prediction_experiment(const PredictionSetup& s, const KernelSet& est,
                                              const std::vector<State>& training_ics, int threads = 1) {
  const auto grid = prediction_grid(s);
  PredictionReport rep;
  auto run_class = [&](const std::string& name, const SystemSpec& spec, const std::vector<State>& ics) {
    ClassErrors ce;
    ce.name = name;
    std::vector<std::pair<double, double>> out(ics.size(), {NAN, NAN});
    parallel_for(ics.size(), threads, [&](std::size_t j) {
      try {
        const auto truth = simulate(spec, ics[j], grid, s.tol);
        const auto pred = simulate(spec, est, ics[j], grid, s.tol);
        out[j].first = trajectory_error(spec, truth, pred, grid, s.t1, s.tL);
        if (s.tf > s.tL) out[j].second = trajectory_error(spec, truth, pred, grid, s.tL, s.tf);
      } catch (const Error&) {
        // recorded as a failure below
      }
    });
    for (const auto& [a, b] : out) {
      if (std::isnan(a)) {
        ++ce.failures;
        continue;
      }
      ce.train_window.push_back(a);
      if (!std::isnan(b)) ce.future_window.push_back(b);
    }
    rep.classes.push_back(std::move(ce));
  };

  std::vector<State> train(training_ics.begin(),
                           training_ics.begin() + std::min<std::size_t>(training_ics.size(), s.ics));
  run_class("training", s.spec, train);

  std::vector<State> fresh;
  for (int j = 0; j < s.ics; ++j) {
    Rng rng = make_rng(s.seed, Stream::prediction, static_cast<std::uint64_t>(j));
    fresh.push_back(sample_initial(s.samplers, s.spec, rng));
  }
  run_class("random", s.spec, fresh);

  if (s.large_n_factor > 1) {
    const SystemSpec big = s.spec.scaled(s.large_n_factor);
    std::vector<State> large;
    for (int j = 0; j < s.ics; ++j) {
      Rng rng = make_rng(s.seed, Stream::large_n, static_cast<std::uint64_t>(j));
      large.push_back(sample_initial(s.samplers, big, rng));
    }
    run_class("large_n", big, large);
  }
  return rep;
}

}  // namespace ikl
