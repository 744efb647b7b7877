#pragma once

#include <boost/numeric/odeint.hpp>
#include <cmath>
#include <string>
#include <vector>

#include "ikl/error.hpp"
#include "ikl/system.hpp"

namespace ikl {

struct Tolerances {
  double rel = 1e-5;
  double abs = 1e-6;
  long max_evaluations = 20'000'000;
};

// Dormand-Prince 5(4) with dense output; returns the state at every requested
// time (times[0] is the initial time and maps to `initial`).
inline std::vector<State> simulate(const SystemSpec& spec, const KernelSet& kernels, const State& initial,
                                   const std::vector<double>& times, Tolerances tol = {}) {
  namespace odeint = boost::numeric::odeint;
  using Buffer = std::vector<double>;

  if (initial.size() != spec.dim()) throw ShapeError("simulate: initial state length must be N*d");
  if (times.empty()) return {};
  for (std::size_t l = 1; l < times.size(); ++l)
    if (!(times[l] > times[l - 1])) throw DomainError("simulate: times must be strictly increasing");
  for (int j = 0; j < initial.size(); ++j)
    if (!std::isfinite(initial[j])) throw DomainError("simulate: non-finite initial state");

  std::vector<State> out;
  out.reserve(times.size());
  if (times.size() == 1) {
    out.push_back(initial);
    return out;
  }

  double last_good = times.front();
  long evaluations = 0;
  auto rhs = [&](const Buffer& x, Buffer& dx, double t) {
    for (double v : x)
      if (!std::isfinite(v)) throw IntegrationError("simulate: non-finite state near t=" + std::to_string(t), last_good);
    if (++evaluations > tol.max_evaluations)
      throw IntegrationError("simulate: step size underflow (evaluation budget exhausted)", last_good);
    eval_rhs(spec, kernels, std::span<const double>(x), std::span<double>(dx));
  };
  auto observer = [&](const Buffer& x, double t) {
    State s = Eigen::Map<const State>(x.data(), static_cast<Eigen::Index>(x.size()));
    if (!s.allFinite()) throw IntegrationError("simulate: non-finite state at t=" + std::to_string(t), last_good);
    last_good = t;
    out.push_back(std::move(s));
  };

  Buffer x(initial.data(), initial.data() + initial.size());
  auto stepper = odeint::make_dense_output(tol.abs, tol.rel, odeint::runge_kutta_dopri5<Buffer>());
  const double dt0 = std::min(1e-3, (times.back() - times.front()) / 100.0);
  try {
    odeint::integrate_times(stepper, rhs, x, times.begin(), times.end(), dt0, observer);
  } catch (const IntegrationError&) {
    throw;
  } catch (const EvaluationError& e) {
    throw IntegrationError(std::string("simulate: ") + e.what(), last_good);
  } catch (const odeint::odeint_error& e) {
    throw IntegrationError(std::string("simulate: step control failed: ") + e.what(), last_good);
  }
  if (out.size() != times.size()) throw IntegrationError("simulate: integration stopped early", last_good);
  return out;
}

inline std::vector<State> simulate(const SystemSpec& spec, const State& initial, const std::vector<double>& times,
                                   Tolerances tol = {}) {
  return simulate(spec, spec.kernels(), initial, times, tol);
}

}  // namespace ikl
