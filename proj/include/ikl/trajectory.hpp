#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ikl/error.hpp"
#include "ikl/system.hpp"

namespace ikl {

// One observed trajectory: states at the batch times, optional velocities.
struct Trajectory {
  std::vector<State> states;
  std::vector<State> velocities;  // empty, or same shape as states

  bool has_velocities() const { return !velocities.empty(); }
};

struct TrajectoryBatch {
  std::vector<double> times;
  std::vector<Trajectory> trajectories;
  std::uint64_t seed = 0;

  int M() const { return static_cast<int>(trajectories.size()); }
  int L() const { return static_cast<int>(times.size()); }
  bool has_velocities() const {
    for (const auto& tr : trajectories)
      if (!tr.has_velocities()) return false;
    return !trajectories.empty();
  }
};

// `count` equispaced instants from t0 to t1 inclusive.
inline std::vector<double> linspace(double t0, double t1, int count) {
  if (count < 1) throw DomainError("linspace: count must be >= 1");
  std::vector<double> t(count);
  if (count == 1) {
    t[0] = t0;
    return t;
  }
  const double h = (t1 - t0) / (count - 1);
  for (int l = 0; l < count; ++l) t[l] = t0 + h * l;
  t.back() = t1;
  return t;
}

// Forward-looking difference v(t_l) = (X(t_{l+1}) - X(t_l)) / (t_{l+1} - t_l).
// L+1 samples in, L samples out (the last sample only feeds the difference).
inline Trajectory backward_diff_velocities(const Trajectory& tr, const std::vector<double>& times) {
  const std::size_t n = times.size();
  if (n < 2) throw DomainError("backward_diff_velocities: need at least 2 time points");
  if (tr.states.size() != n) throw ShapeError("backward_diff_velocities: states do not match times");
  Trajectory out;
  out.states.assign(tr.states.begin(), tr.states.end() - 1);
  out.velocities.reserve(n - 1);
  for (std::size_t l = 0; l + 1 < n; ++l)
    out.velocities.push_back((tr.states[l + 1] - tr.states[l]) / (times[l + 1] - times[l]));
  return out;
}

inline TrajectoryBatch backward_diff_velocities(const TrajectoryBatch& batch) {
  TrajectoryBatch out;
  out.seed = batch.seed;
  if (batch.times.size() < 2) throw DomainError("backward_diff_velocities: need at least 2 time points");
  out.times.assign(batch.times.begin(), batch.times.end() - 1);
  out.trajectories.reserve(batch.trajectories.size());
  for (const auto& tr : batch.trajectories) out.trajectories.push_back(backward_diff_velocities(tr, batch.times));
  return out;
}

// Velocities from the generating kernels at every stored state.
inline void fill_exact_velocities(const SystemSpec& spec, Trajectory& tr) {
  tr.velocities.clear();
  tr.velocities.reserve(tr.states.size());
  for (const auto& x : tr.states) tr.velocities.push_back(eval_rhs(spec, x));
}

}  // namespace ikl
