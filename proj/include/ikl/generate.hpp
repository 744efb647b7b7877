#pragma once

// Trajectory generation from an initial-condition law: sample, integrate,
// attach velocities (exact or by differences), optionally perturb.

#include <cstdint>
#include <string>
#include <vector>

#include "ikl/error.hpp"
#include "ikl/integrator.hpp"
#include "ikl/models.hpp"
#include "ikl/parallel.hpp"
#include "ikl/rng.hpp"
#include "ikl/system.hpp"
#include "ikl/trajectory.hpp"

namespace ikl {

enum class VelocityMode { exact, finite_difference, none };
enum class NoiseModel { additive, multiplicative };

inline VelocityMode velocity_mode_from_string(const std::string& s) {
  if (s == "exact") return VelocityMode::exact;
  if (s == "finite-difference") return VelocityMode::finite_difference;
  if (s == "none") return VelocityMode::none;
  throw FormatError("unknown velocity mode '" + s + "'");
}

inline std::string to_string(VelocityMode m) {
  switch (m) {
    case VelocityMode::exact: return "exact";
    case VelocityMode::finite_difference: return "finite-difference";
    case VelocityMode::none: return "none";
  }
  return "";
}

inline NoiseModel noise_model_from_string(const std::string& s) {
  if (s == "additive") return NoiseModel::additive;
  if (s == "multiplicative") return NoiseModel::multiplicative;
  throw FormatError("unknown noise model '" + s + "'");
}

inline std::string to_string(NoiseModel m) { return m == NoiseModel::additive ? "additive" : "multiplicative"; }

// Perturbs positions and velocities componentwise with U[-sigma, sigma] draws:
// additive x + eta, multiplicative x (1 + eta).
inline void add_noise(Trajectory& tr, NoiseModel model, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw DomainError("add_noise: sigma must be >= 0");
  if (!tr.has_velocities()) throw DomainError("add_noise: velocities required");
  if (sigma == 0.0) return;
  std::uniform_real_distribution<double> u(-sigma, sigma);
  auto perturb = [&](State& v) {
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      const double eta = u(rng);
      v[j] = model == NoiseModel::additive ? v[j] + eta : v[j] * (1.0 + eta);
    }
  };
  for (std::size_t l = 0; l < tr.states.size(); ++l) {
    perturb(tr.states[l]);
    perturb(tr.velocities[l]);
  }
}

inline TrajectoryBatch add_noise(TrajectoryBatch batch, NoiseModel model, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw DomainError("add_noise: sigma must be >= 0");
  for (auto& tr : batch.trajectories) add_noise(tr, model, sigma, rng);
  return batch;
}

// Everything needed to produce one observed trajectory.
struct ObservationModel {
  SystemSpec spec;
  std::vector<InitialSampler> samplers;  // one per type
  std::vector<double> times;             // the L observation instants
  VelocityMode velocity = VelocityMode::exact;
  Tolerances tol;
  double noise_sigma = 0.0;
  NoiseModel noise = NoiseModel::additive;
};

inline Trajectory observe(const ObservationModel& om, const State& x0) {
  Trajectory tr;
  if (om.velocity == VelocityMode::finite_difference) {
    if (om.times.size() < 2) throw DomainError("observe: finite differences need L >= 2");
    auto t = om.times;
    t.push_back(t.back() + (t.back() - t[t.size() - 2]));
    Trajectory full;
    full.states = simulate(om.spec, x0, t, om.tol);
    tr = backward_diff_velocities(full, t);
  } else {
    tr.states = simulate(om.spec, x0, om.times, om.tol);
    if (om.velocity == VelocityMode::exact) fill_exact_velocities(om.spec, tr);
  }
  return tr;
}

// Trajectory `index` of stream `ns`; noise (if any) uses its own stream with
// the same index so clean and noisy runs share initial conditions.
inline Trajectory generate_trajectory(const ObservationModel& om, std::uint64_t seed, Stream ns, std::uint64_t index) {
  Rng rng = make_rng(seed, ns, index);
  const State x0 = sample_initial(om.samplers, om.spec, rng);
  Trajectory tr = observe(om, x0);
  if (om.noise_sigma > 0.0) {
    Rng nr = make_rng(seed ^ static_cast<std::uint64_t>(ns), Stream::noise, index);
    add_noise(tr, om.noise, om.noise_sigma, nr);
  }
  return tr;
}

inline TrajectoryBatch generate_batch(const ObservationModel& om, std::uint64_t seed, Stream ns, std::uint64_t first,
                                      std::size_t M, int threads = 1) {
  TrajectoryBatch b;
  b.times = om.times;
  b.seed = seed;
  b.trajectories.resize(M);
  parallel_for(M, threads, [&](std::size_t m) { b.trajectories[m] = generate_trajectory(om, seed, ns, first + m); });
  return b;
}

}  // namespace ikl
