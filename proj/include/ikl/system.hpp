#pragma once

// Heterogeneous first-order agent systems:
//
//   dx_i/dt = sum_{i'} (1/N_{k_{i'}}) phi_{k_i k_{i'}}(|x_{i'} - x_i|) (x_{i'} - x_i)
//
// Positions are stored agent-major in one flat vector of length N*d.

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <memory>
#include <nlohmann/json.hpp>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ikl/error.hpp"

namespace ikl {

using State = Eigen::VectorXd;

// A scalar interaction kernel phi: R+ -> R together with a JSON descriptor
// that names it in the kernel registry (see models.hpp).
class Kernel {
 public:
  using Fn = std::function<double(double)>;

  Kernel() : fn_(std::make_shared<Fn>([](double) { return 0.0; })), desc_({{"kind", "zero"}}) {}
  Kernel(Fn fn, nlohmann::json descriptor)
      : fn_(std::make_shared<Fn>(std::move(fn))), desc_(std::move(descriptor)) {}

  double operator()(double r) const { return (*fn_)(r); }
  const nlohmann::json& descriptor() const { return desc_; }
  bool is_zero() const { return desc_.value("kind", "") == "zero"; }

 private:
  std::shared_ptr<const Fn> fn_;
  nlohmann::json desc_;
};

// K x K grid of kernels, row-major: kernels[k * K + kp] acts on type-k agents
// through type-kp neighbours.
using KernelSet = std::vector<Kernel>;

class SystemSpec {
 public:
  SystemSpec() = default;

  // Agents are grouped contiguously by type: the first sizes[0] agents are type 0, ...
  SystemSpec(int d, std::vector<int> sizes, KernelSet kernels)
      : SystemSpec(d, contiguous_types(sizes), std::move(kernels), static_cast<int>(sizes.size())) {}

  // Arbitrary agent -> type map.
  SystemSpec(int d, std::vector<int> type_of, KernelSet kernels, int K)
      : d_(d), K_(K), type_of_(std::move(type_of)), kernels_(std::move(kernels)) {
    if (d_ < 1) throw DomainError("SystemSpec: dimension must be >= 1");
    if (K_ < 1) throw DomainError("SystemSpec: need at least one type");
    if (static_cast<int>(kernels_.size()) != K_ * K_)
      throw ShapeError("SystemSpec: expected K*K kernels, got " + std::to_string(kernels_.size()));
    sizes_.assign(K_, 0);
    for (int k : type_of_) {
      if (k < 0 || k >= K_) throw DomainError("SystemSpec: agent type out of range");
      ++sizes_[k];
    }
    for (int k = 0; k < K_; ++k)
      if (sizes_[k] == 0) throw DomainError("SystemSpec: type " + std::to_string(k) + " has no agents");
    inv_sizes_.resize(K_);
    for (int k = 0; k < K_; ++k) inv_sizes_[k] = 1.0 / sizes_[k];
  }

  int d() const { return d_; }
  int K() const { return K_; }
  int N() const { return static_cast<int>(type_of_.size()); }
  int dim() const { return N() * d_; }
  int type_of(int i) const { return type_of_[i]; }
  int type_size(int k) const { return sizes_[k]; }
  double inv_type_size(int k) const { return inv_sizes_[k]; }
  const std::vector<int>& type_sizes() const { return sizes_; }
  const std::vector<int>& types() const { return type_of_; }
  const Kernel& kernel(int k, int kp) const { return kernels_[k * K_ + kp]; }
  const KernelSet& kernels() const { return kernels_; }

  // Same agents and types, different kernels.
  SystemSpec with_kernels(KernelSet kernels) const { return SystemSpec(d_, type_of_, std::move(kernels), K_); }

  // Every type size multiplied by `factor`, contiguous layout, same kernels.
  SystemSpec scaled(int factor) const {
    std::vector<int> sizes = sizes_;
    for (int& s : sizes) s *= factor;
    return SystemSpec(d_, sizes, kernels_);
  }

 private:
  static std::vector<int> contiguous_types(const std::vector<int>& sizes) {
    std::vector<int> t;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (sizes[k] < 1) throw DomainError("SystemSpec: type sizes must be positive");
      t.insert(t.end(), sizes[k], static_cast<int>(k));
    }
    return t;
  }

  int d_ = 1;
  int K_ = 1;
  std::vector<int> type_of_;
  std::vector<int> sizes_;
  std::vector<double> inv_sizes_;
  KernelSet kernels_;
};

inline double distance(std::span<const double> x, int i, int j, int d) {
  double s = 0.0;
  for (int c = 0; c < d; ++c) {
    const double dx = x[j * d + c] - x[i * d + c];
    s += dx * dx;
  }
  return std::sqrt(s);
}

// Right-hand side with an arbitrary kernel set (same K as the spec).
// The self term never contributes: its vector factor is exactly zero.
inline void eval_rhs(const SystemSpec& spec, const KernelSet& kernels, std::span<const double> x,
                     std::span<double> out) {
  const int N = spec.N();
  const int d = spec.d();
  const int K = spec.K();
  if (static_cast<int>(x.size()) != N * d || static_cast<int>(out.size()) != N * d)
    throw ShapeError("eval_rhs: state length must be N*d");
  std::fill(out.begin(), out.end(), 0.0);
  for (int i = 0; i < N; ++i) {
    const int k = spec.type_of(i);
    for (int ip = 0; ip < N; ++ip) {
      if (ip == i) continue;
      const int kp = spec.type_of(ip);
      const double r = distance(x, i, ip, d);
      const double phi = kernels[k * K + kp](r);
      if (!std::isfinite(phi))
        throw EvaluationError("eval_rhs: non-finite kernel value for agents (" + std::to_string(i) + "," +
                                  std::to_string(ip) + ") at r=" + std::to_string(r),
                              i, ip, r);
      const double w = phi * spec.inv_type_size(kp);
      for (int c = 0; c < d; ++c) out[i * d + c] += w * (x[ip * d + c] - x[i * d + c]);
    }
  }
}

inline State eval_rhs(const SystemSpec& spec, const KernelSet& kernels, const State& x) {
  State out(x.size());
  eval_rhs(spec, kernels, std::span<const double>(x.data(), x.size()), std::span<double>(out.data(), out.size()));
  return out;
}

inline State eval_rhs(const SystemSpec& spec, const State& x) { return eval_rhs(spec, spec.kernels(), x); }

// Type-weighted norm (sum_i |v_i|^2 / N_{k_i})^{1/2}.
inline double snorm_squared(const SystemSpec& spec, std::span<const double> v) {
  if (static_cast<int>(v.size()) != spec.dim()) throw ShapeError("snorm: vector length must be N*d");
  const int d = spec.d();
  double total = 0.0;
  for (int i = 0; i < spec.N(); ++i) {
    double s = 0.0;
    for (int c = 0; c < d; ++c) s += v[i * d + c] * v[i * d + c];
    total += s * spec.inv_type_size(spec.type_of(i));
  }
  return total;
}

inline double snorm(const SystemSpec& spec, const State& v) {
  return std::sqrt(snorm_squared(spec, std::span<const double>(v.data(), v.size())));
}

}  // namespace ikl
