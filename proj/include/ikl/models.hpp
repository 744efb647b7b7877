#pragma once

// Built-in interaction kernels, the kernel registry and initial-condition samplers.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ikl/error.hpp"
#include "ikl/rng.hpp"
#include "ikl/system.hpp"

namespace ikl {

// Heterophilious opinion kernel: 0.4 near zero, rises to 1, cut off at 1.05.
inline double opinion_kernel(double r) {
  if (r < 0.0 || std::isnan(r)) throw DomainError("opinion_kernel: negative distance");
  constexpr double pi = std::numbers::pi;
  const double c = 1.0 / std::numbers::sqrt2;
  if (r < c - 0.05) return 0.4;
  if (r < c + 0.05) return -0.3 * std::cos(10.0 * pi * (r - c + 0.05)) + 0.7;
  if (r < 0.95) return 1.0;
  if (r < 1.05) return 0.5 * std::cos(10.0 * pi * (r - 0.95)) + 0.5;
  return 0.0;
}

// A singular closed-form kernel capped below r_trunc by a * exp(-b * r^cap_power),
// with a and b fixed by matching value and slope at r_trunc.
struct TruncatedKernel {
  std::function<double(double)> base;
  std::function<double(double)> base_derivative;
  double r_trunc = 0.0;
  double a = 0.0;
  double b = 0.0;
  double cap_power = 1.0;

  double operator()(double r) const {
    if (r > r_trunc) return base(r);
    return a * std::exp(-b * std::pow(r, cap_power));
  }

  double derivative(double r) const {
    if (r > r_trunc) return base_derivative(r);
    const double rp = std::pow(r, cap_power);
    return -a * b * cap_power * (r > 0.0 ? rp / r : (cap_power == 1.0 ? 1.0 : 0.0)) * std::exp(-b * rp);
  }
};

namespace detail {

inline TruncatedKernel match_cap(std::function<double(double)> base, std::function<double(double)> dbase,
                                 double r_trunc, double cap_power) {
  if (!(r_trunc > 0.0)) throw DomainError("truncated kernel: r_trunc must be positive");
  const double v = base(r_trunc);
  const double s = dbase(r_trunc);
  if (!std::isfinite(v) || !std::isfinite(s)) throw DomainError("truncated kernel: base not finite at r_trunc");
  if (v == 0.0) throw DomainError("truncated kernel: base vanishes at r_trunc, exponential match is singular");
  TruncatedKernel k;
  k.base = std::move(base);
  k.base_derivative = std::move(dbase);
  k.r_trunc = r_trunc;
  k.cap_power = cap_power;
  // d/dr [a exp(-b r^p)] = -b p r^{p-1} a exp(-b r^p)
  k.b = -s / (cap_power * std::pow(r_trunc, cap_power - 1.0) * v);
  k.a = v * std::exp(k.b * std::pow(r_trunc, cap_power));
  return k;
}

}  // namespace detail

// Base kernel c0 + c1 * r^exponent, capped by a * exp(-b r) below r_trunc.
inline TruncatedKernel make_truncated_power_kernel(double c0, double c1, double exponent, double r_trunc) {
  auto base = [=](double r) { return c0 + c1 * std::pow(r, exponent); };
  auto dbase = [=](double r) { return c1 * exponent * std::pow(r, exponent - 1.0); };
  return detail::match_cap(base, dbase, r_trunc, 1.0);
}

// Lennard-Jones type potential
//   Phi(r) = p eps / (p - q) [ (q/p)(r_m/r)^p - (r_m/r)^q ]
// and kernel phi(r) = Phi'(r) / r, capped by a * exp(-b r^12) below r_trunc.
struct LennardJones {
  double p, q, eps, r_m;

  double potential(double r) const {
    return p * eps / (p - q) * ((q / p) * std::pow(r_m / r, p) - std::pow(r_m / r, q));
  }
  double potential_derivative(double r) const {
    return p * q * eps / (p - q) * (std::pow(r_m, q) * std::pow(r, -q - 1.0) - std::pow(r_m, p) * std::pow(r, -p - 1.0));
  }
  double kernel(double r) const { return potential_derivative(r) / r; }
  double kernel_derivative(double r) const {
    const double c = p * q * eps / (p - q);
    return c * (-(q + 2.0) * std::pow(r_m, q) * std::pow(r, -q - 3.0) +
                (p + 2.0) * std::pow(r_m, p) * std::pow(r, -p - 3.0));
  }
};

inline TruncatedKernel make_lj_kernel(double p, double q, double eps, double r_m, double r_trunc) {
  if (!(p > q && q > 0.0)) throw DomainError("make_lj_kernel: need p > q > 0");
  if (!(eps > 0.0)) throw DomainError("make_lj_kernel: eps must be positive");
  if (!(r_m > r_trunc && r_trunc > 0.0)) throw DomainError("make_lj_kernel: need r_m > r_trunc > 0");
  const LennardJones lj{p, q, eps, r_m};
  return detail::match_cap([lj](double r) { return lj.kernel(r); },
                           [lj](double r) { return lj.kernel_derivative(r); }, r_trunc, 12.0);
}

// Piecewise-linear kernel on the grid r0 + j*step, constant outside.
class TabulatedKernel {
 public:
  TabulatedKernel(double r0, double step, std::vector<double> values)
      : r0_(r0), step_(step), values_(std::move(values)) {
    if (!(step_ > 0.0)) throw DomainError("TabulatedKernel: step must be positive");
    if (values_.empty()) throw DomainError("TabulatedKernel: no values");
  }

  double operator()(double r) const {
    const double u = (r - r0_) / step_;
    if (!(u > 0.0)) return values_.front();
    const auto last = static_cast<double>(values_.size() - 1);
    if (u >= last) return values_.back();
    const auto j = static_cast<std::size_t>(u);
    const double w = u - static_cast<double>(j);
    return (1.0 - w) * values_[j] + w * values_[j + 1];
  }

  double r0() const { return r0_; }
  double step() const { return step_; }
  const std::vector<double>& values() const { return values_; }

 private:
  double r0_, step_;
  std::vector<double> values_;
};

inline Kernel to_kernel(const TabulatedKernel& t) {
  nlohmann::json desc = {{"kind", "tabulated"}, {"r0", t.r0()}, {"step", t.step()}, {"values", t.values()}};
  return Kernel(t, std::move(desc));
}

// Registry: `opinion`, `zero`, `power{c0,c1,exp,r_trunc}`, `lj{p,q,eps,r_m,r_trunc}`, `tabulated{r0,step,values}`.
// Accepts either a bare string name or an object with a "kind" member.
inline Kernel kernel_from_json(const nlohmann::json& j) {
  const std::string kind = j.is_string() ? j.get<std::string>() : j.at("kind").get<std::string>();
  nlohmann::json desc = j.is_string() ? nlohmann::json{{"kind", kind}} : j;
  if (kind == "zero") return Kernel();
  if (kind == "opinion") return Kernel([](double r) { return opinion_kernel(r); }, desc);
  if (kind == "constant") {
    const double c = j.at("value").get<double>();
    return Kernel([c](double) { return c; }, desc);
  }
  if (kind == "power") {
    const double c0 = j.value("c0", 0.0), c1 = j.at("c1").get<double>(), e = j.at("exp").get<double>();
    const double rt = j.at("r_trunc").get<double>();
    return Kernel(make_truncated_power_kernel(c0, c1, e, rt), desc);
  }
  if (kind == "lj") {
    return Kernel(make_lj_kernel(j.at("p").get<double>(), j.at("q").get<double>(), j.at("eps").get<double>(),
                                 j.at("r_m").get<double>(), j.at("r_trunc").get<double>()),
                  desc);
  }
  if (kind == "tabulated") {
    return to_kernel(TabulatedKernel(j.at("r0").get<double>(), j.at("step").get<double>(),
                                     j.at("values").get<std::vector<double>>()));
  }
  throw FormatError("unknown kernel kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Initial conditions

struct InitialSampler {
  enum class Kind { uniform_interval, uniform_disk, uniform_annulus, standard_gaussian, exchangeable_gaussian };

  Kind kind = Kind::standard_gaussian;
  double lo = 0.0, hi = 1.0;          // uniform-interval
  double r_in = 0.0, r_out = 1.0;     // disk (r_out = radius) and annulus
  double lambda = 1.0;                // exchangeable-gaussian

  static InitialSampler interval(double lo, double hi) {
    InitialSampler s;
    s.kind = Kind::uniform_interval;
    s.lo = lo;
    s.hi = hi;
    return s;
  }
  static InitialSampler disk(double radius) {
    InitialSampler s;
    s.kind = Kind::uniform_disk;
    s.r_in = 0.0;
    s.r_out = radius;
    return s;
  }
  static InitialSampler annulus(double r_in, double r_out) {
    InitialSampler s;
    s.kind = Kind::uniform_annulus;
    s.r_in = r_in;
    s.r_out = r_out;
    return s;
  }
  static InitialSampler gaussian() { return {}; }
  static InitialSampler exchangeable(double lambda) {
    InitialSampler s;
    s.kind = Kind::exchangeable_gaussian;
    s.lambda = lambda;
    return s;
  }
};

inline InitialSampler sampler_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "uniform-interval") return InitialSampler::interval(j.at("lo").get<double>(), j.at("hi").get<double>());
  if (kind == "uniform-disk") return InitialSampler::disk(j.at("radius").get<double>());
  if (kind == "uniform-annulus")
    return InitialSampler::annulus(j.at("r_in").get<double>(), j.at("r_out").get<double>());
  if (kind == "standard-gaussian") return InitialSampler::gaussian();
  if (kind == "exchangeable-gaussian") return InitialSampler::exchangeable(j.at("lambda").get<double>());
  throw FormatError("unknown sampler kind '" + kind + "'");
}

inline nlohmann::json to_json(const InitialSampler& s) {
  using K = InitialSampler::Kind;
  switch (s.kind) {
    case K::uniform_interval: return {{"kind", "uniform-interval"}, {"lo", s.lo}, {"hi", s.hi}};
    case K::uniform_disk: return {{"kind", "uniform-disk"}, {"radius", s.r_out}};
    case K::uniform_annulus: return {{"kind", "uniform-annulus"}, {"r_in", s.r_in}, {"r_out", s.r_out}};
    case K::standard_gaussian: return {{"kind", "standard-gaussian"}};
    case K::exchangeable_gaussian: return {{"kind", "exchangeable-gaussian"}, {"lambda", s.lambda}};
  }
  return {};
}

namespace detail {

// Uniform in volume on the shell r_in <= |x| <= r_out in R^d.
inline void sample_shell(Rng& rng, int d, double r_in, double r_out, double* out) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (int c = 0; c < d; ++c) {
      out[c] = normal(rng);
      norm += out[c] * out[c];
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  const double u = unif(rng);
  const double lo = std::pow(r_in, d), hi = std::pow(r_out, d);
  double radius = std::pow(lo + u * (hi - lo), 1.0 / d);
  radius = std::clamp(radius, r_in, r_out);
  for (int c = 0; c < d; ++c) out[c] = out[c] / norm * radius;
}

}  // namespace detail

// One sampler per type; agents drawn i.i.d. from their type's law in index order.
inline State sample_initial(const std::vector<InitialSampler>& per_type, const SystemSpec& spec, Rng& rng) {
  using K = InitialSampler::Kind;
  if (static_cast<int>(per_type.size()) != spec.K()) throw ShapeError("sample_initial: need one sampler per type");
  const int d = spec.d();
  for (const auto& s : per_type) {
    if (s.kind == K::uniform_annulus && s.r_in > s.r_out) throw DomainError("sample_initial: annulus with r_in > r_out");
    if ((s.kind == K::uniform_annulus || s.kind == K::uniform_disk) && s.r_in < 0.0)
      throw DomainError("sample_initial: negative radius");
    if (s.kind == K::uniform_interval && s.lo > s.hi) throw DomainError("sample_initial: interval with lo > hi");
    if (s.kind == K::exchangeable_gaussian && !(s.lambda > 0.0))
      throw DomainError("sample_initial: lambda must be positive");
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Eigen::VectorXd common;
  for (const auto& s : per_type)
    if (s.kind == K::exchangeable_gaussian && common.size() == 0) {
      common.resize(d);
      for (int c = 0; c < d; ++c) common[c] = normal(rng);
    }

  State x(spec.dim());
  for (int i = 0; i < spec.N(); ++i) {
    const auto& s = per_type[spec.type_of(i)];
    double* xi = x.data() + i * d;
    switch (s.kind) {
      case K::uniform_interval:
        for (int c = 0; c < d; ++c) xi[c] = s.lo + (s.hi - s.lo) * unif(rng);
        break;
      case K::uniform_disk:
      case K::uniform_annulus: detail::sample_shell(rng, d, s.r_in, s.r_out, xi); break;
      case K::standard_gaussian:
        for (int c = 0; c < d; ++c) xi[c] = normal(rng);
        break;
      case K::exchangeable_gaussian: {
        const double sl = std::sqrt(s.lambda);
        for (int c = 0; c < d; ++c) xi[c] = common[c] + sl * normal(rng);
        break;
      }
    }
  }
  return x;
}

}  // namespace ikl
