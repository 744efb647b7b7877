#pragma once

// Empirical measures of pairwise distances, one histogram per ordered type pair,
// and the weighted L2 norms ||g(.).||_{L2(rho)} built on them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "ikl/error.hpp"
#include "ikl/system.hpp"
#include "ikl/trajectory.hpp"

namespace ikl {

// Uniform bins on [0, R]; bins are [lo, hi) except the last, which is closed.
struct Histogram {
  double R = 0.0;
  std::vector<std::uint64_t> count;
  std::uint64_t overflow = 0;  // samples beyond R, counted in the last bin

  Histogram() = default;
  Histogram(double radius, int bins) : R(radius), count(static_cast<std::size_t>(bins), 0) {}

  int bins() const { return static_cast<int>(count.size()); }
  double width() const { return R / bins(); }
  double bin_lo(int b) const { return R * b / bins(); }
  double bin_hi(int b) const { return b + 1 == bins() ? R : R * (b + 1) / bins(); }
  double midpoint(int b) const { return 0.5 * (bin_lo(b) + bin_hi(b)); }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : count) t += c;
    return t;
  }
  bool empty() const { return total() == 0; }

  int bin_of(double r) const {
    const int B = bins();
    if (r >= R) return B - 1;
    const auto b = static_cast<int>(r / R * B);
    return std::clamp(b, 0, B - 1);
  }

  void add(double r) {
    if (r > R) ++overflow;
    ++count[static_cast<std::size_t>(bin_of(r))];
  }

  std::vector<double> masses() const {
    std::vector<double> m(count.size(), 0.0);
    const auto t = total();
    if (t == 0) return m;
    const double inv = 1.0 / static_cast<double>(t);
    for (std::size_t b = 0; b < count.size(); ++b) m[b] = static_cast<double>(count[b]) * inv;
    return m;
  }

  void merge(const Histogram& o) {
    if (o.bins() != bins() || o.R != R) throw ShapeError("Histogram::merge: incompatible binning");
    for (std::size_t b = 0; b < count.size(); ++b) count[b] += o.count[b];
    overflow += o.overflow;
  }
};

// rho^{L,M,kk'} for every ordered pair. Diagonal pairs count unordered agent
// pairs (N_k choose 2 per time); off-diagonal pairs count N_k * N_kp per time.
class PairwiseMeasure {
 public:
  PairwiseMeasure() = default;
  PairwiseMeasure(int K, double R, int bins) : K_(K), R_(R), hist_(static_cast<std::size_t>(K * K), Histogram(R, bins)) {
    if (!(R > 0.0)) throw DomainError("PairwiseMeasure: R must be positive");
    if (bins < 1) throw DomainError("PairwiseMeasure: need at least one bin");
  }

  int K() const { return K_; }
  double R() const { return R_; }
  int bins() const { return hist_.empty() ? 0 : hist_.front().bins(); }
  double max_observed() const { return max_observed_; }
  const Histogram& pair(int k, int kp) const { return hist_[k * K_ + kp]; }
  Histogram& pair(int k, int kp) { return hist_[k * K_ + kp]; }
  // False when no sample can exist (a singleton type's diagonal) or none was seen.
  bool defined(int k, int kp) const { return !pair(k, kp).empty(); }

  void add_state(const SystemSpec& spec, std::span<const double> x) {
    const int N = spec.N(), d = spec.d();
    for (int i = 0; i < N; ++i) {
      const int k = spec.type_of(i);
      for (int ip = 0; ip < N; ++ip) {
        if (ip == i) continue;
        const int kp = spec.type_of(ip);
        if (k == kp && ip < i) continue;
        const double r = distance(x, i, ip, d);
        max_observed_ = std::max(max_observed_, r);
        pair(k, kp).add(r);
      }
    }
  }

  void add_trajectory(const SystemSpec& spec, const Trajectory& tr) {
    for (const auto& x : tr.states) add_state(spec, std::span<const double>(x.data(), x.size()));
  }

  void merge(const PairwiseMeasure& o) {
    if (o.K_ != K_ || o.R_ != R_ || o.bins() != bins()) throw ShapeError("PairwiseMeasure::merge: incompatible");
    for (std::size_t p = 0; p < hist_.size(); ++p) hist_[p].merge(o.hist_[p]);
    max_observed_ = std::max(max_observed_, o.max_observed_);
  }

  void write_csv(std::ostream& os) const;

 private:
  int K_ = 0;
  double R_ = 0.0;
  std::vector<Histogram> hist_;
  double max_observed_ = 0.0;
};

inline double max_pairwise_distance(const TrajectoryBatch& batch, const SystemSpec& spec) {
  double m = 0.0;
  for (const auto& tr : batch.trajectories)
    for (const auto& x : tr.states)
      for (int i = 0; i < spec.N(); ++i)
        for (int ip = i + 1; ip < spec.N(); ++ip)
          m = std::max(m, distance(std::span<const double>(x.data(), x.size()), i, ip, spec.d()));
  return m;
}

// Without R the support radius is the largest observed pairwise distance.
inline PairwiseMeasure build_measure(const TrajectoryBatch& batch, const SystemSpec& spec, int bins,
                                     std::optional<double> R = std::nullopt) {
  if (batch.M() < 1 || batch.L() < 1) throw DomainError("build_measure: need M >= 1 and L >= 1");
  double radius = R ? *R : max_pairwise_distance(batch, spec);
  if (!(radius > 0.0)) radius = 1.0;
  PairwiseMeasure mu(spec.K(), radius, bins);
  for (const auto& tr : batch.trajectories) mu.add_trajectory(spec, tr);
  return mu;
}

// (sum_b mass_b (g(c_b) c_b)^2)^{1/2} at bin midpoints c_b.
inline double weighted_l2_norm_squared(const std::function<double(double)>& g, const Histogram& h) {
  const auto m = h.masses();
  double s = 0.0;
  for (int b = 0; b < h.bins(); ++b) {
    if (m[b] == 0.0) continue;
    const double c = h.midpoint(b);
    const double v = g(c) * c;
    if (!std::isfinite(v)) throw EvaluationError("weighted_l2_norm: non-finite integrand", -1, -1, c);
    s += m[b] * v * v;
  }
  return s;
}

inline double weighted_l2_norm(const std::function<double(double)>& g, const Histogram& h) {
  return std::sqrt(weighted_l2_norm_squared(g, h));
}

struct PairError {
  int k = 0, kp = 0;
  double error = 0.0;   // ||(est - truth)(.).||
  double norm = 0.0;    // ||truth(.).||
  double value = 0.0;   // error / norm, or the absolute error when norm == 0
  bool absolute = false;
  bool defined = true;  // false when the pair's measure is empty
};

struct KernelErrorReport {
  std::vector<PairError> pairs;
  double aggregate = 0.0;  // stacked ratio over defined pairs
  double aggregate_error = 0.0;
  double aggregate_norm = 0.0;
};

inline KernelErrorReport relative_kernel_error(const KernelSet& est, const KernelSet& truth, const PairwiseMeasure& mu) {
  const int K = mu.K();
  if (static_cast<int>(est.size()) != K * K || static_cast<int>(truth.size()) != K * K)
    throw ShapeError("relative_kernel_error: kernel sets must be K*K");
  KernelErrorReport rep;
  double num2 = 0.0, den2 = 0.0;
  for (int k = 0; k < K; ++k)
    for (int kp = 0; kp < K; ++kp) {
      PairError pe;
      pe.k = k;
      pe.kp = kp;
      if (!mu.defined(k, kp)) {
        pe.defined = false;
        rep.pairs.push_back(pe);
        continue;
      }
      const auto& e = est[k * K + kp];
      const auto& t = truth[k * K + kp];
      const double n2 = weighted_l2_norm_squared([&](double r) { return e(r) - t(r); }, mu.pair(k, kp));
      const double d2 = weighted_l2_norm_squared([&](double r) { return t(r); }, mu.pair(k, kp));
      pe.error = std::sqrt(n2);
      pe.norm = std::sqrt(d2);
      if (d2 > 0.0) {
        pe.value = pe.error / pe.norm;
      } else {
        pe.value = pe.error;
        pe.absolute = true;
      }
      num2 += n2;
      den2 += d2;
      rep.pairs.push_back(pe);
    }
  rep.aggregate_error = std::sqrt(num2);
  rep.aggregate_norm = std::sqrt(den2);
  rep.aggregate = den2 > 0.0 ? rep.aggregate_error / rep.aggregate_norm : rep.aggregate_error;
  return rep;
}

// Total-variation distance between two histograms on the same bins.
inline double total_variation(const Histogram& a, const Histogram& b) {
  if (a.bins() != b.bins()) throw ShapeError("total_variation: bin counts differ");
  const auto ma = a.masses(), mb = b.masses();
  double s = 0.0;
  for (std::size_t i = 0; i < ma.size(); ++i) s += std::abs(ma[i] - mb[i]);
  return 0.5 * s;
}

inline void PairwiseMeasure::write_csv(std::ostream& os) const {
  const auto old = os.precision(17);
  os << "k,kp,bin_lo,bin_hi,mass,count\n";
  for (int k = 0; k < K_; ++k)
    for (int kp = 0; kp < K_; ++kp) {
      const auto& h = pair(k, kp);
      const auto m = h.masses();
      for (int b = 0; b < h.bins(); ++b)
        os << k << ',' << kp << ',' << h.bin_lo(b) << ',' << h.bin_hi(b) << ',' << m[b] << ',' << h.count[b] << '\n';
    }
  os.precision(old);
}

}  // namespace ikl
