#pragma once

// Piecewise-polynomial hypothesis spaces on uniform partitions of [0, R],
// their stacked coefficient layout, and the estimator built on them.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <tuple>
#include <vector>

#include "ikl/error.hpp"
#include "ikl/models.hpp"
#include "ikl/system.hpp"

namespace ikl {

// round(c * (M / ln M)^{1/(2s+1)}), at least 1.
inline int choose_dimension(double M, double s, double c) {
  if (!(M >= 2.0)) throw DomainError("choose_dimension: need M >= 2");
  if (!(c > 0.0)) throw DomainError("choose_dimension: multiplier must be positive");
  if (!(s > 0.0)) throw DomainError("choose_dimension: regularity must be positive");
  const double n = c * std::pow(M / std::log(M), 1.0 / (2.0 * s + 1.0));
  return std::max(1, static_cast<int>(std::lround(n)));
}

struct BasisIndex {
  int k = 0, kp = 0, p = 0;
  friend bool operator==(const BasisIndex&, const BasisIndex&) = default;
};

class HypothesisSpace {
 public:
  HypothesisSpace() = default;

  // Same partition count for every pair.
  HypothesisSpace(int K, double R, int degree, int partitions)
      : HypothesisSpace(K, R, degree, std::vector<int>(static_cast<std::size_t>(K * K), partitions)) {}

  HypothesisSpace(int K, double R, int degree, std::vector<int> partitions)
      : K_(K), R_(R), degree_(degree), partitions_(std::move(partitions)) {
    if (K_ < 1) throw DomainError("HypothesisSpace: K must be >= 1");
    if (!(R_ > 0.0)) throw DomainError("HypothesisSpace: R must be positive");
    if (degree_ != 0 && degree_ != 1) throw DomainError("HypothesisSpace: degree must be 0 or 1");
    if (static_cast<int>(partitions_.size()) != K_ * K_) throw ShapeError("HypothesisSpace: need K*K partition counts");
    offsets_.resize(partitions_.size() + 1, 0);
    for (std::size_t q = 0; q < partitions_.size(); ++q) {
      if (partitions_[q] < 1) throw DomainError("HypothesisSpace: partition counts must be >= 1");
      offsets_[q + 1] = offsets_[q] + (degree_ + 1) * partitions_[q];
    }
  }

  int K() const { return K_; }
  double R() const { return R_; }
  int degree() const { return degree_; }
  int per_piece() const { return degree_ + 1; }
  int partitions(int k, int kp) const { return partitions_[k * K_ + kp]; }
  double width(int k, int kp) const { return R_ / partitions(k, kp); }
  int n(int k, int kp) const { return per_piece() * partitions(k, kp); }
  int n() const { return offsets_.empty() ? 0 : offsets_.back(); }
  int offset(int k, int kp) const { return offsets_[k * K_ + kp]; }

  // Columns of the type-k block: all pairs (k, .) are contiguous.
  int block_begin(int k) const { return offset(k, 0); }
  int block_end(int k) const { return offsets_[(k + 1) * K_]; }
  int block_size(int k) const { return block_end(k) - block_begin(k); }

  int to_stacked(int k, int kp, int p) const {
    if (k < 0 || k >= K_ || kp < 0 || kp >= K_ || p < 0 || p >= n(k, kp))
      throw DomainError("HypothesisSpace: basis index out of range");
    return offset(k, kp) + p;
  }

  BasisIndex from_stacked(int j) const {
    if (j < 0 || j >= n()) throw DomainError("HypothesisSpace: stacked index out of range");
    const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), j);
    const int q = static_cast<int>(it - offsets_.begin()) - 1;
    return {q / K_, q % K_, j - offsets_[q]};
  }

  double breakpoint(int k, int kp, int j) const { return R_ * j / partitions(k, kp); }

  // Subinterval containing r (left-closed; r == R in the last one) and the local
  // offset u = (r - lo) / h in [0, 1]. Empty when r lies outside [0, R].
  struct Location {
    int piece;
    double u;
  };
  std::optional<Location> locate(int k, int kp, double r) const {
    if (!(r >= 0.0) || r > R_) return std::nullopt;
    const int P = partitions(k, kp);
    int j = static_cast<int>(r / R_ * P);
    if (j >= P) j = P - 1;
    const double lo = breakpoint(k, kp, j);
    return Location{j, (r - lo) / width(k, kp)};
  }

  // Degree 0: indicator. Degree 1: {1, (r - lo)/h} on the piece, zero elsewhere.
  double eval_basis(int k, int kp, int p, double r) const {
    if (p < 0 || p >= n(k, kp)) throw DomainError("eval_basis: index out of range");
    const auto loc = locate(k, kp, r);
    if (!loc || loc->piece != p / per_piece()) return 0.0;
    return (p % per_piece() == 0) ? 1.0 : loc->u;
  }

  friend bool operator==(const HypothesisSpace& a, const HypothesisSpace& b) {
    return a.K_ == b.K_ && a.R_ == b.R_ && a.degree_ == b.degree_ && a.partitions_ == b.partitions_;
  }

 private:
  int K_ = 1;
  double R_ = 1.0;
  int degree_ = 0;
  std::vector<int> partitions_;
  std::vector<int> offsets_;
};

class Estimator {
 public:
  Estimator() = default;
  Estimator(HypothesisSpace space, Eigen::VectorXd coeffs) : space_(std::move(space)), coeffs_(std::move(coeffs)) {
    if (coeffs_.size() != space_.n()) throw ShapeError("Estimator: coefficient count must equal space dimension");
  }

  const HypothesisSpace& space() const { return space_; }
  const Eigen::VectorXd& coeffs() const { return coeffs_; }

  // Raw piecewise polynomial; zero outside [0, R].
  double eval(int k, int kp, double r) const {
    const auto loc = space_.locate(k, kp, r);
    if (!loc) return 0.0;
    const int base = space_.offset(k, kp) + loc->piece * space_.per_piece();
    double v = coeffs_[base];
    if (space_.degree() == 1) v += coeffs_[base + 1] * loc->u;
    return v;
  }

  KernelSet raw_kernels() const {
    KernelSet ks;
    const int K = space_.K();
    auto self = std::make_shared<const Estimator>(space_, coeffs_);
    for (int k = 0; k < K; ++k)
      for (int kp = 0; kp < K; ++kp)
        ks.emplace_back([self, k, kp](double r) { return self->eval(k, kp, r); },
                        nlohmann::json{{"kind", "estimator"}, {"k", k}, {"kp", kp}});
    return ks;
  }

  const std::optional<std::vector<TabulatedKernel>>& smoothed() const { return smoothed_; }
  void set_smoothed(std::vector<TabulatedKernel> s) { smoothed_ = std::move(s); }

  KernelSet smoothed_kernels() const {
    if (!smoothed_) throw DomainError("Estimator: not smoothed");
    KernelSet ks;
    for (const auto& t : *smoothed_) ks.push_back(to_kernel(t));
    return ks;
  }

 private:
  HypothesisSpace space_;
  Eigen::VectorXd coeffs_;
  std::optional<std::vector<TabulatedKernel>> smoothed_;
};

// Samples the raw estimator at r = j * step on [0, R] and interpolates linearly,
// extending by the boundary values outside.
inline std::vector<TabulatedKernel> smooth_estimator(Estimator& est, double grid_step) {
  if (!(grid_step > 0.0)) throw DomainError("smooth_estimator: grid step must be positive");
  if (!est.coeffs().allFinite()) throw DomainError("smooth_estimator: non-finite coefficients");
  const auto& sp = est.space();
  const double R = sp.R();
  const int nodes = static_cast<int>(std::ceil(R / grid_step - 1e-9)) + 1;
  const double step = R / (nodes - 1);
  std::vector<TabulatedKernel> out;
  for (int k = 0; k < sp.K(); ++k)
    for (int kp = 0; kp < sp.K(); ++kp) {
      std::vector<double> v(static_cast<std::size_t>(nodes));
      for (int j = 0; j < nodes; ++j) v[j] = est.eval(k, kp, j + 1 == nodes ? R : j * step);
      out.emplace_back(0.0, step, std::move(v));
    }
  est.set_smoothed(out);
  return out;
}

inline std::vector<TabulatedKernel> smooth_estimator(Estimator& est) {
  return smooth_estimator(est, est.space().R() / 2000.0);
}

// Interpolates the estimator's values at the piece centres (one node per
// piece), constant beyond the outermost centres. For piecewise constants this
// is a genuinely smoother, second-order reconstruction.
inline std::vector<TabulatedKernel> smooth_estimator_midpoints(Estimator& est) {
  if (!est.coeffs().allFinite()) throw DomainError("smooth_estimator: non-finite coefficients");
  const auto& sp = est.space();
  std::vector<TabulatedKernel> out;
  for (int k = 0; k < sp.K(); ++k)
    for (int kp = 0; kp < sp.K(); ++kp) {
      const int P = sp.partitions(k, kp);
      const double h = sp.width(k, kp);
      std::vector<double> v(static_cast<std::size_t>(P));
      for (int j = 0; j < P; ++j) v[j] = est.eval(k, kp, (j + 0.5) * h);
      out.emplace_back(0.5 * h, h, std::move(v));
    }
  est.set_smoothed(out);
  return out;
}

inline nlohmann::json to_json(const Estimator& est) {
  const auto& sp = est.space();
  nlohmann::json j;
  j["interval"] = {0.0, sp.R()};
  j["degree"] = sp.degree();
  j["K"] = sp.K();
  nlohmann::json pairs = nlohmann::json::array();
  for (int k = 0; k < sp.K(); ++k)
    for (int kp = 0; kp < sp.K(); ++kp) {
      std::vector<double> bp;
      for (int q = 0; q <= sp.partitions(k, kp); ++q) bp.push_back(sp.breakpoint(k, kp, q));
      pairs.push_back({{"k", k}, {"kp", kp}, {"partitions", sp.partitions(k, kp)}, {"offset", sp.offset(k, kp)},
                       {"breakpoints", bp}});
    }
  j["pairs"] = pairs;
  j["coefficients"] = std::vector<double>(est.coeffs().data(), est.coeffs().data() + est.coeffs().size());
  if (est.smoothed()) {
    nlohmann::json sm = nlohmann::json::array();
    for (const auto& t : *est.smoothed()) sm.push_back({{"r0", t.r0()}, {"step", t.step()}, {"values", t.values()}});
    j["smoothed"] = sm;
  }
  return j;
}

inline Estimator estimator_from_json(const nlohmann::json& j) {
  const int K = j.at("K").get<int>();
  std::vector<int> parts;
  for (const auto& p : j.at("pairs")) parts.push_back(p.at("partitions").get<int>());
  HypothesisSpace sp(K, j.at("interval").at(1).get<double>(), j.at("degree").get<int>(), parts);
  const auto c = j.at("coefficients").get<std::vector<double>>();
  Estimator est(sp, Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size())));
  if (j.contains("smoothed")) {
    std::vector<TabulatedKernel> sm;
    for (const auto& t : j.at("smoothed"))
      sm.emplace_back(t.at("r0").get<double>(), t.at("step").get<double>(), t.at("values").get<std::vector<double>>());
    est.set_smoothed(std::move(sm));
  }
  return est;
}

}  // namespace ikl
