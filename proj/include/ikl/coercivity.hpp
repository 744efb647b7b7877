#pragma once

// Coercivity constant of a hypothesis space: orthonormalize the basis in
// <f(.)., g(.).>_{L2(rho^{kk'})}, express the regression matrix in that basis
// and take its smallest eigenvalue.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <vector>

#include "ikl/error.hpp"
#include "ikl/hypothesis.hpp"
#include "ikl/measure.hpp"
#include "ikl/regression.hpp"

namespace ikl {

class OrthonormalizedBasis;
OrthonormalizedBasis orthonormalize(const HypothesisSpace& space, const PairwiseMeasure& mu, double drop = 1e-10);

class OrthonormalizedBasis {
 public:
  // Column j of transform(k) gives the coefficients, in the type-k block of the
  // original stacked basis, of the j-th retained orthonormal function.
  const Eigen::SparseMatrix<double>& transform(int k) const { return transform_[k]; }
  const HypothesisSpace& space() const { return space_; }
  double gram_residual() const { return gram_residual_; }
  const std::vector<int>& pruned() const { return pruned_; }  // stacked indices
  int retained() const {
    int r = 0;
    for (const auto& t : transform_) r += static_cast<int>(t.cols());
    return r;
  }

  friend OrthonormalizedBasis orthonormalize(const HypothesisSpace& space, const PairwiseMeasure& mu, double drop);

 private:
  HypothesisSpace space_;
  std::vector<Eigen::SparseMatrix<double>> transform_;
  double gram_residual_ = 0.0;
  std::vector<int> pruned_;
};

// Modified Gram-Schmidt per pair. Basis functions are sampled at the bin
// midpoints; functions on different pieces have disjoint sample support, so the
// process runs piece by piece.
inline OrthonormalizedBasis orthonormalize(const HypothesisSpace& space, const PairwiseMeasure& mu, double drop) {
  if (mu.K() != space.K()) throw ShapeError("orthonormalize: measure and space disagree on K");
  OrthonormalizedBasis ob;
  ob.space_ = space;
  const int K = space.K(), pp = space.per_piece();
  int nonempty = 0;
  for (int k = 0; k < K; ++k) {
    std::vector<Eigen::Triplet<double>> trip;
    int col = 0;
    const int base = space.block_begin(k);
    for (int kp = 0; kp < K; ++kp) {
      const auto& h = mu.pair(k, kp);
      // A pair that never occurs (a singleton type's diagonal) has no samples:
      // its whole basis is pruned.
      if (h.empty()) {
        for (int p = 0; p < space.n(k, kp); ++p) ob.pruned_.push_back(space.offset(k, kp) + p);
        continue;
      }
      ++nonempty;
      const auto mass = h.masses();
      const int P = space.partitions(k, kp);
      // Weighted samples w_b = sqrt(mass_b) * c_b of each piece's basis functions.
      std::vector<std::vector<int>> bins_of(static_cast<std::size_t>(P));
      for (int b = 0; b < h.bins(); ++b) {
        if (mass[b] == 0.0) continue;
        const auto loc = space.locate(k, kp, h.midpoint(b));
        if (loc) bins_of[loc->piece].push_back(b);
      }
      std::vector<double> norms(static_cast<std::size_t>(space.n(k, kp)), 0.0);
      std::vector<Eigen::MatrixXd> samples(static_cast<std::size_t>(P));
      for (int j = 0; j < P; ++j) {
        auto& S = samples[j];
        S.resize(static_cast<Eigen::Index>(bins_of[j].size()), pp);
        for (std::size_t q = 0; q < bins_of[j].size(); ++q) {
          const int b = bins_of[j][q];
          const double c = h.midpoint(b), w = std::sqrt(mass[b]) * c;
          const auto loc = space.locate(k, kp, c);
          S(static_cast<Eigen::Index>(q), 0) = w;
          if (pp == 2) S(static_cast<Eigen::Index>(q), 1) = w * loc->u;
        }
        for (int e = 0; e < pp; ++e) norms[j * pp + e] = S.rows() ? S.col(e).norm() : 0.0;
      }
      const double max_norm = *std::max_element(norms.begin(), norms.end());
      for (int j = 0; j < P; ++j) {
        const Eigen::MatrixXd& S = samples[j];
        // Each kept function: samples q and coefficients over the piece's basis.
        std::vector<Eigen::VectorXd> qs, coef;
        for (int e = 0; e < pp; ++e) {
          const int local = j * pp + e;
          const int stacked = space.offset(k, kp) + local;
          if (norms[local] <= drop * max_norm || S.rows() == 0) {
            ob.pruned_.push_back(stacked);
            continue;
          }
          Eigen::VectorXd v = S.col(e);
          Eigen::VectorXd c = Eigen::VectorXd::Unit(pp, e);
          for (std::size_t t = 0; t < qs.size(); ++t) {
            const double proj = qs[t].dot(v);
            v -= proj * qs[t];
            c -= proj * coef[t];
          }
          const double nv = v.norm();
          if (nv <= drop * max_norm) {
            ob.pruned_.push_back(stacked);
            continue;
          }
          qs.push_back(v / nv);
          coef.push_back(c / nv);
        }
        // Post-hoc Gram residual on the recomputed samples.
        for (std::size_t a = 0; a < coef.size(); ++a) {
          const Eigen::VectorXd fa = S * coef[a];
          for (std::size_t bb = a; bb < coef.size(); ++bb) {
            const double g = fa.dot(S * coef[bb]);
            ob.gram_residual_ = std::max(ob.gram_residual_, std::abs(g - (a == bb ? 1.0 : 0.0)));
          }
        }
        for (std::size_t a = 0; a < coef.size(); ++a) {
          for (int e = 0; e < pp; ++e)
            if (coef[a][e] != 0.0) trip.emplace_back(space.offset(k, kp) - base + j * pp + e, col, coef[a][e]);
          ++col;
        }
      }
    }
    Eigen::SparseMatrix<double> T(space.block_size(k), col);
    T.setFromTriplets(trip.begin(), trip.end());
    ob.transform_.push_back(std::move(T));
  }
  if (nonempty == 0) throw DomainError("orthonormalize: measure is empty for every pair");
  std::sort(ob.pruned_.begin(), ob.pruned_.end());
  return ob;
}

struct CoercivityReport {
  double lambda_min = 0.0;
  std::vector<double> block_lambda_min;  // one per velocity (row-type) block
  double gram_residual = 0.0;
  std::vector<int> pruned;
  int retained = 0;
  int n = 0;
  std::vector<int> partitions;  // per pair
};

// Smallest eigenvalue of N * A in the orthonormalized basis, i.e. of the
// bilinear form (1/L) sum_l E |f_phi(X(t_l))|_S^2 restricted to the space.
inline CoercivityReport estimate_coercivity(const NormalSystem& ns, const PairwiseMeasure& mu) {
  const auto& sp = ns.space();
  const auto ob = orthonormalize(sp, mu);
  CoercivityReport rep;
  rep.gram_residual = ob.gram_residual();
  rep.pruned = ob.pruned();
  rep.retained = ob.retained();
  rep.n = sp.n();
  for (int k = 0; k < sp.K(); ++k)
    for (int kp = 0; kp < sp.K(); ++kp) rep.partitions.push_back(sp.partitions(k, kp));
  rep.lambda_min = INFINITY;
  for (int k = 0; k < sp.K(); ++k) {
    const auto& T = ob.transform(k);
    if (T.cols() == 0) {
      rep.block_lambda_min.push_back(0.0);
      continue;
    }
    const Eigen::MatrixXd A = ns.A_block(k) * static_cast<double>(ns.N());
    const Eigen::MatrixXd AT = A * T;
    const Eigen::MatrixXd At = T.transpose() * AT;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (At + At.transpose()), Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw DomainError("estimate_coercivity: eigensolver failed");
    const double lm = es.eigenvalues().minCoeff();
    rep.block_lambda_min.push_back(lm);
    rep.lambda_min = std::min(rep.lambda_min, lm);
  }
  return rep;
}

inline nlohmann::json to_json(const CoercivityReport& r) {
  return {{"lambda_min", r.lambda_min},   {"block_lambda_min", r.block_lambda_min},
          {"gram_residual", r.gram_residual}, {"pruned", r.pruned},
          {"retained", r.retained},       {"n", r.n},
          {"partitions", r.partitions}};
}

// Bin count that is a multiple of P and at least `target`, so every bin lies
// inside one piece.
inline int aligned_bins(int target, int P) { return P * std::max(1, (target + P - 1) / P); }

}  // namespace ikl
