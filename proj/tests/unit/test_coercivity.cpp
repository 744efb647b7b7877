#include <gtest/gtest.h>

#include <cmath>

#include "ikl/coercivity.hpp"
#include "ikl/generate.hpp"
#include "ikl/models.hpp"

using namespace ikl;

namespace {

struct Setup {
  NormalSystem ns;
  PairwiseMeasure mu;
};

Setup assemble(const ObservationModel& om, const HypothesisSpace& sp, int bins, long M, std::uint64_t seed) {
  const auto batch = generate_batch(om, seed, Stream::coercivity, 0, M);
  auto t = NormalTotals::zeros(sp);
  PairwiseMeasure mu(sp.K(), sp.R(), bins);
  for (const auto& tr : batch.trajectories) {
    assemble_into(t, om.spec, sp, tr, Overflow::clamp);
    mu.add_trajectory(om.spec, tr);
  }
  return {NormalSystem(sp, batch.L(), om.spec.N(), 0, std::move(t)), std::move(mu)};
}

ObservationModel opinion_model(int N) {
  ObservationModel om;
  om.spec = SystemSpec(1, std::vector<int>{N}, {kernel_from_json("opinion")});
  om.samplers = {InitialSampler::interval(0, 4)};
  om.times = linspace(0.0, 0.5, 4);
  return om;
}

// Weighted Gram matrix of the orthonormalized functions, recomputed from scratch.
Eigen::MatrixXd gram(const OrthonormalizedBasis& ob, const PairwiseMeasure& mu, int k) {
  const auto& sp = ob.space();
  const Eigen::MatrixXd T = ob.transform(k);
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(T.cols(), T.cols());
  for (int kp = 0; kp < sp.K(); ++kp) {
    const auto& h = mu.pair(k, kp);
    if (h.empty()) continue;
    const auto mass = h.masses();
    for (int b = 0; b < h.bins(); ++b) {
      if (mass[b] == 0.0) continue;
      const double r = h.midpoint(b);
      Eigen::VectorXd f = Eigen::VectorXd::Zero(T.cols());
      for (int p = 0; p < sp.n(k, kp); ++p)
        f += sp.eval_basis(k, kp, p, r) * T.row(sp.offset(k, kp) - sp.block_begin(k) + p).transpose();
      G += mass[b] * r * r * f * f.transpose();
    }
  }
  return G;
}

}  // namespace

TEST(Orthonormalize, SingleFunctionOfNormTwoIsHalved) {
  HypothesisSpace sp(1, 4.0, 0, 1);
  PairwiseMeasure unit(1, 4.0, 1);
  unit.pair(0, 0).add(0.3);  // one bin with midpoint 2
  const auto ob = orthonormalize(sp, unit);
  ASSERT_EQ(ob.transform(0).cols(), 1);
  EXPECT_DOUBLE_EQ(Eigen::MatrixXd(ob.transform(0))(0, 0), 0.5);
  // Midpoints 1 and 3 with equal mass: norm^2 = (1 + 9) / 2.
  PairwiseMeasure two(1, 4.0, 2);
  two.pair(0, 0).add(1.0);
  two.pair(0, 0).add(3.0);
  EXPECT_NEAR(Eigen::MatrixXd(orthonormalize(sp, two).transform(0))(0, 0), 1.0 / std::sqrt(5.0), 1e-15);
}

TEST(Orthonormalize, DisjointIndicatorsAreOnlyRescaled) {
  HypothesisSpace sp(1, 4.0, 0, 4);
  PairwiseMeasure mu(1, 4.0, 4);
  for (double r : {0.5, 1.5, 2.5, 3.5}) mu.pair(0, 0).add(r);
  const Eigen::MatrixXd T = orthonormalize(sp, mu).transform(0);
  ASSERT_EQ(T.cols(), 4);
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      const double expect = a == b ? 1.0 / (0.5 * (a + 0.5)) : 0.0;
      EXPECT_NEAR(T(a, b), expect, 1e-14);
    }
}

TEST(Orthonormalize, GramResidualOnRandomDegreeOneSpace) {
  HypothesisSpace sp(2, 3.0, 1, std::vector<int>{7, 5, 10, 4});
  PairwiseMeasure mu(2, 3.0, 1000);
  Rng rng(13);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int q = 0; q < 4; ++q)
    for (int s = 0; s < 20000; ++s) mu.pair(q / 2, q % 2).add(u(rng) * u(rng) / 3.0);
  const auto ob = orthonormalize(sp, mu);
  EXPECT_LE(ob.gram_residual(), 1e-8);
  for (int k = 0; k < 2; ++k) {
    const Eigen::MatrixXd G = gram(ob, mu, k);
    EXPECT_LE((G - Eigen::MatrixXd::Identity(G.rows(), G.cols())).cwiseAbs().maxCoeff(), 1e-8);
  }
  EXPECT_TRUE(ob.pruned().empty());
}

TEST(Coercivity, OneDimensionalSpanIsTheDiagonalEntry) {
  const auto om = opinion_model(5);
  HypothesisSpace sp(1, 10.0, 0, 1);
  const auto s = assemble(om, sp, 1000, 20, 3);
  const auto rep = estimate_coercivity(s.ns, s.mu);
  const double t = Eigen::MatrixXd(orthonormalize(sp, s.mu).transform(0))(0, 0);
  EXPECT_NEAR(rep.lambda_min, 5.0 * s.ns.A()(0, 0) * t * t, 1e-14);
  EXPECT_GT(rep.lambda_min, 0.0);
  EXPECT_EQ(rep.retained, 1);
}

TEST(Coercivity, TwoAgentsSinglePieceIsQuarter) {
  // N = 2: |f|_S^2 = 2 * (1/2) * (phi(r) r / 2)^2 per agent pair, so the
  // quotient is (N - 1) / N^2 = 1/4 up to the midpoint quadrature of the norm.
  ObservationModel om = opinion_model(2);
  const auto s = assemble(om, HypothesisSpace(1, 10.0, 0, 1), 100000, 30, 5);
  EXPECT_NEAR(estimate_coercivity(s.ns, s.mu).lambda_min, 0.25, 1e-3);
}

TEST(Coercivity, NestedSpacesAreMonotoneAndNonnegative) {
  const auto om = opinion_model(6);
  double prev = INFINITY;
  for (int P : {4, 8, 16, 32}) {
    const auto s = assemble(om, HypothesisSpace(1, 6.0, 0, P), aligned_bins(960, 32), 40, 7);
    const auto rep = estimate_coercivity(s.ns, s.mu);
    SolveResult sr = solve(s.ns);
    EXPECT_GE(rep.lambda_min, -1e-10 * sr.lambda_max * 6.0);
    EXPECT_LE(rep.lambda_min, prev * (1.0 + 1e-10)) << P;
    EXPECT_LE(rep.gram_residual, 1e-8);
    prev = rep.lambda_min;
  }
}

TEST(Coercivity, EmptyPairIsPruned) {
  ObservationModel om;
  om.spec = SystemSpec(1, std::vector<int>{4, 1},
                       {kernel_from_json("opinion"), kernel_from_json("opinion"), kernel_from_json("opinion"), Kernel()});
  om.samplers = {InitialSampler::interval(0, 3), InitialSampler::interval(0, 3)};
  om.times = linspace(0.0, 0.3, 3);
  HypothesisSpace sp(2, 3.0, 1, 5);
  const auto s = assemble(om, sp, 400, 20, 9);
  const auto rep = estimate_coercivity(s.ns, s.mu);
  EXPECT_EQ(rep.pruned.size(), 10u);
  EXPECT_EQ(rep.pruned.front(), sp.offset(1, 1));
  EXPECT_EQ(rep.retained, sp.n() - 10);
  EXPECT_EQ(rep.block_lambda_min.size(), 2u);
  EXPECT_GT(rep.block_lambda_min[1], 0.0);
  PairwiseMeasure empty(2, 3.0, 400);
  EXPECT_THROW(orthonormalize(sp, empty), DomainError);
}

TEST(Coercivity, ExchangeableGaussianLowerBound) {
  ObservationModel om;
  om.spec = SystemSpec(1, std::vector<int>{10}, {kernel_from_json("opinion")});
  om.samplers = {InitialSampler::exchangeable(1.0)};
  om.times = {0.0};
  const int P = 8;
  const auto s = assemble(om, HypothesisSpace(1, 6.0, 0, P), aligned_bins(6000, P), 20000, 11);
  // (N - 1) / N^2 = 0.09, with 10% sampling slack.
  EXPECT_GE(estimate_coercivity(s.ns, s.mu).lambda_min, 0.081);
}
