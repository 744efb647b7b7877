#include <gtest/gtest.h>

#include <cmath>

#include "ikl/evaluation.hpp"
#include "ikl/generate.hpp"
#include "ikl/measure.hpp"
#include "ikl/models.hpp"
#include "ikl/regression.hpp"

using namespace ikl;

namespace {

Kernel constant(double c) { return Kernel([c](double) { return c; }, {{"kind", "constant"}, {"value", c}}); }

// Psi built entry by entry: row (l, i, c), column (k, k', p).
struct DenseSystem {
  Eigen::MatrixXd Psi;
  Eigen::VectorXd d;
};

DenseSystem literal_psi(const SystemSpec& spec, const HypothesisSpace& sp, const Trajectory& tr) {
  const int N = spec.N(), d = spec.d(), L = static_cast<int>(tr.states.size());
  DenseSystem s{Eigen::MatrixXd::Zero(L * N * d, sp.n()), Eigen::VectorXd::Zero(L * N * d)};
  std::vector<int> count(spec.K(), 0);
  for (int i = 0; i < N; ++i) ++count[spec.type_of(i)];
  for (int l = 0; l < L; ++l) {
    const State& x = tr.states[l];
    for (int i = 0; i < N; ++i) {
      const int ki = spec.type_of(i);
      for (int c = 0; c < d; ++c) {
        const int row = (l * N + i) * d + c;
        s.d[row] = std::sqrt(1.0 / count[ki]) * tr.velocities[l][i * d + c];
        for (int j = 0; j < sp.n(); ++j) {
          const auto bi = sp.from_stacked(j);
          if (bi.k != ki) continue;
          double sum = 0;
          for (int ip = 0; ip < N; ++ip) {
            if (spec.type_of(ip) != bi.kp || ip == i) continue;
            double r2 = 0;
            for (int e = 0; e < d; ++e) r2 += std::pow(x[ip * d + e] - x[i * d + e], 2);
            sum += sp.eval_basis(bi.k, bi.kp, bi.p, std::sqrt(r2)) * (x[ip * d + c] - x[i * d + c]);
          }
          s.Psi(row, j) = std::sqrt(1.0 / count[ki]) * sum / count[bi.kp];
        }
      }
    }
  }
  return s;
}

Trajectory random_trajectory(const SystemSpec& spec, int L, Rng& rng, double span = 2.0) {
  std::uniform_real_distribution<double> u(0.0, span), v(-1.0, 1.0);
  Trajectory tr;
  for (int l = 0; l < L; ++l) {
    State x(spec.dim()), w(spec.dim());
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      x[j] = u(rng);
      w[j] = v(rng);
    }
    tr.states.push_back(x);
    tr.velocities.push_back(w);
  }
  return tr;
}

SystemSpec two_type_spec() {
  return SystemSpec(2, std::vector<int>{3, 2}, {constant(1), constant(0.5), constant(-0.5), constant(0.2)});
}

ObservationModel planted_model(const KernelSet& ks) {
  ObservationModel om;
  om.spec = SystemSpec(1, std::vector<int>{6}, ks);
  // Positive kernel in 1-D: the diameter never grows, so distances stay below R.
  om.samplers = {InitialSampler::interval(0, 3.99)};
  om.times = linspace(0.0, 0.2, 5);
  om.velocity = VelocityMode::exact;
  return om;
}

Estimator planted_estimator() {
  HypothesisSpace sp(1, 4.0, 1, 4);
  Eigen::VectorXd c(8);
  c << 0.8, -0.3, 0.5, -0.4, 0.1, 0.2, 0.3, -0.2;
  return Estimator(sp, c);
}

}  // namespace

TEST(Assemble, MatchesLiteralLoopNest) {
  Rng rng(17);
  const auto spec = two_type_spec();
  HypothesisSpace sp(2, 4.0, 1, std::vector<int>{3, 2, 4, 1});
  const auto tr = random_trajectory(spec, 3, rng);
  const auto oracle = literal_psi(spec, sp, tr);
  const auto ns = assemble_trajectory(spec, sp, tr);
  const double LN = 3.0 * spec.N();
  const Eigen::MatrixXd A = oracle.Psi.transpose() * oracle.Psi / LN;
  const Eigen::VectorXd b = oracle.Psi.transpose() * oracle.d / LN;
  EXPECT_LE((ns.A() - A).cwiseAbs().maxCoeff(), 1e-13 * A.cwiseAbs().maxCoeff());
  EXPECT_LE((ns.b() - b).cwiseAbs().maxCoeff(), 1e-13 * b.cwiseAbs().maxCoeff());
  EXPECT_NEAR(ns.zero_error() * 3.0, oracle.d.squaredNorm() / 1.0, 1e-12);
}

TEST(Assemble, TwoAgentsByHand) {
  // x = (0, 1.5), v = (1, -2), one indicator per half of [0, 2].
  SystemSpec spec(1, std::vector<int>{2}, {constant(1)});
  HypothesisSpace sp(1, 2.0, 0, 2);
  State x(2), v(2);
  x << 0.0, 1.5;
  v << 1.0, -2.0;
  const auto ns = assemble_trajectory(spec, sp, Trajectory{{x}, {v}});
  // Psi rows: agent 0 -> sqrt(1/2) * (1/2) * 1.5 in column 1; agent 1 -> sqrt(1/2) * (1/2) * (-1.5).
  const double a = std::sqrt(0.5) * 0.5 * 1.5;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2, 2);
  A(1, 1) = 2 * a * a / 2.0;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(2);
  b[1] = (a * std::sqrt(0.5) * 1.0 + (-a) * std::sqrt(0.5) * -2.0) / 2.0;
  EXPECT_NEAR((ns.A() - A).norm(), 0.0, 1e-15);
  EXPECT_NEAR((ns.b() - b).norm(), 0.0, 1e-15);
}

TEST(Assemble, ZeroVelocitiesGiveZeroMoment) {
  Rng rng(3);
  const auto spec = two_type_spec();
  auto tr = random_trajectory(spec, 4, rng);
  for (auto& v : tr.velocities) v.setZero();
  const auto ns = assemble_trajectory(spec, HypothesisSpace(2, 4.0, 1, 5), tr);
  EXPECT_EQ(ns.b().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(ns.zero_error(), 0.0);
}

TEST(Assemble, OverflowModes) {
  SystemSpec spec(1, std::vector<int>{2}, {constant(1)});
  State x(2), v(2);
  x << 0.0, 3.0;
  v << 0.0, 0.0;
  const Trajectory tr{{x}, {v}};
  HypothesisSpace sp(1, 2.0, 0, 4);
  EXPECT_THROW(assemble_trajectory(spec, sp, tr), DomainError);
  const auto ns = assemble_trajectory(spec, sp, tr, Overflow::clamp);
  EXPECT_GT(ns.A()(3, 3), 0.0);
  EXPECT_EQ(ns.A()(0, 0), 0.0);
  EXPECT_THROW(assemble_trajectory(spec, sp, Trajectory{{x}, {}}), DomainError);
}

TEST(Accumulate, SingleAndRepeatedCopies) {
  Rng rng(5);
  const auto spec = two_type_spec();
  HypothesisSpace sp(2, 4.0, 1, 3);
  const auto one = assemble_trajectory(spec, sp, random_trajectory(spec, 2, rng));
  const auto same = accumulate({one});
  EXPECT_EQ(same.A(), one.A());
  EXPECT_EQ(same.b(), one.b());
  const auto many = accumulate(std::vector<NormalSystem>(8, one));
  EXPECT_LE((many.A() - one.A()).cwiseAbs().maxCoeff(), 1e-14 * one.A().cwiseAbs().maxCoeff());
  EXPECT_EQ(many.m_count(), 8);
  EXPECT_THROW(accumulate({one, assemble_trajectory(spec, HypothesisSpace(2, 4.0, 1, 4),
                                                    random_trajectory(spec, 2, rng))}),
               ShapeError);
}

TEST(Accumulate, MergeIsBitwiseAssociative) {
  Rng rng(7);
  const auto spec = two_type_spec();
  HypothesisSpace sp(2, 4.0, 1, 6);
  std::vector<NormalSystem> s;
  for (std::uint64_t m = 0; m < 3; ++m) {
    auto t = NormalTotals::zeros(sp);
    for (int rep = 0; rep < 3; ++rep) assemble_into(t, spec, sp, random_trajectory(spec, 2, rng));
    s.emplace_back(sp, 2, spec.N(), m, std::move(t));
  }
  NormalSystem left = s[0];
  left.merge(s[1]);
  left.merge(s[2]);
  NormalSystem inner = s[1];
  inner.merge(s[2]);
  NormalSystem right = s[0];
  right.merge(inner);
  NormalSystem reversed = s[2];
  reversed.merge(s[1]);
  reversed.merge(s[0]);
  for (const auto* o : {&right, &reversed}) {
    const auto a = left.totals(), b = o->totals();
    for (int k = 0; k < 2; ++k) {
      EXPECT_EQ(a.A[k], b.A[k]);
      EXPECT_EQ(a.b[k], b.b[k]);
    }
    EXPECT_EQ(a.dd, b.dd);
    EXPECT_EQ(a.m, b.m);
  }
  NormalSystem dup = s[0];
  EXPECT_THROW(dup.merge(s[0]), DomainError);
}

TEST(Checkpoint, RoundTripIsExact) {
  Rng rng(9);
  const auto spec = two_type_spec();
  HypothesisSpace sp(2, 4.0, 1, std::vector<int>{2, 3, 4, 5});
  const auto ns = assemble_trajectory(spec, sp, random_trajectory(spec, 3, rng));
  const auto back = NormalSystem::from_checkpoint(nlohmann::json::parse(ns.checkpoint().dump()));
  EXPECT_EQ(back.A(), ns.A());
  EXPECT_EQ(back.b(), ns.b());
  EXPECT_EQ(back.zero_error(), ns.zero_error());
  EXPECT_EQ(back.m_count(), ns.m_count());
}

TEST(Solve, IdentityReturnsRhs) {
  HypothesisSpace sp(1, 1.0, 0, 3);
  auto t = NormalTotals::zeros(sp);
  t.A[0] = Eigen::MatrixXd::Identity(3, 3);
  t.b[0] << 1.0, -2.0, 0.5;
  t.m = 1;
  const auto r = solve(NormalSystem(sp, 1, 1, 0, t));
  EXPECT_NEAR((r.coeffs - t.b[0]).norm(), 0.0, 1e-14);
  EXPECT_EQ(r.rank, 3);
  EXPECT_NEAR(r.condition(), 1.0, 1e-12);
}

TEST(Solve, SingularMinimumNorm) {
  HypothesisSpace sp(1, 1.0, 0, 3);
  auto t = NormalTotals::zeros(sp);
  Eigen::Vector3d u(1.0, 2.0, -1.0), w(0.5, 0.0, 1.0);
  t.A[0] = u * u.transpose() + w * w.transpose();
  t.b[0] = 2.0 * u - 3.0 * w;
  t.m = 1;
  const NormalSystem ns(sp, 1, 1, 0, t);
  const auto r = solve(ns);
  EXPECT_EQ(r.rank, 2);
  EXPECT_LE((ns.A() * r.coeffs - ns.b()).norm(), 1e-10 * ns.b().norm());
  // Minimum norm: no component along the null vector u x w.
  EXPECT_NEAR(r.coeffs.dot(u.cross(w)), 0.0, 1e-12);
  t.A[0](0, 1) = NAN;
  EXPECT_THROW(solve(NormalSystem(sp, 1, 1, 0, t)), DomainError);
}

TEST(Solve, RecoversPlantedKernel) {
  const auto truth = planted_estimator();
  const auto om = planted_model(truth.raw_kernels());
  const auto batch = generate_batch(om, 21, Stream::training, 0, 64);
  SolveResult info;
  const auto est = learn(om.spec, truth.space(), batch, Overflow::error, &info);
  EXPECT_EQ(info.rank, 8);
  EXPECT_LE((est.coeffs() - truth.coeffs()).norm(), 1e-6 * truth.coeffs().norm());
}

TEST(EmpiricalError, TruthAndZeroKernel) {
  const auto truth = planted_estimator();
  const auto om = planted_model(truth.raw_kernels());
  const auto batch = generate_batch(om, 23, Stream::training, 0, 8);
  EXPECT_LE(empirical_error(om.spec, truth.raw_kernels(), batch), 1e-10);
  double zero = 0;
  for (const auto& tr : batch.trajectories)
    for (const auto& v : tr.velocities) zero += snorm_squared(om.spec, std::span<const double>(v.data(), v.size()));
  zero /= 8.0 * 5.0;
  EXPECT_NEAR(empirical_error(om.spec, {Kernel()}, batch), zero, 1e-14 * zero);
  TrajectoryBatch novel = batch;
  novel.trajectories[0].velocities.clear();
  EXPECT_THROW(empirical_error(om.spec, {Kernel()}, novel), DomainError);
}

TEST(EmpiricalError, QuadraticIdentityAndOptimality) {
  // Opinion data fit with piecewise constants: the quadratic form must match
  // direct evaluation and the solver output must beat any perturbation.
  ObservationModel om;
  om.spec = SystemSpec(1, std::vector<int>{8}, {kernel_from_json("opinion")});
  om.samplers = {InitialSampler::interval(0, 3)};
  om.times = linspace(0.0, 0.5, 6);
  const auto batch = generate_batch(om, 25, Stream::training, 0, 12);
  HypothesisSpace sp(1, 4.0, 0, 12);
  auto t = NormalTotals::zeros(sp);
  for (const auto& tr : batch.trajectories) assemble_into(t, om.spec, sp, tr);
  const NormalSystem ns(sp, batch.L(), om.spec.N(), 0, std::move(t));
  const auto sol = solve(ns).coeffs;
  Rng rng(31);
  std::normal_distribution<double> g(0.0, 0.2);
  const double best = empirical_error(om.spec, Estimator(sp, sol).raw_kernels(), batch);
  EXPECT_NEAR(ns.error_of(sol), best, 1e-8 * best);
  for (int rep = 0; rep < 100; ++rep) {
    Eigen::VectorXd a = sol;
    for (Eigen::Index j = 0; j < a.size(); ++j) a[j] += g(rng);
    const double direct = empirical_error(om.spec, Estimator(sp, a).raw_kernels(), batch);
    EXPECT_NEAR(ns.error_of(a), direct, 1e-8 * direct);
    EXPECT_GE(direct, best * (1.0 - 1e-10));
  }
}

TEST(NormalSystemProperties, SymmetricPsdAndPermutationInvariant) {
  Rng rng(41);
  const auto spec = two_type_spec();
  HypothesisSpace sp(2, 4.0, 1, 4);
  auto tr = random_trajectory(spec, 3, rng);
  const auto ns = assemble_trajectory(spec, sp, tr);
  const Eigen::MatrixXd A = ns.A();
  EXPECT_LE((A - A.transpose()).cwiseAbs().maxCoeff(), 1e-12 * A.cwiseAbs().maxCoeff());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10 * es.eigenvalues().maxCoeff());

  // Swap agents 0 and 2 (type 0) and 3 and 4 (type 1).
  Trajectory perm = tr;
  for (std::size_t l = 0; l < tr.states.size(); ++l)
    for (auto* v : {&perm.states[l], &perm.velocities[l]})
      for (auto [i, j] : {std::pair{0, 2}, std::pair{3, 4}})
        v->segment(2 * i, 2).swap(v->segment(2 * j, 2));
  const auto np = assemble_trajectory(spec, sp, perm);
  EXPECT_LE((np.A() - A).cwiseAbs().maxCoeff(), 1e-12 * A.cwiseAbs().maxCoeff());
  EXPECT_LE((np.b() - ns.b()).cwiseAbs().maxCoeff(), 1e-12 * ns.b().cwiseAbs().maxCoeff());
}

TEST(JensenBound, HoldsForPerturbedKernels) {
  ObservationModel om;
  om.spec = two_type_spec().with_kernels(
      {kernel_from_json("opinion"), constant(0.4), constant(-0.3), kernel_from_json("opinion")});
  om.samplers = {InitialSampler::interval(0, 2), InitialSampler::interval(0, 2)};
  om.times = linspace(0.0, 0.5, 4);
  const auto batch = generate_batch(om, 43, Stream::training, 0, 6);
  const KernelSet est{constant(0.1), constant(0.0), constant(-0.1), Kernel([](double r) { return std::sin(r); }, {})};
  const auto j = jensen_check(om.spec, est, batch);
  EXPECT_GT(j.lhs, 0.0);
  EXPECT_TRUE(j.holds()) << j.lhs << " vs " << j.rhs;
  // With exact velocities the residual of est is the lhs.
  EXPECT_NEAR(empirical_error(om.spec, est, batch), j.lhs, 1e-12 * j.lhs);
  EXPECT_EQ(jensen_check(om.spec, om.spec.kernels(), batch).lhs, 0.0);
}
