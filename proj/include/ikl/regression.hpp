#pragma once

// Normal equations of the least-squares kernel estimator.
//
// For trajectory m the learning matrix Psi has one d-row block per (t_l, agent i)
// and one column per basis function psi_{k k' p}:
//
//   Psi(l i, offset(k,k') + p) = sqrt(1/N_{k_i}) sum_{i' in C_k'} (1/N_k') psi_{kk'p}(r_ii') (x_i' - x_i)
//
// (only for k = k_i), d = sqrt(1/N_{k_i}) dx_i/dt, and
//   A^(m) = Psi^T Psi / (L N),   b^(m) = Psi^T d / (L N).
// Rows of type-k agents only touch the columns of pairs (k, .), so A is block
// diagonal with one block per type; blocks are stored separately.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstdint>
#include <map>
#include <nlohmann/json.hpp>
#include <span>
#include <vector>

#include "ikl/error.hpp"
#include "ikl/hypothesis.hpp"
#include "ikl/system.hpp"
#include "ikl/trajectory.hpp"

namespace ikl {

enum class Overflow { error, clamp };

// Raw (unnormalized) sums over absorbed trajectories.
struct NormalTotals {
  std::vector<Eigen::MatrixXd> A;  // per type block; upper triangle is authoritative
  std::vector<Eigen::VectorXd> b;
  double dd = 0.0;                 // sum |d|^2, for the constant of the quadratic form
  std::int64_t m = 0;

  static NormalTotals zeros(const HypothesisSpace& sp) {
    NormalTotals t;
    for (int k = 0; k < sp.K(); ++k) {
      t.A.push_back(Eigen::MatrixXd::Zero(sp.block_size(k), sp.block_size(k)));
      t.b.push_back(Eigen::VectorXd::Zero(sp.block_size(k)));
    }
    return t;
  }

  void add(const NormalTotals& o) {
    for (std::size_t k = 0; k < A.size(); ++k) {
      A[k] += o.A[k];
      b[k] += o.b[k];
    }
    dd += o.dd;
    m += o.m;
  }
};

// Accumulated normal system. Every absorbed piece carries a key (trajectory or
// chunk index); totals are always the left fold over pieces in key order, so
// any merge tree over the same pieces gives bitwise identical totals.
class NormalSystem {
 public:
  NormalSystem() = default;
  NormalSystem(HypothesisSpace space, int L, int N) : space_(std::move(space)), L_(L), N_(N) {}

  NormalSystem(HypothesisSpace space, int L, int N, std::uint64_t key, NormalTotals piece)
      : NormalSystem(std::move(space), L, N) {
    pending_.emplace(key, std::move(piece));
    compact();
  }

  const HypothesisSpace& space() const { return space_; }
  int L() const { return L_; }
  int N() const { return N_; }
  std::int64_t m_count() const { return totals().m; }

  void merge(NormalSystem other) {
    if (empty_shape()) {
      *this = std::move(other);
      return;
    }
    if (other.empty_shape()) return;
    if (!(other.space_ == space_) || other.L_ != L_ || other.N_ != N_)
      throw ShapeError("NormalSystem::merge: dimension mismatch");
    if (other.head_next_ > 0) {
      // other's head already covers keys [0, head_next): it must come first.
      if (head_next_ > 0) throw DomainError("NormalSystem::merge: overlapping keys");
      std::swap(head_, other.head_);
      std::swap(head_next_, other.head_next_);
    }
    for (auto& [key, piece] : other.pending_) {
      if (key < head_next_ || !pending_.emplace(key, std::move(piece)).second)
        throw DomainError("NormalSystem::merge: overlapping keys");
    }
    compact();
  }

  // Left fold over all pieces in key order.
  NormalTotals totals() const {
    NormalTotals t = head_next_ > 0 ? head_ : NormalTotals::zeros(space_);
    if (head_next_ == 0 && pending_.empty()) return t;
    for (const auto& [key, piece] : pending_) t.add(piece);
    return t;
  }

  double scale() const {
    const auto m = totals().m;
    if (m == 0) throw DomainError("NormalSystem: no trajectories absorbed");
    return 1.0 / (static_cast<double>(m) * L_ * N_);
  }

  // Finalized type block: symmetric mean of A^(m).
  Eigen::MatrixXd A_block(int k) const { return A_block(k, totals()); }
  Eigen::VectorXd b_block(int k) const {
    const auto t = totals();
    return t.b[k] / (static_cast<double>(t.m) * L_ * N_);
  }

  Eigen::MatrixXd A() const {
    const auto t = totals();
    Eigen::MatrixXd full = Eigen::MatrixXd::Zero(space_.n(), space_.n());
    for (int k = 0; k < space_.K(); ++k)
      full.block(space_.block_begin(k), space_.block_begin(k), space_.block_size(k), space_.block_size(k)) =
          A_block(k, t);
    return full;
  }

  Eigen::VectorXd b() const {
    const auto t = totals();
    Eigen::VectorXd full(space_.n());
    const double s = 1.0 / (static_cast<double>(t.m) * L_ * N_);
    for (int k = 0; k < space_.K(); ++k) full.segment(space_.block_begin(k), space_.block_size(k)) = t.b[k] * s;
    return full;
  }

  // (1/(M L)) sum |d|^2, the empirical error of the zero kernel.
  double zero_error() const {
    const auto t = totals();
    return t.dd / (static_cast<double>(t.m) * L_);
  }

  // E_M(sum_j a_j psi_j) = N (a^T A a - 2 a^T b) + E_M(0).
  double error_of(const Eigen::VectorXd& a) const {
    const Eigen::MatrixXd Af = A();
    const Eigen::VectorXd bf = b();
    return N_ * (a.dot(Af * a) - 2.0 * a.dot(bf)) + zero_error();
  }

  nlohmann::json checkpoint() const;
  static NormalSystem from_checkpoint(const nlohmann::json& j);

 private:
  bool empty_shape() const { return space_.n() == 0 || (head_next_ == 0 && pending_.empty() && L_ == 0); }

  Eigen::MatrixXd A_block(int k, const NormalTotals& t) const {
    Eigen::MatrixXd a = t.A[k].selfadjointView<Eigen::Upper>();
    return a / (static_cast<double>(t.m) * L_ * N_);
  }

  void compact() {
    while (!pending_.empty() && pending_.begin()->first == head_next_) {
      auto node = pending_.extract(pending_.begin());
      if (head_next_ == 0)
        head_ = std::move(node.mapped());
      else
        head_.add(node.mapped());
      ++head_next_;
    }
  }

  HypothesisSpace space_;
  int L_ = 0;
  int N_ = 0;
  NormalTotals head_;               // fold over keys [0, head_next_)
  std::uint64_t head_next_ = 0;
  std::map<std::uint64_t, NormalTotals> pending_;
};

namespace detail {

// Per-row scratch: sparse set of touched block columns with their d-vectors.
struct RowScratch {
  std::vector<int> touched;
  std::vector<double> value;  // block_size * d
  std::vector<char> flag;

  void reset_size(int cols, int d) {
    value.assign(static_cast<std::size_t>(cols) * d, 0.0);
    flag.assign(static_cast<std::size_t>(cols), 0);
    touched.clear();
  }
};

}  // namespace detail

// Adds one trajectory's raw Psi^T Psi, Psi^T d and |d|^2 into `t`.
inline void assemble_into(NormalTotals& t, const SystemSpec& spec, const HypothesisSpace& space, const Trajectory& tr,
                          Overflow overflow = Overflow::error) {
  if (!tr.has_velocities()) throw DomainError("assemble_trajectory: velocities required");
  if (tr.velocities.size() != tr.states.size()) throw ShapeError("assemble_trajectory: velocity shape mismatch");
  if (space.K() != spec.K()) throw ShapeError("assemble_trajectory: space and system disagree on K");
  const int N = spec.N(), d = spec.d(), K = spec.K();
  const double R = space.R();
  std::vector<detail::RowScratch> scratch(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) scratch[k].reset_size(space.block_size(k), d);
  const int pp = space.per_piece();

  for (std::size_t l = 0; l < tr.states.size(); ++l) {
    const auto& X = tr.states[l];
    const auto& V = tr.velocities[l];
    if (X.size() != spec.dim() || V.size() != spec.dim()) throw ShapeError("assemble_trajectory: state length");
    std::span<const double> x(X.data(), X.size());
    for (int i = 0; i < N; ++i) {
      const int k = spec.type_of(i);
      auto& sc = scratch[k];
      const int base = space.block_begin(k);
      const double wi = std::sqrt(spec.inv_type_size(k));
      for (int ip = 0; ip < N; ++ip) {
        if (ip == i) continue;
        const int kp = spec.type_of(ip);
        double r = distance(x, i, ip, d);
        if (r > R) {
          if (overflow == Overflow::error)
            throw DomainError("assemble_trajectory: pairwise distance " + std::to_string(r) + " exceeds R=" +
                              std::to_string(R));
          r = R;
        }
        const auto loc = space.locate(k, kp, r);
        const int col0 = space.offset(k, kp) - base + loc->piece * pp;
        const double w = wi * spec.inv_type_size(kp);
        for (int q = 0; q < pp; ++q) {
          const double psi = q == 0 ? 1.0 : loc->u;
          const int col = col0 + q;
          if (!sc.flag[col]) {
            sc.flag[col] = 1;
            sc.touched.push_back(col);
          }
          double* v = sc.value.data() + static_cast<std::size_t>(col) * d;
          const double s = w * psi;
          for (int c = 0; c < d; ++c) v[c] += s * (x[ip * d + c] - x[i * d + c]);
        }
      }
      // Rank update of the row block into the upper triangle.
      auto& Ak = t.A[k];
      auto& bk = t.b[k];
      double dd = 0.0;
      for (int c = 0; c < d; ++c) {
        const double dv = wi * V[i * d + c];
        dd += dv * dv;
      }
      t.dd += dd;
      for (std::size_t a = 0; a < sc.touched.size(); ++a) {
        const int ca = sc.touched[a];
        const double* va = sc.value.data() + static_cast<std::size_t>(ca) * d;
        double bd = 0.0;
        for (int c = 0; c < d; ++c) bd += va[c] * wi * V[i * d + c];
        bk[ca] += bd;
        for (std::size_t bidx = 0; bidx < sc.touched.size(); ++bidx) {
          const int cb = sc.touched[bidx];
          if (cb < ca) continue;
          const double* vb = sc.value.data() + static_cast<std::size_t>(cb) * d;
          double s = 0.0;
          for (int c = 0; c < d; ++c) s += va[c] * vb[c];
          Ak(ca, cb) += s;
        }
      }
      for (int ca : sc.touched) {
        sc.flag[ca] = 0;
        std::fill_n(sc.value.data() + static_cast<std::size_t>(ca) * d, d, 0.0);
      }
      sc.touched.clear();
    }
  }
  t.m += 1;
}

inline NormalSystem assemble_trajectory(const SystemSpec& spec, const HypothesisSpace& space, const Trajectory& tr,
                                        Overflow overflow = Overflow::error, std::uint64_t key = 0) {
  NormalTotals t = NormalTotals::zeros(space);
  assemble_into(t, spec, space, tr, overflow);
  return NormalSystem(space, static_cast<int>(tr.states.size()), spec.N(), key, std::move(t));
}

// Mean of the given per-trajectory systems, folded in sequence order.
inline NormalSystem accumulate(std::vector<NormalSystem> systems) {
  if (systems.empty()) throw DomainError("accumulate: no systems");
  NormalSystem out;
  NormalTotals fold;
  bool first = true;
  for (auto& s : systems) {
    if (!first && (!(s.space() == systems.front().space()) || s.L() != systems.front().L() ||
                   s.N() != systems.front().N()))
      throw ShapeError("accumulate: dimension mismatch");
    if (first) {
      fold = s.totals();
      first = false;
    } else {
      fold.add(s.totals());
    }
  }
  const auto& f = systems.front();
  return NormalSystem(f.space(), f.L(), f.N(), 0, std::move(fold));
}

inline nlohmann::json NormalSystem::checkpoint() const {
  const auto t = totals();
  nlohmann::json j;
  j["n"] = space_.n();
  j["K"] = space_.K();
  j["R"] = space_.R();
  j["degree"] = space_.degree();
  std::vector<int> parts;
  for (int k = 0; k < space_.K(); ++k)
    for (int kp = 0; kp < space_.K(); ++kp) parts.push_back(space_.partitions(k, kp));
  j["partitions"] = parts;
  j["L"] = L_;
  j["N"] = N_;
  j["m_count"] = t.m;
  j["dd_total"] = t.dd;
  nlohmann::json blocks = nlohmann::json::array();
  for (std::size_t k = 0; k < t.A.size(); ++k) {
    std::vector<double> upper;
    const auto& a = t.A[k];
    for (Eigen::Index c = 0; c < a.cols(); ++c)
      for (Eigen::Index r = 0; r <= c; ++r) upper.push_back(a(r, c));
    blocks.push_back({{"size", a.rows()},
                      {"A_total_upper", upper},
                      {"b_total", std::vector<double>(t.b[k].data(), t.b[k].data() + t.b[k].size())}});
  }
  j["blocks"] = blocks;
  return j;
}

inline NormalSystem NormalSystem::from_checkpoint(const nlohmann::json& j) {
  HypothesisSpace sp(j.at("K").get<int>(), j.at("R").get<double>(), j.at("degree").get<int>(),
                     j.at("partitions").get<std::vector<int>>());
  if (sp.n() != j.at("n").get<int>()) throw FormatError("checkpoint: n does not match partitions");
  NormalTotals t = NormalTotals::zeros(sp);
  t.m = j.at("m_count").get<std::int64_t>();
  t.dd = j.at("dd_total").get<double>();
  const auto& blocks = j.at("blocks");
  if (static_cast<int>(blocks.size()) != sp.K()) throw FormatError("checkpoint: block count");
  for (int k = 0; k < sp.K(); ++k) {
    const auto upper = blocks[k].at("A_total_upper").get<std::vector<double>>();
    const auto bt = blocks[k].at("b_total").get<std::vector<double>>();
    const int n = sp.block_size(k);
    if (static_cast<int>(bt.size()) != n || upper.size() != static_cast<std::size_t>(n) * (n + 1) / 2)
      throw FormatError("checkpoint: block size");
    std::size_t idx = 0;
    for (int c = 0; c < n; ++c)
      for (int r = 0; r <= c; ++r) t.A[k](r, c) = upper[idx++];
    t.b[k] = Eigen::Map<const Eigen::VectorXd>(bt.data(), n);
  }
  return NormalSystem(sp, j.at("L").get<int>(), j.at("N").get<int>(), 0, std::move(t));
}

struct SolveResult {
  Eigen::VectorXd coeffs;
  int rank = 0;
  double lambda_min = 0.0;          // smallest eigenvalue of A (0 when columns are empty)
  double lambda_min_kept = 0.0;     // smallest eigenvalue above the cutoff
  double lambda_max = 0.0;
  std::vector<double> block_lambda_min;

  double condition() const { return lambda_min_kept > 0.0 ? lambda_max / lambda_min_kept : INFINITY; }
};

// a = A^+ b by symmetric eigendecomposition of each type block; eigenvalues
// below cutoff * lambda_max(A) are dropped. Columns with an exactly zero
// diagonal are zero rows/columns of the PSD matrix and are removed first.
inline SolveResult solve(const NormalSystem& ns, double cutoff = 1e-12) {
  const auto& sp = ns.space();
  SolveResult res;
  res.coeffs = Eigen::VectorXd::Zero(sp.n());

  struct Decomp {
    std::vector<int> active;
    Eigen::VectorXd evals;
    Eigen::MatrixXd evecs;
    Eigen::VectorXd b;
  };
  std::vector<Decomp> decs(static_cast<std::size_t>(sp.K()));
  bool any_pruned = false;
  for (int k = 0; k < sp.K(); ++k) {
    const Eigen::MatrixXd A = ns.A_block(k);
    const Eigen::VectorXd b = ns.b_block(k);
    if (!A.allFinite() || !b.allFinite()) throw DomainError("solve: non-finite entries");
    auto& dk = decs[k];
    for (int c = 0; c < A.rows(); ++c) {
      if (A(c, c) != 0.0)
        dk.active.push_back(c);
      else
        any_pruned = true;
    }
    const auto na = static_cast<Eigen::Index>(dk.active.size());
    if (na == 0) {
      res.block_lambda_min.push_back(0.0);
      continue;
    }
    Eigen::MatrixXd sub(na, na);
    dk.b.resize(na);
    for (Eigen::Index r = 0; r < na; ++r) {
      dk.b[r] = b[dk.active[r]];
      for (Eigen::Index c = 0; c < na; ++c) sub(r, c) = A(dk.active[r], dk.active[c]);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sub);
    if (es.info() != Eigen::Success) throw DomainError("solve: eigendecomposition failed");
    dk.evals = es.eigenvalues();
    dk.evecs = es.eigenvectors();
    res.lambda_max = std::max(res.lambda_max, dk.evals.maxCoeff());
    res.block_lambda_min.push_back(na < A.rows() ? 0.0 : dk.evals.minCoeff());
  }

  const double thresh = cutoff * res.lambda_max;
  res.lambda_min = any_pruned ? 0.0 : INFINITY;
  res.lambda_min_kept = INFINITY;
  for (int k = 0; k < sp.K(); ++k) {
    const auto& dk = decs[k];
    if (dk.active.empty()) continue;
    res.lambda_min = std::min(res.lambda_min, dk.evals.minCoeff());
    const Eigen::VectorXd proj = dk.evecs.transpose() * dk.b;
    Eigen::VectorXd y = Eigen::VectorXd::Zero(proj.size());
    for (Eigen::Index e = 0; e < proj.size(); ++e) {
      if (dk.evals[e] > thresh) {
        y[e] = proj[e] / dk.evals[e];
        ++res.rank;
        res.lambda_min_kept = std::min(res.lambda_min_kept, dk.evals[e]);
      }
    }
    const Eigen::VectorXd x = dk.evecs * y;
    for (std::size_t r = 0; r < dk.active.size(); ++r) res.coeffs[sp.block_begin(k) + dk.active[r]] = x[r];
  }
  if (!std::isfinite(res.lambda_min)) res.lambda_min = 0.0;
  if (!std::isfinite(res.lambda_min_kept)) res.lambda_min_kept = 0.0;
  return res;
}

// (1/(M L)) sum_{m,l} |dX/dt - f_phi(X)|_S^2.
inline double empirical_error(const SystemSpec& spec, const KernelSet& kernels, const TrajectoryBatch& batch) {
  if (!batch.has_velocities()) throw DomainError("empirical_error: velocities required");
  double total = 0.0;
  std::size_t count = 0;
  State f(spec.dim());
  for (const auto& tr : batch.trajectories) {
    for (std::size_t l = 0; l < tr.states.size(); ++l) {
      const auto& x = tr.states[l];
      eval_rhs(spec, kernels, std::span<const double>(x.data(), x.size()), std::span<double>(f.data(), f.size()));
      const State diff = tr.velocities[l] - f;
      total += snorm_squared(spec, std::span<const double>(diff.data(), diff.size()));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

// Assemble every trajectory of a batch (in order), solve, and wrap the result.
inline Estimator learn(const SystemSpec& spec, const HypothesisSpace& space, const TrajectoryBatch& batch,
                       Overflow overflow = Overflow::error, SolveResult* info = nullptr) {
  if (!batch.has_velocities()) throw DomainError("learn: velocities required");
  NormalTotals t = NormalTotals::zeros(space);
  for (const auto& tr : batch.trajectories) assemble_into(t, spec, space, tr, overflow);
  const NormalSystem ns(space, batch.L(), spec.N(), 0, std::move(t));
  SolveResult res = solve(ns);
  Estimator est(space, res.coeffs);
  if (info) *info = std::move(res);
  return est;
}

}  // namespace ikl
