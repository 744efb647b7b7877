#pragma once

// Config-driven benchmark pipeline: reference measure, learning trials over a
// grid of M, kernel and trajectory errors, rate fits, coercivity estimates.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ikl/coercivity.hpp"
#include "ikl/error.hpp"
#include "ikl/evaluation.hpp"
#include "ikl/generate.hpp"
#include "ikl/hypothesis.hpp"
#include "ikl/io.hpp"
#include "ikl/measure.hpp"
#include "ikl/models.hpp"
#include "ikl/parallel.hpp"
#include "ikl/regression.hpp"

namespace ikl {

struct ExperimentConfig {
  nlohmann::json resolved;  // config after applying the profile
  std::string name;
  std::uint64_t seed = 0;

  SystemSpec spec;
  std::vector<InitialSampler> samplers;
  double t1 = 0.0, tL = 1.0, tf = 1.0;
  int L = 2;
  Tolerances tol;

  int degree = 0;
  double regularity = 1.0;
  double multiplier = 1.0;
  std::optional<double> R;  // empty: largest distance seen in the reference batch
  std::vector<long> M_list;
  int trials = 1;
  VelocityMode velocity = VelocityMode::exact;
  NoiseModel noise = NoiseModel::additive;
  double sigma = 0.0;
  Overflow overflow = Overflow::error;
  int jensen_trajectories = 16;
  std::string smoothing = "grid";  // "grid" (fine uniform grid) or "midpoints" (piece centres)

  long M_rho = 1000;
  int bins = 1000;

  long coercivity_M = 1000;
  std::optional<double> coercivity_R;  // empty: same radius as learning
  bool coercivity_R_auto = false;      // largest distance in the reference batch
  std::vector<int> coercivity_partitions;
  int coercivity_bins = 1000;

  bool prediction = false;
  int prediction_ics = 10;
  int prediction_nodes = 200;
  int large_n_factor = 4;

  std::vector<double> sweep_sigmas;

  std::vector<double> times() const { return linspace(t1, tL, L); }

  ObservationModel observation(VelocityMode v, double noise_sigma) const {
    ObservationModel om;
    om.spec = spec;
    om.samplers = samplers;
    om.times = times();
    om.velocity = v;
    om.tol = tol;
    om.noise_sigma = noise_sigma;
    om.noise = noise;
    return om;
  }

  int partitions(long M) const { return choose_dimension(static_cast<double>(M), regularity, multiplier); }
};

namespace detail {

inline Overflow overflow_from_string(const std::string& s) {
  if (s == "error") return Overflow::error;
  if (s == "clamp") return Overflow::clamp;
  throw FormatError("unknown overflow mode '" + s + "'");
}

}  // namespace detail

// Applies profiles[profile] as a JSON merge patch, then parses and validates.
inline ExperimentConfig parse_config(nlohmann::json j, const std::string& profile = "full") {
  if (!j.is_object()) throw FormatError("config: top level must be an object");
  if (j.contains("profiles")) {
    const auto& ps = j.at("profiles");
    if (ps.contains(profile))
      j.merge_patch(ps.at(profile));
    else if (profile != "full")
      throw FormatError("config: unknown profile '" + profile + "'");
    j.erase("profiles");
  } else if (profile != "full" && profile != "ci") {
    throw FormatError("config: unknown profile '" + profile + "'");
  }
  j["profile"] = profile;

  ExperimentConfig c;
  try {
    c.name = j.value("name", std::string("experiment"));
    c.seed = j.value("seed", std::uint64_t{0});
    const auto& sys = j.at("system");
    const int d = sys.at("d").get<int>();
    const auto sizes = sys.at("type_sizes").get<std::vector<int>>();
    KernelSet ks;
    for (const auto& k : sys.at("kernels")) ks.push_back(kernel_from_json(k));
    c.spec = SystemSpec(d, sizes, ks);
    for (const auto& s : sys.at("samplers")) c.samplers.push_back(sampler_from_json(s));
    if (static_cast<int>(c.samplers.size()) != c.spec.K()) throw FormatError("config: need one sampler per type");
    const auto& t = sys.at("times");
    c.t1 = t.at("t1").get<double>();
    c.tL = t.at("tL").get<double>();
    c.tf = t.value("tf", c.tL);
    c.L = t.at("L").get<int>();
    if (c.L < 1 || (c.L == 1 && c.tL != c.t1) || (c.L > 1 && !(c.tL > c.t1)) || c.tf < c.tL)
      throw FormatError("config: need L >= 1, t1 < tL (t1 = tL when L = 1) and tL <= tf");
    if (sys.contains("tolerances")) {
      c.tol.rel = sys["tolerances"].value("rel", c.tol.rel);
      c.tol.abs = sys["tolerances"].value("abs", c.tol.abs);
    }

    const auto& ln = j.at("learning");
    c.degree = ln.at("degree").get<int>();
    c.regularity = ln.at("regularity").get<double>();
    c.multiplier = ln.at("multiplier").get<double>();
    if (ln.at("R").is_string()) {
      if (ln.at("R").get<std::string>() != "auto") throw FormatError("config: learning.R must be a number or \"auto\"");
    } else {
      c.R = ln.at("R").get<double>();
    }
    c.M_list = ln.at("M").get<std::vector<long>>();
    if (c.M_list.empty()) throw FormatError("config: learning.M must not be empty");
    for (std::size_t q = 0; q < c.M_list.size(); ++q) {
      if (c.M_list[q] < 2) throw FormatError("config: every M must be >= 2");
      if (q > 0 && c.M_list[q] <= c.M_list[q - 1]) throw FormatError("config: learning.M must be sorted ascending");
    }
    c.trials = ln.value("trials", 1);
    c.velocity = velocity_mode_from_string(ln.value("velocity", std::string("exact")));
    if (c.velocity == VelocityMode::none) throw FormatError("config: learning.velocity must be exact or finite-difference");
    if (ln.contains("noise")) {
      c.noise = noise_model_from_string(ln["noise"].value("model", std::string("additive")));
      c.sigma = ln["noise"].value("sigma", 0.0);
      if (ln["noise"].contains("sweep")) c.sweep_sigmas = ln["noise"]["sweep"].get<std::vector<double>>();
      if (c.sigma < 0.0) throw FormatError("config: noise sigma must be >= 0");
    }
    c.overflow = detail::overflow_from_string(ln.value("overflow", std::string("error")));
    c.jensen_trajectories = ln.value("jensen_trajectories", 16);
    c.smoothing = ln.value("smoothing", std::string("grid"));
    if (c.smoothing != "grid" && c.smoothing != "midpoints")
      throw FormatError("config: learning.smoothing must be \"grid\" or \"midpoints\"");

    const auto& ms = j.at("measure");
    c.M_rho = ms.at("M_rho").get<long>();
    c.bins = ms.value("bins", 1000);
    if (c.M_rho < 1 || c.bins < 1) throw FormatError("config: measure needs M_rho >= 1 and bins >= 1");

    if (j.contains("coercivity")) {
      const auto& co = j["coercivity"];
      c.coercivity_M = co.value("M", 1000L);
      c.coercivity_partitions = co.value("partitions", std::vector<int>{});
      c.coercivity_bins = co.value("bins", c.bins);
      if (co.contains("R")) {
        if (co["R"].is_string()) {
          if (co["R"].get<std::string>() != "auto")
            throw FormatError("config: coercivity.R must be a number or \"auto\"");
          c.coercivity_R_auto = true;
        } else {
          c.coercivity_R = co["R"].get<double>();
        }
      }
    }
    if (j.contains("prediction")) {
      const auto& pr = j["prediction"];
      c.prediction = pr.value("enabled", true);
      c.prediction_ics = pr.value("ics", 10);
      c.prediction_nodes = pr.value("nodes", 200);
      c.large_n_factor = pr.value("large_n_factor", 4);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  c.resolved = std::move(j);
  return c;
}

inline ExperimentConfig load_config(const std::string& path, const std::string& profile = "full") {
  return parse_config(read_json(path), profile);
}

// Largest pairwise distance over the reference batch (first pass when R is "auto").
inline double reference_radius(const ExperimentConfig& c, int threads) {
  const auto om = c.observation(VelocityMode::none, 0.0);
  return chunked_reduce(
      static_cast<std::size_t>(c.M_rho), 16, threads, [] { return 0.0; },
      [&](double& acc, std::size_t m) {
        const auto tr = generate_trajectory(om, c.seed, Stream::reference, m);
        for (const auto& x : tr.states)
          for (int i = 0; i < c.spec.N(); ++i)
            for (int ip = i + 1; ip < c.spec.N(); ++ip)
              acc = std::max(acc, distance(std::span<const double>(x.data(), x.size()), i, ip, c.spec.d()));
      },
      [](double& total, const double& part) { total = std::max(total, part); });
}

inline PairwiseMeasure reference_measure(const ExperimentConfig& c, double R, int threads) {
  const auto om = c.observation(VelocityMode::none, 0.0);
  const int K = c.spec.K();
  return chunked_reduce(
      static_cast<std::size_t>(c.M_rho), 16, threads, [&] { return PairwiseMeasure(K, R, c.bins); },
      [&](PairwiseMeasure& mu, std::size_t m) {
        mu.add_trajectory(c.spec, generate_trajectory(om, c.seed, Stream::reference, m));
      },
      [](PairwiseMeasure& total, const PairwiseMeasure& part) { total.merge(part); });
}

inline std::uint64_t training_index(int trial, long m) {
  return (static_cast<std::uint64_t>(trial) << 32) | static_cast<std::uint64_t>(m);
}

struct CellResult {
  long M = 0;
  int trial = 0;
  double sigma = 0.0;
  bool ok = false;
  std::string error;
  Estimator estimator;
  SolveResult solve;
  KernelErrorReport raw, smoothed;
  double empirical_error = 0.0;
  std::optional<JensenCheck> jensen;
  std::optional<PredictionReport> prediction;
};

struct RunContext {
  double R = 0.0;
  PairwiseMeasure reference;
};

inline double coercivity_radius(const ExperimentConfig& c, int threads) {
  if (c.coercivity_R) return *c.coercivity_R;
  if (c.coercivity_R_auto || !c.R) return reference_radius(c, threads);
  return *c.R;
}

inline RunContext prepare_context(const ExperimentConfig& c, int threads) {
  RunContext ctx;
  ctx.R = c.R ? *c.R : reference_radius(c, threads);
  ctx.reference = reference_measure(c, ctx.R, threads);
  return ctx;
}

// One learning trial: stream M training trajectories into the normal system,
// solve, smooth, evaluate.
inline CellResult run_cell(const ExperimentConfig& c, const RunContext& ctx, long M, int trial, double sigma,
                           int threads, bool with_prediction) {
  CellResult cell;
  cell.M = M;
  cell.trial = trial;
  cell.sigma = sigma;
  try {
    const HypothesisSpace space(c.spec.K(), ctx.R, c.degree, c.partitions(M));
    const auto om = c.observation(c.velocity, sigma);
    const int L = static_cast<int>(om.times.size());
    NormalTotals totals = chunked_reduce(
        static_cast<std::size_t>(M), 16, threads, [&] { return NormalTotals::zeros(space); },
        [&](NormalTotals& acc, std::size_t m) {
          const auto tr = generate_trajectory(om, c.seed, Stream::training, training_index(trial, static_cast<long>(m)));
          assemble_into(acc, c.spec, space, tr, c.overflow);
        },
        [](NormalTotals& total, const NormalTotals& part) { total.add(part); });
    const NormalSystem ns(space, L, c.spec.N(), 0, std::move(totals));
    cell.solve = solve(ns);
    cell.estimator = Estimator(space, cell.solve.coeffs);
    if (c.smoothing == "midpoints")
      smooth_estimator_midpoints(cell.estimator);
    else
      smooth_estimator(cell.estimator);
    cell.empirical_error = ns.error_of(cell.solve.coeffs);
    const auto truth = c.spec.kernels();
    cell.raw = relative_kernel_error(cell.estimator.raw_kernels(), truth, ctx.reference);
    cell.smoothed = relative_kernel_error(cell.estimator.smoothed_kernels(), truth, ctx.reference);

    if (c.velocity == VelocityMode::exact && sigma == 0.0 && c.jensen_trajectories > 0) {
      const auto J = std::min<long>(M, c.jensen_trajectories);
      TrajectoryBatch sub;
      sub.times = om.times;
      for (long m = 0; m < J; ++m)
        sub.trajectories.push_back(generate_trajectory(om, c.seed, Stream::training, training_index(trial, m)));
      cell.jensen = jensen_check(c.spec, cell.estimator.raw_kernels(), sub);
    }

    if (with_prediction) {
      PredictionSetup ps;
      ps.spec = c.spec;
      ps.samplers = c.samplers;
      ps.t1 = c.t1;
      ps.tL = c.tL;
      ps.tf = c.tf;
      ps.nodes = c.prediction_nodes;
      ps.ics = c.prediction_ics;
      ps.large_n_factor = c.large_n_factor;
      ps.tol = c.tol;
      ps.seed = splitmix64(c.seed ^ training_index(trial, M));
      std::vector<State> ics;
      for (long m = 0; m < std::min<long>(M, c.prediction_ics); ++m) {
        Rng rng = make_rng(c.seed, Stream::training, training_index(trial, m));
        ics.push_back(sample_initial(c.samplers, c.spec, rng));
      }
      cell.prediction = prediction_experiment(ps, cell.estimator.smoothed_kernels(), ics, threads);
    }
    cell.ok = true;
  } catch (const Error& e) {
    cell.ok = false;
    cell.error = e.what();
  }
  return cell;
}

struct RateRow {
  std::string metric;
  std::string window;
  RateFit fit;
  int points = 0;
};

struct BenchmarkResult {
  nlohmann::json config;
  double R = 0.0;
  PairwiseMeasure reference;
  std::vector<CellResult> cells;
  std::vector<ResultRow> rows;
  std::vector<RateRow> rates;
};

inline std::string pair_label(int k, int kp) { return std::to_string(k) + "_" + std::to_string(kp); }

inline std::vector<ResultRow> cell_rows(const std::string& experiment, const CellResult& cell) {
  std::vector<ResultRow> rows;
  auto add = [&](const std::string& metric, const std::string& window, double v) {
    rows.push_back({experiment, cell.M, cell.trial, metric, window, v});
  };
  if (!cell.ok) {
    add("failed", "all", 1.0);
    return rows;
  }
  add("kernel_error", "all", cell.raw.aggregate);
  add("kernel_error_smoothed", "all", cell.smoothed.aggregate);
  for (std::size_t q = 0; q < cell.raw.pairs.size(); ++q) {
    const auto& pr = cell.raw.pairs[q];
    const auto& ps = cell.smoothed.pairs[q];
    if (!pr.defined) continue;
    const std::string lab = pair_label(pr.k, pr.kp);
    add(pr.absolute ? "pair_abs_error" : "pair_error", lab, pr.value);
    add(ps.absolute ? "pair_abs_error_smoothed" : "pair_error_smoothed", lab, ps.value);
  }
  add("empirical_error", "all", cell.empirical_error);
  add("rank", "all", cell.solve.rank);
  add("lambda_min", "all", cell.solve.lambda_min);
  add("condition", "all", cell.solve.condition());
  add("partitions", "all", cell.estimator.space().partitions(0, 0));
  if (cell.jensen) {
    add("jensen_lhs", "all", cell.jensen->lhs);
    add("jensen_rhs", "all", cell.jensen->rhs);
  }
  if (cell.prediction) {
    for (const auto& ce : cell.prediction->classes) {
      add("tm_error_" + ce.name, "train", mean_std(ce.train_window).first);
      if (!ce.future_window.empty()) add("tm_error_" + ce.name, "future", mean_std(ce.future_window).first);
      add("tm_failures_" + ce.name, "all", ce.failures);
    }
  }
  return rows;
}

// Mean over trials per M, then a log-log fit, for every metric/window that has
// positive values at >= 3 values of M.
inline std::vector<RateRow> fit_rates(const std::vector<ResultRow>& rows) {
  std::map<std::pair<std::string, std::string>, std::map<long, std::vector<double>>> groups;
  for (const auto& r : rows) {
    if (r.metric.rfind("kernel_error", 0) != 0 && r.metric.rfind("pair_", 0) != 0 && r.metric.rfind("tm_error", 0) != 0)
      continue;
    groups[{r.metric, r.window}][r.M].push_back(r.value);
  }
  std::vector<RateRow> out;
  for (const auto& [key, byM] : groups) {
    std::vector<std::pair<double, double>> pts;
    bool positive = true;
    for (const auto& [M, vals] : byM) {
      const double m = mean_std(vals).first;
      if (!(m > 0.0)) positive = false;
      pts.emplace_back(static_cast<double>(M), m);
    }
    if (!positive || pts.size() < 3) continue;
    out.push_back({key.first, key.second, fit_rate(pts), static_cast<int>(pts.size())});
  }
  return out;
}

inline BenchmarkResult run_benchmark(const ExperimentConfig& c, int threads, double sigma) {
  BenchmarkResult res;
  res.config = c.resolved;
  const auto ctx = prepare_context(c, threads);
  res.R = ctx.R;
  res.reference = ctx.reference;
  for (long M : c.M_list)
    for (int trial = 0; trial < c.trials; ++trial) {
      auto cell = run_cell(c, ctx, M, trial, sigma, threads, c.prediction);
      auto rows = cell_rows(c.name, cell);
      res.rows.insert(res.rows.end(), rows.begin(), rows.end());
      res.cells.push_back(std::move(cell));
    }
  res.rates = fit_rates(res.rows);
  return res;
}

inline BenchmarkResult run_benchmark(const ExperimentConfig& c, int threads) { return run_benchmark(c, threads, c.sigma); }

inline void write_rates_csv(std::ostream& os, const std::vector<RateRow>& rates) {
  os << "metric,window,points,rate,intercept,residual\n";
  for (const auto& r : rates)
    os << r.metric << ',' << r.window << ',' << r.points << ',' << fmt17(r.fit.rate) << ',' << fmt17(r.fit.intercept)
       << ',' << fmt17(r.fit.residual) << '\n';
}

// Per-metric mean and spread across trials, for error-versus-M plots.
inline void write_curves_csv(std::ostream& os, const std::vector<ResultRow>& rows) {
  std::map<std::tuple<std::string, std::string, long>, std::vector<double>> g;
  for (const auto& r : rows) g[{r.metric, r.window, r.M}].push_back(r.value);
  os << "metric,window,M,mean,std,count\n";
  for (const auto& [key, vals] : g) {
    const auto [m, s] = mean_std(vals);
    os << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key) << ',' << fmt17(m) << ','
       << fmt17(s) << ',' << vals.size() << '\n';
  }
}

inline void write_bundle(const std::filesystem::path& dir, const BenchmarkResult& res) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "estimators");
  nlohmann::json echo = res.config;
  write_file((dir / "config.json").string(), echo.dump(2) + "\n");
  std::ostringstream rows, rates, curves, measure;
  write_results_csv(rows, res.rows);
  write_rates_csv(rates, res.rates);
  write_curves_csv(curves, res.rows);
  res.reference.write_csv(measure);
  write_file((dir / "results.csv").string(), rows.str());
  write_file((dir / "rates.csv").string(), rates.str());
  write_file((dir / "curves.csv").string(), curves.str());
  write_file((dir / "reference_measure.csv").string(), measure.str());
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& cell : res.cells) {
    if (!cell.ok) {
      failures.push_back({{"M", cell.M}, {"trial", cell.trial}, {"error", cell.error}});
      continue;
    }
    const auto name = "M" + std::to_string(cell.M) + "_trial" + std::to_string(cell.trial) + ".json";
    write_file((dir / "estimators" / name).string(), to_json(cell.estimator).dump() + "\n");
  }
  nlohmann::json summary = {{"R", res.R}, {"cells", res.cells.size()}, {"failures", failures}};
  write_file((dir / "summary.json").string(), summary.dump(2) + "\n");
}

// Coercivity estimates for several partition counts from one streamed batch of M
// trajectories: per count, a normal system and a bin-aligned pair measure.
inline std::vector<CoercivityReport> run_coercivity(const ExperimentConfig& c, const std::vector<int>& partitions,
                                                    long M, double R, int threads) {
  if (partitions.empty()) throw DomainError("run_coercivity: no partition counts");
  std::vector<HypothesisSpace> spaces;
  for (int P : partitions) spaces.emplace_back(c.spec.K(), R, c.degree, P);
  struct Acc {
    std::vector<NormalTotals> totals;
    std::vector<PairwiseMeasure> measures;
  };
  const auto om = c.observation(VelocityMode::exact, 0.0);
  auto init = [&] {
    Acc a;
    for (std::size_t q = 0; q < spaces.size(); ++q) {
      a.totals.push_back(NormalTotals::zeros(spaces[q]));
      a.measures.emplace_back(c.spec.K(), R, aligned_bins(c.coercivity_bins, partitions[q]));
    }
    return a;
  };
  Acc acc = chunked_reduce(
      static_cast<std::size_t>(M), 16, threads, init,
      [&](Acc& a, std::size_t m) {
        const auto tr = generate_trajectory(om, c.seed, Stream::coercivity, m);
        for (std::size_t q = 0; q < spaces.size(); ++q) {
          assemble_into(a.totals[q], c.spec, spaces[q], tr, Overflow::clamp);
          a.measures[q].add_trajectory(c.spec, tr);
        }
      },
      [](Acc& total, const Acc& part) {
        for (std::size_t q = 0; q < total.totals.size(); ++q) {
          total.totals[q].add(part.totals[q]);
          total.measures[q].merge(part.measures[q]);
        }
      });
  std::vector<CoercivityReport> out;
  const int L = static_cast<int>(om.times.size());
  for (std::size_t q = 0; q < spaces.size(); ++q) {
    const NormalSystem ns(spaces[q], L, c.spec.N(), 0, std::move(acc.totals[q]));
    out.push_back(estimate_coercivity(ns, acc.measures[q]));
  }
  return out;
}

}  // namespace ikl
