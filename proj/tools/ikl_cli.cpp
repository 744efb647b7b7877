// Command-line front end: generate, learn, evaluate, coercivity, rate,
// noise-sweep and benchmark.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "ikl/coercivity.hpp"
#include "ikl/evaluation.hpp"
#include "ikl/experiment.hpp"
#include "ikl/io.hpp"

namespace fs = std::filesystem;
using namespace ikl;

namespace {

struct Common {
  std::string config;
  std::string profile = "full";
  std::optional<std::uint64_t> seed;
  int threads = 0;
  std::string out_dir;
};

ExperimentConfig load(const Common& g) {
  auto c = load_config(g.config, g.profile);
  if (g.seed) {
    c.seed = *g.seed;
    c.resolved["seed"] = *g.seed;
  }
  return c;
}

void emit(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-")
    std::cout << text;
  else
    write_file(out, text);
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    std::size_t used = 0;
    const int x = std::stoi(tok, &used);
    if (used != tok.size()) throw FormatError("bad integer list '" + s + "'");
    v.push_back(x);
  }
  if (v.empty()) throw FormatError("empty integer list");
  return v;
}

void print_rates(const std::vector<RateRow>& rates, const std::string& prefix) {
  for (const auto& r : rates)
    if (r.window == "all" && r.metric.rfind("kernel_error", 0) == 0)
      std::printf("%s%-24s rate %.4f  (points %d, residual %.3g)\n", prefix.c_str(), r.metric.c_str(), r.fit.rate,
                  r.points, r.fit.residual);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learn interaction kernels of heterogeneous agent systems from trajectories"};
  app.require_subcommand(1);
  Common g;
  auto add_common = [&](CLI::App* sub, bool need_config) {
    auto* o = sub->add_option("--config", g.config, "Experiment config (JSON)");
    if (need_config) o->required()->check(CLI::ExistingFile);
    sub->add_option("--profile", g.profile, "Config profile")->check(CLI::IsMember({"ci", "full"}));
    sub->add_option("--seed", g.seed, "Override the config seed");
    sub->add_option("--threads", g.threads, "Worker threads (0: IKL_THREADS or hardware)")->envname("IKL_THREADS");
    sub->add_option("--out-dir", g.out_dir, "Directory for output bundles");
  };

  // generate
  auto* gen = app.add_subcommand("generate", "Simulate training trajectories to CSV");
  add_common(gen, true);
  std::string gen_out;
  long gen_M = 0;
  int gen_trial = 0;
  std::string gen_velocity;
  gen->add_option("--out", gen_out, "Trajectory CSV path (a .json sidecar is written next to it)")->required();
  gen->add_option("--M", gen_M, "Number of trajectories (default: first M of the config)");
  gen->add_option("--trial", gen_trial, "Trial index selecting the random stream");
  gen->add_option("--velocity", gen_velocity, "exact | finite-difference | none (default: config)");

  // learn
  auto* lrn = app.add_subcommand("learn", "Fit an estimator to a trajectory CSV");
  add_common(lrn, false);
  std::string lrn_traj, lrn_out;
  std::optional<int> lrn_partitions;
  lrn->add_option("--traj", lrn_traj, "Trajectory CSV written by generate")->required()->check(CLI::ExistingFile);
  lrn->add_option("--out", lrn_out, "Estimator JSON (default: stdout)");
  lrn->add_option("--partitions", lrn_partitions, "Partition count per pair (default: dimension rule)");

  // evaluate
  auto* evl = app.add_subcommand("evaluate", "Kernel and trajectory errors of an estimator");
  add_common(evl, true);
  std::string evl_est, evl_out;
  bool evl_predict = false;
  evl->add_option("--estimator", evl_est, "Estimator JSON")->required()->check(CLI::ExistingFile);
  evl->add_option("--out", evl_out, "Report JSON (default: stdout)");
  evl->add_flag("--prediction", evl_predict, "Also run trajectory prediction");

  // coercivity
  auto* coe = app.add_subcommand("coercivity", "Estimate the coercivity constant over hypothesis spaces");
  add_common(coe, true);
  std::string coe_parts, coe_out;
  long coe_M = 0;
  coe->add_option("--partitions", coe_parts, "Comma-separated partition counts (default: config)");
  coe->add_option("--M", coe_M, "Trajectories (default: config)");
  coe->add_option("--out", coe_out, "Report JSON path");

  // rate
  auto* rat = app.add_subcommand("rate", "Fit a log-log learning rate from a results CSV");
  std::string rat_in, rat_metric = "kernel_error", rat_window = "all", rat_exp;
  rat->add_option("--in", rat_in, "results.csv")->required()->check(CLI::ExistingFile);
  rat->add_option("--metric", rat_metric, "Metric column value");
  rat->add_option("--window", rat_window, "Window column value");
  rat->add_option("--experiment", rat_exp, "Restrict to one experiment name");

  // noise-sweep
  auto* nsw = app.add_subcommand("noise-sweep", "Run the benchmark at each configured noise level");
  add_common(nsw, true);
  std::string nsw_sigmas;
  nsw->add_option("--sigmas", nsw_sigmas, "Comma-separated noise levels (default: config sweep)");

  // benchmark
  auto* ben = app.add_subcommand("benchmark", "Run the full learning pipeline and write a results bundle");
  add_common(ben, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const int threads = resolve_threads(g.threads);

    if (*gen) {
      const auto c = load(g);
      const long M = gen_M > 0 ? gen_M : c.M_list.front();
      const VelocityMode v = gen_velocity.empty() ? c.velocity : velocity_mode_from_string(gen_velocity);
      const auto om = c.observation(v, c.sigma);
      TrajectoryBatch b = generate_batch(om, c.seed, Stream::training, training_index(gen_trial, 0),
                                         static_cast<std::size_t>(M), threads);
      save_trajectories(gen_out, b, c.spec);
      auto side = read_json(gen_out + ".json");
      side["config"] = c.resolved;
      write_file(gen_out + ".json", side.dump(2) + "\n");
      std::printf("wrote %ld trajectories to %s\n", M, gen_out.c_str());
      return 0;
    }

    if (*lrn) {
      const auto loaded = load_trajectories(lrn_traj);
      nlohmann::json cfg;
      if (!g.config.empty())
        cfg = load(g).resolved;
      else {
        const auto side = read_json(lrn_traj + ".json");
        if (!side.contains("config")) throw FormatError("learn: no --config and no config in the sidecar");
        cfg = side["config"];
        cfg.erase("profile");
      }
      const auto c = parse_config(cfg, "full");
      const auto& batch = loaded.batch;
      if (!batch.has_velocities()) throw DomainError("learn: trajectory file carries no velocities");
      const double R = c.R ? *c.R : max_pairwise_distance(batch, loaded.spec);
      const int P = lrn_partitions ? *lrn_partitions : c.partitions(batch.M());
      const HypothesisSpace space(loaded.spec.K(), R, c.degree, P);
      SolveResult info;
      Estimator est = learn(loaded.spec, space, batch, c.overflow, &info);
      if (c.smoothing == "midpoints")
        smooth_estimator_midpoints(est);
      else
        smooth_estimator(est);
      auto j = to_json(est);
      j["rank"] = info.rank;
      j["condition"] = info.condition();
      emit(lrn_out, j.dump(2) + "\n");
      return 0;
    }

    if (*evl) {
      const auto c = load(g);
      const Estimator est = estimator_from_json(read_json(evl_est));
      const auto mu = reference_measure(c, est.space().R(), threads);
      const auto truth = c.spec.kernels();
      auto report = [&](const KernelErrorReport& r) {
        nlohmann::json pairs = nlohmann::json::array();
        for (const auto& p : r.pairs)
          if (p.defined) pairs.push_back({{"k", p.k}, {"kp", p.kp}, {"value", p.value}, {"absolute", p.absolute}});
        return nlohmann::json{{"aggregate", r.aggregate}, {"pairs", pairs}};
      };
      nlohmann::json out{{"raw", report(relative_kernel_error(est.raw_kernels(), truth, mu))}};
      if (est.smoothed()) out["smoothed"] = report(relative_kernel_error(est.smoothed_kernels(), truth, mu));
      if (evl_predict) {
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
        ps.seed = c.seed;
        const auto rep =
            prediction_experiment(ps, est.smoothed() ? est.smoothed_kernels() : est.raw_kernels(), {}, threads);
        for (const auto& ce : rep.classes) {
          if (ce.name == "training") continue;
          out["prediction"][ce.name] = {{"train_window_mean", mean_std(ce.train_window).first},
                                        {"future_window_mean", mean_std(ce.future_window).first},
                                        {"failures", ce.failures}};
        }
      }
      emit(evl_out, out.dump(2) + "\n");
      return 0;
    }

    if (*coe) {
      const auto c = load(g);
      const auto parts = coe_parts.empty() ? c.coercivity_partitions : parse_ints(coe_parts);
      if (parts.empty()) throw FormatError("coercivity: no partition counts given");
      const long M = coe_M > 0 ? coe_M : c.coercivity_M;
      const double R = coercivity_radius(c, threads);
      const auto reps = run_coercivity(c, parts, M, R, threads);
      nlohmann::json out{{"R", R}, {"M", M}, {"reports", nlohmann::json::array()}};
      std::printf("%10s %14s %s\n", "partitions", "lambda_min", "per-block");
      for (const auto& r : reps) {
        std::printf("%10d %14.6g", r.partitions.front(), r.lambda_min);
        for (double b : r.block_lambda_min) std::printf(" %.6g", b);
        std::printf("\n");
        out["reports"].push_back(to_json(r));
      }
      std::string path = coe_out;
      if (path.empty() && !g.out_dir.empty()) {
        fs::create_directories(g.out_dir);
        path = (fs::path(g.out_dir) / "coercivity.json").string();
      }
      if (!path.empty()) write_file(path, out.dump(2) + "\n");
      return 0;
    }

    if (*rat) {
      std::istringstream is(read_file(rat_in));
      auto rows = read_results_csv(is);
      std::map<long, std::vector<double>> byM;
      for (const auto& r : rows)
        if (r.metric == rat_metric && r.window == rat_window && (rat_exp.empty() || r.experiment == rat_exp))
          byM[r.M].push_back(r.value);
      std::vector<std::pair<double, double>> pts;
      for (const auto& [M, v] : byM) pts.emplace_back(static_cast<double>(M), mean_std(v).first);
      const auto f = fit_rate(pts);
      std::printf("metric %s window %s points %zu rate %.6f slope %.6f intercept %.6f residual %.3g\n",
                  rat_metric.c_str(), rat_window.c_str(), pts.size(), f.rate, f.slope, f.intercept, f.residual);
      return 0;
    }

    if (*nsw) {
      const auto c = load(g);
      std::vector<double> sigmas = c.sweep_sigmas;
      if (!nsw_sigmas.empty()) {
        sigmas.clear();
        std::stringstream ss(nsw_sigmas);
        std::string tok;
        while (std::getline(ss, tok, ',')) sigmas.push_back(std::stod(tok));
      }
      if (sigmas.empty()) throw FormatError("noise-sweep: no noise levels configured");
      const fs::path dir = g.out_dir.empty() ? fs::path(c.name + "_noise") : fs::path(g.out_dir);
      for (double s : sigmas) {
        const auto res = run_benchmark(c, threads, s);
        char name[64];
        std::snprintf(name, sizeof name, "sigma_%g", s);
        write_bundle(dir / name, res);
        print_rates(res.rates, std::string(name) + "  ");
      }
      return 0;
    }

    if (*ben) {
      const auto c = load(g);
      const auto res = run_benchmark(c, threads);
      const fs::path dir = g.out_dir.empty() ? fs::path(c.name) : fs::path(g.out_dir);
      write_bundle(dir, res);
      print_rates(res.rates, "");
      std::printf("bundle written to %s\n", dir.string().c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
