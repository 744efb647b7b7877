#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ikl/experiment.hpp"
#include "ikl/io.hpp"
#include "ikl/parallel.hpp"

using namespace ikl;
namespace fs = std::filesystem;

namespace {

nlohmann::json tiny_config() {
  return nlohmann::json::parse(R"({
    "name": "tiny",
    "seed": 5,
    "system": {
      "d": 1,
      "type_sizes": [8],
      "kernels": [{"kind": "opinion"}],
      "samplers": [{"kind": "uniform-interval", "lo": 0, "hi": 4}],
      "times": {"t1": 0, "tL": 0.5, "tf": 1, "L": 6}
    },
    "learning": {
      "degree": 0, "regularity": 1, "multiplier": 8, "R": 6,
      "M": [8, 16, 32], "trials": 2, "velocity": "exact",
      "noise": {"model": "additive", "sigma": 0},
      "smoothing": "midpoints"
    },
    "measure": {"M_rho": 64, "bins": 600},
    "coercivity": {"M": 64, "partitions": [4, 8], "bins": 600},
    "prediction": {"enabled": true, "ics": 2, "nodes": 11, "large_n_factor": 2},
    "profiles": {"ci": {"learning": {"M": [8, 16]}, "measure": {"M_rho": 32}}}
  })");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string results_text(const BenchmarkResult& r) {
  std::ostringstream os;
  write_results_csv(os, r.rows);
  return os.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("ikl_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Config, ParsesAndAppliesProfiles) {
  const auto full = parse_config(tiny_config());
  EXPECT_EQ(full.name, "tiny");
  EXPECT_EQ(full.seed, 5u);
  EXPECT_EQ(full.spec.N(), 8);
  EXPECT_EQ(full.M_list, (std::vector<long>{8, 16, 32}));
  EXPECT_EQ(full.M_rho, 64);
  EXPECT_EQ(*full.R, 6.0);
  EXPECT_EQ(full.times().size(), 6u);
  EXPECT_EQ(full.smoothing, "midpoints");
  EXPECT_EQ(full.coercivity_partitions, (std::vector<int>{4, 8}));
  const auto ci = parse_config(tiny_config(), "ci");
  EXPECT_EQ(ci.M_list, (std::vector<long>{8, 16}));
  EXPECT_EQ(ci.M_rho, 32);
  EXPECT_EQ(ci.trials, 2);
  EXPECT_FALSE(ci.resolved.contains("profiles"));
  EXPECT_EQ(ci.resolved["profile"], "ci");
  EXPECT_EQ(full.partitions(1024), choose_dimension(1024, 1, 8));
}

TEST(Config, RejectsInvalidInput) {
  EXPECT_THROW(parse_config(tiny_config(), "nonsense"), FormatError);
  auto j = tiny_config();
  j["learning"]["M"] = {32, 16};
  EXPECT_THROW(parse_config(j), FormatError);
  j = tiny_config();
  j["system"]["kernels"][0] = "nope";
  EXPECT_THROW(parse_config(j), FormatError);
  j = tiny_config();
  j["learning"].erase("degree");
  EXPECT_THROW(parse_config(j), FormatError);
  j = tiny_config();
  j["learning"]["velocity"] = "none";
  EXPECT_THROW(parse_config(j), FormatError);
  j = tiny_config();
  j["learning"]["R"] = "far";
  EXPECT_THROW(parse_config(j), FormatError);
  j = tiny_config();
  j["system"]["times"]["tL"] = 0;
  EXPECT_THROW(parse_config(j), FormatError);
  EXPECT_THROW(parse_config(nlohmann::json::array()), FormatError);
}

TEST(Config, AutoRadii) {
  auto j = tiny_config();
  j["learning"]["R"] = "auto";
  j["coercivity"]["R"] = "auto";
  const auto c = parse_config(j);
  EXPECT_FALSE(c.R.has_value());
  EXPECT_TRUE(c.coercivity_R_auto);
  const double r = reference_radius(c, 1);
  EXPECT_GT(r, 0.0);
  EXPECT_LE(r, 4.0);
  EXPECT_EQ(coercivity_radius(c, 2), r);
  EXPECT_EQ(coercivity_radius(parse_config(tiny_config()), 1), 6.0);
}

TEST(Config, BundledConfigsLoad) {
  for (const char* name : {"opinion", "predator_swarm", "lennard_jones", "exchangeable_gaussian"})
    for (const char* profile : {"full", "ci"}) {
      const auto path = fs::path(IKL_CONFIG_DIR) / (std::string(name) + ".json");
      EXPECT_NO_THROW(load_config(path.string(), profile)) << name << " " << profile;
    }
  const auto ps = load_config((fs::path(IKL_CONFIG_DIR) / "predator_swarm.json").string());
  EXPECT_EQ(ps.spec.K(), 2);
  EXPECT_EQ(ps.spec.d(), 2);
  const auto lj = load_config((fs::path(IKL_CONFIG_DIR) / "lennard_jones.json").string());
  EXPECT_EQ(lj.spec.d() * lj.spec.N(), lj.spec.dim());
}

TEST(Parallel, ChunkedReduceIsThreadCountInvariant) {
  auto run = [](int threads) {
    return chunked_reduce(
        1000, 16, threads, [] { return 0.0; }, [](double& a, std::size_t i) { a += 1.0 / (1.0 + i * 0.37); },
        [](double& t, const double& p) { t += p; });
  };
  const double one = run(1);
  for (int t : {2, 3, 7}) EXPECT_EQ(run(t), one);
  std::vector<int> hit(100, 0);
  parallel_for(100, 4, [&](std::size_t i) { hit[i] += 1; });
  for (int h : hit) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallel_for(10, 2, [](std::size_t i) {
                 if (i == 7) throw DomainError("boom");
               }),
               DomainError);
  EXPECT_THROW(chunked_reduce(
                   4, 0, 1, [] { return 0; }, [](int&, std::size_t) {}, [](int&, const int&) {}),
               DomainError);
}

TEST(Determinism, IdenticalAcrossRunsAndThreadCounts) {
  const auto c = parse_config(tiny_config(), "ci");
  const auto a = run_benchmark(c, 1);
  const auto b = run_benchmark(c, 1);
  const auto t2 = run_benchmark(c, 2);
  EXPECT_EQ(results_text(a), results_text(b));
  EXPECT_EQ(results_text(a), results_text(t2));
  for (const auto& cell : a.cells) EXPECT_TRUE(cell.ok) << cell.error;
  const auto da = scratch("det_a"), db = scratch("det_b");
  write_bundle(da, a);
  write_bundle(db, t2);
  for (const char* f : {"config.json", "results.csv", "rates.csv", "curves.csv", "reference_measure.csv", "summary.json"})
    EXPECT_EQ(slurp(da / f), slurp(db / f)) << f;
  for (const auto& e : fs::directory_iterator(da / "estimators"))
    EXPECT_EQ(slurp(e.path()), slurp(db / "estimators" / e.path().filename()));
  fs::remove_all(da);
  fs::remove_all(db);
}

TEST(Determinism, SeedOverrideChangesData) {
  auto j = tiny_config();
  const auto c1 = parse_config(j, "ci");
  j["seed"] = 6;
  const auto c2 = parse_config(j, "ci");
  const auto a = generate_trajectory(c1.observation(VelocityMode::exact, 0), c1.seed, Stream::training, 0);
  const auto b = generate_trajectory(c2.observation(VelocityMode::exact, 0), c2.seed, Stream::training, 0);
  EXPECT_NE(a.states[0], b.states[0]);
  EXPECT_NE(training_index(0, 1), training_index(1, 1));
}

TEST(Bundle, EchoedConfigReproducesResults) {
  const auto c = parse_config(tiny_config(), "ci");
  const auto res = run_benchmark(c, 1);
  const auto dir = scratch("echo");
  write_bundle(dir, res);
  for (const char* f : {"config.json", "results.csv", "rates.csv", "curves.csv", "reference_measure.csv", "summary.json"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_EQ(std::distance(fs::directory_iterator(dir / "estimators"), fs::directory_iterator{}),
            static_cast<long>(res.cells.size()));
  const auto echo = read_json((dir / "config.json").string());
  const auto again = parse_config(echo, echo.at("profile").get<std::string>());
  EXPECT_EQ(results_text(run_benchmark(again, 1)), slurp(dir / "results.csv"));
  std::istringstream is(slurp(dir / "results.csv"));
  const auto rows = read_results_csv(is);
  ASSERT_EQ(rows.size(), res.rows.size());
  for (std::size_t q = 0; q < rows.size(); ++q) {
    EXPECT_EQ(rows[q].metric, res.rows[q].metric);
    EXPECT_EQ(rows[q].value, res.rows[q].value);
  }
  fs::remove_all(dir);
}

TEST(Bundle, RatesCoverKernelError) {
  const auto res = run_benchmark(parse_config(tiny_config()), 1);
  bool found = false;
  for (const auto& r : res.rates)
    if (r.metric == "kernel_error") {
      found = true;
      EXPECT_TRUE(std::isfinite(r.fit.rate));
      EXPECT_EQ(r.points, 3);
    }
  EXPECT_TRUE(found);
}

TEST(Csv, TrajectoryRoundTrip) {
  const auto c = parse_config(tiny_config(), "ci");
  const auto batch = generate_batch(c.observation(VelocityMode::exact, 0), c.seed, Stream::training, 0, 3);
  std::ostringstream os;
  write_trajectory_csv(os, batch, c.spec);
  std::istringstream is(os.str());
  const auto back = read_trajectory_csv(is, c.spec, batch.times);
  ASSERT_EQ(back.M(), 3);
  for (int m = 0; m < 3; ++m) {
    EXPECT_EQ(back.trajectories[m].states, batch.trajectories[m].states);
    EXPECT_EQ(back.trajectories[m].velocities, batch.trajectories[m].velocities);
  }
  std::istringstream bad("m,l,t\n");
  EXPECT_THROW(read_trajectory_csv(bad, c.spec, batch.times), FormatError);
  std::istringstream partial("m,l,t,agent,comp,x\n0,0,0,0,0,1.5\n");
  EXPECT_THROW(read_trajectory_csv(partial, c.spec, batch.times), FormatError);
}

TEST(Csv, ResultsRejectBadRows) {
  std::istringstream bad_header("a,b\n");
  EXPECT_THROW(read_results_csv(bad_header), FormatError);
  std::istringstream short_row("experiment,M,trial,metric,window,value\nx,1,0,kernel_error\n");
  EXPECT_THROW(read_results_csv(short_row), FormatError);
  std::istringstream bad_num("experiment,M,trial,metric,window,value\nx,one,0,k,,1\n");
  EXPECT_THROW(read_results_csv(bad_num), FormatError);
}

TEST(Coercivity, RunFromConfig) {
  const auto c = parse_config(tiny_config());
  const auto reps = run_coercivity(c, c.coercivity_partitions, c.coercivity_M, 6.0, 2);
  ASSERT_EQ(reps.size(), 2u);
  for (const auto& r : reps) {
    EXPECT_GT(r.lambda_min, 0.0);
    EXPECT_LE(r.gram_residual, 1e-8);
  }
  EXPECT_LE(reps[1].lambda_min, reps[0].lambda_min * (1 + 1e-10));
  const auto again = run_coercivity(c, c.coercivity_partitions, c.coercivity_M, 6.0, 1);
  EXPECT_EQ(to_json(again[0]).dump(), to_json(reps[0]).dump());
}
