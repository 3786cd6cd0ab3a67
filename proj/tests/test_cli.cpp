#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "raresim/accel.hpp"
#include "raresim/cli.hpp"
#include "raresim/serialization.hpp"

using namespace raresim;
namespace fs = std::filesystem;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path workdir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "raresim_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) { return read_text_file(p.string()); }

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(v.size());
  int i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

std::string write_model(const fs::path& dir, const TruncatedGMM& m,
                        const AffineStandardizer& st, const std::string& name = "model.json") {
  const fs::path p = dir / name;
  std::ofstream(p) << model_to_json(StoredModel{m, st, {}}).dump(2);
  return p.string();
}

std::string standard_normal(const fs::path& dir) {
  return write_model(dir, TruncatedGMM(vec({1.0}), {GaussComponent(vec({0.0}), MatrixXd::Identity(1, 1))},
                                       Rect::unbounded(1)),
                     AffineStandardizer::identity(1));
}

// Two well separated components in 2-D.
TruncatedGMM two_blobs() {
  MatrixXd c1(2, 2), c2(2, 2);
  c1 << 1.0, 0.4, 0.4, 0.8;
  c2 << 0.6, -0.2, -0.2, 1.2;
  return TruncatedGMM(vec({0.45, 0.55}),
                      {GaussComponent(vec({10.0, 20.0}), c1), GaussComponent(vec({16.0, 14.0}), c2)},
                      Rect::unbounded(2));
}

std::string write_samples(const fs::path& dir, const MatrixXd& y) {
  const fs::path p = dir / "data.csv";
  std::ofstream f(p);
  f << "a,b\n";
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    f << format_double(y(r, 0)) << "," << format_double(y(r, 1)) << "\n";
  }
  return p.string();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

Json report(const fs::path& dir) { return Json::parse(slurp(dir / "report.json")); }

double tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

TEST(CliFit, BicTableMatchesDirectSweep) {
  const fs::path dir = workdir("fit_sweep");
  Rng rng(11);
  const MatrixXd y = gmm_sample(1500, two_blobs(), rng);
  const std::string data = write_samples(dir, y);
  const Result r = invoke({"fit", "--data", data, "--k", "1-4", "--seed", "3", "--out", (dir / "out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_csv(dir / "out" / "bic.csv");
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"K", "bic", "loglik", "iterations"}));
  int best = 0;
  double best_bic = kInf;
  auto [z, st] = standardize(y);
  for (int k = 1; k <= 4; ++k) {
    const double b = std::stod(rows[k][1]);
    if (b < best_bic) {
      best_bic = b;
      best = k;
    }
    // Same fit, scored in raw coordinates through the mapped-back model.
    const FitResult f = fit(z, k, st.apply(Rect::unbounded(2)), 3);
    const double direct = bic(f.model.map_back(st), y);
    EXPECT_NEAR(b, direct, 1e-7 * std::abs(direct)) << "K=" << k;
  }
  EXPECT_EQ(best, 2);
  const StoredModel m = model_from_json(Json::parse(slurp(dir / "out" / "model.json")));
  EXPECT_EQ(m.model.K(), 2);
  EXPECT_EQ(m.columns, (std::vector<std::string>{"a", "b"}));
  // Mapped back, the component means sit near the generating ones.
  const TruncatedGMM raw = m.model.map_back(m.standardizer);
  const double d0 = (raw.component(0).mean() - vec({10.0, 20.0})).norm();
  const double d1 = (raw.component(1).mean() - vec({10.0, 20.0})).norm();
  EXPECT_LT(std::min(d0, d1), 0.2);
  EXPECT_NE(r.out.find("selected K=2"), std::string::npos);
}

TEST(CliFit, SingleComponent) {
  const fs::path dir = workdir("fit_k1");
  Rng rng(2);
  const std::string data = write_samples(dir, gmm_sample(300, two_blobs(), rng));
  const Result r = invoke({"fit", "--data", data, "--k", "1", "--out", (dir / "out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = Json::parse(slurp(dir / "out" / "model.json"));
  EXPECT_EQ(j["K"], 1);
  EXPECT_EQ(j["d"], 2);
}

TEST(CliFit, DataErrorsExitTwo) {
  const fs::path dir = workdir("fit_errors");
  std::ofstream(dir / "empty.csv") << "";
  Result r = invoke({"fit", "--data", (dir / "empty.csv").string(), "--out", (dir / "o1").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(dir / "o1"));

  std::ofstream(dir / "bad.csv") << "a,b\n1,2\n2,3\n3,oops\n";
  r = invoke({"fit", "--data", (dir / "bad.csv").string(), "--out", (dir / "o2").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(":4:"), std::string::npos) << r.err;

  std::ofstream(dir / "neg.csv") << "a,b\n1,2\n2,3\n-3,1\n4,4\n";
  r = invoke({"fit", "--data", (dir / "neg.csv").string(), "--support", "0:inf,0:inf", "--out",
           (dir / "o3").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(":4:"), std::string::npos) << r.err;

  r = invoke({"fit", "--data", (dir / "neg.csv").string(), "--support", "0:inf", "--out", (dir / "o4").string()});
  EXPECT_EQ(r.code, 2);
  r = invoke({"fit", "--data", (dir / "neg.csv").string(), "--k", "0", "--out", (dir / "o5").string()});
  EXPECT_EQ(r.code, 2);
}

TEST(CliFit, FitFailureExitThreeNamesK) {
  const fs::path dir = workdir("fit_fail");
  // Enough rows for K=1 but not for K=6.
  std::ofstream(dir / "tiny.csv") << "a,b\n1,2\n2,3.5\n3,1\n4,4\n5,2\n6,7\n7,3\n8,1\n9,9\n10,2\n11,5\n12,4\n";
  const Result r = invoke({"fit", "--data", (dir / "tiny.csv").string(), "--k", "1,6", "--out",
                        (dir / "out").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("K=6"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST(CliRun, AnalyticHalfspaceNearTruth) {
  const fs::path dir = workdir("run_halfspace");
  // Non-identity standardizer: the stored model is N((0 - 1)/2, 1/4), raw N(0, 1).
  const std::string model = write_model(
      dir,
      TruncatedGMM(vec({1.0}), {GaussComponent(vec({-0.5}), MatrixXd::Constant(1, 1, 0.25))},
                   Rect::unbounded(1)),
      AffineStandardizer{vec({1.0}), vec({2.0})});
  const Result r = invoke({"run", "--model", model, "--analytic", "halfspace", "--weights", "1", "--threshold",
                        "4", "--seed", "5", "--out", (dir / "out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = report(dir / "out");
  EXPECT_NEAR(j["truth"].get<double>(), tail(4.0), 1e-12 * tail(4.0));
  EXPECT_NEAR(j["p_hat"].get<double>(), tail(4.0), 0.05 * tail(4.0));
  for (const char* f : {"report.json", "frontier.json", "dominating_points.csv", "trace.csv",
                        "procedure.json", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
  }
  // Dominating points are written in raw coordinates: near x = 4.
  const auto dp = read_csv(dir / "out" / "dominating_points.csv");
  ASSERT_GE(dp.size(), 2u);
  EXPECT_EQ(dp[0], (std::vector<std::string>{"set", "component", "x1", "kkt_residual", "complementarity"}));
  EXPECT_NEAR(std::stod(dp[1][2]), 4.0, 0.1);
  const auto tr = read_csv(dir / "out" / "trace.csv");
  EXPECT_EQ(tr[0], (std::vector<std::string>{"sample_index", "p_hat", "ci_half_width"}));
  EXPECT_EQ(tr.back()[0], "10000");
  EXPECT_EQ(std::stod(tr.back()[1]), j["p_hat"].get<double>());
  const Json f = Json::parse(slurp(dir / "out" / "frontier.json"));
  ASSERT_FALSE(f["s1"].empty());
  ASSERT_FALSE(f["s0"].empty());
  EXPECT_GE(f["s1"][0][0].get<double>(), 4.0);
  EXPECT_LT(f["s0"][0][0].get<double>(), 4.0);
}

TEST(CliRun, MaxIterZeroIsPlainBaseIs) {
  const fs::path dir = workdir("run_base");
  const std::string model = standard_normal(dir);
  const Result r = invoke({"run", "--model", model, "--analytic", "halfspace", "--weights", "1", "--threshold",
                        "1", "--max-iter", "0", "--n", "5000", "--seed", "9", "--out", (dir / "out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = report(dir / "out");
  const StoredModel m = model_from_json(read_json_file(model));
  const Scenario s = analytic_scenario("halfspace", {vec({1.0}), 1.0, {}});
  const EstimateReport base = estimate(s.indicator, m.model, base_is(m.model), 5000, {9, 1, 0});
  EXPECT_EQ(j["p_hat"].get<double>(), base.p_hat);
  EXPECT_EQ(j["stderr"].get<double>(), base.stderr_);
  EXPECT_EQ(j["max_likelihood_ratio"].get<double>(), 1.0);
  const auto flags = j["flags"].get<std::vector<std::string>>();
  EXPECT_NE(std::find(flags.begin(), flags.end(), "low_efficiency"), flags.end());
}

TEST(CliRun, FixedSeedIsByteIdentical) {
  const fs::path dir = workdir("run_repeat");
  const std::string model = standard_normal(dir);
  std::vector<std::string> base{"run", "--model", model, "--analytic", "halfspace", "--weights", "1",
                                "--threshold", "3"};
  auto with = [&](std::vector<std::string> extra) {
    auto a = base;
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
  };
  ASSERT_EQ(invoke(with({"--out", (dir / "a").string(), "--seed", "17"})).code, 0);
  ASSERT_EQ(invoke(with({"--out", (dir / "b").string(), "--seed", "17"})).code, 0);
  ASSERT_EQ(invoke(with({"--out", (dir / "c").string(), "--seed", "17", "--workers", "3"})).code, 0);
  for (const char* f : {"report.json", "frontier.json", "dominating_points.csv", "trace.csv", "procedure.json"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "c" / f)) << f;
  }
  ASSERT_EQ(invoke(with({"--out", (dir / "d").string(), "--seed", "18"})).code, 0);
  EXPECT_NE(slurp(dir / "a" / "report.json"), slurp(dir / "d" / "report.json"));
}

TEST(CliRun, NonMonotoneExitFourLeavesNothing) {
  const fs::path dir = workdir("run_nonmono");
  // Lane-change cut-ins around the range threshold at TTC 1.5 s, where the
  // crash outcome increases with range.
  MatrixXd cov = vec({0.25, 1e-4, 4e-6}).asDiagonal();
  const std::string model =
      write_model(dir, TruncatedGMM(vec({1.0}), {GaussComponent(vec({20.0, 1.0 / 1.5, 1.0 / 31.6}), cov)},
                                    Rect(VectorXd::Zero(3), VectorXd::Constant(3, kInf))),
                  AffineStandardizer::identity(3));
  std::ofstream(dir / "lc.json") << R"({"type": "lane-change"})";
  const Result r = invoke({"run", "--model", model, "--scenario", (dir / "lc.json").string(), "--n-per-iter",
                        "200", "--out", (dir / "out").string()});
  EXPECT_EQ(r.code, 4) << r.err;
  EXPECT_NE(r.err.find("non-monotone outcome"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("iteration"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST(CliRun, InputErrorsExitTwo) {
  const fs::path dir = workdir("run_inputs");
  const std::string model = standard_normal(dir);
  const std::string out = (dir / "out").string();
  EXPECT_EQ(invoke({"run", "--model", model, "--out", out}).code, 2);  // no scenario
  EXPECT_EQ(invoke({"run", "--model", model, "--analytic", "orthant", "--corner", "1,2", "--out", out}).code, 2);
  EXPECT_EQ(invoke({"run", "--model", model, "--analytic", "halfspace", "--weights", "1", "--out", out}).code, 2);
  EXPECT_EQ(invoke({"run", "--model", (dir / "missing.json").string(), "--analytic", "mixture-tail",
                 "--threshold", "1", "--out", out})
                .code,
            2);
  EXPECT_EQ(invoke({"run", "--model", model, "--analytic", "mixture-tail", "--threshold", "1", "--rho", "2",
                 "--out", out})
                .code,
            2);
  EXPECT_EQ(invoke({"run", "--model", model, "--analytic", "mixture-tail", "--threshold", "1", "--n", "10",
                 "--out", out})
                .code,
            2);
  EXPECT_EQ(invoke({"run", "--bogus"}).code, 2);
  EXPECT_EQ(invoke({}).code, 2);
  EXPECT_FALSE(fs::exists(out));
  EXPECT_EQ(invoke({"--help"}).code, 0);
  EXPECT_EQ(invoke({"run", "--help"}).code, 0);
}

TEST(CliCrude, HalfProbability) {
  const fs::path dir = workdir("crude_half");
  const std::string model = standard_normal(dir);
  const Result r = invoke({"crude", "--model", model, "--analytic", "halfspace", "--weights", "1", "--threshold",
                        "0", "--n", "100000", "--seed", "4", "--out", (dir / "out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = report(dir / "out");
  EXPECT_EQ(j["method"], "crude");
  EXPECT_NEAR(j["p_hat"].get<double>(), 0.5, 0.005);
  EXPECT_EQ(j["truth"].get<double>(), 0.5);
  EXPECT_TRUE(fs::exists(dir / "out" / "trace.csv"));
}

TEST(CliCrude, ZeroSamplesExitTwo) {
  const fs::path dir = workdir("crude_zero");
  const std::string model = standard_normal(dir);
  const Result r = invoke({"crude", "--model", model, "--analytic", "halfspace", "--weights", "1", "--threshold",
                        "0", "--n", "0", "--out", (dir / "out").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST(CliCrude, EfficiencyAgainstRunOnSyntheticScenario) {
  const fs::path dir = workdir("crude_vs_run");
  const std::string model = std::string(RARESIM_DATA_DIR) + "/synthetic3d/model.json";
  const std::string scenario = std::string(RARESIM_DATA_DIR) + "/synthetic3d/scenario.json";
  ASSERT_EQ(invoke({"run", "--model", model, "--scenario", scenario, "--n", "10000", "--seed", "1", "--out",
                 (dir / "is").string()})
                .code,
            0);
  ASSERT_EQ(invoke({"crude", "--model", model, "--scenario", scenario, "--n", "2000000", "--seed", "1", "--out",
                 (dir / "crude").string()})
                .code,
            0);
  const Json is = report(dir / "is"), crude = report(dir / "crude");
  ASSERT_GT(crude["hits"].get<long>(), 0);
  // Per-sample variances: stderr^2 * n.
  const double v_crude = std::pow(crude["stderr"].get<double>(), 2) * 2e6;
  const double v_is = std::pow(is["stderr"].get<double>(), 2) * 1e4;
  EXPECT_GE(v_crude / v_is, 10.0);
}

TEST(CliBench, TailCaseAndHeader) {
  const fs::path dir = workdir("bench_tail");
  const std::string model = standard_normal(dir);
  const Result r = invoke({"bench", "--model", model, "--analytic", "halfspace", "--weights", "1", "--threshold",
                        "4", "--n", "10000", "--seed", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  std::string header, is_row, crude_row;
  std::getline(in, header);
  std::getline(in, is_row);
  std::getline(in, crude_row);
  EXPECT_EQ(header, "estimator,p_hat,stderr,crude_equiv_n,efficiency_ratio");
  auto cells = [](const std::string& line) {
    std::vector<std::string> c;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) c.push_back(cell);
    return c;
  };
  const auto is = cells(is_row), crude = cells(crude_row);
  ASSERT_EQ(is.size(), 5u);
  ASSERT_EQ(crude.size(), 5u);
  EXPECT_EQ(is[0], "is");
  EXPECT_EQ(crude[0], "crude");
  EXPECT_GT(std::stod(is[4]), 100.0);
  for (int i = 1; i < 5; ++i) EXPECT_TRUE(std::isfinite(std::stod(is[i])));
}

TEST(CliBench, CertainEventRatioOne) {
  const fs::path dir = workdir("bench_one");
  const std::string model = standard_normal(dir);
  const Result r = invoke({"bench", "--model", model, "--analytic", "halfspace", "--weights", "1", "--threshold",
                        "-1000", "--n", "2000", "--seed", "2", "--out", (dir / "out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_csv(dir / "out" / "bench.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_NEAR(std::stod(rows[1][4]), 1.0, 0.05);
  EXPECT_NEAR(std::stod(rows[2][4]), 1.0, 0.05);
  EXPECT_EQ(slurp(dir / "out" / "bench.csv"), r.out);
}

TEST(CliReplay, EveryCommandReproducesItsOutputs) {
  const fs::path dir = workdir("replay");
  Rng rng(8);
  const std::string data = write_samples(dir, gmm_sample(400, two_blobs(), rng));
  const std::string model = standard_normal(dir);
  const std::vector<std::vector<std::string>> commands{
      {"fit", "--data", data, "--k", "1-3", "--seed", "4", "--workers", "2"},
      {"run", "--model", model, "--analytic", "halfspace", "--weights", "1", "--threshold", "3.5", "--seed",
       "6", "--workers", "3"},
      {"crude", "--model", model, "--analytic", "halfspace", "--weights", "1", "--threshold", "1", "--n",
       "20000", "--seed", "6", "--workers", "2"},
      {"bench", "--model", model, "--analytic", "halfspace", "--weights", "1", "--threshold", "3", "--seed",
       "6", "--workers", "2"}};
  for (std::size_t i = 0; i < commands.size(); ++i) {
    const fs::path first = dir / ("first" + std::to_string(i));
    const fs::path second = dir / ("second" + std::to_string(i));
    auto args = commands[i];
    args.push_back("--out");
    args.push_back(first.string());
    ASSERT_EQ(invoke(args).code, 0) << commands[i][0];
    const Json m = Json::parse(slurp(first / "manifest.json"));
    EXPECT_EQ(m["command"], commands[i][0]);
    EXPECT_TRUE(m.contains("wall_clock_seconds"));
    EXPECT_TRUE(m.contains("version"));
    const Result r = invoke({"replay", (first / "manifest.json").string(), "--out", second.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const auto& p : m["outputs"]) {
      const fs::path name = fs::path(p.get<std::string>()).filename();
      EXPECT_EQ(slurp(first / name), slurp(second / name)) << commands[i][0] << " " << name;
    }
  }
}

TEST(CliCheckMonotone, AnalyticCleanLaneChangeFlagged) {
  const fs::path dir = workdir("check_monotone");
  Result r = invoke({"check-monotone", "--analytic", "halfspace", "--weights", "1,2", "--threshold", "1",
                     "--envelope", "-3:3,-3:3", "--probes", "500"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "coordinate,direction,violations\n1,1,0\n2,1,0\n");
  std::ofstream(dir / "lc.json") << R"({"type": "lane-change"})";
  r = invoke({"check-monotone", "--scenario", (dir / "lc.json").string(), "--envelope",
              "5:40,0.05:2,0.0125:0.5", "--probes", "500", "--seed", "7"});
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.out.find("\n1,-1,0\n2,1,0\n3,1,"), std::string::npos) << r.out;
  EXPECT_EQ(invoke({"check-monotone", "--analytic", "orthant", "--corner", "0", "--envelope", "-inf:1"}).code, 2);
}
