// Writes the shipped 3-D synthetic model and scenario, and optionally pins
// the scenario probability with a large crude Monte Carlo run.
//
//   make_synthetic OUT_DIR [--oracle-n N] [--seed S] [--workers W]

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "raresim/accel.hpp"
#include "raresim/errors.hpp"
#include "raresim/serialization.hpp"

using namespace raresim;

namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(v.size());
  int i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Raw-coordinate mixture on [0, inf)^3.
TruncatedGMM raw_model() {
  MatrixXd s1(3, 3), s2(3, 3);
  s1 << 1.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 1.0;
  s2 << 0.6, -0.1, 0.05, -0.1, 0.8, 0.1, 0.05, 0.1, 0.5;
  return TruncatedGMM(vec({0.6, 0.4}),
                      {GaussComponent(vec({1.0, 1.0, 1.0}), s1), GaussComponent(vec({2.0, 0.5, 1.5}), s2)},
                      Rect(VectorXd::Zero(3), VectorXd::Constant(3, kInf)));
}

// The stored model is in standardized coordinates, like a fitted one.
StoredModel stored_model() {
  const TruncatedGMM raw = raw_model();
  AffineStandardizer st{vec({1.4, 0.8, 1.2}), vec({1.1, 0.95, 0.9})};
  const VectorXd inv = st.scale.cwiseInverse();
  std::vector<GaussComponent> comps;
  for (const auto& c : raw.components()) {
    comps.emplace_back(st.apply(c.mean()), inv.asDiagonal() * c.cov() * inv.asDiagonal());
  }
  return {TruncatedGMM(raw.weights(), comps, st.apply(raw.support())), st, {"x1", "x2", "x3"}};
}

Json scenario_json() {
  return Json::parse(R"({
    "type": "union",
    "members": [
      {"type": "halfspace", "weights": [1, 1, 1], "threshold": 11.8},
      {"type": "orthant", "corner": [4.6, 0, 3.3]}
    ]
  })");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: make_synthetic OUT_DIR [--oracle-n N] [--seed S] [--workers W]\n";
    return 2;
  }
  const std::string dir = argv[1];
  long oracle_n = 0;
  std::uint64_t seed = 20240601;
  int workers = 1;
  for (int i = 2; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--oracle-n") oracle_n = std::atol(argv[i + 1]);
    else if (flag == "--seed") seed = std::strtoull(argv[i + 1], nullptr, 10);
    else if (flag == "--workers") workers = std::atoi(argv[i + 1]);
    else {
      std::cerr << "unknown flag " << flag << "\n";
      return 2;
    }
  }
  std::filesystem::create_directories(dir);
  const StoredModel m = stored_model();
  write_file_atomic(dir + "/model.json", model_to_json(m).dump(2) + "\n");
  write_file_atomic(dir + "/scenario.json", scenario_json().dump(2) + "\n");
  if (oracle_n <= 0) return 0;

  const Scenario s = scenario_from_json(scenario_json());
  const AffineStandardizer st = m.standardizer;
  Indicator raw = s.indicator;
  Indicator ind = [raw, st](const VectorXd& z) { return raw(st.invert(z)); };
  const EstimateReport r = crude_mc(ind, m.model, oracle_n, {seed, workers, 0});
  Json t;
  t["p"] = r.p_hat;
  t["stderr"] = r.stderr_;
  t["ci95"] = {r.ci95.first, r.ci95.second};
  t["hits"] = r.hits;
  t["n"] = r.n_samples;
  t["seed"] = seed;
  t["method"] = "crude";
  write_file_atomic(dir + "/truth.json", t.dump(2) + "\n");
  std::cout << t.dump(2) << "\n";
  return 0;
}
