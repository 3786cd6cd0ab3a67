#include "raresim/cli.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <optional>
#include <sstream>
#include <utility>

#include <CLI11.hpp>

#include "raresim/accel.hpp"
#include "raresim/detail/parallel.hpp"
#include "raresim/errors.hpp"
#include "raresim/random.hpp"
#include "raresim/serialization.hpp"

namespace raresim::cli {

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

// Seed salts keep the bounds and crude streams apart from the IS streams.
constexpr std::uint64_t kBoundsSalt = 0x626f756e6473ULL;
constexpr std::uint64_t kCrudeSalt = 0x6372756465ULL;

std::string absolute(const std::string& p) { return fs::absolute(fs::path(p)).lexically_normal().string(); }

// Ordered (flag, value) pairs; they become both the manifest's option table
// and the canonical argument list it replays.
using OptionList = std::vector<std::pair<std::string, std::string>>;

struct ScenarioArgs {
  std::string file;
  std::string analytic;
  std::string weights;
  std::string corner;
  double threshold = 0.0;
  CLI::Option* threshold_opt = nullptr;
};

void add_scenario_options(CLI::App* app, ScenarioArgs& a) {
  app->add_option("--scenario", a.file, "Scenario JSON: an AVConfig or a typed scenario document");
  app->add_option("--analytic", a.analytic, "Analytic scenario instead of --scenario")
      ->check(CLI::IsMember({"halfspace", "orthant", "mixture-tail"}));
  app->add_option("--weights", a.weights, "halfspace weights, comma-separated");
  a.threshold_opt = app->add_option("--threshold", a.threshold, "halfspace / mixture-tail threshold");
  app->add_option("--corner", a.corner, "orthant corner, comma-separated");
}

void list_scenario_options(const ScenarioArgs& a, OptionList& o) {
  if (!a.file.empty()) {
    o.emplace_back("--scenario", absolute(a.file));
    return;
  }
  o.emplace_back("--analytic", a.analytic);
  if (!a.weights.empty()) o.emplace_back("--weights", a.weights);
  if (a.threshold_opt->count()) o.emplace_back("--threshold", format_double(a.threshold));
  if (!a.corner.empty()) o.emplace_back("--corner", a.corner);
}

Scenario load_scenario(const ScenarioArgs& a, int d) {
  if (a.file.empty() == a.analytic.empty()) {
    throw InputError("exactly one of --scenario and --analytic is required");
  }
  Scenario s;
  if (!a.file.empty()) {
    s = scenario_from_json(read_json_file(a.file));
  } else {
    AnalyticParams p;
    const bool need_weights = a.analytic == "halfspace";
    const bool need_threshold = a.analytic != "orthant";
    const bool need_corner = a.analytic == "orthant";
    if (need_weights != !a.weights.empty()) {
      throw InputError(need_weights ? "--analytic halfspace needs --weights"
                                    : "--weights only applies to --analytic halfspace");
    }
    if (need_threshold != (a.threshold_opt->count() > 0)) {
      throw InputError(need_threshold ? "--analytic " + a.analytic + " needs --threshold"
                                      : "--threshold does not apply to --analytic orthant");
    }
    if (need_corner != !a.corner.empty()) {
      throw InputError(need_corner ? "--analytic orthant needs --corner"
                                   : "--corner only applies to --analytic orthant");
    }
    if (need_weights) p.weights = parse_number_list(a.weights, "--weights");
    if (need_corner) p.corner = parse_number_list(a.corner, "--corner");
    p.threshold = a.threshold;
    s = analytic_scenario(a.analytic, p);
  }
  if (s.mask.dim() != d) {
    throw InputError("scenario has dimension " + std::to_string(s.mask.dim()) +
                     " but the model has dimension " + std::to_string(d));
  }
  return s;
}

// Model plus scenario; `indicator` acts on standardized coordinates.
struct Pipeline {
  StoredModel stored;
  Scenario scenario;
  Indicator indicator;

  const TruncatedGMM& gmm() const { return stored.model; }
  const AffineStandardizer& st() const { return stored.standardizer; }

  std::optional<double> truth() const {
    if (!scenario.truth) return std::nullopt;
    try {
      return scenario.truth(stored.model.map_back(stored.standardizer));
    } catch (const InputError&) {
      return std::nullopt;
    }
  }
};

Pipeline load_pipeline(const std::string& model_path, const ScenarioArgs& sa) {
  Pipeline p;
  p.stored = model_from_json(read_json_file(model_path));
  p.scenario = load_scenario(sa, p.stored.model.dim());
  Indicator raw = p.scenario.indicator;
  AffineStandardizer st = p.stored.standardizer;
  p.indicator = [raw, st](const VectorXd& z) { return raw(st.invert(z)); };
  return p;
}

// Files are held in memory and written only once the command has succeeded.
class Outputs {
 public:
  explicit Outputs(std::string dir) : dir_(std::move(dir)) {}

  void add(const std::string& name, std::string content) {
    files_.emplace_back(path(name), std::move(content));
  }

  std::vector<std::string> paths() const {
    std::vector<std::string> out;
    for (const auto& [p, c] : files_) out.push_back(p);
    return out;
  }

  std::string path(const std::string& name) const { return absolute((fs::path(dir_) / name).string()); }

  void commit(const std::string& manifest) {
    add("manifest.json", manifest);
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw InputError(dir_ + ": cannot create output directory");
    std::vector<std::string> written;
    try {
      for (const auto& [p, c] : files_) {
        write_file_atomic(p, c);
        written.push_back(p);
      }
    } catch (...) {
      for (const auto& p : written) fs::remove(p, ec);
      throw;
    }
  }

 private:
  std::string dir_;
  std::vector<std::pair<std::string, std::string>> files_;
};

std::string shell_quote(const std::string& s) {
  if (!s.empty() && s.find_first_not_of("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
                                        "0123456789-_./:,=+") == std::string::npos) {
    return s;
  }
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

std::string manifest(const std::string& command, const OptionList& options, std::uint64_t seed,
                     int workers, const Json& inputs, const std::vector<std::string>& outputs,
                     Clock::time_point start) {
  Json argv = Json::array({command});
  Json opts = Json::object();
  std::string replay = "raresim " + command;
  for (const auto& [flag, value] : options) {
    argv.push_back(flag);
    argv.push_back(value);
    opts[flag.substr(2)] = value;
    replay += " " + flag + " " + shell_quote(value);
  }
  Json j;
  j["tool"] = "raresim";
  j["version"] = RARESIM_VERSION;
  j["command"] = command;
  j["options"] = opts;
  j["seed"] = seed;
  j["workers"] = workers;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["argv"] = argv;
  j["replay_command"] = replay;
  j["wall_clock_seconds"] = std::chrono::duration<double>(Clock::now() - start).count();
  return j.dump(2) + "\n";
}

std::string csv_row(const std::vector<std::string>& cells) {
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) line += ',';
    line += cells[i];
  }
  return line + "\n";
}

std::string trace_csv(const std::vector<TracePoint>& trace) {
  std::string s = "sample_index,p_hat,ci_half_width\n";
  for (const auto& t : trace) {
    s += csv_row({std::to_string(t.index), format_double(t.p_hat), format_double(t.ci_half_width)});
  }
  return s;
}

// Canonical standardized point -> canonical raw point. Both maps are
// increasing per coordinate, so dominance is preserved.
VectorXd canonical_to_raw(const VectorXd& c, const DirectionMask& mask, const AffineStandardizer& st) {
  return mask.canonicalize(st.invert(mask.decanonicalize(c)));
}

Json frontier_json(const FrontierStore& f, const AffineStandardizer& st) {
  Json j;
  j["mask"] = vector_to_json(f.mask().signs);
  for (const char* key : {"s1", "s0"}) {
    const auto& pts = std::string(key) == "s1" ? f.s1() : f.s0();
    Json a = Json::array();
    for (const auto& p : pts) a.push_back(vector_to_json(canonical_to_raw(p, f.mask(), st)));
    j[key] = a;
  }
  return j;
}

std::string dompoints_csv(const ProcedureState& s, const AffineStandardizer& st) {
  std::vector<std::string> head{"set", "component"};
  for (int i = 0; i < st.dim(); ++i) head.push_back("x" + std::to_string(i + 1));
  head.push_back("kkt_residual");
  head.push_back("complementarity");
  std::string out = csv_row(head);
  for (const auto& [name, sets] : {std::pair{"inner", &s.a_inner}, std::pair{"outer", &s.a_outer}}) {
    for (int k = 0; k < sets->K(); ++k) {
      for (const auto& p : sets->sets[k]) {
        std::vector<std::string> row{name, std::to_string(k)};
        const VectorXd x = st.invert(p.point);
        for (Eigen::Index i = 0; i < x.size(); ++i) row.push_back(format_double(x[i]));
        row.push_back(format_double(p.kkt_residual));
        row.push_back(format_double(p.complementarity));
        out += csv_row(row);
      }
    }
  }
  return out;
}

Json dominating_json(const DominatingSets& sets, const AffineStandardizer& st) {
  Json a = Json::array();
  for (int k = 0; k < sets.K(); ++k) {
    Json pts = Json::array();
    for (const auto& p : sets.sets[k]) pts.push_back(vector_to_json(st.invert(p.point)));
    a.push_back(pts);
  }
  return a;
}

Json procedure_json(const ProcedureState& s, const AffineStandardizer& st) {
  Json j;
  j["iterations"] = s.iteration;
  j["simulator_calls"] = s.simulator_calls;
  Json h = Json::array();
  for (const auto& it : s.history) {
    h.push_back({{"iteration", it.iteration},
                 {"rho", it.rho},
                 {"hits", it.hits},
                 {"s1", it.s1},
                 {"s0", it.s0},
                 {"inner_points", it.inner_points},
                 {"outer_points", it.outer_points},
                 {"dropped_pieces", it.dropped_pieces},
                 {"outer_truncated", it.outer_truncated}});
  }
  j["history"] = h;
  j["a_inner"] = dominating_json(s.a_inner, st);
  j["a_outer"] = dominating_json(s.a_outer, st);
  return j;
}

Json report_json(const EstimateReport& r, const std::optional<double>& truth) {
  Json j = report_to_json(r);
  j["truth"] = truth ? Json(*truth) : Json(nullptr);
  return j;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw InputError(what);
}

// ---- fit ----

struct FitArgs {
  std::string data, out, k_list = "1,2,3,4", support;
  std::uint64_t seed = 0;
  int workers = 1;
  int max_iter = 500;
  double tol = 1e-7;
  int restarts = 3;
};

std::vector<int> parse_k_list(const std::string& text) {
  std::vector<int> ks;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    int a = 0, b = 0;
    char dash = 0;
    std::istringstream is(item);
    if (!(is >> a)) throw InputError("--k: bad entry \"" + item + "\"");
    b = a;
    if (is >> dash) {
      if (dash != '-' || !(is >> b)) throw InputError("--k: bad entry \"" + item + "\"");
    }
    std::string rest;
    if (is >> rest) throw InputError("--k: bad entry \"" + item + "\"");
    if (a < 1 || b < a) throw InputError("--k: components must be >= 1 and ranges increasing");
    for (int k = a; k <= b; ++k) {
      if (std::find(ks.begin(), ks.end(), k) != ks.end()) throw InputError("--k: duplicate K=" + std::to_string(k));
      ks.push_back(k);
    }
  }
  if (ks.empty()) throw InputError("--k: empty list");
  return ks;
}

int cmd_fit(const FitArgs& a, std::ostream& out) {
  const auto start = Clock::now();
  require(a.workers >= 1, "--workers must be >= 1");
  require(a.max_iter >= 1, "--max-iter must be >= 1");
  require(a.restarts >= 1, "--restarts must be >= 1");
  require(a.tol > 0.0, "--tol must be > 0");
  const std::vector<int> ks = parse_k_list(a.k_list);
  const CsvTable t = read_numeric_csv(a.data);
  const int d = static_cast<int>(t.rows.cols());
  const Rect support = a.support.empty() ? Rect::unbounded(d) : parse_support(a.support);
  if (support.dim() != d) {
    throw InputError("--support has " + std::to_string(support.dim()) + " dimensions but " + a.data +
                     " has " + std::to_string(d) + " columns");
  }
  for (Eigen::Index r = 0; r < t.rows.rows(); ++r) {
    if (!support.contains(t.rows.row(r).transpose())) {
      throw InputError(a.data + ":" + std::to_string(t.lines[r]) + ": row lies outside the support");
    }
  }
  auto [z, st] = standardize(t.rows);
  const Rect support_z = st.apply(support);
  FitOptions fo;
  fo.max_iter = a.max_iter;
  fo.tol = a.tol;
  fo.restarts = a.restarts;
  std::vector<std::optional<FitResult>> fits(ks.size());
  detail::parallel_for(ks.size(), a.workers, [&](std::size_t i) {
    try {
      fits[i] = fit(z, ks[i], support_z, a.seed, fo);
    } catch (const Error& e) {
      throw FitError("fit failed for K=" + std::to_string(ks[i]) + ": " + e.what());
    }
  });

  const double n = static_cast<double>(z.rows());
  std::string table = "K,bic,loglik,iterations\n";
  std::size_t best = 0;
  std::vector<double> bics(ks.size());
  for (std::size_t i = 0; i < ks.size(); ++i) {
    // Raw-coordinate likelihood: the standardization Jacobian is a constant.
    const double ll = log_likelihood(z, fits[i]->model) + n * st.log_jacobian();
    bics[i] = -2.0 * ll + static_cast<double>(bic_param_count(ks[i], d)) * std::log(n);
    if (bics[i] < bics[best]) best = i;
    table += csv_row({std::to_string(ks[i]), format_double(bics[i]), format_double(ll),
                      std::to_string(fits[i]->report.iterations)});
  }
  StoredModel stored{fits[best]->model, st, t.header};

  Outputs o(a.out);
  o.add("bic.csv", table);
  o.add("model.json", model_to_json(stored).dump(2) + "\n");
  OptionList opts{{"--data", absolute(a.data)}, {"--k", a.k_list}};
  if (!a.support.empty()) opts.emplace_back("--support", a.support);
  opts.insert(opts.end(), {{"--seed", std::to_string(a.seed)},
                           {"--workers", std::to_string(a.workers)},
                           {"--max-iter", std::to_string(a.max_iter)},
                           {"--tol", format_double(a.tol)},
                           {"--restarts", std::to_string(a.restarts)},
                           {"--out", absolute(a.out)}});
  o.commit(manifest("fit", opts, a.seed, a.workers, Json{{"data", absolute(a.data)}}, o.paths(), start));
  out << table << "selected K=" << ks[best] << "\n";
  return kOk;
}

// ---- run / bench ----

struct RunArgs {
  std::string model, out;
  ScenarioArgs scenario;
  std::uint64_t seed = 0;
  int workers = 1;
  long n = 10000;
  int max_iter = 5;
  int n_per_iter = 500;
  double rho = 0.0;
  CLI::Option* rho_opt = nullptr;
  double final_rho = 0.0;
  std::size_t max_frontier = 4096;
  std::size_t outer_cap = 4096;
  long bounds_n = -1;  // -1: same as n
  long trace_stride = 100;
};

void add_procedure_options(CLI::App* app, RunArgs& a) {
  app->add_option("--model", a.model, "Model JSON")->required();
  add_scenario_options(app, a.scenario);
  app->add_option("--seed", a.seed, "Random seed")->capture_default_str();
  app->add_option("--workers", a.workers, "Worker threads (results do not depend on it)")->capture_default_str();
  app->add_option("--n", a.n, "Samples for the final estimate")->capture_default_str();
  app->add_option("--max-iter", a.max_iter, "Procedure iterations")->capture_default_str();
  app->add_option("--n-per-iter", a.n_per_iter, "Simulator calls per iteration")->capture_default_str();
  a.rho_opt = app->add_option("--rho", a.rho, "Inner/outer blend during the iterations (default 0, then 0.5)");
  app->add_option("--final-rho", a.final_rho, "Inner/outer blend of the final IS distribution")->capture_default_str();
  app->add_option("--max-frontier", a.max_frontier, "Stop once |s1| + |s0| reaches this")->capture_default_str();
  app->add_option("--outer-cap", a.outer_cap, "Cap on outer orthant pieces")->capture_default_str();
  app->add_option("--trace-stride", a.trace_stride, "Samples between trace rows (0: final row only)")
      ->capture_default_str();
}

void validate_run(const RunArgs& a) {
  require(a.workers >= 1, "--workers must be >= 1");
  require(a.n >= 100, "--n must be >= 100 for importance sampling");
  require(a.max_iter >= 0, "--max-iter must be >= 0");
  require(a.n_per_iter >= 1, "--n-per-iter must be >= 1");
  require(!a.rho_opt->count() || (a.rho >= 0.0 && a.rho <= 1.0), "--rho must lie in [0, 1]");
  require(a.final_rho >= 0.0 && a.final_rho <= 1.0, "--final-rho must lie in [0, 1]");
  require(a.max_frontier >= 1, "--max-frontier must be >= 1");
  require(a.outer_cap >= 1, "--outer-cap must be >= 1");
  require(a.trace_stride >= 0, "--trace-stride must be >= 0");
  require(a.bounds_n == -1 || a.bounds_n == 0 || a.bounds_n >= 100, "--bounds-n must be 0 or >= 100");
}

OptionList procedure_option_list(const RunArgs& a) {
  OptionList o{{"--model", absolute(a.model)}};
  list_scenario_options(a.scenario, o);
  o.emplace_back("--seed", std::to_string(a.seed));
  o.emplace_back("--workers", std::to_string(a.workers));
  o.emplace_back("--n", std::to_string(a.n));
  o.emplace_back("--max-iter", std::to_string(a.max_iter));
  o.emplace_back("--n-per-iter", std::to_string(a.n_per_iter));
  if (a.rho_opt->count()) o.emplace_back("--rho", format_double(a.rho));
  o.emplace_back("--final-rho", format_double(a.final_rho));
  o.emplace_back("--max-frontier", std::to_string(a.max_frontier));
  o.emplace_back("--outer-cap", std::to_string(a.outer_cap));
  o.emplace_back("--trace-stride", std::to_string(a.trace_stride));
  return o;
}

Json pipeline_inputs(const RunArgs& a) {
  Json j{{"model", absolute(a.model)}};
  if (!a.scenario.file.empty()) j["scenario"] = absolute(a.scenario.file);
  return j;
}

struct IsRun {
  ProcedureResult procedure;
  EstimateReport report;
};

IsRun run_is(const Pipeline& p, const RunArgs& a) {
  ProcedureOptions po;
  po.n_per_iter = a.n_per_iter;
  po.max_iter = a.max_iter;
  po.max_frontier = a.max_frontier;
  if (a.rho_opt->count()) po.rho = a.rho;
  po.final_rho = a.final_rho;
  po.outer_cap = a.outer_cap;
  po.seed = a.seed;
  po.workers = a.workers;
  ProcedureResult res = run_procedure(p.indicator, p.gmm(), p.scenario.mask, po);
  EstimateOptions eo{a.seed, a.workers, a.trace_stride};
  EstimateReport rep = estimate(p.indicator, p.gmm(), res.q, a.n, eo);
  return {std::move(res), std::move(rep)};
}

int cmd_run(const RunArgs& a, std::ostream& out) {
  const auto start = Clock::now();
  validate_run(a);
  const Pipeline p = load_pipeline(a.model, a.scenario);
  IsRun r = run_is(p, a);
  const long bounds_n = a.bounds_n < 0 ? a.n : a.bounds_n;
  if (bounds_n > 0) {
    EstimateOptions bo{mix64(a.seed ^ kBoundsSalt), a.workers, 0};
    const BoundsReport b = bound_probabilities(p.gmm(), r.procedure.state.frontier, bounds_n, bo, a.outer_cap);
    r.report.bounds = std::make_pair(b.p_lower, b.p_upper);
    // Both sides are estimates, so only a gap beyond both intervals counts.
    if (r.report.ci95.second < b.p_lower - 1.96 * b.se_lower ||
        r.report.ci95.first > b.p_upper + 1.96 * b.se_upper) {
      r.report.flags.push_back("outside_bounds");
    }
  }
  const std::optional<double> truth = p.truth();

  Outputs o(a.out);
  o.add("report.json", report_json(r.report, truth).dump(2) + "\n");
  o.add("frontier.json", frontier_json(r.procedure.state.frontier, p.st()).dump(2) + "\n");
  o.add("dominating_points.csv", dompoints_csv(r.procedure.state, p.st()));
  o.add("trace.csv", trace_csv(r.report.trace));
  o.add("procedure.json", procedure_json(r.procedure.state, p.st()).dump(2) + "\n");
  OptionList opts = procedure_option_list(a);
  opts.emplace_back("--bounds-n", std::to_string(bounds_n));
  opts.emplace_back("--out", absolute(a.out));
  o.commit(manifest("run", opts, a.seed, a.workers, pipeline_inputs(a), o.paths(), start));

  out << "p_hat " << format_double(r.report.p_hat) << "\n"
      << "ci95 " << format_double(r.report.ci95.first) << " " << format_double(r.report.ci95.second) << "\n"
      << "efficiency_ratio " << format_double(r.report.efficiency_ratio) << "\n";
  if (truth) out << "truth " << format_double(*truth) << "\n";
  return kOk;
}

std::string bench_csv(const EstimateReport& is, const EstimateReport& crude) {
  std::string s = "estimator,p_hat,stderr,crude_equiv_n,efficiency_ratio\n";
  for (const auto* r : {&is, &crude}) {
    s += csv_row({r->method, format_double(r->p_hat), format_double(r->stderr_),
                  format_double(r->crude_equiv_n), format_double(r->efficiency_ratio)});
  }
  return s;
}

int cmd_bench(const RunArgs& a, std::ostream& out) {
  const auto start = Clock::now();
  validate_run(a);
  const Pipeline p = load_pipeline(a.model, a.scenario);
  const IsRun r = run_is(p, a);
  const EstimateReport crude = crude_mc(p.indicator, p.gmm(), a.n, {mix64(a.seed ^ kCrudeSalt), a.workers, 0});
  const std::string table = bench_csv(r.report, crude);
  if (!a.out.empty()) {
    Outputs o(a.out);
    o.add("bench.csv", table);
    OptionList opts = procedure_option_list(a);
    opts.emplace_back("--out", absolute(a.out));
    o.commit(manifest("bench", opts, a.seed, a.workers, pipeline_inputs(a), o.paths(), start));
  }
  out << table;
  return kOk;
}

// ---- crude ----

struct CrudeArgs {
  std::string model, out;
  ScenarioArgs scenario;
  std::uint64_t seed = 0;
  int workers = 1;
  long n = 100000;
  long trace_stride = 1000;
};

int cmd_crude(const CrudeArgs& a, std::ostream& out) {
  const auto start = Clock::now();
  require(a.workers >= 1, "--workers must be >= 1");
  require(a.n >= 1, "--n must be >= 1");
  require(a.trace_stride >= 0, "--trace-stride must be >= 0");
  const Pipeline p = load_pipeline(a.model, a.scenario);
  const EstimateReport rep = crude_mc(p.indicator, p.gmm(), a.n, {a.seed, a.workers, a.trace_stride});
  const std::optional<double> truth = p.truth();

  Outputs o(a.out);
  o.add("report.json", report_json(rep, truth).dump(2) + "\n");
  o.add("trace.csv", trace_csv(rep.trace));
  OptionList opts{{"--model", absolute(a.model)}};
  list_scenario_options(a.scenario, opts);
  opts.emplace_back("--seed", std::to_string(a.seed));
  opts.emplace_back("--workers", std::to_string(a.workers));
  opts.emplace_back("--n", std::to_string(a.n));
  opts.emplace_back("--trace-stride", std::to_string(a.trace_stride));
  opts.emplace_back("--out", absolute(a.out));
  Json inputs{{"model", absolute(a.model)}};
  if (!a.scenario.file.empty()) inputs["scenario"] = absolute(a.scenario.file);
  o.commit(manifest("crude", opts, a.seed, a.workers, inputs, o.paths(), start));

  out << "p_hat " << format_double(rep.p_hat) << "\n"
      << "ci95 " << format_double(rep.ci95.first) << " " << format_double(rep.ci95.second) << "\n";
  if (truth) out << "truth " << format_double(*truth) << "\n";
  return kOk;
}

// ---- check-monotone ----

struct MonotoneArgs {
  ScenarioArgs scenario;
  std::string envelope;
  int probes = 2000;
  std::uint64_t seed = 0;
};

int cmd_check_monotone(const MonotoneArgs& a, std::ostream& out) {
  require(a.probes >= 1, "--probes must be >= 1");
  const Rect env = parse_support(a.envelope);
  require(env.lower.allFinite() && env.upper.allFinite(), "--envelope bounds must be finite");
  const Scenario s = load_scenario(a.scenario, env.dim());
  Rng rng = make_stream(a.seed, 0);
  const auto violations = check_monotone(s.indicator, s.mask, env, a.probes, rng);
  std::vector<long> per(env.dim(), 0);
  for (const auto& v : violations) ++per[v.coordinate];
  out << "coordinate,direction,violations\n";
  for (int i = 0; i < env.dim(); ++i) {
    out << csv_row({std::to_string(i + 1), format_double(s.mask.signs[i]), std::to_string(per[i])});
  }
  return violations.empty() ? kOk : kMonotonicityViolation;
}

// ---- replay ----

int cmd_replay(const std::string& path, const std::string& out_dir, std::ostream& out, std::ostream& err) {
  const Json m = read_json_file(path);
  if (!m.is_object() || !m.contains("argv") || !m["argv"].is_array() || m["argv"].empty()) {
    throw InputError(path + ": manifest has no argv");
  }
  std::vector<std::string> argv;
  for (const auto& v : m["argv"]) {
    if (!v.is_string()) throw InputError(path + ": argv entries must be strings");
    argv.push_back(v.get<std::string>());
  }
  if (argv[0] == "replay") throw InputError(path + ": cannot replay a replay");
  if (!out_dir.empty()) {
    auto it = std::find(argv.begin(), argv.end(), "--out");
    if (it != argv.end() && it + 1 != argv.end()) {
      *(it + 1) = out_dir;
    } else {
      argv.push_back("--out");
      argv.push_back(out_dir);
    }
  }
  return run(argv, out, err);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Rare-event probability estimation with mixture importance sampling"};
  app.name("raresim");
  app.require_subcommand(1);
  app.set_version_flag("--version", RARESIM_VERSION);

  FitArgs fa;
  CLI::App* fit_cmd = app.add_subcommand("fit", "Fit truncated Gaussian mixtures and select K by BIC");
  fit_cmd->add_option("--data", fa.data, "CSV with a header row")->required();
  fit_cmd->add_option("--k", fa.k_list, "Component counts, e.g. 1,2,3 or 1-9")->capture_default_str();
  fit_cmd->add_option("--support", fa.support, "Per-dimension lo:hi, e.g. 0:inf,-inf:inf (default unbounded)");
  fit_cmd->add_option("--seed", fa.seed, "Initialization seed")->capture_default_str();
  fit_cmd->add_option("--workers", fa.workers, "Fit several K at once")->capture_default_str();
  fit_cmd->add_option("--max-iter", fa.max_iter, "EM iterations per restart")->capture_default_str();
  fit_cmd->add_option("--tol", fa.tol, "Relative log-likelihood tolerance")->capture_default_str();
  fit_cmd->add_option("--restarts", fa.restarts, "k-means++ restarts")->capture_default_str();
  fit_cmd->add_option("--out", fa.out, "Output directory")->required();

  RunArgs ra;
  CLI::App* run_cmd = app.add_subcommand("run", "Build the IS distribution and estimate the probability");
  add_procedure_options(run_cmd, ra);
  run_cmd->add_option("--bounds-n", ra.bounds_n, "Samples for the frontier bounds (0 disables; default --n)");
  run_cmd->add_option("--out", ra.out, "Output directory")->required();

  CrudeArgs ca;
  CLI::App* crude_cmd = app.add_subcommand("crude", "Crude Monte Carlo estimate");
  crude_cmd->add_option("--model", ca.model, "Model JSON")->required();
  add_scenario_options(crude_cmd, ca.scenario);
  crude_cmd->add_option("--seed", ca.seed, "Random seed")->capture_default_str();
  crude_cmd->add_option("--workers", ca.workers, "Worker threads")->capture_default_str();
  crude_cmd->add_option("--n", ca.n, "Samples")->capture_default_str();
  crude_cmd->add_option("--trace-stride", ca.trace_stride, "Samples between trace rows")->capture_default_str();
  crude_cmd->add_option("--out", ca.out, "Output directory")->required();

  RunArgs ba;
  CLI::App* bench_cmd = app.add_subcommand("bench", "Compare IS and crude Monte Carlo at equal n");
  add_procedure_options(bench_cmd, ba);
  bench_cmd->add_option("--out", ba.out, "Also write bench.csv and a manifest here");

  MonotoneArgs ma;
  CLI::App* mono_cmd = app.add_subcommand("check-monotone", "Probe a scenario for monotonicity violations");
  add_scenario_options(mono_cmd, ma.scenario);
  mono_cmd->add_option("--envelope", ma.envelope, "Finite probe box in raw coordinates, lo:hi per dimension")
      ->required();
  mono_cmd->add_option("--probes", ma.probes, "Uniform probe points")->capture_default_str();
  mono_cmd->add_option("--seed", ma.seed, "Random seed")->capture_default_str();

  std::string manifest_path, replay_out;
  CLI::App* replay_cmd = app.add_subcommand("replay", "Re-run a command from its manifest");
  replay_cmd->add_option("manifest", manifest_path, "manifest.json")->required();
  replay_cmd->add_option("--out", replay_out, "Write to this directory instead");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (fit_cmd->parsed()) return cmd_fit(fa, out);
    if (run_cmd->parsed()) return cmd_run(ra, out);
    if (crude_cmd->parsed()) return cmd_crude(ca, out);
    if (bench_cmd->parsed()) return cmd_bench(ba, out);
    if (mono_cmd->parsed()) return cmd_check_monotone(ma, out);
    if (replay_cmd->parsed()) return cmd_replay(manifest_path, replay_out, out, err);
  } catch (const InputError& e) {
    err << "raresim: input error: " << e.what() << "\n";
    return kInputError;
  } catch (const FitError& e) {
    err << "raresim: " << e.what() << "\n";
    return kFitFailure;
  } catch (const NonMonotoneOutcome& e) {
    err << "raresim: " << e.what() << "\n";
    return kMonotonicityViolation;
  } catch (const std::exception& e) {
    err << "raresim: internal failure: " << e.what() << "\n";
    return kSolverFailure;
  }
  return kInputError;
}

}  // namespace raresim::cli
