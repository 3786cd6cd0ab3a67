#include "raresim/serialization.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <system_error>
#include <unistd.h>

#include "raresim/errors.hpp"

namespace raresim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Json num(double x) {
  if (std::isinf(x)) return x > 0 ? Json("inf") : Json("-inf");
  if (std::isnan(x)) return Json("nan");
  return Json(x);
}

Json vec(const VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v[i]));
  return a;
}

Json mat(const MatrixXd& m) {
  Json a = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) a.push_back(vec(m.row(r).transpose()));
  return a;
}

Json points(const std::vector<VectorXd>& pts) {
  Json a = Json::array();
  for (const auto& p : pts) a.push_back(vec(p));
  return a;
}

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  throw InputError(where + ": " + what);
}

const Json& field(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object()) bad(where, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) bad(where, std::string("missing field \"") + key + "\"");
  return *it;
}

double get_num(const Json& j, const std::string& where) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto& s = j.get_ref<const std::string&>();
    if (s == "inf" || s == "+inf") return kInf;
    if (s == "-inf") return -kInf;
  }
  bad(where, "expected a number, \"inf\" or \"-inf\"");
}

double get_finite(const Json& j, const std::string& where) {
  const double x = get_num(j, where);
  if (!std::isfinite(x)) bad(where, "must be finite");
  return x;
}

VectorXd get_vec(const Json& j, const std::string& where, long expect = -1) {
  if (!j.is_array()) bad(where, "expected an array");
  if (expect >= 0 && static_cast<long>(j.size()) != expect) {
    bad(where, "expected " + std::to_string(expect) + " entries, got " + std::to_string(j.size()));
  }
  VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = get_num(j[i], where + "[" + std::to_string(i) + "]");
  }
  return v;
}

MatrixXd get_mat(const Json& j, const std::string& where, int rows, int cols) {
  if (!j.is_array() || static_cast<int>(j.size()) != rows) {
    bad(where, "expected " + std::to_string(rows) + " rows");
  }
  MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    m.row(r) = get_vec(j[r], where + "[" + std::to_string(r) + "]", cols).transpose();
  }
  return m;
}

std::vector<VectorXd> get_points(const Json& j, const std::string& where, int d) {
  if (!j.is_array()) bad(where, "expected an array");
  std::vector<VectorXd> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.push_back(get_vec(j[i], where + "[" + std::to_string(i) + "]", d));
  }
  return out;
}

int get_int(const Json& j, const std::string& where) {
  if (!j.is_number_integer()) bad(where, "expected an integer");
  return j.get<int>();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s == "inf" || s == "+inf") {
    out = kInf;
    return true;
  }
  if (s == "-inf") {
    out = -kInf;
    return true;
  }
  const char* b = s.data();
  const char* e = b + s.size();
  if (b != e && *b == '+') ++b;
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e && b != e;
}

// Common AVConfig field table so reader and writer stay in sync.
template <class F>
void for_each_av_field(AVConfig& c, F&& f) {
  f("acc_time_gap", c.acc_time_gap);
  f("acc_speed_gain", c.acc_speed_gain);
  f("acc_spacing_gain", c.acc_spacing_gain);
  f("aeb_ttc_trigger", c.aeb_ttc_trigger);
  f("aeb_decel", c.aeb_decel);
  f("max_decel", c.max_decel);
  f("reaction_delay", c.reaction_delay);
  f("dt", c.dt);
  f("horizon", c.horizon);
  f("crash_range", c.crash_range);
}

Scenario scenario_at(const Json& j, const std::string& where) {
  if (!j.is_object()) bad(where, "expected an object");
  if (!j.contains("type")) {
    return lane_change_scenario(av_config_from_json(j));
  }
  const Json& t = j["type"];
  if (!t.is_string()) bad(where + ".type", "expected a string");
  const std::string type = t.get<std::string>();
  if (type == "lane-change") {
    AVConfig cfg;
    if (j.contains("config")) cfg = av_config_from_json(j["config"]);
    return lane_change_scenario(cfg);
  }
  if (type == "union") {
    const Json& m = field(j, "members", where);
    if (!m.is_array() || m.empty()) bad(where + ".members", "expected a nonempty array");
    std::vector<Scenario> members;
    for (std::size_t i = 0; i < m.size(); ++i) {
      members.push_back(scenario_at(m[i], where + ".members[" + std::to_string(i) + "]"));
    }
    return union_scenario(members);
  }
  AnalyticParams p;
  if (type == "halfspace") {
    p.weights = get_vec(field(j, "weights", where), where + ".weights");
    p.threshold = get_finite(field(j, "threshold", where), where + ".threshold");
  } else if (type == "orthant") {
    p.corner = get_vec(field(j, "corner", where), where + ".corner");
  } else if (type == "mixture-tail") {
    p.threshold = get_finite(field(j, "threshold", where), where + ".threshold");
  } else {
    bad(where + ".type", "unknown scenario type \"" + type + "\"");
  }
  return analytic_scenario(type, p);
}

}  // namespace

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, p);
}

Json vector_to_json(const VectorXd& v) { return vec(v); }

Json model_to_json(const StoredModel& m) {
  const TruncatedGMM& g = m.model;
  Json j;
  j["d"] = g.dim();
  j["K"] = g.K();
  j["support"] = {{"lower", vec(g.support().lower)}, {"upper", vec(g.support().upper)}};
  j["weights"] = vec(g.weights());
  Json comps = Json::array();
  for (const auto& c : g.components()) {
    comps.push_back({{"mean", vec(c.mean())}, {"cov", mat(c.cov())}});
  }
  j["components"] = comps;
  j["standardizer"] = {{"shift", vec(m.standardizer.shift)}, {"scale", vec(m.standardizer.scale)}};
  if (!m.columns.empty()) j["columns"] = m.columns;
  return j;
}

StoredModel model_from_json(const Json& j) {
  const std::string w = "model";
  const int d = get_int(field(j, "d", w), "model.d");
  const int K = get_int(field(j, "K", w), "model.K");
  if (d < 1) bad("model.d", "must be >= 1");
  if (K < 1) bad("model.K", "must be >= 1");
  const Json& sup = field(j, "support", w);
  VectorXd lo = get_vec(field(sup, "lower", "model.support"), "model.support.lower", d);
  VectorXd hi = get_vec(field(sup, "upper", "model.support"), "model.support.upper", d);
  VectorXd weights = get_vec(field(j, "weights", w), "model.weights", K);
  const Json& cj = field(j, "components", w);
  if (!cj.is_array() || static_cast<int>(cj.size()) != K) {
    bad("model.components", "expected " + std::to_string(K) + " components");
  }
  StoredModel out;
  try {
    std::vector<GaussComponent> comps;
    for (int k = 0; k < K; ++k) {
      const std::string at = "model.components[" + std::to_string(k) + "]";
      VectorXd mean = get_vec(field(cj[k], "mean", at), at + ".mean", d);
      MatrixXd cov = get_mat(field(cj[k], "cov", at), at + ".cov", d, d);
      if (!mean.allFinite() || !cov.allFinite()) bad(at, "parameters must be finite");
      if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + cov.cwiseAbs().maxCoeff())) {
        bad(at + ".cov", "not symmetric");
      }
      try {
        comps.emplace_back(std::move(mean), std::move(cov));
      } catch (const ContractViolation& e) {
        bad(at + ".cov", e.what());
      }
    }
    out.model = TruncatedGMM(std::move(weights), std::move(comps), Rect(std::move(lo), std::move(hi)));
  } catch (const ContractViolation& e) {
    bad(w, e.what());
  } catch (const NumericallyZeroRegion& e) {
    bad(w, e.what());
  }
  if (j.contains("standardizer")) {
    const Json& s = j["standardizer"];
    out.standardizer.shift = get_vec(field(s, "shift", "model.standardizer"), "model.standardizer.shift", d);
    out.standardizer.scale = get_vec(field(s, "scale", "model.standardizer"), "model.standardizer.scale", d);
    if (!out.standardizer.shift.allFinite() || !out.standardizer.scale.allFinite() ||
        (out.standardizer.scale.array() <= 0.0).any()) {
      bad("model.standardizer", "shift must be finite and scale finite and > 0");
    }
  } else {
    out.standardizer = AffineStandardizer::identity(d);
  }
  if (j.contains("columns")) {
    const Json& c = j["columns"];
    if (!c.is_array() || static_cast<int>(c.size()) != d) bad("model.columns", "expected d names");
    for (const auto& name : c) {
      if (!name.is_string()) bad("model.columns", "expected strings");
      out.columns.push_back(name.get<std::string>());
    }
  }
  return out;
}

Json frontier_to_json(const FrontierStore& f) {
  Json j;
  j["mask"] = vec(f.mask().signs);
  j["s1"] = points(f.s1());
  j["s0"] = points(f.s0());
  return j;
}

FrontierStore frontier_from_json(const Json& j) {
  VectorXd signs = get_vec(field(j, "mask", "frontier"), "frontier.mask");
  const int d = static_cast<int>(signs.size());
  try {
    return FrontierStore(DirectionMask(signs), get_points(field(j, "s1", "frontier"), "frontier.s1", d),
                         get_points(field(j, "s0", "frontier"), "frontier.s0", d));
  } catch (const ContractViolation& e) {
    bad("frontier", e.what());
  }
}

Json report_to_json(const EstimateReport& r) {
  Json j;
  j["method"] = r.method;
  j["p_hat"] = num(r.p_hat);
  j["stderr"] = num(r.stderr_);
  j["ci95"] = {num(r.ci95.first), num(r.ci95.second)};
  j["n_samples"] = r.n_samples;
  j["hits"] = r.hits;
  j["max_likelihood_ratio"] = num(r.max_likelihood_ratio);
  j["effective_sample_size"] = num(r.effective_sample_size);
  j["crude_equiv_n"] = num(r.crude_equiv_n);
  j["efficiency_ratio"] = num(r.efficiency_ratio);
  if (r.bounds) {
    j["bounds"] = {num(r.bounds->first), num(r.bounds->second)};
  } else {
    j["bounds"] = nullptr;
  }
  j["flags"] = r.flags;
  return j;
}

Json av_config_to_json(const AVConfig& c) {
  Json j = Json::object();
  AVConfig copy = c;
  for_each_av_field(copy, [&](const char* name, double& v) { j[name] = num(v); });
  return j;
}

AVConfig av_config_from_json(const Json& j) {
  if (!j.is_object()) bad("AVConfig", "expected an object");
  AVConfig c;
  std::set<std::string> known;
  for_each_av_field(c, [&](const char* name, double& v) {
    known.insert(name);
    if (j.contains(name)) v = get_finite(j[name], std::string("AVConfig.") + name);
  });
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) bad("AVConfig", "unknown field \"" + key + "\"");
  }
  c.validate();
  return c;
}

Scenario scenario_from_json(const Json& j) { return scenario_at(j, "scenario"); }

CsvTable read_numeric_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError(path + ": cannot open");
  CsvTable t;
  std::string line;
  long lineno = 0;
  std::vector<std::vector<double>> rows;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split(line, ',');
    if (!have_header) {
      t.header = cells;
      have_header = true;
      for (const auto& h : t.header) {
        if (h.empty()) throw InputError(path + ":" + std::to_string(lineno) + ": empty column name");
      }
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw InputError(path + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(t.header.size()) + " fields, got " +
                       std::to_string(cells.size()));
    }
    std::vector<double> row(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (!parse_double(cells[i], row[i]) || !std::isfinite(row[i])) {
        throw InputError(path + ":" + std::to_string(lineno) + ": column \"" + t.header[i] +
                         "\": not a finite number: \"" + cells[i] + "\"");
      }
    }
    rows.push_back(std::move(row));
    t.lines.push_back(lineno);
  }
  if (!have_header) throw InputError(path + ": empty file (a header row is required)");
  if (rows.empty()) throw InputError(path + ": no data rows");
  t.rows.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.header.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      t.rows(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return t;
}

std::vector<LaneChangeEvent> read_events_csv(const std::string& path) {
  CsvTable t = read_numeric_csv(path);
  auto col = [&](const char* name) {
    for (std::size_t i = 0; i < t.header.size(); ++i) {
      if (t.header[i] == name) return static_cast<Eigen::Index>(i);
    }
    throw InputError(path + ": missing column \"" + name + "\"");
  };
  const auto iv = col("v"), it = col("ttc"), ir = col("range");
  std::vector<LaneChangeEvent> out;
  for (Eigen::Index r = 0; r < t.rows.rows(); ++r) {
    LaneChangeEvent e{t.rows(r, iv), t.rows(r, it), t.rows(r, ir)};
    if (!(e.ttc > 0.0) || !(e.range > 0.0)) {
      throw InputError(path + ":" + std::to_string(t.lines[r]) + ": ttc and range must be > 0");
    }
    out.push_back(e);
  }
  return out;
}

Rect parse_support(const std::string& text) {
  auto dims = split(text, ',');
  if (dims.empty()) throw InputError("support: empty list");
  VectorXd lo(dims.size()), hi(dims.size());
  for (std::size_t i = 0; i < dims.size(); ++i) {
    auto parts = split(dims[i], ':');
    const std::string at = "support dimension " + std::to_string(i + 1) + " (\"" + dims[i] + "\")";
    if (parts.size() != 2) throw InputError(at + ": expected lo:hi");
    double a, b;
    if (!parse_double(parts[0], a) || !parse_double(parts[1], b) || std::isnan(a) || std::isnan(b)) {
      throw InputError(at + ": bounds must be numbers, -inf or inf");
    }
    if (!(a < b)) throw InputError(at + ": lower bound must be below upper bound");
    lo[static_cast<Eigen::Index>(i)] = a;
    hi[static_cast<Eigen::Index>(i)] = b;
  }
  return Rect(lo, hi);
}

VectorXd parse_number_list(const std::string& text, const std::string& what) {
  auto items = split(text, ',');
  if (items.empty()) throw InputError(what + ": empty list");
  VectorXd v(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    double x;
    if (!parse_double(items[i], x) || !std::isfinite(x)) {
      throw InputError(what + ": not a finite number: \"" + items[i] + "\"");
    }
    v[static_cast<Eigen::Index>(i)] = x;
  }
  return v;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(path + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json read_json_file(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(path + ": " + e.what());
  }
}

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError(path + ": cannot write");
    out << content;
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      throw InputError(path + ": write failed");
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw InputError(path + ": cannot rename temporary file");
  }
}

}  // namespace raresim
