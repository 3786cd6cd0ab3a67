#include "raresim/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "raresim/detail/normal.hpp"
#include "raresim/errors.hpp"

namespace raresim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require(bool ok, const std::string& what) {
  if (!ok) throw InputError("AVConfig: " + what);
}

}  // namespace

void AVConfig::validate() const {
  auto finite = [](double x) { return std::isfinite(x); };
  require(finite(dt) && dt > 0.0, "dt must be > 0");
  require(finite(horizon) && horizon >= 10.0 * dt, "horizon must be >= 10 * dt");
  require(finite(aeb_decel) && aeb_decel > 0.0, "aeb_decel must be > 0");
  require(finite(max_decel) && aeb_decel <= max_decel, "aeb_decel must not exceed max_decel");
  require(finite(crash_range) && crash_range >= 0.0, "crash_range must be >= 0");
  require(finite(acc_time_gap) && acc_time_gap >= 0.0, "acc_time_gap must be >= 0");
  require(finite(acc_speed_gain) && finite(acc_spacing_gain), "ACC gains must be finite");
  require(finite(aeb_ttc_trigger) && aeb_ttc_trigger >= 0.0, "aeb_ttc_trigger must be >= 0");
  require(finite(reaction_delay) && reaction_delay >= 0.0, "reaction_delay must be >= 0");
}

double ttc_from_range_rate(double range, double range_rate) {
  if (!(range > 0.0)) throw ContractViolation("ttc_from_range_rate: range must be > 0");
  if (!(range_rate < 0.0)) {
    throw ContractViolation("ttc_from_range_rate: TTC is undefined for a non-negative range rate");
  }
  return -range / range_rate;
}

int simulate(const LaneChangeEvent& e, const AVConfig& cfg) {
  if (!(e.range > 0.0) || !(e.ttc > 0.0) || !std::isfinite(e.range) || !std::isfinite(e.ttc) ||
      !std::isfinite(e.v)) {
    throw ContractViolation("simulate: event needs finite range > 0 and ttc > 0");
  }
  if (e.range <= cfg.crash_range) return 1;
  const double vl = e.v;
  double vf = e.v + e.range / e.ttc;
  double r = e.range;
  const long steps = static_cast<long>(std::ceil(cfg.horizon / cfg.dt - 1e-9));
  bool triggered = false, braking = false;
  long trigger_step = 0;
  for (long k = 0; k < steps; ++k) {
    const double rr = vl - vf;
    const double ttc_now = rr < 0.0 ? r / -rr : kInf;
    if (braking && rr >= 0.0) {
      braking = false;
      triggered = false;
    }
    if (!braking) {
      if (ttc_now < cfg.aeb_ttc_trigger) {
        if (!triggered) {
          triggered = true;
          trigger_step = k;
        }
        if ((k - trigger_step) * cfg.dt >= cfg.reaction_delay - 1e-9) braking = true;
      } else {
        triggered = false;
      }
    }
    double a;
    if (braking) {
      a = -cfg.aeb_decel;
    } else {
      const double spacing = r - (vl * cfg.acc_time_gap + kAccStandstill);
      a = std::clamp(cfg.acc_spacing_gain * spacing + cfg.acc_speed_gain * rr, -cfg.max_decel,
                     kAccMaxAccel);
    }
    vf = std::max(0.0, vf + a * cfg.dt);
    r += (vl - vf) * cfg.dt;
    if (!std::isfinite(r) || !std::isfinite(vf)) {
      throw SolverError("simulate: non-finite state at step " + std::to_string(k + 1));
    }
    if (r <= cfg.crash_range) return 1;
  }
  return 0;
}

VectorXd lane_change_to_model(const LaneChangeEvent& e) {
  VectorXd x(3);
  x << e.v, 1.0 / e.ttc, 1.0 / e.range;
  return x;
}

LaneChangeEvent lane_change_from_model(const VectorXd& x) {
  if (x.size() != 3) throw ContractViolation("lane-change model coordinates are 3-dimensional");
  return {x[0], 1.0 / x[1], 1.0 / x[2]};
}

std::vector<MonotoneViolation> check_monotone(const Indicator& indicator, const DirectionMask& mask,
                                              const Rect& envelope, int probes, Rng& rng) {
  if (probes < 1) throw ContractViolation("check_monotone: probes must be >= 1");
  const int d = mask.dim();
  if (envelope.dim() != d) throw ContractViolation("check_monotone: envelope dimension mismatch");
  for (int i = 0; i < d; ++i) {
    if (!std::isfinite(envelope.lower[i]) || !std::isfinite(envelope.upper[i])) {
      throw ContractViolation("check_monotone: envelope must be finite");
    }
  }
  std::vector<MonotoneViolation> out;
  VectorXd x(d);
  for (int p = 0; p < probes; ++p) {
    for (int i = 0; i < d; ++i) {
      x[i] = std::uniform_real_distribution<double>(envelope.lower[i], envelope.upper[i])(rng);
    }
    const int label = indicator(x) != 0;
    for (int i = 0; i < d; ++i) {
      const double width = envelope.upper[i] - envelope.lower[i];
      const double dir = label ? mask.signs[i] : -mask.signs[i];
      for (double frac : {0.01, 0.05, 0.2}) {
        VectorXd y = x;
        y[i] = std::clamp(x[i] + dir * frac * width, envelope.lower[i], envelope.upper[i]);
        if (y[i] == x[i]) continue;
        if ((indicator(y) != 0) != label) {
          out.push_back({x, i, y});
          break;
        }
      }
    }
  }
  return out;
}

namespace {

void check_model(const TruncatedGMM& gmm, int d, const std::string& kind) {
  if (gmm.dim() != d) {
    throw InputError(kind + " scenario is " + std::to_string(d) + "-dimensional but the model is " +
                     std::to_string(gmm.dim()) + "-dimensional");
  }
}

// sum_k p_k P_k(support and {lower <= x <= upper}) / Z_k
double box_truth(const TruncatedGMM& gmm, const VectorXd& lower, const VectorXd& upper) {
  const Rect& s = gmm.support();
  const VectorXd lo = lower.cwiseMax(s.lower), hi = upper.cwiseMin(s.upper);
  double p = 0.0;
  for (int k = 0; k < gmm.K(); ++k) {
    const GaussComponent& c = gmm.component(k);
    p += gmm.weights()[k] * detail::mvn_rect_prob(c.mean(), c.cov(), lo, hi) / gmm.norm_consts()[k];
  }
  return p;
}

// P(w . x >= c, x in support) for one 2-D component, integrating the
// conditional law of x2 given x1 over x1.
double halfspace_2d(const GaussComponent& comp, const Rect& s, const VectorXd& w, double c) {
  const VectorXd& mu = comp.mean();
  const MatrixXd& cov = comp.cov();
  const double s1 = std::sqrt(cov(0, 0));
  const double slope = cov(0, 1) / cov(0, 0);
  const double cs = std::sqrt(std::max(cov(1, 1) - cov(0, 1) * slope, 0.0));
  const double a = std::max(s.lower[0], mu[0] - 14.0 * s1);
  const double b = std::min(s.upper[0], mu[0] + 14.0 * s1);
  if (!(a < b)) return 0.0;
  auto inner = [&](double x1) {
    const double m = mu[1] + slope * (x1 - mu[0]);
    double lo = s.lower[1], hi = s.upper[1];
    const double cut = (c - w[0] * x1) / w[1];
    if (w[1] > 0.0) lo = std::max(lo, cut);
    else hi = std::min(hi, cut);
    if (!(lo < hi)) return 0.0;
    const double mass = detail::norm_interval((lo - m) / cs, (hi - m) / cs);
    const double z = (x1 - mu[0]) / s1;
    return mass * std::exp(-0.5 * z * z) / (s1 * std::exp(detail::kLogSqrt2Pi));
  };
  // Split the range so the adaptive rule sees the bulk of the mass.
  double total = 0.0;
  const int panels = 28;
  for (int j = 0; j < panels; ++j) {
    const double l = a + (b - a) * j / panels, r = a + (b - a) * (j + 1) / panels;
    total += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(inner, l, r, 10, 1e-13);
  }
  return total;
}

double halfspace_truth(const TruncatedGMM& gmm, const VectorXd& w, double c) {
  const int d = static_cast<int>(w.size());
  check_model(gmm, d, "halfspace");
  const Rect& s = gmm.support();
  if (s.is_unbounded()) {
    double p = 0.0;
    for (int k = 0; k < gmm.K(); ++k) {
      const GaussComponent& comp = gmm.component(k);
      const double sd = std::sqrt(w.dot(comp.cov() * w));
      p += gmm.weights()[k] * detail::norm_sf((c - w.dot(comp.mean())) / sd);
    }
    return p;
  }
  int nonzero = 0, idx = 0;
  for (int i = 0; i < d; ++i)
    if (w[i] != 0.0) {
      ++nonzero;
      idx = i;
    }
  if (nonzero == 1) {
    VectorXd lo = VectorXd::Constant(d, -kInf), hi = VectorXd::Constant(d, kInf);
    if (w[idx] > 0.0) lo[idx] = c / w[idx];
    else hi[idx] = c / w[idx];
    return box_truth(gmm, lo, hi);
  }
  if (d == 2) {  // both weights nonzero here
    double p = 0.0;
    for (int k = 0; k < gmm.K(); ++k)
      p += gmm.weights()[k] * halfspace_2d(gmm.component(k), s, w, c) / gmm.norm_consts()[k];
    return p;
  }
  throw InputError("halfspace truth is unsupported for a truncated " + std::to_string(d) +
                   "-dimensional model with more than one nonzero weight");
}

}  // namespace

Scenario analytic_scenario(const std::string& kind, const AnalyticParams& params) {
  Scenario sc;
  sc.kind = kind;
  if (kind == "halfspace" || kind == "mixture-tail") {
    VectorXd w = params.weights;
    if (kind == "mixture-tail") {
      if (w.size() == 0) w = VectorXd::Ones(1);
      if (w.size() != 1 || w[0] != 1.0) throw InputError("mixture-tail scenario is {x >= threshold} in 1-D");
    }
    if (w.size() == 0 || !w.allFinite() || (w.array() == 0.0).all()) {
      throw InputError(kind + " scenario needs finite weights, not all zero");
    }
    if (!std::isfinite(params.threshold)) throw InputError(kind + " scenario needs a finite threshold");
    const double c = params.threshold;
    VectorXd signs(w.size());
    for (Eigen::Index i = 0; i < w.size(); ++i) signs[i] = w[i] < 0.0 ? -1.0 : 1.0;
    sc.mask = DirectionMask(signs);
    sc.indicator = [w, c](const VectorXd& x) { return w.dot(x) >= c ? 1 : 0; };
    sc.truth = [w, c](const TruncatedGMM& gmm) { return halfspace_truth(gmm, w, c); };
    return sc;
  }
  if (kind == "orthant") {
    const VectorXd a = params.corner;
    if (a.size() == 0 || (a.array() == kInf).any() || a.hasNaN()) {
      throw InputError("orthant scenario needs a corner with entries < inf");
    }
    sc.mask = DirectionMask::increasing(static_cast<int>(a.size()));
    sc.indicator = [a](const VectorXd& x) { return (x.array() >= a.array()).all() ? 1 : 0; };
    sc.truth = [a](const TruncatedGMM& gmm) {
      check_model(gmm, static_cast<int>(a.size()), "orthant");
      return box_truth(gmm, a, VectorXd::Constant(a.size(), kInf));
    };
    return sc;
  }
  throw InputError("unknown analytic scenario kind '" + kind + "'");
}

Scenario union_scenario(const std::vector<Scenario>& members) {
  if (members.empty()) throw InputError("union scenario needs at least one member");
  for (const auto& m : members) {
    if (m.mask.dim() != members[0].mask.dim() || m.mask.signs != members[0].mask.signs) {
      throw InputError("union scenario members must share a direction mask");
    }
  }
  Scenario sc;
  sc.kind = "union";
  sc.mask = members[0].mask;
  std::vector<Indicator> inds;
  for (const auto& m : members) inds.push_back(m.indicator);
  sc.indicator = [inds](const VectorXd& x) {
    for (const auto& f : inds)
      if (f(x)) return 1;
    return 0;
  };
  return sc;
}

Scenario lane_change_scenario(const AVConfig& cfg) {
  cfg.validate();
  Scenario sc;
  sc.kind = "lane-change";
  sc.mask = DirectionMask((VectorXd(3) << -1.0, 1.0, 1.0).finished());
  sc.indicator = [cfg](const VectorXd& x) {
    // Non-positive reciprocals mean an infinite gap or no closing: safe.
    if (!(x[1] > 0.0) || !(x[2] > 0.0)) return 0;
    return simulate(lane_change_from_model(x), cfg);
  };
  return sc;
}

}  // namespace raresim
