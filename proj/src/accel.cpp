#include "raresim/accel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "raresim/detail/normal.hpp"
#include "raresim/detail/parallel.hpp"
#include "raresim/errors.hpp"

namespace raresim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Procedure iterations draw from streams far above any estimation block index.
constexpr std::uint64_t kProcedureStream = std::uint64_t{1} << 48;
constexpr double kLowEss = 100.0;
constexpr double kLowEfficiency = 2.0;

bool same_vector(const VectorXd& a, const VectorXd& b) {
  return a.size() == b.size() && (a.array() == b.array()).all();
}

}  // namespace

// ---------------------------------------------------------------------------
// MixtureISDistribution

MixtureISDistribution::MixtureISDistribution(std::vector<ISPart> parts, TruncatedGMM base,
                                             double rho)
    : base_(std::move(base)), rho_(rho) {
  if (!(rho >= 0.0 && rho <= 1.0)) {
    throw ContractViolation("MixtureISDistribution: rho must lie in [0, 1], got " +
                            std::to_string(rho));
  }
  const int d = base_.dim();
  const Rect& sup = base_.support();
  double total = 0.0;
  for (auto& p : parts) {
    if (!(p.weight >= 0.0) || !std::isfinite(p.weight)) {
      throw ContractViolation("MixtureISDistribution: part weights must be finite and >= 0");
    }
    if (p.weight == 0.0) continue;
    if (p.component_index < 0 || p.component_index >= base_.K()) {
      throw ContractViolation("MixtureISDistribution: component index " +
                              std::to_string(p.component_index) + " out of range");
    }
    if (p.mean.size() != d) {
      throw ContractViolation("MixtureISDistribution: part mean has the wrong dimension");
    }
    // Unshifted component means may sit outside a truncated support.
    if (!sup.contains(p.mean) && !same_vector(p.mean, base_.component(p.component_index).mean())) {
      throw ContractViolation("MixtureISDistribution: part mean " + format_vector(p.mean) +
                              " lies outside the support");
    }
    total += p.weight;
    parts_.push_back(std::move(p));
  }
  if (parts_.empty()) throw ContractViolation("MixtureISDistribution: no part has positive weight");
  if (std::abs(total - 1.0) > 1e-10) {
    throw ContractViolation("MixtureISDistribution: part weights sum to " + std::to_string(total));
  }

  for (int k = 0; k < base_.K(); ++k) {
    const GaussComponent& c = base_.component(k);
    linv_.push_back(c.chol().triangularView<Eigen::Lower>().solve(MatrixXd::Identity(d, d)));
  }
  const bool unbounded = sup.is_unbounded();
  for (auto& p : parts_) {
    p.weight /= total;
    const int k = p.component_index;
    const GaussComponent& c = base_.component(k);
    double mass = 1.0;
    if (!unbounded) {
      mass = same_vector(p.mean, c.mean()) ? base_.norm_consts()[k] : rect_prob(c.with_mean(p.mean), sup);
    }
    log_w_.push_back(std::log(p.weight) - std::log(mass) - 0.5 * c.log_det() -
                     d * detail::kLogSqrt2Pi);
    tries_.push_back(static_cast<long>(std::min(1e12, 200.0 / mass + 1000.0)));
    white_mean_.push_back(linv_[k] * p.mean);
  }
}

VectorXd MixtureISDistribution::log_density_rows(const MatrixXd& x) const {
  const Eigen::Index n = x.rows();
  if (x.cols() != dim()) throw ContractViolation("is_log_density: dimension mismatch");
  Eigen::ArrayXd m = Eigen::ArrayXd::Constant(n, -kInf), s = Eigen::ArrayXd::Zero(n);
  std::vector<MatrixXd> white(base_.K());
  for (std::size_t j = 0; j < parts_.size(); ++j) {
    const int k = parts_[j].component_index;
    if (white[k].size() == 0) white[k] = x * linv_[k].transpose();
    const Eigen::ArrayXd term =
        log_w_[j] - 0.5 * (white[k].rowwise() - white_mean_[j].transpose()).rowwise().squaredNorm().array();
    if (j == 0) {
      m = term;
      s.setOnes();
      continue;
    }
    const Eigen::ArrayXd nm = m.max(term);
    s = s * (m - nm).exp() + (term - nm).exp();
    m = nm;
  }
  VectorXd out = (m + s.log()).matrix();
  const Rect& sup = base_.support();
  if (!sup.is_unbounded()) {
    for (Eigen::Index i = 0; i < n; ++i)
      if (!sup.contains(x.row(i).transpose())) out[i] = -kInf;
  }
  return out;
}

MatrixXd MixtureISDistribution::sample(int n, Rng& rng) const {
  if (n < 1) throw ContractViolation("MixtureISDistribution::sample: n must be >= 1");
  const int d = dim();
  std::vector<double> cum(parts_.size());
  double acc = 0.0;
  for (std::size_t j = 0; j < parts_.size(); ++j) cum[j] = (acc += parts_[j].weight);
  std::uniform_real_distribution<double> unif(0.0, acc);
  std::normal_distribution<double> normal;
  const Rect& sup = base_.support();
  MatrixXd out(n, d);
  VectorXd z(d), x(d);
  for (int i = 0; i < n; ++i) {
    const double u = unif(rng);
    const std::size_t j = std::min<std::size_t>(
        std::upper_bound(cum.begin(), cum.end(), u) - cum.begin(), parts_.size() - 1);
    const GaussComponent& c = base_.component(parts_[j].component_index);
    long t = 0;
    for (;; ++t) {
      if (t >= tries_[j]) {
        throw DegenerateTruncation("IS part " + std::to_string(j) + " at " +
                                   format_vector(parts_[j].mean) +
                                   " exhausted its rejection budget inside the support");
      }
      for (int a = 0; a < d; ++a) z[a] = normal(rng);
      x = parts_[j].mean + c.chol().triangularView<Eigen::Lower>() * z;
      if (sup.contains(x)) break;
    }
    out.row(i) = x.transpose();
  }
  return out;
}

MixtureISDistribution build_is(const TruncatedGMM& gmm, const DominatingSets& inner,
                               const DominatingSets& outer, double rho) {
  if (!(rho >= 0.0 && rho <= 1.0)) {
    throw ContractViolation("build_is: rho must lie in [0, 1], got " + std::to_string(rho));
  }
  if (inner.K() != gmm.K() || outer.K() != gmm.K()) {
    throw ContractViolation("build_is: dominating sets do not match the component count");
  }
  std::vector<ISPart> parts;
  auto add = [&](const DominatingSets& sets, double share, const char* which) {
    if (share == 0.0) return;
    for (int k = 0; k < gmm.K(); ++k) {
      const auto& s = sets.sets[k];
      if (s.empty()) {
        throw ContractViolation(std::string("build_is: ") + which + " set of component " +
                                std::to_string(k) + " is empty");
      }
      const double w = share * gmm.weights()[k] / static_cast<double>(s.size());
      for (const auto& p : s) parts.push_back({w, p.point, k});
    }
  };
  add(inner, rho, "inner");
  add(outer, 1.0 - rho, "outer");
  return MixtureISDistribution(std::move(parts), gmm, rho);
}

MixtureISDistribution base_is(const TruncatedGMM& gmm) {
  std::vector<ISPart> parts;
  for (int k = 0; k < gmm.K(); ++k) parts.push_back({gmm.weights()[k], gmm.component(k).mean(), k});
  return MixtureISDistribution(std::move(parts), gmm, 0.0);
}

double is_log_density(const VectorXd& x, const MixtureISDistribution& q) {
  return q.log_density_rows(x.transpose())[0];
}

double likelihood_ratio(const VectorXd& x, const TruncatedGMM& gmm, const MixtureISDistribution& q) {
  const double r = std::exp(gmm_log_density(x, gmm) - is_log_density(x, q));
  if (!std::isfinite(r)) {
    throw ContractViolation("likelihood_ratio: non-finite ratio at " + format_vector(x));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Estimators

double crude_equivalent_n(double p_hat, double se, long n) {
  if (!(se > 0.0)) return static_cast<double>(n);
  return std::max(p_hat * (1.0 - p_hat), 0.0) / (se * se);
}

namespace {

// Sum and Welford scatter of the per-sample values I * L, plus running
// checkpoints for the trace.
struct Stats {
  long n = 0;
  double sum = 0.0, mean = 0.0, m2 = 0.0, sumsq = 0.0;

  void push(double v) {
    ++n;
    sum += v;
    sumsq += v * v;
    const double delta = v - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (v - mean);
  }
  Stats merged(const Stats& b) const {
    if (n == 0) return b;
    if (b.n == 0) return *this;
    Stats out;
    out.n = n + b.n;
    out.sum = sum + b.sum;
    out.sumsq = sumsq + b.sumsq;
    const double delta = b.mean - mean;
    out.mean = mean + delta * static_cast<double>(b.n) / static_cast<double>(out.n);
    out.m2 = m2 + b.m2 + delta * delta * static_cast<double>(n) * static_cast<double>(b.n) /
                             static_cast<double>(out.n);
    return out;
  }
  double p_hat() const { return n ? sum / static_cast<double>(n) : 0.0; }
  double sample_se() const {
    return n > 1 ? std::sqrt(std::max(m2, 0.0) / static_cast<double>(n - 1) / static_cast<double>(n))
                 : 0.0;
  }
};

struct BlockResult {
  Stats stats;
  long hits = 0;
  double max_value = 0.0;
  std::vector<Stats> checkpoints;
};

// values(b, count, rng, out) fills out[i] with I * L for the block's samples
// and returns the hit count.
template <class Values>
std::vector<BlockResult> run_blocks(long n, const EstimateOptions& opts, Values&& values) {
  const long nblocks = (n + kBlockSize - 1) / kBlockSize;
  std::vector<BlockResult> blocks(nblocks);
  detail::parallel_for(static_cast<std::size_t>(nblocks), opts.workers, [&](std::size_t b) {
    const long start = static_cast<long>(b) * kBlockSize;
    const int count = static_cast<int>(std::min(kBlockSize, n - start));
    Rng rng = make_stream(opts.seed, b);
    std::vector<double> v(count, 0.0);
    BlockResult& r = blocks[b];
    r.hits = values(count, rng, v);
    for (int i = 0; i < count; ++i) {
      r.stats.push(v[i]);
      r.max_value = std::max(r.max_value, v[i]);
      if (opts.trace_stride > 0 && (start + i + 1) % opts.trace_stride == 0) r.checkpoints.push_back(r.stats);
    }
  });
  return blocks;
}

EstimateReport assemble(const std::string& method, long n, const std::vector<BlockResult>& blocks,
                        const EstimateOptions& opts) {
  EstimateReport rep;
  rep.method = method;
  rep.n_samples = n;
  Stats total;
  for (const auto& b : blocks) {
    for (const auto& c : b.checkpoints) {
      const Stats s = total.merged(c);
      rep.trace.push_back({s.n, s.p_hat(), 1.96 * s.sample_se()});
    }
    total = total.merged(b.stats);
    rep.hits += b.hits;
    rep.max_likelihood_ratio = std::max(rep.max_likelihood_ratio, b.max_value);
  }
  if (opts.trace_stride > 0 && (rep.trace.empty() || rep.trace.back().index != n)) {
    rep.trace.push_back({total.n, total.p_hat(), 1.96 * total.sample_se()});
  }
  rep.p_hat = total.p_hat();
  rep.stderr_ = total.sample_se();
  rep.effective_sample_size = total.sumsq > 0.0 ? total.sum * total.sum / total.sumsq : 0.0;
  return rep;
}

void finish(EstimateReport& rep) {
  rep.ci95 = {rep.p_hat - 1.96 * rep.stderr_, rep.p_hat + 1.96 * rep.stderr_};
  rep.crude_equiv_n = crude_equivalent_n(rep.p_hat, rep.stderr_, rep.n_samples);
  rep.efficiency_ratio = rep.crude_equiv_n / static_cast<double>(rep.n_samples);
  if (rep.hits == 0) rep.flags.push_back("zero_hits");
  if (rep.hits > 0 && rep.effective_sample_size < kLowEss) rep.flags.push_back("low_ess");
  if (rep.method == "is" && rep.efficiency_ratio < kLowEfficiency) rep.flags.push_back("low_efficiency");
}

// I * L for one block of IS draws, in sample order. Likelihood ratios are
// only evaluated at hits.
long is_block_values(const Indicator& indicator, const MixtureISDistribution& base,
                     const MixtureISDistribution& q, int count, Rng& rng, std::vector<double>& v) {
  const MatrixXd x = q.sample(count, rng);
  std::vector<int> hit_rows;
  for (int i = 0; i < count; ++i)
    if (indicator(x.row(i).transpose()) != 0) hit_rows.push_back(i);
  if (hit_rows.empty()) return 0;
  MatrixXd xh(hit_rows.size(), x.cols());
  for (std::size_t a = 0; a < hit_rows.size(); ++a) xh.row(a) = x.row(hit_rows[a]);
  const VectorXd lr = (base.log_density_rows(xh) - q.log_density_rows(xh)).array().exp().matrix();
  for (std::size_t a = 0; a < hit_rows.size(); ++a) {
    if (!std::isfinite(lr[a])) {
      throw ContractViolation("likelihood_ratio: non-finite ratio at " +
                              format_vector(xh.row(a).transpose()));
    }
    v[hit_rows[a]] = lr[a];
  }
  return static_cast<long>(hit_rows.size());
}

}  // namespace

EstimateReport estimate(const Indicator& indicator, const TruncatedGMM& gmm,
                        const MixtureISDistribution& q, long n, const EstimateOptions& opts) {
  if (n < 100) throw ContractViolation("estimate: n must be >= 100, got " + std::to_string(n));
  if (q.dim() != gmm.dim()) throw ContractViolation("estimate: IS distribution dimension mismatch");
  const MixtureISDistribution base = base_is(gmm);
  const auto blocks = run_blocks(n, opts, [&](int count, Rng& rng, std::vector<double>& v) {
    return is_block_values(indicator, base, q, count, rng, v);
  });
  EstimateReport rep = assemble("is", n, blocks, opts);
  finish(rep);
  return rep;
}

EstimateReport crude_mc(const Indicator& indicator, const TruncatedGMM& gmm, long n,
                        const EstimateOptions& opts) {
  if (n < 1) throw ContractViolation("crude_mc: n must be >= 1, got " + std::to_string(n));
  const auto blocks = run_blocks(n, opts, [&](int count, Rng& rng, std::vector<double>& v) {
    const MatrixXd x = gmm_sample(count, gmm, rng);
    long hits = 0;
    for (int i = 0; i < count; ++i) {
      if (indicator(x.row(i).transpose()) != 0) {
        v[i] = 1.0;
        ++hits;
      }
    }
    return hits;
  });
  EstimateReport rep = assemble("crude", n, blocks, opts);
  rep.p_hat = static_cast<double>(rep.hits) / static_cast<double>(n);
  rep.stderr_ = std::sqrt(rep.p_hat * (1.0 - rep.p_hat) / static_cast<double>(n));
  for (auto& t : rep.trace) {
    const double p = t.p_hat;
    t.ci_half_width = 1.96 * std::sqrt(p * (1.0 - p) / static_cast<double>(t.index));
  }
  finish(rep);
  return rep;
}

// ---------------------------------------------------------------------------
// Procedure

ProcedureResult run_procedure(const Indicator& indicator, const TruncatedGMM& gmm,
                              const DirectionMask& mask, const ProcedureOptions& opts) {
  if (mask.dim() != gmm.dim()) throw ContractViolation("run_procedure: mask dimension mismatch");
  if (opts.max_iter < 0) throw ContractViolation("run_procedure: max_iter must be >= 0");
  if (opts.n_per_iter < 1) throw ContractViolation("run_procedure: n_per_iter must be >= 1");
  if (opts.rho && !(*opts.rho >= 0.0 && *opts.rho <= 1.0)) {
    throw ContractViolation("run_procedure: rho must lie in [0, 1]");
  }
  ProcedureState st;
  st.frontier = FrontierStore(mask);
  st.a_inner = initial_sets(gmm);
  st.a_outer = initial_sets(gmm);

  for (int t = 1; t <= opts.max_iter; ++t) {
    if (st.frontier.s1().size() + st.frontier.s0().size() >= opts.max_frontier) break;
    const std::string where = "iteration " + std::to_string(t);
    const double rho = opts.rho ? *opts.rho : (st.frontier.s1().empty() ? 0.0 : 0.5);
    const MixtureISDistribution q = build_is(gmm, st.a_inner, st.a_outer, rho);
    Rng rng = make_stream(opts.seed, kProcedureStream + static_cast<std::uint64_t>(t));
    const MatrixXd x = q.sample(opts.n_per_iter, rng);

    std::vector<int> labels(opts.n_per_iter);
    detail::parallel_for(labels.size(), opts.workers,
                         [&](std::size_t i) { labels[i] = indicator(x.row(i).transpose()) != 0; });
    long hits = 0;
    for (int i = 0; i < opts.n_per_iter; ++i) {
      try {
        st.frontier.insert_in_place(x.row(i).transpose(), labels[i] ? Label::Rare : Label::Safe);
      } catch (const NonMonotoneOutcome& e) {
        throw NonMonotoneOutcome(where, e);
      }
      hits += labels[i];
    }
    st.simulator_calls += opts.n_per_iter;

    try {
      st.a_inner = inner_dominating(gmm, st.frontier, opts.workers);
      if (st.frontier.s0().empty()) {
        st.a_outer = initial_sets(gmm);
      } else {
        const OuterPieces pieces = outer_pieces(st.frontier, opts.outer_cap);
        st.a_outer = outer_dominating(gmm, mask, pieces.corners, opts.outer_cap, opts.workers);
        st.a_outer.truncated = st.a_outer.truncated || pieces.truncated;
      }
    } catch (const SolverError& e) {
      throw SolverError(where + ": " + e.what(), e.last_iterate());
    }
    st.iteration = t;
    st.history.push_back({t, rho, hits, st.frontier.s1().size(), st.frontier.s0().size(),
                          st.a_inner.total(), st.a_outer.total(),
                          st.a_inner.dropped_pieces + st.a_outer.dropped_pieces, st.a_outer.truncated});
  }
  MixtureISDistribution q = build_is(gmm, st.a_inner, st.a_outer, opts.final_rho);
  return {std::move(st), std::move(q)};
}

BoundsReport bound_probabilities(const TruncatedGMM& gmm, const FrontierStore& frontier, long n,
                                 const EstimateOptions& opts, std::size_t outer_cap) {
  BoundsReport out;
  const bool has_inner = !frontier.s1().empty(), has_outer = !frontier.s0().empty();
  if (!has_inner && !has_outer) return out;
  if (n < 100) throw ContractViolation("bound_probabilities: n must be >= 100");
  if (frontier.dim() != gmm.dim()) throw ContractViolation("bound_probabilities: dimension mismatch");

  DominatingSets inner, outer;
  if (has_inner) inner = inner_dominating(gmm, frontier, opts.workers);
  if (has_outer) {
    const OuterPieces pieces = outer_pieces(frontier, outer_cap);
    outer = outer_dominating(gmm, frontier.mask(), pieces.corners, outer_cap, opts.workers);
  }
  const MixtureISDistribution q = has_inner && has_outer ? build_is(gmm, inner, outer, 0.5)
                                  : has_inner            ? build_is(gmm, inner, inner, 1.0)
                                                         : build_is(gmm, outer, outer, 0.0);
  const MixtureISDistribution base = base_is(gmm);
  const BoundIndicators ind = bound_indicators(frontier);

  // Same stream layout for both passes, so both see identical draws and
  // likelihood ratios and the inner sum never exceeds the outer one.
  const EstimateOptions no_trace{opts.seed, opts.workers, 0};
  auto pass = [&](const Indicator& ind) {
    const auto blocks = run_blocks(n, no_trace, [&](int count, Rng& rng, std::vector<double>& v) {
      return is_block_values(ind, base, q, count, rng, v);
    });
    return assemble("is", n, blocks, no_trace);
  };
  if (has_inner) {
    const EstimateReport lo = pass(ind.inner);
    out.p_lower = std::min(lo.p_hat, 1.0);
    out.se_lower = lo.stderr_;
  }
  if (has_outer) {
    const EstimateReport hi = pass(ind.outer);
    out.p_upper = std::min(hi.p_hat, 1.0);
    out.se_upper = hi.stderr_;
  }
  return out;
}

}  // namespace raresim
