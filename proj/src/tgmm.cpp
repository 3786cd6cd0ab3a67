#include "raresim/tgmm.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "raresim/detail/normal.hpp"
#include "raresim/errors.hpp"

namespace raresim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double neumaier_sum(const VectorXd& v) {
  double sum = 0.0, comp = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double t = sum + v[i];
    if (std::abs(sum) >= std::abs(v[i])) {
      comp += (sum - t) + v[i];
    } else {
      comp += (v[i] - t) + sum;
    }
    sum = t;
  }
  return sum + comp;
}

void require_rows_in_support(const MatrixXd& y, const Rect& support, const char* what) {
  if (y.cols() != support.dim()) {
    throw ContractViolation(std::string(what) + ": data has " + std::to_string(y.cols()) +
                            " columns, model has dimension " + std::to_string(support.dim()));
  }
  const auto lo = support.lower.transpose().array();
  const auto hi = support.upper.transpose().array();
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    if (!((y.row(i).array() >= lo) && (y.row(i).array() <= hi)).all()) {
      throw ContractViolation(std::string(what) + ": row " + std::to_string(i) +
                              " lies outside the support");
    }
  }
}

// n x K matrix with entries log eta_k + log phi_k(y_n) - log Z_k.
MatrixXd weighted_log_terms(const MatrixXd& y, const TruncatedGMM& m) {
  const Eigen::Index n = y.rows();
  const int d = m.dim();
  MatrixXd out(n, m.K());
  for (int k = 0; k < m.K(); ++k) {
    const GaussComponent& c = m.component(k);
    // Batched whitening: the inverse of the triangular factor, not of the
    // covariance, so conditioning matches a triangular solve.
    const MatrixXd linv = c.chol().triangularView<Eigen::Lower>().solve(
        MatrixXd::Identity(d, d));
    const MatrixXd z = linv * (y.rowwise() - c.mean().transpose()).transpose();
    const double base = std::log(m.weights()[k]) - 0.5 * c.log_det() - d * detail::kLogSqrt2Pi -
                        m.log_norm_consts()[k];
    out.col(k) = (-0.5 * z.colwise().squaredNorm().transpose()).array() + base;
  }
  return out;
}

// Row maxima of t; rows that are entirely -inf keep -inf.
VectorXd row_max(const MatrixXd& t) { return t.rowwise().maxCoeff(); }

VectorXd row_logsumexp(const MatrixXd& t) {
  const VectorXd mx = row_max(t);
  Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(t.rows());
  for (Eigen::Index k = 0; k < t.cols(); ++k) acc += (t.col(k) - mx).array().exp();
  VectorXd out = mx.array() + acc.log();
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    if (mx[i] == -kInf) out[i] = -kInf;
  }
  return out;
}

MatrixXd responsibilities_from_terms(MatrixXd t) {
  const VectorXd mx = row_max(t);
  for (Eigen::Index i = 0; i < mx.size(); ++i) {
    if (!std::isfinite(mx[i])) {
      throw FitError("responsibilities: every component density underflows at row " +
                     std::to_string(i));
    }
  }
  for (Eigen::Index k = 0; k < t.cols(); ++k) t.col(k) = (t.col(k) - mx).array().exp();
  const Eigen::ArrayXd total = t.rowwise().sum();
  for (Eigen::Index k = 0; k < t.cols(); ++k) t.col(k).array() /= total;
  return t;
}

double loglik_from_terms(const MatrixXd& t) { return neumaier_sum(row_logsumexp(t)); }

double log_likelihood_unchecked(const MatrixXd& y, const TruncatedGMM& m) {
  return loglik_from_terms(weighted_log_terms(y, m));
}

// Lee-Scott style corrected update.
std::optional<TruncatedGMM> corrected_update(const MatrixXd& y, const TruncatedGMM& m,
                                             const MatrixXd& r, const VectorXd& nk) {
  const int K = m.K();
  const double n = static_cast<double>(y.rows());
  const Rect& s = m.support();
  std::vector<GaussComponent> comps;
  comps.reserve(K);
  try {
    for (int k = 0; k < K; ++k) {
      const GaussComponent& c = m.component(k);
      const VectorXd ybar = (y.transpose() * r.col(k)) / nk[k];
      VectorXd m1 = VectorXd::Zero(m.dim());
      MatrixXd m2 = c.cov();
      if (!s.is_unbounded()) {
        const TruncMoments tm =
            detail::centered_trunc_moments(c.cov(), s.lower - c.mean(), s.upper - c.mean());
        m1 = tm.m1;
        m2 = tm.m2;
      }
      const VectorXd mu = ybar - m1;
      const MatrixXd centred = y.rowwise() - mu.transpose();
      const MatrixXd scatter =
          centred.transpose() * (centred.array().colwise() * r.col(k).array()).matrix() / nk[k];
      comps.push_back(GaussComponent::regularized(mu, scatter + c.cov() - m2));
    }
    return TruncatedGMM(nk / n, std::move(comps), s);
  } catch (const Error&) {
    return std::nullopt;
  }
}

// Missing-data EM: the mass outside the support is treated as unobserved
// draws from the untruncated mixture. A genuine EM step, hence monotone.
std::optional<TruncatedGMM> missing_data_update(const MatrixXd& y, const TruncatedGMM& m,
                                                const MatrixXd& r, const VectorXd& nk) {
  const int K = m.K();
  const double n = static_cast<double>(y.rows());
  const Rect& s = m.support();
  std::vector<GaussComponent> comps;
  VectorXd untrunc(K);
  comps.reserve(K);
  try {
    for (int k = 0; k < K; ++k) {
      const GaussComponent& c = m.component(k);
      const double alpha = m.norm_consts()[k];
      const TruncMoments tm = trunc_moments(c, s);
      // Expected count of unobserved draws from k times their raw moments.
      const double scale = n * m.weights()[k] / alpha;
      const double miss = scale * (1.0 - alpha);
      const VectorXd miss1 = scale * (c.mean() - alpha * tm.m1);
      const MatrixXd miss2 =
          scale * (c.cov() + c.mean() * c.mean().transpose() - alpha * tm.m2);

      const double total = nk[k] + miss;
      const VectorXd mu = (y.transpose() * r.col(k) + miss1) / total;
      const MatrixXd centred = y.rowwise() - mu.transpose();
      MatrixXd cov = centred.transpose() * (centred.array().colwise() * r.col(k).array()).matrix();
      cov += miss2 - miss1 * mu.transpose() - mu * miss1.transpose() + miss * mu * mu.transpose();
      cov /= total;
      comps.push_back(GaussComponent::regularized(mu, cov));
      untrunc[k] = total;
    }
    VectorXd w(K);
    for (int k = 0; k < K; ++k) w[k] = untrunc[k] * rect_prob(comps[k], s);
    w /= w.sum();
    return TruncatedGMM(w, std::move(comps), s);
  } catch (const Error&) {
    return std::nullopt;
  }
}

// One ascent step from m, whose weighted log terms on y are `terms`.
// On return `terms` and `ll` describe the returned model.
TruncatedGMM em_step_impl(const MatrixXd& y, const TruncatedGMM& m, MatrixXd& terms, double& ll) {
  const MatrixXd r = responsibilities_from_terms(terms);
  const VectorXd nk = r.colwise().sum().transpose();
  const double n = static_cast<double>(y.rows());
  for (int k = 0; k < m.K(); ++k) {
    if (!(nk[k] / n >= 1e-8)) throw DyingComponent(k, nk[k] / n);
  }

  std::optional<TruncatedGMM> best;
  MatrixXd best_terms;
  double best_ll = -kInf;
  auto consider = [&](std::optional<TruncatedGMM> cand) {
    if (!cand) return;
    MatrixXd t = weighted_log_terms(y, *cand);
    const double cand_ll = loglik_from_terms(t);
    if (std::isfinite(cand_ll) && cand_ll > best_ll) {
      best = std::move(cand);
      best_terms = std::move(t);
      best_ll = cand_ll;
    }
  };
  consider(corrected_update(y, m, r, nk));
  if (!(best_ll >= ll) && !m.support().is_unbounded()) {
    consider(missing_data_update(y, m, r, nk));
  }
  if (!best || !(best_ll >= ll)) return m;
  terms = std::move(best_terms);
  ll = best_ll;
  return *best;
}

// k-means++ seeding with distances measured in units of the column standard
// deviations, so the seeding commutes with per-coordinate affine maps.
MatrixXd kmeanspp_centres(const MatrixXd& y, int K, Rng& rng) {
  const Eigen::Index n = y.rows();
  const VectorXd mean = y.colwise().mean().transpose();
  VectorXd inv_var = ((y.rowwise() - mean.transpose()).array().square().colwise().sum() /
                      static_cast<double>(n))
                         .transpose();
  for (Eigen::Index j = 0; j < inv_var.size(); ++j) {
    inv_var[j] = inv_var[j] > 0.0 ? 1.0 / inv_var[j] : 1.0;
  }
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  MatrixXd centres(K, y.cols());
  Eigen::Index first = std::min<Eigen::Index>(static_cast<Eigen::Index>(unif(rng) * n), n - 1);
  centres.row(0) = y.row(first);
  VectorXd dist(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    dist[i] = ((y.row(i) - centres.row(0)).array().square() * inv_var.transpose().array()).sum();
  }
  for (int k = 1; k < K; ++k) {
    const double total = dist.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      const double target = unif(rng) * total;
      double acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += dist[i];
        if (acc > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::min<Eigen::Index>(static_cast<Eigen::Index>(unif(rng) * n), n - 1);
    }
    centres.row(k) = y.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double dnew =
          ((y.row(i) - centres.row(k)).array().square() * inv_var.transpose().array()).sum();
      dist[i] = std::min(dist[i], dnew);
    }
  }
  return centres;
}

}  // namespace

// ---------------------------------------------------------------------------

AffineStandardizer AffineStandardizer::identity(int dim) {
  return {VectorXd::Zero(dim), VectorXd::Ones(dim)};
}

VectorXd AffineStandardizer::apply(const VectorXd& x) const {
  return ((x - shift).array() / scale.array()).matrix();
}

VectorXd AffineStandardizer::invert(const VectorXd& z) const {
  return (shift.array() + z.array() * scale.array()).matrix();
}

MatrixXd AffineStandardizer::apply_rows(const MatrixXd& x) const {
  return ((x.rowwise() - shift.transpose()).array().rowwise() / scale.transpose().array()).matrix();
}

MatrixXd AffineStandardizer::invert_rows(const MatrixXd& z) const {
  return ((z.array().rowwise() * scale.transpose().array()).rowwise() + shift.transpose().array())
      .matrix();
}

Rect AffineStandardizer::apply(const Rect& r) const { return Rect(apply(r.lower), apply(r.upper)); }

Rect AffineStandardizer::invert(const Rect& r) const {
  return Rect(invert(r.lower), invert(r.upper));
}

double AffineStandardizer::log_jacobian() const { return -scale.array().log().sum(); }

std::pair<MatrixXd, AffineStandardizer> standardize(const MatrixXd& y) {
  if (y.rows() < 2) throw InputError("standardize: need at least two rows");
  const double n = static_cast<double>(y.rows());
  AffineStandardizer s;
  s.shift = y.colwise().mean().transpose();
  const MatrixXd centred = y.rowwise() - s.shift.transpose();
  s.scale = (centred.array().square().colwise().sum() / n).sqrt().transpose();
  for (Eigen::Index j = 0; j < s.scale.size(); ++j) {
    if (!(s.scale[j] > 0.0) || !std::isfinite(s.scale[j])) {
      throw InputError("standardize: column " + std::to_string(j) + " has zero variance");
    }
  }
  return {s.apply_rows(y), s};
}

// ---------------------------------------------------------------------------

TruncatedGMM::TruncatedGMM(VectorXd weights, std::vector<GaussComponent> components, Rect support)
    : weights_(std::move(weights)), components_(std::move(components)), support_(std::move(support)) {
  const int K = static_cast<int>(weights_.size());
  if (K < 1 || static_cast<int>(components_.size()) != K) {
    throw ContractViolation("TruncatedGMM: need K >= 1 weights matching the components");
  }
  for (int k = 0; k < K; ++k) {
    if (components_[k].dim() != support_.dim()) {
      throw ContractViolation("TruncatedGMM: component " + std::to_string(k) +
                              " dimension differs from the support");
    }
    if (!(weights_[k] > 0.0) || !std::isfinite(weights_[k])) {
      throw ContractViolation("TruncatedGMM: weight " + std::to_string(k) + " is not positive");
    }
  }
  const double total = weights_.sum();
  if (std::abs(total - 1.0) > 1e-6) {
    throw ContractViolation("TruncatedGMM: weights sum to " + std::to_string(total));
  }
  weights_ /= total;
  norm_consts_.resize(K);
  log_norm_consts_.resize(K);
  for (int k = 0; k < K; ++k) {
    norm_consts_[k] = rect_prob(components_[k], support_);
    log_norm_consts_[k] = std::log(norm_consts_[k]);
  }
}

TruncatedGMM TruncatedGMM::map_back(const AffineStandardizer& s) const {
  std::vector<GaussComponent> comps;
  comps.reserve(K());
  const MatrixXd D = s.scale.asDiagonal();
  for (const auto& c : components_) comps.emplace_back(s.invert(c.mean()), D * c.cov() * D);
  return TruncatedGMM(weights_, std::move(comps), s.invert(support_));
}

double gmm_log_density(const VectorXd& x, const TruncatedGMM& m) {
  if (x.size() != m.dim()) throw ContractViolation("gmm_log_density: dimension mismatch");
  if (!m.support().contains(x)) return -kInf;
  VectorXd terms(m.K());
  for (int k = 0; k < m.K(); ++k) {
    terms[k] = std::log(m.weights()[k]) + log_density(x, m.component(k)) - m.log_norm_consts()[k];
  }
  const double mx = terms.maxCoeff();
  if (mx == -kInf) return -kInf;
  return mx + std::log((terms.array() - mx).exp().sum());
}

MatrixXd responsibilities(const MatrixXd& y, const TruncatedGMM& m) {
  require_rows_in_support(y, m.support(), "responsibilities");
  return responsibilities_from_terms(weighted_log_terms(y, m));
}

double log_likelihood(const MatrixXd& y, const TruncatedGMM& m) {
  require_rows_in_support(y, m.support(), "log_likelihood");
  return log_likelihood_unchecked(y, m);
}

TruncatedGMM em_step(const MatrixXd& y, const TruncatedGMM& m) {
  if (y.rows() < m.K()) throw ContractViolation("em_step: need at least K rows");
  require_rows_in_support(y, m.support(), "em_step");
  MatrixXd terms = weighted_log_terms(y, m);
  double ll = loglik_from_terms(terms);
  return em_step_impl(y, m, terms, ll);
}

FitResult fit(const MatrixXd& y, int K, const Rect& support, std::uint64_t init_seed,
              const FitOptions& opts) {
  if (K < 1) throw ContractViolation("fit: K must be >= 1");
  if (y.rows() < 10L * K) {
    throw ContractViolation("fit: need at least 10*K rows (got " + std::to_string(y.rows()) +
                            " for K=" + std::to_string(K) + ")");
  }
  if (opts.max_iter < 0 || opts.tol < 0.0 || opts.restarts < 1) {
    throw ContractViolation("fit: invalid options");
  }
  require_rows_in_support(y, support, "fit");

  const double n = static_cast<double>(y.rows());
  const VectorXd mean = y.colwise().mean().transpose();
  const MatrixXd centred = y.rowwise() - mean.transpose();
  const MatrixXd pooled = centred.transpose() * centred / n;

  std::optional<FitResult> best;
  std::exception_ptr first_error;
  for (int restart = 0; restart < opts.restarts; ++restart) {
    Rng rng = make_stream(init_seed, static_cast<std::uint64_t>(restart));
    try {
      const MatrixXd centres = kmeanspp_centres(y, K, rng);
      std::vector<GaussComponent> comps;
      for (int k = 0; k < K; ++k) {
        comps.push_back(GaussComponent::regularized(centres.row(k).transpose(), pooled / K));
      }
      TruncatedGMM model(VectorXd::Constant(K, 1.0 / K), std::move(comps), support);

      FitReport rep;
      rep.restart = restart;
      MatrixXd terms = weighted_log_terms(y, model);
      double ll = loglik_from_terms(terms);
      if (!std::isfinite(ll)) throw FitError("fit: non-finite log-likelihood at iteration 0");
      rep.loglik_trace.push_back(ll);
      for (int it = 1; it <= opts.max_iter; ++it) {
        double ll_new = ll;
        model = em_step_impl(y, model, terms, ll_new);
        if (!std::isfinite(ll_new)) {
          throw FitError("fit: non-finite log-likelihood at iteration " + std::to_string(it));
        }
        rep.loglik_trace.push_back(ll_new);
        rep.iterations = it;
        const bool done = std::abs(ll_new - ll) < opts.tol * std::abs(ll_new);
        ll = ll_new;
        if (done) {
          rep.converged = true;
          break;
        }
      }
      rep.bic = -2.0 * ll + bic_param_count(K, y.cols()) * std::log(n);
      if (!best || ll > best->report.loglik_trace.back()) {
        best = FitResult{std::move(model), std::move(rep)};
      }
    } catch (const DyingComponent&) {
      if (!first_error) first_error = std::current_exception();
    }
  }
  if (!best) std::rethrow_exception(first_error);
  return *best;
}

long bic_param_count(int K, int d) {
  return (K - 1) + static_cast<long>(K) * d + static_cast<long>(K) * d * (d + 1) / 2;
}

double bic(const TruncatedGMM& m, const MatrixXd& y) {
  return -2.0 * log_likelihood(y, m) +
         static_cast<double>(bic_param_count(m.K(), m.dim())) * std::log(static_cast<double>(y.rows()));
}

MatrixXd gmm_sample(int n, const TruncatedGMM& m, Rng& rng) {
  if (n < 1) throw ContractViolation("gmm_sample: n must be >= 1");
  const int K = m.K();
  std::vector<long> tries(K);
  for (int k = 0; k < K; ++k) {
    const double p = m.norm_consts()[k];
    if (p < 1e-8) {
      throw DegenerateTruncation("gmm_sample: component " + std::to_string(k) +
                                 " has support mass " + std::to_string(p) + " below 1e-8");
    }
    tries[k] = static_cast<long>(std::min(1e12, 200.0 / p + 1000.0));
  }
  std::vector<double> cum(K);
  double acc = 0.0;
  for (int k = 0; k < K; ++k) cum[k] = (acc += m.weights()[k]);
  std::uniform_real_distribution<double> unif(0.0, acc);
  MatrixXd out(n, m.dim());
  for (int i = 0; i < n; ++i) {
    const double u = unif(rng);
    int k = 0;
    while (k < K - 1 && u >= cum[k]) ++k;
    out.row(i) = detail::draw_truncated(m.component(k), m.support(), rng, tries[k]).transpose();
  }
  return out;
}

}  // namespace raresim
