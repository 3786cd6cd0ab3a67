#include "raresim/gaussmath.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "raresim/detail/normal.hpp"
#include "raresim/errors.hpp"

namespace raresim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_dims(const VectorXd& x, int d, const char* what) {
  if (x.size() != d) {
    throw ContractViolation(std::string(what) + ": dimension mismatch (got " +
                            std::to_string(x.size()) + ", expected " + std::to_string(d) + ")");
  }
}

// ---------------------------------------------------------------------------
// Standardized rectangle probabilities. All take correlation matrices.

double rect_prob_3d(const VectorXd& a, const VectorXd& b, const MatrixXd& corr) {
  // Integrate over the most constraining coordinate; the remaining pair is
  // handled exactly by the bivariate kernel.
  std::array<int, 3> order{0, 1, 2};
  std::array<double, 3> marg{};
  for (int i = 0; i < 3; ++i) marg[i] = detail::norm_interval(a[i], b[i]);
  std::sort(order.begin(), order.end(), [&](int x, int y) { return marg[x] < marg[y]; });
  const int i = order[0], j = order[1], k = order[2];
  if (marg[i] == 0.0) return 0.0;

  const double rij = corr(i, j), rik = corr(i, k), rjk = corr(j, k);
  const double sj = std::sqrt(std::max(1.0 - rij * rij, 1e-300));
  const double sk = std::sqrt(std::max(1.0 - rik * rik, 1e-300));
  const double rho = std::clamp((rjk - rij * rik) / (sj * sk), -1.0, 1.0);

  auto integrand = [&](double x) {
    const double p = detail::bvn_rect((a[j] - rij * x) / sj, (b[j] - rij * x) / sj,
                                      (a[k] - rik * x) / sk, (b[k] - rik * x) / sk, rho);
    return detail::norm_pdf(x) * p;
  };

  double lo = std::max(a[i], -38.0);
  double hi = std::min(b[i], 38.0);
  if (lo > 0.0) hi = std::min(hi, lo + 10.0);
  if (hi < 0.0) lo = std::max(lo, hi - 10.0);
  if (lo <= 0.0 && hi >= 0.0) {
    lo = std::max(lo, -12.0);
    hi = std::min(hi, 12.0);
  }
  if (!(lo < hi)) return 0.0;

  using Rule = boost::math::quadrature::gauss_kronrod<double, 21>;
  const int pieces = std::max(1, static_cast<int>(std::ceil(hi - lo)));
  const double width = (hi - lo) / pieces;
  double total = 0.0;
  for (int p = 0; p < pieces; ++p) {
    const double x0 = lo + p * width;
    const double x1 = (p + 1 == pieces) ? hi : x0 + width;
    total += Rule::integrate(integrand, x0, x1, 12, 1e-13);
  }
  return std::clamp(total, 0.0, 1.0);
}

constexpr std::array<int, 24> kPrimes = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37,
                                         41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89};

// Genz separation-of-variables integrand over a Richtmyer rank-1 lattice with
// the baker's transform and antithetic pairs. No randomization: the result
// is a deterministic function of the inputs.
double rect_prob_lattice(const VectorXd& a_in, const VectorXd& b_in, const MatrixXd& corr_in) {
  const int m = static_cast<int>(a_in.size());
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> marg(m);
  for (int i = 0; i < m; ++i) marg[i] = detail::norm_interval(a_in[i], b_in[i]);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return marg[x] < marg[y]; });

  VectorXd a(m), b(m);
  MatrixXd corr(m, m);
  for (int i = 0; i < m; ++i) {
    a[i] = a_in[order[i]];
    b[i] = b_in[order[i]];
    for (int j = 0; j < m; ++j) corr(i, j) = corr_in(order[i], order[j]);
  }
  Eigen::LLT<MatrixXd> llt(corr);
  if (llt.info() != Eigen::Success) {
    throw ContractViolation("rect_prob: correlation matrix is not positive definite");
  }
  const MatrixXd L = llt.matrixL();

  const long points = (m <= 4) ? (1L << 14) : (1L << 14) * ((m + 3) / 4);
  std::vector<double> alpha(m - 1), shift(m - 1);
  for (int j = 0; j < m - 1; ++j) {
    const double s = std::sqrt(static_cast<double>(kPrimes[j % kPrimes.size()]));
    alpha[j] = s - std::floor(s);
    const double t = std::sqrt(static_cast<double>(kPrimes[(j + m) % kPrimes.size()]) + 0.5);
    shift[j] = t - std::floor(t);
  }

  std::vector<double> y(m), w(m - 1);
  auto evaluate = [&](const std::vector<double>& u) {
    double d = detail::norm_cdf(a[0] / L(0, 0));
    double e = detail::norm_cdf(b[0] / L(0, 0));
    double f = e - d;
    for (int i = 1; i < m && f > 0.0; ++i) {
      const double q = std::clamp(d + u[i - 1] * (e - d), 1e-300, 1.0 - 1e-16);
      y[i - 1] = detail::norm_quantile(q);
      double s = 0.0;
      for (int j = 0; j < i; ++j) s += L(i, j) * y[j];
      d = detail::norm_cdf((a[i] - s) / L(i, i));
      e = detail::norm_cdf((b[i] - s) / L(i, i));
      f *= (e - d);
    }
    return std::max(f, 0.0);
  };

  double sum = 0.0;
  std::vector<double> anti(m - 1);
  for (long k = 1; k <= points; ++k) {
    for (int j = 0; j < m - 1; ++j) {
      double v = static_cast<double>(k) * alpha[j] + shift[j];
      v -= std::floor(v);
      v = std::abs(2.0 * v - 1.0);
      w[j] = v;
      anti[j] = 1.0 - v;
    }
    sum += 0.5 * (evaluate(w) + evaluate(anti));
  }
  return std::clamp(sum / static_cast<double>(points), 0.0, 1.0);
}

double standardized_rect_prob(const VectorXd& a, const VectorXd& b, const MatrixXd& corr) {
  switch (a.size()) {
    case 0:
      return 1.0;
    case 1:
      return detail::norm_interval(a[0], b[0]);
    case 2:
      return detail::bvn_rect(a[0], b[0], a[1], b[1], corr(0, 1));
    case 3:
      return rect_prob_3d(a, b, corr);
    default:
      return rect_prob_lattice(a, b, corr);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Rect

Rect::Rect(VectorXd lo, VectorXd hi) : lower(std::move(lo)), upper(std::move(hi)) {
  if (lower.size() != upper.size()) {
    throw ContractViolation("Rect: lower and upper have different dimensions");
  }
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    if (std::isnan(lower[i]) || std::isnan(upper[i]) || !(lower[i] < upper[i])) {
      throw ContractViolation("Rect: need lower < upper in coordinate " + std::to_string(i));
    }
  }
}

Rect Rect::unbounded(int dim) {
  return Rect(VectorXd::Constant(dim, -kInf), VectorXd::Constant(dim, kInf));
}

bool Rect::contains(const VectorXd& x) const {
  if (x.size() != lower.size()) return false;
  return ((x.array() >= lower.array()) && (x.array() <= upper.array())).all();
}

bool Rect::is_unbounded() const {
  return (lower.array() == -kInf).all() && (upper.array() == kInf).all();
}

// ---------------------------------------------------------------------------
// GaussComponent

GaussComponent::GaussComponent(VectorXd mean, MatrixXd cov) : mean_(std::move(mean)) {
  const Eigen::Index d = mean_.size();
  if (cov.rows() != d || cov.cols() != d) {
    throw ContractViolation("GaussComponent: covariance shape does not match mean");
  }
  if (!mean_.allFinite() || !cov.allFinite()) {
    throw ContractViolation("GaussComponent: non-finite mean or covariance");
  }
  cov_ = 0.5 * (cov + cov.transpose());
  Eigen::LLT<MatrixXd> llt(cov_);
  if (llt.info() != Eigen::Success) {
    throw ContractViolation("GaussComponent: covariance is not positive definite");
  }
  chol_ = llt.matrixL();
  log_det_ = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!(chol_(i, i) > 0.0)) {
      throw ContractViolation("GaussComponent: covariance is not positive definite");
    }
    log_det_ += 2.0 * std::log(chol_(i, i));
  }
}

GaussComponent GaussComponent::regularized(VectorXd mean, MatrixXd cov) {
  const Eigen::Index d = cov.rows();
  MatrixXd sym = 0.5 * (cov + cov.transpose());
  double jitter = 1e-8 * std::max(sym.trace() / static_cast<double>(std::max<Eigen::Index>(d, 1)),
                                  1e-300);
  for (int attempt = 0;; ++attempt) {
    try {
      return GaussComponent(mean, sym);
    } catch (const ContractViolation&) {
      if (attempt >= 12 || !sym.allFinite()) throw;
    }
    sym.diagonal().array() += jitter;
    jitter *= 10.0;
  }
}

GaussComponent GaussComponent::with_mean(VectorXd mean) const {
  require_dims(mean, dim(), "GaussComponent::with_mean");
  GaussComponent out = *this;
  out.mean_ = std::move(mean);
  return out;
}

VectorXd GaussComponent::whiten(const VectorXd& x) const {
  return chol_.triangularView<Eigen::Lower>().solve(x - mean_);
}

VectorXd GaussComponent::precision_times(const VectorXd& v) const {
  const VectorXd z = chol_.triangularView<Eigen::Lower>().solve(v);
  return chol_.transpose().triangularView<Eigen::Upper>().solve(z);
}

// ---------------------------------------------------------------------------
// Densities and sampling

double log_density(const VectorXd& x, const GaussComponent& c) {
  require_dims(x, c.dim(), "log_density");
  const VectorXd z = c.whiten(x);
  return -0.5 * z.squaredNorm() - 0.5 * c.log_det() - c.dim() * detail::kLogSqrt2Pi;
}

double trunc_log_density(const VectorXd& x, const GaussComponent& c, const Rect& r) {
  if (!r.contains(x)) return -kInf;
  return log_density(x, c) - std::log(rect_prob(c, r));
}

MatrixXd sample(int n, const GaussComponent& c, Rng& rng) {
  if (n < 1) throw ContractViolation("sample: n must be >= 1");
  const int d = c.dim();
  std::normal_distribution<double> normal;
  MatrixXd z(d, n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < d; ++i) z(i, j) = normal(rng);
  }
  MatrixXd x = (c.chol().triangularView<Eigen::Lower>() * z).transpose();
  x.rowwise() += c.mean().transpose();
  return x;
}

double rect_prob(const GaussComponent& c, const Rect& r) {
  if (r.dim() != c.dim()) throw ContractViolation("rect_prob: dimension mismatch");
  if (r.is_unbounded()) return 1.0;
  const double p = detail::mvn_rect_prob(c.mean(), c.cov(), r.lower, r.upper);
  if (!(p >= 1e-300)) {
    throw NumericallyZeroRegion("rect_prob: probability " + std::to_string(p) +
                                " below 1e-300 (numerically zero region)");
  }
  return std::min(p, 1.0);
}

TruncMoments trunc_moments(const GaussComponent& c, const Rect& r) {
  if (r.dim() != c.dim()) throw ContractViolation("trunc_moments: dimension mismatch");
  const VectorXd& mu = c.mean();
  if (r.is_unbounded()) {
    return {mu, c.cov() + mu * mu.transpose()};
  }
  TruncMoments z = detail::centered_trunc_moments(c.cov(), r.lower - mu, r.upper - mu);
  TruncMoments out;
  out.m1 = mu + z.m1;
  out.m2 = z.m2 + mu * z.m1.transpose() + z.m1 * mu.transpose() + mu * mu.transpose();
  return out;
}

MatrixXd sample_truncated(int n, const GaussComponent& c, const Rect& r, Rng& rng) {
  if (n < 1) throw ContractViolation("sample_truncated: n must be >= 1");
  if (r.dim() != c.dim()) throw ContractViolation("sample_truncated: dimension mismatch");
  if (r.is_unbounded()) return sample(n, c, rng);
  double p = 0.0;
  try {
    p = rect_prob(c, r);
  } catch (const NumericallyZeroRegion&) {
    p = 0.0;
  }
  if (p < 1e-8) {
    throw DegenerateTruncation("sample_truncated: acceptance probability " + std::to_string(p) +
                               " below 1e-8; reparameterize the truncation");
  }
  const long max_tries = static_cast<long>(std::min(1e12, 200.0 / p + 1000.0));
  MatrixXd out(n, c.dim());
  for (int i = 0; i < n; ++i) out.row(i) = detail::draw_truncated(c, r, rng, max_tries).transpose();
  return out;
}

// ---------------------------------------------------------------------------
// detail

namespace detail {

double mvn_rect_prob(const VectorXd& mean, const MatrixXd& cov, const VectorXd& lower,
                     const VectorXd& upper) {
  const Eigen::Index d = mean.size();
  std::vector<Eigen::Index> keep;
  keep.reserve(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!(lower[i] < upper[i])) return 0.0;
    if (lower[i] == -kInf && upper[i] == kInf) continue;
    keep.push_back(i);
  }
  const Eigen::Index m = static_cast<Eigen::Index>(keep.size());
  if (m == 0) return 1.0;
  VectorXd a(m), b(m), s(m);
  MatrixXd corr(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    s[i] = std::sqrt(cov(keep[i], keep[i]));
    a[i] = (lower[keep[i]] - mean[keep[i]]) / s[i];
    b[i] = (upper[keep[i]] - mean[keep[i]]) / s[i];
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) corr(i, j) = cov(keep[i], keep[j]) / (s[i] * s[j]);
    corr(i, i) = 1.0;
  }
  return standardized_rect_prob(a, b, corr);
}

TruncMoments centered_trunc_moments(const MatrixXd& S, const VectorXd& a, const VectorXd& b) {
  const int d = static_cast<int>(a.size());
  const double alpha = mvn_rect_prob(VectorXd::Zero(d), S, a, b);
  if (!(alpha > 1e-12)) {
    throw NumericallyZeroRegion("trunc_moments: truncation mass " + std::to_string(alpha) +
                                " is not above 1e-12");
  }

  auto others = [d](std::initializer_list<int> skip) {
    std::vector<int> idx;
    for (int i = 0; i < d; ++i) {
      if (std::find(skip.begin(), skip.end(), i) == skip.end()) idx.push_back(i);
    }
    return idx;
  };

  // F_k(x): marginal density of X_k at x times the conditional probability
  // that the remaining coordinates fall inside their bounds.
  auto marginal_term = [&](int k, double x) {
    if (!std::isfinite(x)) return 0.0;
    const double skk = S(k, k);
    const double dens = std::exp(-0.5 * x * x / skk) / std::sqrt(2.0 * std::numbers::pi * skk);
    if (d == 1 || dens == 0.0) return dens;
    const std::vector<int> rest = others({k});
    const int r = static_cast<int>(rest.size());
    VectorXd cm(r), lo(r), hi(r);
    MatrixXd cc(r, r);
    for (int i = 0; i < r; ++i) {
      cm[i] = S(rest[i], k) / skk * x;
      lo[i] = a[rest[i]];
      hi[i] = b[rest[i]];
      for (int j = 0; j < r; ++j) cc(i, j) = S(rest[i], rest[j]) - S(rest[i], k) * S(k, rest[j]) / skk;
    }
    return dens * mvn_rect_prob(cm, cc, lo, hi);
  };

  // F_kq(x, y): bivariate analogue of marginal_term.
  auto pair_term = [&](int k, int q, double x, double y) {
    if (!std::isfinite(x) || !std::isfinite(y)) return 0.0;
    Eigen::Matrix2d B;
    B << S(k, k), S(k, q), S(q, k), S(q, q);
    const Eigen::Vector2d v(x, y);
    const Eigen::Matrix2d Binv = B.inverse();
    const double quad = v.dot(Binv * v);
    const double dens = std::exp(-0.5 * quad) / (2.0 * std::numbers::pi * std::sqrt(B.determinant()));
    if (d == 2 || dens == 0.0) return dens;
    const std::vector<int> rest = others({k, q});
    const int r = static_cast<int>(rest.size());
    Eigen::MatrixXd cross(r, 2);
    for (int i = 0; i < r; ++i) {
      cross(i, 0) = S(rest[i], k);
      cross(i, 1) = S(rest[i], q);
    }
    const Eigen::MatrixXd gain = cross * Binv;
    VectorXd cm = gain * v;
    MatrixXd cc(r, r);
    VectorXd lo(r), hi(r);
    for (int i = 0; i < r; ++i) {
      lo[i] = a[rest[i]];
      hi[i] = b[rest[i]];
      for (int j = 0; j < r; ++j) cc(i, j) = S(rest[i], rest[j]);
    }
    cc -= gain * cross.transpose();
    return dens * mvn_rect_prob(cm, cc, lo, hi);
  };

  VectorXd Fa(d), Fb(d);
  for (int k = 0; k < d; ++k) {
    Fa[k] = marginal_term(k, a[k]);
    Fb[k] = marginal_term(k, b[k]);
  }

  TruncMoments out;
  out.m1 = S * (Fa - Fb) / alpha;

  out.m2 = S;
  for (int k = 0; k < d; ++k) {
    const double ta = std::isfinite(a[k]) ? a[k] * Fa[k] : 0.0;
    const double tb = std::isfinite(b[k]) ? b[k] * Fb[k] : 0.0;
    const double ck = (ta - tb) / (S(k, k) * alpha);
    if (ck != 0.0) out.m2 += ck * S.col(k) * S.row(k);
  }
  if (d >= 2) {
    MatrixXd D = MatrixXd::Zero(d, d);
    for (int k = 0; k < d; ++k) {
      for (int q = k + 1; q < d; ++q) {
        D(k, q) = pair_term(k, q, a[k], a[q]) - pair_term(k, q, a[k], b[q]) -
                  pair_term(k, q, b[k], a[q]) + pair_term(k, q, b[k], b[q]);
        D(q, k) = D(k, q);
      }
    }
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) {
        double acc = 0.0;
        for (int k = 0; k < d; ++k) {
          double inner = 0.0;
          for (int q = 0; q < d; ++q) {
            if (q == k || D(k, q) == 0.0) continue;
            inner += (S(j, q) - S(k, q) * S(j, k) / S(k, k)) * D(k, q);
          }
          acc += S(i, k) * inner;
        }
        out.m2(i, j) += acc / alpha;
      }
    }
  }
  out.m2 = 0.5 * (out.m2 + out.m2.transpose()).eval();
  return out;
}

VectorXd draw_truncated(const GaussComponent& c, const Rect& r, Rng& rng, long max_tries) {
  const int d = c.dim();
  std::normal_distribution<double> normal;
  VectorXd z(d);
  for (long t = 0; t < max_tries; ++t) {
    for (int i = 0; i < d; ++i) z[i] = normal(rng);
    VectorXd x = c.mean() + c.chol().triangularView<Eigen::Lower>() * z;
    if (r.contains(x)) return x;
  }
  throw DegenerateTruncation("rejection sampler exhausted " + std::to_string(max_tries) +
                             " proposals without landing inside the truncation rectangle");
}

}  // namespace detail

}  // namespace raresim
