#pragma once

// Dense multivariate Gaussian primitives: densities, sampling, rectangle
// probabilities and moments of rectangle-truncated Gaussians.

#include <Eigen/Core>

#include "raresim/random.hpp"

namespace raresim {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Axis-aligned hyper-rectangle [lower, upper]; entries may be +-infinity.
struct Rect {
  VectorXd lower;
  VectorXd upper;

  Rect() = default;
  /// Throws ContractViolation unless lower[i] < upper[i] for every i.
  Rect(VectorXd lower, VectorXd upper);

  static Rect unbounded(int dim);

  int dim() const { return static_cast<int>(lower.size()); }
  bool contains(const VectorXd& x) const;
  bool is_unbounded() const;
};

/// Gaussian N(mean, cov) with a cached lower Cholesky factor.
class GaussComponent {
 public:
  GaussComponent() = default;
  /// Symmetrizes `cov` and factorizes it; throws ContractViolation when the
  /// matrix is not positive definite or shapes disagree.
  GaussComponent(VectorXd mean, MatrixXd cov);

  /// Like the constructor, but adds 1e-8 * trace(cov) / d to the diagonal
  /// (growing tenfold, at most 12 times) until the factorization succeeds.
  static GaussComponent regularized(VectorXd mean, MatrixXd cov);

  /// Same covariance (and factor), different mean.
  GaussComponent with_mean(VectorXd mean) const;

  int dim() const { return static_cast<int>(mean_.size()); }
  const VectorXd& mean() const { return mean_; }
  const MatrixXd& cov() const { return cov_; }
  const MatrixXd& chol() const { return chol_; }
  double log_det() const { return log_det_; }

  /// L^{-1} (x - mean).
  VectorXd whiten(const VectorXd& x) const;
  /// Sigma^{-1} v via two triangular solves.
  VectorXd precision_times(const VectorXd& v) const;

 private:
  VectorXd mean_;
  MatrixXd cov_;
  MatrixXd chol_;
  double log_det_ = 0.0;
};

double log_density(const VectorXd& x, const GaussComponent& c);

/// log of the density of N(mean, cov) conditioned on r; -inf outside r.
double trunc_log_density(const VectorXd& x, const GaussComponent& c, const Rect& r);

/// n i.i.d. rows mean + chol * z.
MatrixXd sample(int n, const GaussComponent& c, Rng& rng);

/// P(lower <= X <= upper) for X ~ c.
///
/// Exact closed form in one dimension, Genz's bivariate algorithm in two,
/// adaptive Gauss-Kronrod over the bivariate kernel in three, and a
/// deterministic rank-1 lattice rule (2^14 points up to d = 4) beyond.
/// Coordinates unbounded on both sides are marginalized out first.
/// Throws NumericallyZeroRegion below 1e-300. Dimensions above 10 are
/// accepted but accuracy is not characterized there.
double rect_prob(const GaussComponent& c, const Rect& r);

struct TruncMoments {
  VectorXd m1;  ///< E[X | X in r]
  MatrixXd m2;  ///< E[X X^T | X in r] (raw, not centred)
};

/// First and second raw moments of c conditioned on r.
///
/// Uses the closed-form expansion of truncated normal moments in terms of
/// (d-1)- and (d-2)-dimensional rectangle probabilities, with rect_prob as
/// the kernel. Throws NumericallyZeroRegion when rect_prob(c, r) <= 1e-12.
TruncMoments trunc_moments(const GaussComponent& c, const Rect& r);

/// n draws from c conditioned on r by plain rejection.
/// Throws DegenerateTruncation when rect_prob(c, r) < 1e-8.
MatrixXd sample_truncated(int n, const GaussComponent& c, const Rect& r, Rng& rng);

namespace detail {

/// Rectangle probability for N(mean, cov) that returns 0 instead of throwing.
double mvn_rect_prob(const VectorXd& mean, const MatrixXd& cov, const VectorXd& lower,
                     const VectorXd& upper);

/// Moments of N(0, cov) conditioned on [a, b] (the shifted problem).
TruncMoments centered_trunc_moments(const MatrixXd& cov, const VectorXd& a, const VectorXd& b);

/// One rejection draw; throws DegenerateTruncation after max_tries misses.
VectorXd draw_truncated(const GaussComponent& c, const Rect& r, Rng& rng, long max_tries);

}  // namespace detail

}  // namespace raresim
