#pragma once

// Rectangle-truncated Gaussian mixtures: evaluation, EM fitting, BIC and
// per-coordinate standardization.

#include <cstdint>
#include <vector>

#include "raresim/gaussmath.hpp"

namespace raresim {

/// Per-coordinate affine map z = (x - shift) / scale.
struct AffineStandardizer {
  VectorXd shift;
  VectorXd scale;

  static AffineStandardizer identity(int dim);

  int dim() const { return static_cast<int>(shift.size()); }
  VectorXd apply(const VectorXd& x) const;
  VectorXd invert(const VectorXd& z) const;
  MatrixXd apply_rows(const MatrixXd& x) const;
  MatrixXd invert_rows(const MatrixXd& z) const;
  Rect apply(const Rect& r) const;
  Rect invert(const Rect& r) const;
  /// log |det d(z)/d(x)| = -sum(log scale).
  double log_jacobian() const;
};

/// Columns shifted to mean 0 and scaled to (population) standard deviation 1.
/// Throws InputError naming the first column with zero variance.
std::pair<MatrixXd, AffineStandardizer> standardize(const MatrixXd& y);

class TruncatedGMM {
 public:
  TruncatedGMM() = default;
  /// Validates shapes, positive weights summing to 1 (renormalized when
  /// within 1e-6), and caches rect_prob of every component over the support.
  TruncatedGMM(VectorXd weights, std::vector<GaussComponent> components, Rect support);

  int K() const { return static_cast<int>(weights_.size()); }
  int dim() const { return support_.dim(); }
  const VectorXd& weights() const { return weights_; }
  const std::vector<GaussComponent>& components() const { return components_; }
  const GaussComponent& component(int k) const { return components_[k]; }
  const Rect& support() const { return support_; }
  const VectorXd& norm_consts() const { return norm_consts_; }
  const VectorXd& log_norm_consts() const { return log_norm_consts_; }

  /// Same mixture expressed in the raw coordinates x = shift + scale * z.
  TruncatedGMM map_back(const AffineStandardizer& s) const;

 private:
  VectorXd weights_;
  std::vector<GaussComponent> components_;
  Rect support_;
  VectorXd norm_consts_;
  VectorXd log_norm_consts_;
};

/// log sum_k eta_k phi(x; mu_k, Sigma_k) / Z_k; -inf outside the support.
double gmm_log_density(const VectorXd& x, const TruncatedGMM& m);

/// n x K posterior component probabilities. Throws FitError naming the
/// first row whose component densities all underflow.
MatrixXd responsibilities(const MatrixXd& y, const TruncatedGMM& m);

/// Truncated-data log-likelihood of the rows of y (pairwise summation).
double log_likelihood(const MatrixXd& y, const TruncatedGMM& m);

/// One M-step with the truncation corrections
///   mu_k    = ybar_k - m_k
///   Sigma_k = S_k(mu_k) + Sigma_k_old - M2_k
/// where m_k, M2_k are the first and second moments of N(0, Sigma_k_old)
/// truncated to [s - mu_k_old, t - mu_k_old]. When that update lowers the
/// log-likelihood the missing-data EM step (truncated-away mass treated as
/// unobserved) is used instead; if neither ascends, the input is returned.
/// Throws DyingComponent when a weight drops below 1e-8.
TruncatedGMM em_step(const MatrixXd& y, const TruncatedGMM& m);

struct FitOptions {
  int max_iter = 500;
  double tol = 1e-7;
  int restarts = 3;
};

struct FitReport {
  std::vector<double> loglik_trace;
  int iterations = 0;
  bool converged = false;
  double bic = 0.0;
  int restart = 0;  ///< which restart produced the returned model
};

struct FitResult {
  TruncatedGMM model;
  FitReport report;
};

/// EM from k-means++ seeding, repeated `restarts` times with streams derived
/// from init_seed; the highest final log-likelihood wins. Restarts that end
/// in a dying component are skipped; the error propagates when all do.
FitResult fit(const MatrixXd& y, int K, const Rect& support, std::uint64_t init_seed,
              const FitOptions& opts = {});

/// Free parameters: (K-1) weights, K*d means, K*d(d+1)/2 covariances.
long bic_param_count(int K, int d);

/// -2 loglik + p ln n.
double bic(const TruncatedGMM& m, const MatrixXd& y);

/// n draws: component by weight, then rejection inside the support.
MatrixXd gmm_sample(int n, const TruncatedGMM& m, Rng& rng);

}  // namespace raresim
