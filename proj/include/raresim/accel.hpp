#pragma once

// Mixture importance sampling built on dominating points, the iterative
// construction procedure, and the estimators.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "raresim/dompoints.hpp"
#include "raresim/monoset.hpp"
#include "raresim/tgmm.hpp"

namespace raresim {

/// Crash indicator in model coordinates. Must be pure: it is evaluated
/// concurrently when workers > 1.
using Indicator = std::function<int(const VectorXd&)>;

/// One Gaussian part of the IS mixture: the covariance of base component
/// `component_index` recentred at `mean`.
struct ISPart {
  double weight = 0.0;
  VectorXd mean;
  int component_index = 0;
};

/// sum_j w_j phi(x; a_j, Sigma_{k(j)}) / Z_j truncated to the base support,
/// with Z_j the exact support mass of part j.
class MixtureISDistribution {
 public:
  MixtureISDistribution() = default;
  /// Drops zero-weight parts, renormalizes when the weights sum to 1 within
  /// 1e-10 (ContractViolation otherwise), and requires every mean inside the
  /// support unless it is the unshifted mean of its base component.
  MixtureISDistribution(std::vector<ISPart> parts, TruncatedGMM base, double rho);

  const std::vector<ISPart>& parts() const { return parts_; }
  const TruncatedGMM& base() const { return base_; }
  double rho() const { return rho_; }
  int dim() const { return base_.dim(); }
  std::size_t size() const { return parts_.size(); }

  /// Log-density of every row of x (n x d); -inf outside the support.
  VectorXd log_density_rows(const MatrixXd& x) const;
  /// n draws: part by weight, then rejection inside the support.
  MatrixXd sample(int n, Rng& rng) const;

 private:
  std::vector<ISPart> parts_;
  TruncatedGMM base_;
  double rho_ = 0.0;
  std::vector<double> log_w_;   // log weight - log support mass, per part
  std::vector<long> tries_;     // rejection budget per part
  std::vector<MatrixXd> linv_;  // per base component: inverse Cholesky factor
  std::vector<VectorXd> white_mean_;  // per part: linv * mean
};

/// Parts rho * p_i / |A_I^i| at every inner point and (1 - rho) * p_i / |A_O^i|
/// at every outer point. Throws ContractViolation for rho outside [0, 1], a
/// set-count mismatch, or an empty set that would receive positive weight.
MixtureISDistribution build_is(const TruncatedGMM& gmm, const DominatingSets& inner,
                               const DominatingSets& outer, double rho);

/// The base model itself as an IS distribution (one part per component).
MixtureISDistribution base_is(const TruncatedGMM& gmm);

double is_log_density(const VectorXd& x, const MixtureISDistribution& q);

/// gmm density over q density at x. Throws ContractViolation naming x when
/// the ratio is not finite.
double likelihood_ratio(const VectorXd& x, const TruncatedGMM& gmm, const MixtureISDistribution& q);

struct TracePoint {
  long index = 0;  ///< samples consumed so far
  double p_hat = 0.0;
  double ci_half_width = 0.0;
};

struct EstimateReport {
  std::string method;  ///< "is" or "crude"
  double p_hat = 0.0;
  double stderr_ = 0.0;
  std::pair<double, double> ci95{0.0, 0.0};
  long n_samples = 0;
  long hits = 0;
  double max_likelihood_ratio = 0.0;
  double effective_sample_size = 0.0;
  double crude_equiv_n = 0.0;
  double efficiency_ratio = 0.0;  ///< crude_equiv_n / n_samples
  std::optional<std::pair<double, double>> bounds;
  std::vector<std::string> flags;
  std::vector<TracePoint> trace;
};

struct EstimateOptions {
  std::uint64_t seed = 0;
  int workers = 1;
  long trace_stride = 0;  ///< 0 disables the running trace
};

/// Samples are drawn in blocks of this size, block b from make_stream(seed, b),
/// so the result does not depend on the worker count.
inline constexpr long kBlockSize = 1024;

/// Sample count a crude estimator needs to match `stderr_`:
/// p (1 - p) / stderr^2, with n when stderr is 0.
double crude_equivalent_n(double p_hat, double stderr_, long n);

/// Importance-sampling estimate of P(indicator = 1) under gmm with draws
/// from q. Zero hits give p_hat = 0 and the "zero_hits" flag.
EstimateReport estimate(const Indicator& indicator, const TruncatedGMM& gmm,
                        const MixtureISDistribution& q, long n, const EstimateOptions& opts = {});

/// Hit fraction under gmm samples; stderr sqrt(p (1 - p) / n).
EstimateReport crude_mc(const Indicator& indicator, const TruncatedGMM& gmm, long n,
                        const EstimateOptions& opts = {});

struct ProcedureOptions {
  int n_per_iter = 500;
  int max_iter = 5;
  std::size_t max_frontier = 4096;  ///< stop once |s1| + |s0| reaches this
  std::optional<double> rho;        ///< overrides the 0 / 0.5 policy
  double final_rho = 0.0;
  std::size_t outer_cap = 4096;
  std::uint64_t seed = 0;
  int workers = 1;
};

struct IterationSummary {
  int iteration = 0;
  double rho = 0.0;
  long hits = 0;
  std::size_t s1 = 0, s0 = 0;
  std::size_t inner_points = 0, outer_points = 0;
  std::size_t dropped_pieces = 0;
  bool outer_truncated = false;
};

struct ProcedureState {
  FrontierStore frontier;
  DominatingSets a_inner, a_outer;
  int iteration = 0;
  long simulator_calls = 0;
  std::vector<IterationSummary> history;
};

struct ProcedureResult {
  ProcedureState state;
  MixtureISDistribution q;
};

/// Iterative construction: sample from the rho-blend of f*_I and f*_O, label,
/// update the frontiers, recompute both dominating sets, repeat. Returns the
/// final state and the IS distribution at final_rho. Monotonicity violations
/// propagate as NonMonotoneOutcome with the iteration number attached.
ProcedureResult run_procedure(const Indicator& indicator, const TruncatedGMM& gmm,
                              const DirectionMask& mask, const ProcedureOptions& opts = {});

struct BoundsReport {
  double p_lower = 0.0, p_upper = 1.0;
  double se_lower = 0.0, se_upper = 0.0;
};

/// Probabilities of the inner and outer approximations, from the frontier
/// alone (no simulator calls). Both are estimated on the same draws from the
/// even blend of the inner and outer dominating-point mixtures, so
/// p_lower <= p_upper holds sample by sample. An empty s1 gives p_lower = 0;
/// an empty s0 gives p_upper = 1.
BoundsReport bound_probabilities(const TruncatedGMM& gmm, const FrontierStore& frontier, long n,
                                 const EstimateOptions& opts = {}, std::size_t outer_cap = 4096);

}  // namespace raresim
