#pragma once

// Dominating points: maximizers of a Gaussian density over box-shaped pieces
// of the inner and outer approximations.

#include <cstddef>
#include <vector>

#include "raresim/gaussmath.hpp"
#include "raresim/monoset.hpp"
#include "raresim/tgmm.hpp"

namespace raresim {

/// Box [lower, upper] (entries may be infinite) in which a component's
/// density is maximized.
struct OrthantPiece {
  VectorXd lower;
  VectorXd upper;
};

struct DominatingPoint {
  VectorXd point;            ///< model coordinates
  int component_index = -1;
  OrthantPiece piece;        ///< model coordinates
  VectorXd corner;           ///< canonical orthant corner the piece came from
  double kkt_residual = 0.0;
  double complementarity = 0.0;
};

/// argmin (x - mu)' Sigma^{-1} (x - mu) subject to lower <= x <= upper by a
/// primal active-set method. With the bound set B fixed, the free block is
/// the conditional mean mu_F + Sigma_FB Sigma_BB^{-1} (x_B - mu_B), so no
/// precision matrix is formed. Throws ContractViolation for an empty piece
/// and SolverError (carrying the last iterate) after 10 d^2 iterations.
DominatingPoint solve_piece(const GaussComponent& c, const OrthantPiece& piece,
                            int component_index = -1);

/// Per-component dominating sets plus bookkeeping.
struct DominatingSets {
  std::vector<std::vector<DominatingPoint>> sets;
  std::size_t dropped_pieces = 0;  ///< pieces lying outside the support
  bool truncated = false;          ///< some component hit the cap

  int K() const { return static_cast<int>(sets.size()); }
  std::size_t total() const;
  /// Dominating points (model coordinates) of component k.
  std::vector<VectorXd> means(int k) const;
};

/// {mu_i} for every component: the starting sets of the procedure.
DominatingSets initial_sets(const TruncatedGMM& gmm);

/// Removes points within `tol` (Euclidean) of an earlier point, in order.
std::vector<DominatingPoint> dedup(std::vector<DominatingPoint> pts, double tol = 1e-6);

/// One solve per (component, rare frontier point a) over {c >= a} intersected
/// with the support, in canonical coordinates. Empty s1 gives initial_sets.
DominatingSets inner_dominating(const TruncatedGMM& gmm, const FrontierStore& store,
                                int workers = 1);

/// One solve per (component, canonical corner). Each component keeps at most
/// `cap` points, preferring larger log-density under that component.
DominatingSets outer_dominating(const TruncatedGMM& gmm, const DirectionMask& mask,
                                const std::vector<VectorXd>& corners, std::size_t cap = 4096,
                                int workers = 1);

}  // namespace raresim
