#pragma once

// Inner and outer approximations of a monotone rare-event set, kept as
// Pareto frontiers of labelled simulator outcomes.

#include <cstddef>
#include <functional>
#include <vector>

#include "raresim/gaussmath.hpp"

namespace raresim {

enum class Label { Safe = 0, Rare = 1 };

enum class Region { InnerRare, OuterSafe, Unknown };

const char* to_string(Region r);

/// Per-coordinate orientation: +1 where the rare set is non-decreasing,
/// -1 where it is non-increasing. Canonical coordinates are signs * x, in
/// which the set is non-decreasing everywhere.
struct DirectionMask {
  VectorXd signs;

  DirectionMask() = default;
  /// Throws ContractViolation unless every entry is +1 or -1.
  explicit DirectionMask(VectorXd signs);
  static DirectionMask increasing(int dim);

  int dim() const { return static_cast<int>(signs.size()); }
  VectorXd canonicalize(const VectorXd& x) const;
  /// Same map (it is an involution); named for readability at call sites.
  VectorXd decanonicalize(const VectorXd& c) const { return canonicalize(c); }
  Rect canonicalize(const Rect& r) const;
  GaussComponent canonicalize(const GaussComponent& c) const;
};

/// Pareto-minimal rare points (s1) and Pareto-maximal safe points (s0), in
/// canonical coordinates, each kept in lexicographic order.
class FrontierStore {
 public:
  FrontierStore() = default;
  explicit FrontierStore(DirectionMask mask);
  /// Rebuilds a store from serialized frontiers; checks every invariant.
  FrontierStore(DirectionMask mask, std::vector<VectorXd> s1, std::vector<VectorXd> s0);

  const DirectionMask& mask() const { return mask_; }
  int dim() const { return mask_.dim(); }
  const std::vector<VectorXd>& s1() const { return s1_; }
  const std::vector<VectorXd>& s0() const { return s0_; }
  bool empty() const { return s1_.empty() && s0_.empty(); }

  /// New store with x (model coordinates) added. Dominated points are
  /// pruned; a point already covered by its frontier is a no-op. Throws
  /// NonMonotoneOutcome when a rare point would sit below a safe one.
  FrontierStore insert(const VectorXd& x, Label label) const;
  /// In-place form of insert, with the same guarantees (strong exception
  /// safety: the store is unchanged when it throws).
  void insert_in_place(const VectorXd& x, Label label);

 private:
  DirectionMask mask_;
  std::vector<VectorXd> s1_;
  std::vector<VectorXd> s0_;
};

/// x in model coordinates. InnerRare when x dominates a rare minimum,
/// OuterSafe when x sits strictly below a safe maximum, Unknown otherwise.
Region classify(const FrontierStore& store, const VectorXd& x);

struct OuterPieces {
  /// Canonical lower corners l of orthants {c : c >= l}; -inf where free.
  std::vector<VectorXd> corners;
  bool truncated = false;
  std::size_t before_cap = 0;
};

/// Scores a canonical corner; larger is kept first when capping.
using PieceScore = std::function<double(const VectorXd&)>;

/// Orthant decomposition of the outer approximation
///   union over selections (m_1..m_n0) of { c : c_i >= max_{k : m_k = i} b^k_i }.
/// Selections are expanded one safe point at a time with duplicate and
/// dominated corners pruned after each step, so the full d^|s0| product is
/// never materialized. Throws ContractViolation when s0 is empty or when the
/// pruned enumeration exceeds 1e6 corners. The result is sorted
/// lexicographically; when it exceeds `cap` the top-scoring corners are kept
/// (default score: minus the squared norm of the positive finite parts).
OuterPieces outer_pieces(const FrontierStore& store, std::size_t cap = 4096,
                         const PieceScore& score = {});

struct BoundIndicators {
  std::function<int(const VectorXd&)> inner;
  std::function<int(const VectorXd&)> outer;
};

/// inner(x) = 1 iff classify is InnerRare; outer(x) = 1 iff classify is not
/// OuterSafe. Both capture a copy of the store.
BoundIndicators bound_indicators(const FrontierStore& store);

}  // namespace raresim
