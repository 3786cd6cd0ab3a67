#include "raresim/monoset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "raresim/errors.hpp"

namespace raresim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::size_t kMaxEnumerated = 1000000;

bool leq(const VectorXd& a, const VectorXd& b) { return (a.array() <= b.array()).all(); }
bool strictly_less(const VectorXd& a, const VectorXd& b) { return (a.array() < b.array()).all(); }

bool lex_less(const VectorXd& a, const VectorXd& b) {
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

void insert_sorted(std::vector<VectorXd>& v, VectorXd x) {
  v.insert(std::upper_bound(v.begin(), v.end(), x, lex_less), std::move(x));
}

}  // namespace

const char* to_string(Region r) {
  switch (r) {
    case Region::InnerRare:
      return "inner_rare";
    case Region::OuterSafe:
      return "outer_safe";
    default:
      return "unknown";
  }
}

DirectionMask::DirectionMask(VectorXd s) : signs(std::move(s)) {
  for (Eigen::Index i = 0; i < signs.size(); ++i) {
    if (signs[i] != 1.0 && signs[i] != -1.0) {
      throw ContractViolation("DirectionMask: entry " + std::to_string(i) + " is not +1 or -1");
    }
  }
}

DirectionMask DirectionMask::increasing(int dim) { return DirectionMask(VectorXd::Ones(dim)); }

VectorXd DirectionMask::canonicalize(const VectorXd& x) const {
  if (x.size() != signs.size()) throw ContractViolation("DirectionMask: dimension mismatch");
  return signs.cwiseProduct(x);
}

Rect DirectionMask::canonicalize(const Rect& r) const {
  const VectorXd a = canonicalize(r.lower), b = canonicalize(r.upper);
  return Rect(a.cwiseMin(b), a.cwiseMax(b));
}

GaussComponent DirectionMask::canonicalize(const GaussComponent& c) const {
  const MatrixXd s = signs.asDiagonal();
  return GaussComponent(canonicalize(c.mean()), s * c.cov() * s);
}

// ---------------------------------------------------------------------------

FrontierStore::FrontierStore(DirectionMask mask) : mask_(std::move(mask)) {}

FrontierStore::FrontierStore(DirectionMask mask, std::vector<VectorXd> s1, std::vector<VectorXd> s0)
    : mask_(std::move(mask)), s1_(std::move(s1)), s0_(std::move(s0)) {
  const int d = dim();
  for (const auto* set : {&s1_, &s0_}) {
    for (const auto& p : *set) {
      if (p.size() != d || p.hasNaN()) throw ContractViolation("FrontierStore: bad frontier point");
    }
  }
  for (std::size_t i = 0; i < s1_.size(); ++i) {
    for (std::size_t j = 0; j < s1_.size(); ++j) {
      if (i != j && leq(s1_[i], s1_[j])) {
        throw ContractViolation("FrontierStore: s1 contains a dominated point");
      }
    }
    for (const auto& b : s0_) {
      if (leq(s1_[i], b)) throw NonMonotoneOutcome(s1_[i], b);
    }
  }
  for (std::size_t i = 0; i < s0_.size(); ++i) {
    for (std::size_t j = 0; j < s0_.size(); ++j) {
      if (i != j && leq(s0_[i], s0_[j])) {
        throw ContractViolation("FrontierStore: s0 contains a dominated point");
      }
    }
  }
  std::sort(s1_.begin(), s1_.end(), lex_less);
  std::sort(s0_.begin(), s0_.end(), lex_less);
}

FrontierStore FrontierStore::insert(const VectorXd& x, Label label) const {
  FrontierStore out = *this;
  out.insert_in_place(x, label);
  return out;
}

void FrontierStore::insert_in_place(const VectorXd& x, Label label) {
  if (x.size() != dim()) throw ContractViolation("FrontierStore::insert: dimension mismatch");
  if (!x.allFinite()) throw ContractViolation("FrontierStore::insert: non-finite point");
  VectorXd c = mask_.canonicalize(x);
  if (label == Label::Rare) {
    for (const auto& b : s0_) {
      if (leq(c, b)) throw NonMonotoneOutcome(c, b);
    }
    for (const auto& a : s1_) {
      if (leq(a, c)) return;
    }
    std::erase_if(s1_, [&](const VectorXd& a) { return leq(c, a); });
    insert_sorted(s1_, std::move(c));
  } else {
    for (const auto& a : s1_) {
      if (leq(a, c)) throw NonMonotoneOutcome(a, c);
    }
    for (const auto& b : s0_) {
      if (leq(c, b)) return;
    }
    std::erase_if(s0_, [&](const VectorXd& b) { return leq(b, c); });
    insert_sorted(s0_, std::move(c));
  }
}

Region classify(const FrontierStore& store, const VectorXd& x) {
  const VectorXd c = store.mask().canonicalize(x);
  for (const auto& a : store.s1()) {
    if (leq(a, c)) return Region::InnerRare;
  }
  for (const auto& b : store.s0()) {
    if (strictly_less(c, b)) return Region::OuterSafe;
  }
  return Region::Unknown;
}

OuterPieces outer_pieces(const FrontierStore& store, std::size_t cap, const PieceScore& score) {
  if (store.s0().empty()) throw ContractViolation("outer_pieces: s0 is empty");
  if (cap == 0) throw ContractViolation("outer_pieces: cap must be positive");
  const int d = store.dim();

  // Invariant: `pieces` holds the minimal corners of the orthant union that
  // equals the outer approximation built from the safe points seen so far.
  std::vector<VectorXd> pieces{VectorXd::Constant(d, -kInf)};
  for (const auto& b : store.s0()) {
    std::vector<VectorXd> keep, fresh;
    for (auto& l : pieces) {
      // An orthant already outside {c < b} lies in the new constraint set.
      if (!strictly_less(l, b)) {
        keep.push_back(std::move(l));
        continue;
      }
      for (int i = 0; i < d; ++i) {
        VectorXd n = l;
        n[i] = b[i];
        fresh.push_back(std::move(n));
      }
    }
    std::vector<VectorXd> next = keep;
    for (std::size_t i = 0; i < fresh.size(); ++i) {
      bool dominated = false;
      for (const auto& u : keep) {
        if (leq(u, fresh[i])) {
          dominated = true;
          break;
        }
      }
      for (std::size_t j = 0; j < fresh.size() && !dominated; ++j) {
        if (j == i) continue;
        if (leq(fresh[j], fresh[i]) && (fresh[j] != fresh[i] || j < i)) dominated = true;
      }
      if (!dominated) next.push_back(fresh[i]);
    }
    if (next.size() > kMaxEnumerated) {
      throw ContractViolation("outer_pieces: more than 1e6 orthant pieces; reduce the number of "
                              "safe frontier points (lower --max-frontier)");
    }
    pieces = std::move(next);
  }

  OuterPieces out;
  out.before_cap = pieces.size();
  if (pieces.size() > cap) {
    PieceScore s = score;
    if (!s) {
      s = [](const VectorXd& l) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < l.size(); ++i) {
          if (std::isfinite(l[i]) && l[i] > 0.0) acc += l[i] * l[i];
        }
        return -acc;
      };
    }
    std::vector<std::pair<double, std::size_t>> ranked(pieces.size());
    for (std::size_t i = 0; i < pieces.size(); ++i) ranked[i] = {s(pieces[i]), i};
    std::stable_sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return lex_less(pieces[a.second], pieces[b.second]);
    });
    std::vector<VectorXd> kept;
    for (std::size_t i = 0; i < cap; ++i) kept.push_back(pieces[ranked[i].second]);
    pieces = std::move(kept);
    out.truncated = true;
  }
  std::sort(pieces.begin(), pieces.end(), lex_less);
  out.corners = std::move(pieces);
  return out;
}

BoundIndicators bound_indicators(const FrontierStore& store) {
  BoundIndicators out;
  out.inner = [store](const VectorXd& x) { return classify(store, x) == Region::InnerRare ? 1 : 0; };
  out.outer = [store](const VectorXd& x) { return classify(store, x) == Region::OuterSafe ? 0 : 1; };
  return out;
}

}  // namespace raresim
