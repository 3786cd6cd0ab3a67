#include <cmath>
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "raresim/errors.hpp"
#include "raresim/monoset.hpp"

using namespace raresim;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(v.size());
  int i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

using Indicator = std::function<bool(const VectorXd&)>;

// A random monotone set in canonical coordinates: a union of upper orthants
// (possibly combined with a positive halfspace), reported in model
// coordinates through `mask`.
struct SyntheticSet {
  DirectionMask mask;
  Indicator canonical;

  bool operator()(const VectorXd& x) const { return canonical(mask.canonicalize(x)); }
};

SyntheticSet random_set(int d, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), w(0.2, 1.0);
  std::bernoulli_distribution coin(0.5);
  VectorXd signs(d);
  for (int i = 0; i < d; ++i) signs[i] = coin(rng) ? 1.0 : -1.0;
  std::vector<VectorXd> corners;
  const int m = 1 + static_cast<int>(rng() % 4);
  for (int k = 0; k < m; ++k) {
    VectorXd c(d);
    for (int i = 0; i < d; ++i) c[i] = u(rng);
    corners.push_back(c);
  }
  VectorXd wts(d);
  for (int i = 0; i < d; ++i) wts[i] = w(rng);
  const double level = u(rng) + 1.0;
  const bool with_halfspace = coin(rng);
  Indicator f = [corners, wts, level, with_halfspace](const VectorXd& c) {
    for (const auto& a : corners) {
      if (oracle::leq(a, c)) return true;
    }
    return with_halfspace && wts.dot(c) >= level;
  };
  return {DirectionMask(signs), f};
}

// Membership in the outer approximation straight from its definition:
// every safe point b has some coordinate with c_i >= b_i.
bool in_outer_by_definition(const std::vector<VectorXd>& s0, const VectorXd& c) {
  for (const auto& b : s0) {
    bool any = false;
    for (int i = 0; i < c.size(); ++i) any = any || c[i] >= b[i];
    if (!any) return false;
  }
  return true;
}

bool in_inner_by_definition(const std::vector<VectorXd>& s1, const VectorXd& c) {
  for (const auto& a : s1) {
    if (oracle::leq(a, c)) return true;
  }
  return false;
}

// Every selection (m_1..m_n0) expanded without pruning.
std::vector<VectorXd> brute_force_pieces(const std::vector<VectorXd>& s0, int d) {
  std::vector<VectorXd> out;
  std::vector<int> sel(s0.size(), 0);
  while (true) {
    VectorXd l = VectorXd::Constant(d, -kInf);
    for (std::size_t k = 0; k < s0.size(); ++k) l[sel[k]] = std::max(l[sel[k]], s0[k][sel[k]]);
    out.push_back(l);
    std::size_t k = 0;
    while (k < sel.size() && ++sel[k] == d) {
      sel[k] = 0;
      ++k;
    }
    if (k == sel.size()) break;
  }
  return oracle::sorted(oracle::pareto_min(out));
}

}  // namespace

TEST(DirectionMask, Involution) {
  DirectionMask m(vec({1, -1, -1}));
  const VectorXd x = vec({0.5, -2.0, 3.0});
  EXPECT_EQ(m.canonicalize(m.canonicalize(x)), x);
  EXPECT_THROW(DirectionMask(vec({1, 0})), ContractViolation);
}

TEST(Insert, Examples) {
  FrontierStore s(DirectionMask::increasing(2));
  s = s.insert(vec({1, 2}), Label::Rare).insert(vec({2, 1}), Label::Rare).insert(vec({2, 2}), Label::Rare);
  ASSERT_EQ(s.s1().size(), 2u);
  EXPECT_EQ(s.s1()[0], vec({1, 2}));
  EXPECT_EQ(s.s1()[1], vec({2, 1}));

  FrontierStore t(DirectionMask::increasing(2));
  t = t.insert(vec({0, 0}), Label::Safe);
  ASSERT_EQ(t.s0().size(), 1u);
  EXPECT_EQ(t.s0()[0], vec({0, 0}));
}

TEST(Insert, DominatedPointIsNoOpAndFrontierDoesNotGrow) {
  FrontierStore s(DirectionMask::increasing(2));
  s = s.insert(vec({1, 1}), Label::Rare).insert(vec({-1, -1}), Label::Safe);
  const auto before = s;
  s = s.insert(vec({3, 1}), Label::Rare).insert(vec({-2, -1}), Label::Safe);
  EXPECT_EQ(s.s1(), before.s1());
  EXPECT_EQ(s.s0(), before.s0());
}

TEST(Insert, NonMonotoneOutcomeCarriesBothPoints) {
  FrontierStore s(DirectionMask(vec({1, -1})));
  s = s.insert(vec({2, -2}), Label::Safe);  // canonical (2, 2)
  try {
    s.insert(vec({1, -1}), Label::Rare);  // canonical (1, 1) <= (2, 2)
    FAIL() << "expected NonMonotoneOutcome";
  } catch (const NonMonotoneOutcome& e) {
    EXPECT_EQ(e.rare_point(), vec({1, 1}));
    EXPECT_EQ(e.safe_point(), vec({2, 2}));
  }
  // The failed insert left the store untouched.
  EXPECT_TRUE(s.s1().empty());

  FrontierStore r(DirectionMask::increasing(1));
  r = r.insert(vec({1.0}), Label::Rare);
  EXPECT_THROW(r.insert(vec({1.5}), Label::Safe), NonMonotoneOutcome);
}

TEST(Insert, MatchesQuadraticParetoScanOnRandomSequences) {
  Rng rng(2718);
  for (int rep = 0; rep < 1000; ++rep) {
    const int d = 1 + rep % 4;
    const SyntheticSet set = random_set(d, rng);
    FrontierStore store(set.mask);
    std::vector<VectorXd> rare, safe;
    const bool lattice = rep % 3 == 0;  // integer grid: ties and duplicates
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::uniform_int_distribution<int> ui(-3, 3);
    for (int i = 0; i < 200; ++i) {
      VectorXd x(d);
      for (int j = 0; j < d; ++j) x[j] = lattice ? 0.5 * ui(rng) : u(rng);
      const bool hit = set(x);
      store.insert_in_place(x, hit ? Label::Rare : Label::Safe);
      (hit ? rare : safe).push_back(set.mask.canonicalize(x));
    }
    ASSERT_EQ(store.s1(), oracle::sorted(oracle::pareto_min(rare))) << "rep " << rep;
    ASSERT_EQ(store.s0(), oracle::sorted(oracle::pareto_max(safe))) << "rep " << rep;
  }
}

TEST(Classify, Examples) {
  FrontierStore a(DirectionMask::increasing(2));
  a = a.insert(vec({1, 1}), Label::Rare);
  EXPECT_EQ(classify(a, vec({2, 2})), Region::InnerRare);

  FrontierStore b(DirectionMask::increasing(2));
  b = b.insert(vec({3, 3}), Label::Safe);
  EXPECT_EQ(classify(b, vec({2, 2})), Region::OuterSafe);
  // Boundary points are not strictly below: conservatively Unknown.
  EXPECT_EQ(classify(b, vec({3, 2})), Region::Unknown);

  // s1 = {(1,3)} with s0 = {(3,3)} is not a valid store: (1,3) <= (3,3).
  FrontierStore bad(DirectionMask::increasing(2));
  bad = bad.insert(vec({1, 3}), Label::Rare);
  EXPECT_THROW(bad.insert(vec({3, 3}), Label::Safe), NonMonotoneOutcome);

  // Consistent variant, checked against both membership formulas directly.
  FrontierStore c = bad.insert(vec({3, 2}), Label::Safe);
  auto expected = [](const VectorXd& x) {
    const bool inner = oracle::leq(vec({1, 3}), x);
    const bool outer_safe = (x.array() < vec({3, 2}).array()).all();
    return inner ? Region::InnerRare : outer_safe ? Region::OuterSafe : Region::Unknown;
  };
  for (const VectorXd& x : {vec({2, 1}), vec({2, 2}), vec({1, 3}), vec({0, 5})}) {
    EXPECT_EQ(classify(c, x), expected(x)) << x.transpose();
  }
  EXPECT_EQ(classify(c, vec({2, 2})), Region::Unknown);
  EXPECT_EQ(classify(c, vec({2, 1})), Region::OuterSafe);
}

TEST(Classify, MonotoneInCanonicalOrder) {
  Rng rng(99);
  std::uniform_real_distribution<double> u(-2.0, 2.0), step(0.0, 0.5);
  for (int rep = 0; rep < 20; ++rep) {
    const SyntheticSet set = random_set(3, rng);
    FrontierStore store(set.mask);
    for (int i = 0; i < 100; ++i) {
      const VectorXd x = vec({u(rng), u(rng), u(rng)});
      store.insert_in_place(x, set(x) ? Label::Rare : Label::Safe);
    }
    for (int i = 0; i < 500; ++i) {
      const VectorXd c = vec({u(rng), u(rng), u(rng)});
      const VectorXd up = c + vec({step(rng), step(rng), step(rng)});
      const VectorXd down = c - vec({step(rng), step(rng), step(rng)});
      const Region rc = classify(store, set.mask.decanonicalize(c));
      if (rc == Region::InnerRare) {
        EXPECT_EQ(classify(store, set.mask.decanonicalize(up)), Region::InnerRare);
      }
      if (rc == Region::OuterSafe) {
        EXPECT_EQ(classify(store, set.mask.decanonicalize(down)), Region::OuterSafe);
      }
    }
  }
}

TEST(OuterPieces, SingleSafePoint) {
  FrontierStore s(DirectionMask::increasing(3));
  s = s.insert(vec({1, 2, 3}), Label::Safe);
  const OuterPieces p = outer_pieces(s);
  ASSERT_EQ(p.corners.size(), 3u);
  EXPECT_FALSE(p.truncated);
  EXPECT_EQ(p.corners[0], vec({-kInf, -kInf, 3}));
  EXPECT_EQ(p.corners[1], vec({-kInf, 2, -kInf}));
  EXPECT_EQ(p.corners[2], vec({1, -kInf, -kInf}));
}

TEST(OuterPieces, DuplicateSafePointsAreIdempotent) {
  FrontierStore one(DirectionMask::increasing(2));
  one = one.insert(vec({1, 2}), Label::Safe);
  const FrontierStore two = one.insert(vec({1, 2}), Label::Safe);
  EXPECT_EQ(outer_pieces(one).corners, outer_pieces(two).corners);
}

TEST(OuterPieces, TwoSafePointsInThePlane) {
  FrontierStore s(DirectionMask::increasing(2));
  s = s.insert(vec({1, 2}), Label::Safe).insert(vec({2, 1}), Label::Safe);
  const OuterPieces p = outer_pieces(s);
  const std::vector<VectorXd> want =
      oracle::sorted({vec({2, -kInf}), vec({-kInf, 2}), vec({1, 1})});
  EXPECT_EQ(p.corners, want);
  EXPECT_EQ(p.corners, brute_force_pieces(s.s0(), 2));

  // Membership on a grid agrees with the definition.
  for (double x = -1.0; x <= 3.0; x += 0.05) {
    for (double y = -1.0; y <= 3.0; y += 0.05) {
      const VectorXd c = vec({x, y});
      bool in = false;
      for (const auto& l : p.corners) in = in || oracle::leq(l, c);
      EXPECT_EQ(in, in_outer_by_definition(s.s0(), c));
    }
  }
}

TEST(OuterPieces, MatchBruteForceEnumeration) {
  Rng rng(31);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int rep = 0; rep < 60; ++rep) {
    const int d = 2 + rep % 2;
    FrontierStore store(DirectionMask::increasing(d));
    const int n0 = 1 + rep % 6;
    while (static_cast<int>(store.s0().size()) < n0) {
      VectorXd x(d);
      for (int i = 0; i < d; ++i) x[i] = u(rng);
      store.insert_in_place(x, Label::Safe);
    }
    EXPECT_EQ(outer_pieces(store).corners, brute_force_pieces(store.s0(), d)) << "rep " << rep;
  }
}

TEST(OuterPieces, CapKeepsBestScoredAndFlags) {
  FrontierStore s(DirectionMask::increasing(2));
  for (int i = 0; i < 6; ++i) s.insert_in_place(vec({double(i), double(5 - i)}), Label::Safe);
  const OuterPieces full = outer_pieces(s);
  ASSERT_EQ(full.corners.size(), 7u);
  const OuterPieces capped = outer_pieces(s, 3);
  EXPECT_TRUE(capped.truncated);
  EXPECT_EQ(capped.before_cap, 7u);
  EXPECT_EQ(capped.corners.size(), 3u);
  EXPECT_THROW(outer_pieces(FrontierStore(DirectionMask::increasing(2))), ContractViolation);
}

TEST(BoundIndicators, EmptyStoreIsVacuous) {
  const BoundIndicators b = bound_indicators(FrontierStore(DirectionMask::increasing(2)));
  EXPECT_EQ(b.inner(vec({100, 100})), 0);
  EXPECT_EQ(b.outer(vec({-100, -100})), 1);
}

TEST(BoundIndicators, AgreeWithSetFormulasAndSandwich) {
  Rng rng(4242);
  for (int rep = 0; rep < 10; ++rep) {
    const int d = 2 + rep % 2;
    const SyntheticSet set = random_set(d, rng);
    FrontierStore store(set.mask);
    std::uniform_real_distribution<double> u(-2.5, 2.5);
    for (int i = 0; i < 300; ++i) {
      VectorXd x(d);
      for (int j = 0; j < d; ++j) x[j] = u(rng);
      store.insert_in_place(x, set(x) ? Label::Rare : Label::Safe);
    }
    const BoundIndicators b = bound_indicators(store);
    const OuterPieces pieces = outer_pieces(store, 1u << 20);
    int violations = 0, disagreements = 0, points = 0;
    const int per_axis = d == 2 ? 100 : 22;  // >= 1e4 grid points
    std::vector<int> idx(d, 0);
    while (true) {
      VectorXd x(d);
      for (int j = 0; j < d; ++j) x[j] = -2.5 + 5.0 * (idx[j] + 0.5) / per_axis;
      const VectorXd c = set.mask.canonicalize(x);
      const int truth = set(x) ? 1 : 0;
      const int in = b.inner(x), out = b.outer(x);
      violations += (in > truth) + (truth > out);
      disagreements += (in != int(in_inner_by_definition(store.s1(), c)));
      disagreements += (out != int(in_outer_by_definition(store.s0(), c)));
      bool by_pieces = false;
      for (const auto& l : pieces.corners) by_pieces = by_pieces || oracle::leq(l, c);
      disagreements += (out != int(by_pieces));
      ++points;
      int k = 0;
      while (k < d && ++idx[k] == per_axis) {
        idx[k] = 0;
        ++k;
      }
      if (k == d) break;
    }
    EXPECT_GE(points, 10000);
    EXPECT_EQ(violations, 0) << "rep " << rep;
    EXPECT_EQ(disagreements, 0) << "rep " << rep;
  }
}

TEST(FrontierStore, RebuildValidatesInvariants) {
  DirectionMask m = DirectionMask::increasing(2);
  EXPECT_NO_THROW(FrontierStore(m, {vec({1, 2}), vec({2, 1})}, {vec({0, 0})}));
  EXPECT_THROW(FrontierStore(m, {vec({1, 2}), vec({2, 3})}, {}), ContractViolation);
  EXPECT_THROW(FrontierStore(m, {vec({0, 0})}, {vec({1, 1})}), NonMonotoneOutcome);
}
