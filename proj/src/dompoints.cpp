#include "raresim/dompoints.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "raresim/detail/parallel.hpp"
#include "raresim/errors.hpp"

namespace raresim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Bound { Free, Lower, Upper };

struct Task {
  int k;
  VectorXd corner;
};

bool lex_less(const VectorXd& a, const VectorXd& b) {
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

void fill_kkt(const GaussComponent& c, const OrthantPiece& piece, DominatingPoint& out) {
  const VectorXd g = c.precision_times(out.point - c.mean());
  double stat = 0.0, comp = 0.0;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double x = out.point[i];
    const bool at_lo = x == piece.lower[i];
    const bool at_hi = x == piece.upper[i];
    if (at_lo) {
      stat = std::max(stat, -g[i]);
    } else if (at_hi) {
      stat = std::max(stat, g[i]);
    } else {
      stat = std::max(stat, std::abs(g[i]));
    }
    // Multipliers implied by the gradient, against their slack. An infinite
    // slack with a nonzero multiplier already shows up in the stationarity term.
    const double lam_lo = std::max(g[i], 0.0), lam_hi = std::max(-g[i], 0.0);
    const double slack_lo = x - piece.lower[i], slack_hi = piece.upper[i] - x;
    if (lam_lo > 0.0 && std::isfinite(slack_lo)) comp = std::max(comp, lam_lo * slack_lo);
    if (lam_hi > 0.0 && std::isfinite(slack_hi)) comp = std::max(comp, lam_hi * slack_hi);
  }
  out.kkt_residual = std::max(stat, 0.0);
  out.complementarity = comp;
}

}  // namespace

DominatingPoint solve_piece(const GaussComponent& c, const OrthantPiece& piece, int component_index) {
  const int d = c.dim();
  if (piece.lower.size() != d || piece.upper.size() != d) {
    throw ContractViolation("solve_piece: piece dimension does not match the component");
  }
  for (int i = 0; i < d; ++i) {
    const double l = piece.lower[i], u = piece.upper[i];
    if (std::isnan(l) || std::isnan(u) || l > u || l == kInf || u == -kInf) {
      throw ContractViolation("solve_piece: empty piece in coordinate " + std::to_string(i) +
                              " (lower " + std::to_string(piece.lower[i]) + ", upper " +
                              std::to_string(piece.upper[i]) + ")");
    }
  }
  const VectorXd& mu = c.mean();
  const MatrixXd& S = c.cov();
  const VectorXd& lo = piece.lower;
  const VectorXd& hi = piece.upper;

  VectorXd x = mu.cwiseMax(lo).cwiseMin(hi);
  std::vector<Bound> state(d, Bound::Free);
  for (int i = 0; i < d; ++i) {
    if (mu[i] < lo[i]) state[i] = Bound::Lower;
    if (mu[i] > hi[i]) state[i] = Bound::Upper;
  }

  const int max_iter = 10 * d * d;
  for (int iter = 0; iter < max_iter; ++iter) {
    std::vector<int> B, F;
    for (int i = 0; i < d; ++i) (state[i] == Bound::Free ? F : B).push_back(i);
    const int nb = static_cast<int>(B.size()), nf = static_cast<int>(F.size());

    // Equality-constrained optimum with the bound block fixed.
    VectorXd w = VectorXd::Zero(nb);
    if (nb > 0) {
      MatrixXd sbb(nb, nb);
      VectorXd rb(nb);
      for (int a = 0; a < nb; ++a) {
        rb[a] = x[B[a]] - mu[B[a]];
        for (int b = 0; b < nb; ++b) sbb(a, b) = S(B[a], B[b]);
      }
      w = sbb.llt().solve(rb);
    }
    VectorXd step(nf);
    double step_norm = 0.0, scale = 1.0;
    for (int a = 0; a < nf; ++a) {
      double target = mu[F[a]];
      for (int b = 0; b < nb; ++b) target += S(F[a], B[b]) * w[b];
      step[a] = target - x[F[a]];
      step_norm = std::max(step_norm, std::abs(step[a]));
      scale = std::max(scale, std::abs(target));
    }

    if (step_norm <= 1e-13 * scale) {
      // Stationary on the working set: check multiplier signs.
      int worst = -1;
      double worst_val = 1e-12 * (1.0 + (nb > 0 ? w.cwiseAbs().maxCoeff() : 0.0));
      for (int b = 0; b < nb; ++b) {
        const double viol = state[B[b]] == Bound::Lower ? -w[b] : w[b];
        if (viol > worst_val) {
          worst_val = viol;
          worst = B[b];
        }
      }
      if (worst < 0) {
        DominatingPoint out;
        out.point = x;
        out.component_index = component_index;
        out.piece = piece;
        fill_kkt(c, piece, out);
        return out;
      }
      state[worst] = Bound::Free;
      continue;
    }

    double alpha = 1.0;
    int block = -1;
    Bound block_side = Bound::Free;
    for (int a = 0; a < nf; ++a) {
      const int i = F[a];
      if (step[a] < 0.0 && std::isfinite(lo[i])) {
        const double t = (lo[i] - x[i]) / step[a];
        if (t < alpha) {
          alpha = t;
          block = i;
          block_side = Bound::Lower;
        }
      } else if (step[a] > 0.0 && std::isfinite(hi[i])) {
        const double t = (hi[i] - x[i]) / step[a];
        if (t < alpha) {
          alpha = t;
          block = i;
          block_side = Bound::Upper;
        }
      }
    }
    alpha = std::max(alpha, 0.0);
    for (int a = 0; a < nf; ++a) {
      const int i = F[a];
      x[i] = std::clamp(x[i] + alpha * step[a], lo[i], hi[i]);
    }
    if (block >= 0) {
      state[block] = block_side;
      x[block] = block_side == Bound::Lower ? lo[block] : hi[block];
    }
  }
  throw SolverError("solve_piece: active-set method did not converge in " +
                        std::to_string(max_iter) + " iterations",
                    x);
}

std::size_t DominatingSets::total() const {
  std::size_t n = 0;
  for (const auto& s : sets) n += s.size();
  return n;
}

std::vector<VectorXd> DominatingSets::means(int k) const {
  std::vector<VectorXd> out;
  out.reserve(sets.at(k).size());
  for (const auto& p : sets[k]) out.push_back(p.point);
  return out;
}

DominatingSets initial_sets(const TruncatedGMM& gmm) {
  DominatingSets out;
  out.sets.resize(gmm.K());
  for (int k = 0; k < gmm.K(); ++k) {
    DominatingPoint p;
    p.point = gmm.component(k).mean();
    p.component_index = k;
    p.piece = OrthantPiece{gmm.support().lower, gmm.support().upper};
    out.sets[k].push_back(std::move(p));
  }
  return out;
}

std::vector<DominatingPoint> dedup(std::vector<DominatingPoint> pts, double tol) {
  std::vector<DominatingPoint> kept;
  kept.reserve(pts.size());
  for (auto& p : pts) {
    bool dup = false;
    for (const auto& q : kept) {
      if (q.point.size() == p.point.size() && (q.point - p.point).norm() <= tol) {
        dup = true;
        break;
      }
    }
    if (!dup) kept.push_back(std::move(p));
  }
  return kept;
}

namespace {

// Solves every (component, corner) pair in canonical coordinates and groups
// the results per component in corner order.
DominatingSets solve_all(const TruncatedGMM& gmm, const DirectionMask& mask,
                         std::vector<VectorXd> corners, int workers) {
  const int d = gmm.dim();
  const int K = gmm.K();
  std::sort(corners.begin(), corners.end(), lex_less);
  const Rect sup_c = mask.canonicalize(gmm.support());
  std::vector<GaussComponent> comps;
  comps.reserve(K);
  for (int k = 0; k < K; ++k) comps.push_back(mask.canonicalize(gmm.component(k)));

  std::vector<Task> tasks;
  tasks.reserve(static_cast<std::size_t>(K) * corners.size());
  for (int k = 0; k < K; ++k)
    for (const auto& a : corners) {
      if (a.size() != d) throw ContractViolation("dominating points: corner dimension mismatch");
      tasks.push_back({k, a});
    }

  std::vector<std::optional<DominatingPoint>> results(tasks.size());
  detail::parallel_for(tasks.size(), workers, [&](std::size_t t) {
    const Task& task = tasks[t];
    OrthantPiece piece{task.corner.cwiseMax(sup_c.lower), sup_c.upper};
    for (int i = 0; i < d; ++i)
      if (!(piece.lower[i] < piece.upper[i])) return;  // outside the support
    DominatingPoint p;
    try {
      p = solve_piece(comps[task.k], piece, task.k);
    } catch (const SolverError& e) {
      throw SolverError("component " + std::to_string(task.k) + ", corner " +
                            format_vector(task.corner) + ": " + e.what(),
                        mask.decanonicalize(e.last_iterate()));
    }
    p.corner = task.corner;
    p.point = mask.decanonicalize(p.point);
    const VectorXd a = mask.decanonicalize(piece.lower), b = mask.decanonicalize(piece.upper);
    p.piece = OrthantPiece{a.cwiseMin(b), a.cwiseMax(b)};
    results[t] = std::move(p);
  });

  DominatingSets out;
  out.sets.resize(K);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    if (results[t]) {
      out.sets[tasks[t].k].push_back(std::move(*results[t]));
    } else {
      ++out.dropped_pieces;
    }
  }
  for (auto& s : out.sets) s = dedup(std::move(s));
  return out;
}

}  // namespace

DominatingSets inner_dominating(const TruncatedGMM& gmm, const FrontierStore& store,
                                int workers) {
  if (store.dim() != gmm.dim()) {
    throw ContractViolation("inner_dominating: frontier dimension does not match the model");
  }
  if (store.s1().empty()) return initial_sets(gmm);
  // s1 is stored canonically, so its points are the corners as they are.
  DominatingSets out = solve_all(gmm, store.mask(), store.s1(), workers);
  // A component whose pieces all fall outside the support keeps its mean.
  const DominatingSets fallback = initial_sets(gmm);
  for (int k = 0; k < out.K(); ++k)
    if (out.sets[k].empty()) out.sets[k] = fallback.sets[k];
  return out;
}

DominatingSets outer_dominating(const TruncatedGMM& gmm, const DirectionMask& mask,
                                const std::vector<VectorXd>& corners, std::size_t cap,
                                int workers) {
  if (mask.signs.size() != gmm.dim()) {
    throw ContractViolation("outer_dominating: mask dimension does not match the model");
  }
  if (cap == 0) throw ContractViolation("outer_dominating: cap must be positive");
  if (corners.empty()) return initial_sets(gmm);
  DominatingSets out = solve_all(gmm, mask, corners, workers);
  for (int k = 0; k < out.K(); ++k) {
    auto& s = out.sets[k];
    if (s.size() > cap) {
      out.truncated = true;
      const GaussComponent& c = gmm.component(k);
      std::vector<std::pair<double, std::size_t>> ranked;
      ranked.reserve(s.size());
      for (std::size_t j = 0; j < s.size(); ++j) ranked.emplace_back(log_density(s[j].point, c), j);
      std::stable_sort(ranked.begin(), ranked.end(),
                       [](const auto& x, const auto& y) { return x.first > y.first; });
      std::vector<std::size_t> keep;
      for (std::size_t j = 0; j < cap; ++j) keep.push_back(ranked[j].second);
      std::sort(keep.begin(), keep.end());
      std::vector<DominatingPoint> kept;
      for (auto j : keep) kept.push_back(std::move(s[j]));
      s = std::move(kept);
    }
    if (s.empty()) s = initial_sets(gmm).sets[k];
  }
  return out;
}

}  // namespace raresim
