#pragma once

// Test-only reference computations. Nothing here calls into the library's
// numerical kernels: densities are written out from the textbook formula and
// integrals are done by brute-force quadrature or enumeration.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
struct GaussLegendre {
  std::vector<double> x, w;
  explicit GaussLegendre(int n) : x(n), w(n) {
    for (int i = 0; i < n; ++i) {
      double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
      double dp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = 0.0;
        for (int j = 1; j <= n; ++j) {
          const double p2 = p1;
          p1 = p0;
          p0 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p2) / j;
        }
        dp = n * (z * p0 - p1) / (z * z - 1.0);
        const double dz = p0 / dp;
        z -= dz;
        if (std::abs(dz) < 1e-15) break;
      }
      x[i] = z;
      w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
  }
};

/// Composite Gauss-Legendre nodes over [lo, hi]: `panels` panels of `order` nodes.
inline void composite_nodes(double lo, double hi, int panels, int order, std::vector<double>& xs,
                            std::vector<double>& ws) {
  GaussLegendre gl(order);
  xs.clear();
  ws.clear();
  const double h = (hi - lo) / panels;
  for (int p = 0; p < panels; ++p) {
    const double a = lo + p * h;
    for (int i = 0; i < order; ++i) {
      xs.push_back(a + 0.5 * h * (gl.x[i] + 1.0));
      ws.push_back(0.5 * h * gl.w[i]);
    }
  }
}

/// Gaussian density by the explicit formula with a dense inverse.
inline double gauss_pdf(const VectorXd& x, const VectorXd& mu, const MatrixXd& cov) {
  const int d = static_cast<int>(mu.size());
  const MatrixXd inv = cov.inverse();
  const VectorXd r = x - mu;
  return std::exp(-0.5 * r.dot(inv * r)) /
         std::sqrt(std::pow(2.0 * std::numbers::pi, d) * cov.determinant());
}

struct BoxIntegral {
  double mass = 0.0;
  VectorXd m1;  // E[X | box]
  MatrixXd m2;  // E[X X^T | box]
};

/// Mass and truncated raw moments of N(mu, cov) over [lo, hi] by tensor
/// Gauss-Legendre quadrature (d <= 4). Infinite bounds are clipped at
/// mu +- 10 sigma.
inline BoxIntegral box_integral(const VectorXd& mu, const MatrixXd& cov, const VectorXd& lo,
                                const VectorXd& hi, int nodes_per_sigma = 6) {
  const int d = static_cast<int>(mu.size());
  std::vector<std::vector<double>> xs(d), ws(d);
  for (int i = 0; i < d; ++i) {
    const double s = std::sqrt(cov(i, i));
    const double a = std::max(lo[i], mu[i] - 10.0 * s);
    const double b = std::min(hi[i], mu[i] + 10.0 * s);
    const int panels = std::max(2, static_cast<int>(std::ceil((b - a) / s * 1.5)));
    composite_nodes(a, b, panels, nodes_per_sigma, xs[i], ws[i]);
  }
  const MatrixXd inv = cov.inverse();
  const double norm = 1.0 / std::sqrt(std::pow(2.0 * std::numbers::pi, d) * cov.determinant());

  BoxIntegral out;
  out.m1 = VectorXd::Zero(d);
  out.m2 = MatrixXd::Zero(d, d);
  std::vector<std::size_t> idx(d, 0);
  VectorXd x(d);
  while (true) {
    double w = 1.0;
    for (int i = 0; i < d; ++i) {
      x[i] = xs[i][idx[i]];
      w *= ws[i][idx[i]];
    }
    const VectorXd r = x - mu;
    const double f = w * norm * std::exp(-0.5 * r.dot(inv * r));
    out.mass += f;
    out.m1 += f * x;
    out.m2 += f * x * x.transpose();
    int k = 0;
    while (k < d && ++idx[k] == xs[k].size()) {
      idx[k] = 0;
      ++k;
    }
    if (k == d) break;
  }
  out.m1 /= out.mass;
  out.m2 /= out.mass;
  return out;
}

/// Componentwise a <= b.
inline bool leq(const VectorXd& a, const VectorXd& b) { return (a.array() <= b.array()).all(); }

/// Pareto-minimal elements of `pts` by quadratic scan (duplicates collapsed).
inline std::vector<VectorXd> pareto_min(const std::vector<VectorXd>& pts) {
  std::vector<VectorXd> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < pts.size() && !dominated; ++j) {
      if (i == j) continue;
      if (leq(pts[j], pts[i]) && (pts[j] != pts[i] || j < i)) dominated = true;
    }
    if (!dominated) out.push_back(pts[i]);
  }
  return out;
}

/// Pareto-maximal elements of `pts` by quadratic scan (duplicates collapsed).
inline std::vector<VectorXd> pareto_max(const std::vector<VectorXd>& pts) {
  std::vector<VectorXd> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < pts.size() && !dominated; ++j) {
      if (i == j) continue;
      if (leq(pts[i], pts[j]) && (pts[j] != pts[i] || j < i)) dominated = true;
    }
    if (!dominated) out.push_back(pts[i]);
  }
  return out;
}

inline bool lex_less(const VectorXd& a, const VectorXd& b) {
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

inline std::vector<VectorXd> sorted(std::vector<VectorXd> v) {
  std::sort(v.begin(), v.end(), lex_less);
  return v;
}

/// Maximizer of the Gaussian log-density over a box by multi-resolution grid
/// search: a coarse grid over the (clipped) box, then successively finer
/// grids around the incumbent until the step reaches `final_step`.
inline VectorXd grid_argmax(const VectorXd& mu, const MatrixXd& cov, const VectorXd& lo,
                            const VectorXd& hi, double final_step = 1e-3) {
  const int d = static_cast<int>(mu.size());
  const MatrixXd inv = cov.inverse();
  auto score = [&](const VectorXd& x) {
    const VectorXd r = x - mu;
    return -r.dot(inv * r);
  };
  VectorXd a(d), b(d);
  for (int i = 0; i < d; ++i) {
    const double s = std::sqrt(cov(i, i));
    a[i] = std::max(lo[i], std::min(mu[i], std::isfinite(hi[i]) ? hi[i] : mu[i]) - 12.0 * s);
    b[i] = std::min(hi[i], std::max(mu[i], std::isfinite(lo[i]) ? lo[i] : mu[i]) + 12.0 * s);
  }
  VectorXd best = (a + b) / 2.0;
  double step = (b - a).maxCoeff() / 60.0;
  const int half = 60;
  while (true) {
    double best_score = -kInf;
    VectorXd incumbent = best;
    std::vector<int> idx(d, -half);
    VectorXd x(d);
    while (true) {
      for (int i = 0; i < d; ++i) {
        x[i] = incumbent[i] + idx[i] * step;
        if (x[i] < a[i]) x[i] = a[i];
        if (x[i] > b[i]) x[i] = b[i];
      }
      const double s = score(x);
      if (s > best_score) {
        best_score = s;
        best = x;
      }
      int k = 0;
      while (k < d && ++idx[k] > half) {
        idx[k] = -half;
        ++k;
      }
      if (k == d) break;
    }
    if (step <= final_step) break;
    step = std::max(final_step, step / 10.0);
  }
  return best;
}

}  // namespace oracle
