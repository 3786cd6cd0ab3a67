#pragma once

// Scalar and bivariate standard normal functions used by the rectangle
// probability kernels.

namespace raresim::detail {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double norm_pdf(double x);
double norm_cdf(double x);
/// Upper tail 1 - Phi(x), accurate for large x.
double norm_sf(double x);
double norm_quantile(double p);

/// P(a <= Z <= b) for standard normal Z, computed on the side that keeps
/// relative precision in the tails. Infinite bounds allowed.
double norm_interval(double a, double b);

/// P(X > h, Y > k) for a standard bivariate normal with correlation r.
/// Genz's BVNU (Drezner-Wesolowsky with Gauss-Legendre), ~1e-15 absolute.
double bvn_upper(double h, double k, double r);

/// P(a1 <= X <= b1, a2 <= Y <= b2) for a standard bivariate normal with
/// correlation r. Infinite bounds allowed.
double bvn_rect(double a1, double b1, double a2, double b2, double r);

/// Bivariate normal density with unit variances and correlation r.
double bvn_pdf(double x, double y, double r);

}  // namespace raresim::detail
