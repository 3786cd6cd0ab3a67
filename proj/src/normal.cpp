#include "raresim/detail/normal.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/special_functions/erf.hpp>

namespace raresim::detail {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Gauss-Legendre half-rules used by BVNU (6, 12 and 20 points).
constexpr std::array<double, 3> kW6 = {0.1713244923791705, 0.3607615730481384, 0.4679139345726904};
constexpr std::array<double, 3> kX6 = {0.9324695142031522, 0.6612093864662647, 0.2386191860831970};
constexpr std::array<double, 6> kW12 = {0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
                                        0.2031674267230659,  0.2334925365383547, 0.2491470458134029};
constexpr std::array<double, 6> kX12 = {0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
                                        0.5873179542866171, 0.3678314989981802, 0.1252334085114692};
constexpr std::array<double, 10> kW20 = {
    0.01761400713915212, 0.04060142980038694, 0.06267204833410906, 0.08327674157670475,
    0.1019301198172404,  0.1181945319615184,  0.1316886384491766,  0.1420961093183821,
    0.1491729864726037,  0.1527533871307259};
constexpr std::array<double, 10> kX20 = {
    0.9931285991850949, 0.9639719272779138, 0.9122344282513259, 0.8391169718222188,
    0.7463319064601508, 0.6360536807265150, 0.5108670019508271, 0.3737060887154196,
    0.2277858511416451, 0.07652652113349733};

template <std::size_t N>
double bvnu_core(double h, double k, double r, const std::array<double, N>& w,
                 const std::array<double, N>& x) {
  const double hk = h * k;
  double bvn = 0.0;
  if (std::abs(r) < 0.925) {
    const double hs = (h * h + k * k) / 2.0;
    const double asr = std::asin(r) / 2.0;
    for (std::size_t i = 0; i < N; ++i) {
      for (double sign : {-1.0, 1.0}) {
        const double sn = std::sin(asr * (1.0 + sign * x[i]));
        bvn += w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
      }
    }
    return bvn * asr / kTwoPi + norm_sf(h) * norm_sf(k);
  }

  double kk = k;
  double hkk = hk;
  if (r < 0.0) {
    kk = -k;
    hkk = -hk;
  }
  if (std::abs(r) < 1.0) {
    const double as = 1.0 - r * r;
    double a = std::sqrt(as);
    const double bs = (h - kk) * (h - kk);
    const double c = (4.0 - hkk) / 8.0;
    const double d = (12.0 - hkk) / 80.0;
    double asr = -(bs / as + hkk) / 2.0;
    if (asr > -100.0) {
      bvn = a * std::exp(asr) * (1.0 - c * (bs - as) * (1.0 - d * bs) / 3.0 + c * d * as * as);
    }
    if (hkk > -100.0) {
      const double b = std::sqrt(bs);
      const double sp = std::sqrt(kTwoPi) * norm_cdf(-b / a);
      bvn -= std::exp(-hkk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
    }
    a /= 2.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      for (double sign : {-1.0, 1.0}) {
        const double xs = std::pow(a * (1.0 + sign * x[i]), 2);
        const double asr_i = -(bs / xs + hkk) / 2.0;
        if (asr_i > -100.0) {
          const double sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
          const double rs = std::sqrt(1.0 - xs);
          const double ep = std::exp(-(hkk / 2.0) * xs / ((1.0 + rs) * (1.0 + rs))) / rs;
          sum += w[i] * std::exp(asr_i) * (sp - ep);
        }
      }
    }
    bvn = (a * sum - bvn) / kTwoPi;
  }
  if (r > 0.0) {
    bvn += norm_cdf(-std::max(h, kk));
  } else if (h >= kk) {
    bvn = -bvn;
  } else {
    const double l = h < 0.0 ? norm_cdf(kk) - norm_cdf(h) : norm_cdf(-h) - norm_cdf(-kk);
    bvn = l - bvn;
  }
  return bvn;
}

}  // namespace

double norm_pdf(double x) { return std::exp(-0.5 * x * x - kLogSqrt2Pi); }

double norm_cdf(double x) {
  if (x == -kInf) return 0.0;
  if (x == kInf) return 1.0;
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

double norm_sf(double x) { return norm_cdf(-x); }

double norm_quantile(double p) {
  if (p <= 0.0) return -kInf;
  if (p >= 1.0) return kInf;
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

double norm_interval(double a, double b) {
  if (!(a < b)) return 0.0;
  if (a > 0.0) return std::max(0.0, norm_sf(a) - norm_sf(b));
  if (b < 0.0) return std::max(0.0, norm_cdf(b) - norm_cdf(a));
  return std::max(0.0, 1.0 - norm_cdf(a) - norm_sf(b));
}

double bvn_upper(double h, double k, double r) {
  if (h == kInf || k == kInf) return 0.0;
  if (h == -kInf) return k == -kInf ? 1.0 : norm_sf(k);
  if (k == -kInf) return norm_sf(h);
  if (r == 0.0) return norm_sf(h) * norm_sf(k);
  r = std::clamp(r, -1.0, 1.0);
  double p;
  if (std::abs(r) < 0.3) {
    p = bvnu_core(h, k, r, kW6, kX6);
  } else if (std::abs(r) < 0.75) {
    p = bvnu_core(h, k, r, kW12, kX12);
  } else {
    p = bvnu_core(h, k, r, kW20, kX20);
  }
  return std::clamp(p, 0.0, 1.0);
}

double bvn_rect(double a1, double b1, double a2, double b2, double r) {
  if (!(a1 < b1) || !(a2 < b2)) return 0.0;
  // Reflect each coordinate so the rectangle sits on the upper side; the
  // inclusion-exclusion below then starts from the smallest orthant and
  // keeps relative precision in the tails.
  auto centre = [](double a, double b) {
    if (a == -kInf && b == kInf) return 0.0;
    if (a == -kInf) return -kInf;
    if (b == kInf) return kInf;
    return a + b;
  };
  if (centre(a1, b1) < 0.0) {
    std::swap(a1, b1);
    a1 = -a1;
    b1 = -b1;
    r = -r;
  }
  if (centre(a2, b2) < 0.0) {
    std::swap(a2, b2);
    a2 = -a2;
    b2 = -b2;
    r = -r;
  }
  const double p = bvn_upper(a1, a2, r) - bvn_upper(b1, a2, r) - bvn_upper(a1, b2, r) +
                   bvn_upper(b1, b2, r);
  return std::clamp(p, 0.0, 1.0);
}

double bvn_pdf(double x, double y, double r) {
  const double om = 1.0 - r * r;
  const double q = (x * x - 2.0 * r * x * y + y * y) / om;
  return std::exp(-0.5 * q) / (kTwoPi * std::sqrt(om));
}

}  // namespace raresim::detail
