#include "ovc/stats.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "ovc/error.hpp"

namespace ovc::stats {
namespace {

constexpr double kBisectionTol = 1e-10;

double log_gamma(double x) {
#if defined(__GLIBC__)
  int sign = 0;
  return ::lgamma_r(x, &sign);
#else
  return std::lgamma(x);
#endif
}

void check_binomial_args(std::int64_t k, std::int64_t n, double conf) {
  require(n >= 1, ErrorCode::kInvalidArgument,
          "trial count must be >= 1, got " + std::to_string(n));
  require(k >= 0 && k <= n, ErrorCode::kInvalidArgument,
          "success count " + std::to_string(k) + " outside [0, " +
              std::to_string(n) + "]");
  require(conf > 0.0 && conf < 1.0, ErrorCode::kInvalidArgument,
          "confidence must lie in (0, 1)");
}

// Continued fraction for I_x(a, b), modified Lentz. Converges quickly for
// x < (a + 1) / (a + b + 2).
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 100000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;

  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

// Smallest-width bracket [lo, hi] around the root of I_p(a, b) = target.
struct Bracket {
  double lo;
  double hi;
};

Bracket bisect_beta_quantile(double a, double b, double target) {
  double lo = 0.0;
  double hi = 1.0;
  while (hi - lo > kBisectionTol) {
    const double mid = 0.5 * (lo + hi);
    if (regularized_incomplete_beta(a, b, mid) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return {lo, hi};
}

}  // namespace

void ConfidenceParams::validate() const {
  require(alpha > 0.0 && alpha < 1.0, ErrorCode::kInvalidArgument,
          "alpha must lie in (0, 1)");
  require(alpha_zeta >= 0.0, ErrorCode::kInvalidArgument,
          "alpha_zeta must be >= 0");
  require(alpha + alpha_zeta < 1.0, ErrorCode::kInvalidArgument,
          "alpha + alpha_zeta must be < 1");
}

double regularized_incomplete_beta(double a, double b, double x) {
  require(a > 0.0 && b > 0.0, ErrorCode::kInvalidArgument,
          "beta shape parameters must be positive");
  require(x >= 0.0 && x <= 1.0, ErrorCode::kInvalidArgument,
          "incomplete beta argument outside [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front = log_gamma(a + b) - log_gamma(a) - log_gamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_continued_fraction(a, b, x) / a;
  }
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double lower_conf_bound(std::int64_t k, std::int64_t n, double conf) {
  check_binomial_args(k, n, conf);
  if (k == 0) return 0.0;
  const double alpha = 1.0 - conf;
  if (k == n) return std::pow(alpha, 1.0 / static_cast<double>(n));
  // P(Bin(n, p) >= k) = I_p(k, n - k + 1), increasing in p. Returning the low
  // end of the bracket keeps the bound on the conservative side.
  return bisect_beta_quantile(static_cast<double>(k),
                              static_cast<double>(n - k + 1), alpha)
      .lo;
}

double upper_conf_bound(std::int64_t k, std::int64_t n, double conf) {
  check_binomial_args(k, n, conf);
  if (k == n) return 1.0;
  if (k == 0) return 1.0 - std::pow(1.0 - conf, 1.0 / static_cast<double>(n));
  return bisect_beta_quantile(static_cast<double>(k + 1),
                              static_cast<double>(n - k), conf)
      .hi;
}

double std_normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

double inv_std_normal_cdf(double p) {
  require(p > 0.0 && p < 1.0, ErrorCode::kInvalidArgument,
          "normal quantile requires p in (0, 1)");
  // Acklam's rational approximation (|rel err| < 1.15e-9) ...
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double kLow = 0.02425;
  constexpr double kHigh = 1.0 - kLow;

  double x;
  if (p < kLow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= kHigh) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // ... refined by Halley steps on the erfc-based CDF. The upper tail is
  // refined through the complement so that 1 - p does not lose digits.
  const bool upper = p > 0.5;
  const double target = upper ? 1.0 - p : p;
  double t = upper ? -x : x;
  for (int i = 0; i < 2; ++i) {
    const double e = std_normal_cdf(t) - target;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * t * t);
    t -= u / (1.0 + 0.5 * t * u);
  }
  if (p == 0.5) return 0.0;
  return upper ? -t : t;
}

RadiusResult radius_one_sided(double p_a_lower, double sigma) {
  require(sigma > 0.0, ErrorCode::kInvalidArgument, "sigma must be > 0");
  require(!std::isnan(p_a_lower), ErrorCode::kInvalidArgument,
          "p_a_lower is NaN");
  RadiusResult out;
  if (p_a_lower >= 1.0) {
    p_a_lower = kMaxProbability;
    out.clamped = true;
  }
  out.p_a_lower = p_a_lower;
  if (p_a_lower > 0.5) out.radius = sigma * inv_std_normal_cdf(p_a_lower);
  return out;
}

RadiusResult radius_two_sided(double p_a_lower, double p_b_upper, double sigma) {
  require(sigma > 0.0, ErrorCode::kInvalidArgument, "sigma must be > 0");
  RadiusResult out;
  if (p_a_lower >= 1.0) {
    p_a_lower = kMaxProbability;
    out.clamped = true;
  }
  if (p_b_upper <= 0.0) {
    p_b_upper = 1.0 - kMaxProbability;
    out.clamped = true;
  }
  out.p_a_lower = p_a_lower;
  if (p_a_lower > p_b_upper && p_a_lower > 0.0 && p_b_upper < 1.0) {
    out.radius = 0.5 * sigma *
                 (inv_std_normal_cdf(p_a_lower) - inv_std_normal_cdf(p_b_upper));
  }
  return out;
}

RadiusResult radius_irs(double p_a_lower, double zeta, double sigma) {
  require(sigma > 0.0, ErrorCode::kInvalidArgument, "sigma must be > 0");
  require(zeta >= 0.0 && zeta <= 1.0, ErrorCode::kInvalidArgument,
          "zeta must lie in [0, 1]");
  return radius_one_sided(p_a_lower - zeta, sigma);
}

}  // namespace ovc::stats
