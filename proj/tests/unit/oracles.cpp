#include "unit/oracles.hpp"

#include <cmath>
#include <numbers>

namespace oracle {

long double binom_cdf(std::int64_t k, std::int64_t n, long double p) {
  if (k < 0) return 0.0L;
  if (k >= n) return 1.0L;
  if (p <= 0.0L) return 1.0L;
  if (p >= 1.0L) return 0.0L;
  const long double lp = std::log(p);
  const long double lq = std::log1p(-p);
  long double sum = 0.0L;
  for (std::int64_t i = 0; i <= k; ++i) {
    const long double lc = std::lgamma(static_cast<long double>(n) + 1) -
                           std::lgamma(static_cast<long double>(i) + 1) -
                           std::lgamma(static_cast<long double>(n - i) + 1);
    sum += std::exp(lc + i * lp + (n - i) * lq);
  }
  return sum;
}

namespace {

// Root of a decreasing function f on [0, 1].
template <typename F>
double bisect_decreasing(F f, long double target) {
  long double lo = 0.0L, hi = 1.0L;
  while (hi - lo > 1e-13L) {
    const long double mid = 0.5L * (lo + hi);
    if (f(mid) > target) lo = mid; else hi = mid;
  }
  return static_cast<double>(0.5L * (lo + hi));
}

}  // namespace

double cp_lower(std::int64_t k, std::int64_t n, double alpha) {
  if (k == 0) return 0.0;
  // P(X >= k; p) = alpha, and P(X >= k) grows with p.
  return bisect_decreasing([&](long double p) { return binom_cdf(k - 1, n, p); },
                           1.0L - alpha);
}

double cp_upper(std::int64_t k, std::int64_t n, double alpha) {
  if (k == n) return 1.0;
  return bisect_decreasing([&](long double p) { return binom_cdf(k, n, p); }, alpha);
}

double phi(double x) {
  // erf(z) = 2/sqrt(pi) exp(-z^2) sum_j 2^j z^(2j+1) / (2j+1)!!
  const long double z = std::fabs(x) / std::numbers::sqrt2_v<long double>;
  long double term = z;
  long double sum = z;
  for (int j = 1; j < 2000; ++j) {
    term *= 2.0L * z * z / (2.0L * j + 1.0L);
    sum += term;
    if (term < sum * 1e-21L) break;
  }
  const long double erf = 2.0L / std::sqrt(std::numbers::pi_v<long double>) *
                          std::exp(-z * z) * sum;
  const long double half = 0.5L * erf;
  return static_cast<double>(x >= 0 ? 0.5L + half : 0.5L - half);
}

double phi_inv(double p) {
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (phi(mid) < p) lo = mid; else hi = mid;
  }
  return 0.5 * (lo + hi);
}

std::size_t brute_argmax(std::span<const float> head_rows, std::size_t k,
                         std::span<const float> emb) {
  const std::size_t d = emb.size();
  std::size_t best = 0;
  double best_v = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    double v = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      v += static_cast<double>(head_rows[c * d + j]) * static_cast<double>(emb[j]);
    }
    if (c == 0 || v > best_v) {
      best = c;
      best_v = v;
    }
  }
  return best;
}

}  // namespace oracle
