#pragma once

// Binomial confidence bounds, the standard normal quantile, and the
// certified-radius formulas shared by all certification routines.

#include <cstdint>
#include <optional>

namespace ovc::stats {

struct ConfidenceParams {
  double alpha = 0.001;
  double alpha_zeta = 0.0;

  // Throws invalid-argument unless alpha > 0, alpha_zeta >= 0 and
  // alpha + alpha_zeta < 1.
  void validate() const;
};

struct RadiusResult {
  std::optional<double> radius;  // absent when abstaining
  double p_a_lower = 0.0;        // the probability the radius was computed from
  bool clamped = false;          // input probability was >= 1 and got clamped

  bool abstained() const { return !radius.has_value(); }
};

// Values at or above one are replaced by this before any quantile is taken.
inline constexpr double kMaxProbability = 1.0 - 1e-12;

/// One-sided Clopper-Pearson lower bound on a binomial proportion: the
/// (1 - conf) quantile of Beta(k, n - k + 1). Zero when k == 0.
double lower_conf_bound(std::int64_t k, std::int64_t n, double conf);

/// One-sided Clopper-Pearson upper bound: the conf quantile of
/// Beta(k + 1, n - k). One when k == n.
double upper_conf_bound(std::int64_t k, std::int64_t n, double conf);

/// Regularized incomplete beta I_x(a, b) for a, b > 0, x in [0, 1].
double regularized_incomplete_beta(double a, double b, double x);

double std_normal_cdf(double x);

/// Inverse of the standard normal CDF, |error| <= 1e-9 on (0, 1).
double inv_std_normal_cdf(double p);

/// sigma * Phi^-1(p_a_lower); abstains when p_a_lower <= 1/2.
RadiusResult radius_one_sided(double p_a_lower, double sigma);

/// (sigma / 2) * (Phi^-1(p_a_lower) - Phi^-1(p_b_upper)); abstains when
/// p_a_lower <= p_b_upper.
RadiusResult radius_two_sided(double p_a_lower, double p_b_upper, double sigma);

/// One-sided radius after discounting p_a_lower by the disagreement bound zeta.
RadiusResult radius_irs(double p_a_lower, double zeta, double sigma);

}  // namespace ovc::stats
