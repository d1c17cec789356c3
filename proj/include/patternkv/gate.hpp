#pragma once

// Flattening gate for pattern utilization.
//
// Let D be the mean over d dimensions of (raw squared error - flattened
// squared error). Under the uniform in-bin error model with step
// Delta = R / (2^n - 1):
//
//   E[D]   = (Delta_raw^2 - Delta_flat^2) / 12
//   Var(D) = (Delta_raw^4 + Delta_flat^4) / (180 d)
//
// Flattening is accepted when the one-sided z statistic E[D]/sqrt(Var(D))
// reaches z_{1-alpha}. With rho = R_flat / R_raw this is
//
//   1 - rho^2 >= (2 z_{1-alpha} / sqrt(5 d)) * sqrt(1 + rho^4)
//
// whose left side falls and right side rises in rho, so it is equivalent to
// rho <= rho_star(d, alpha).

#include <cmath>
#include <limits>
#include <string>

#include "patternkv/error.hpp"
#include "patternkv/quant.hpp"

namespace patternkv {

inline void require_valid_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha <= 0.5)) {
    throw UsageError("alpha must lie in (0, 0.5], got " + std::to_string(alpha));
  }
}

// Standard normal quantile z_{1-alpha}. Acklam's rational approximation
// followed by one Halley step against std::erfc.
inline double z_quantile(double alpha) {
  require_valid_alpha(alpha);
  if (alpha == 0.5) return 0.0;
  const double p = 1.0 - alpha;

  constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                          -2.759285104469687e+02, 1.383577518672690e+02,
                          -3.066479806614716e+01, 2.506628277459239e+00};
  constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                          -1.556989798598866e+02, 6.680131188771972e+01,
                          -1.328068155288572e+01};
  constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                          -2.400758277161838e+00, -2.549732539343734e+00,
                          4.374664141464968e+00,  2.938163982698783e+00};
  constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                          2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_high = 1.0 - 0.02425;

  double x;
  if (p <= p_high) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(alpha));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // Halley refinement on Phi(x) - p, with Phi(x) = erfc(-x / sqrt2) / 2.
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * 3.14159265358979323846) * std::exp(0.5 * x * x);
  x = x - u / (1.0 + 0.5 * x * u);
  return x;
}

// Left side minus right side of the contraction criterion.
inline double contraction_margin(double rho, double d, double z) {
  return (1.0 - rho * rho) - (2.0 * z / std::sqrt(5.0 * d)) * std::sqrt(1.0 + rho * rho * rho * rho);
}

// Root of the contraction criterion on [0, 1], bisected to machine
// precision. Returns 0 when even rho = 0 fails the test (very small d with
// strict alpha); GateConfig records that case as infeasible.
inline double solve_rho_star(int head_dim, double alpha) {
  if (head_dim < 1) throw UsageError("solve_rho_star: head_dim must be >= 1");
  const double z = z_quantile(alpha);
  if (z == 0.0) return 1.0;
  const double d = static_cast<double>(head_dim);
  if (contraction_margin(0.0, d, z) < 0.0) return 0.0;
  double lo = 0.0;
  double hi = 1.0;
  for (int i = 0; i < 200 && hi - lo > 0.0; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (contraction_margin(mid, d, z) >= 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

struct GateConfig {
  double alpha = 0.05;
  int head_dim = 128;
  double z = 0.0;
  double rho_star = 1.0;
  // False when no rho in [0, 1] satisfies the criterion; flattening is then
  // never accepted.
  bool feasible = true;

  static GateConfig make(int head_dim, double alpha) {
    require_valid_alpha(alpha);
    if (head_dim < 1) throw UsageError("GateConfig: head_dim must be >= 1");
    GateConfig cfg;
    cfg.alpha = alpha;
    cfg.head_dim = head_dim;
    cfg.z = z_quantile(alpha);
    cfg.rho_star = solve_rho_star(head_dim, alpha);
    cfg.feasible = contraction_margin(0.0, head_dim, cfg.z) >= 0.0;
    return cfg;
  }
};

struct GateDecision {
  bool flatten = false;
  double rho = 0.0;
  double r_raw = 0.0;
  double r_flat = 0.0;

  friend bool operator==(const GateDecision&, const GateDecision&) = default;
};

inline GateDecision decide(double r_raw, double r_flat, const GateConfig& config) {
  if (r_raw < 0.0 || r_flat < 0.0) {
    throw UsageError("decide: quantization ranges must be non-negative");
  }
  GateDecision out;
  out.r_raw = r_raw;
  out.r_flat = r_flat;
  if (r_raw == 0.0) {
    out.rho = r_flat == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    out.flatten = false;
    return out;
  }
  out.rho = r_flat / r_raw;
  out.flatten = config.feasible && out.rho <= config.rho_star;
  return out;
}

struct GainStats {
  double mean = 0.0;
  double variance = 0.0;
};

// High-resolution model of D. Diagnostic only; decide() is authoritative.
inline GainStats expected_gain_stats(double r_raw, double r_flat, int bits, int head_dim) {
  require_valid_bits(bits);
  if (r_raw < 0.0 || r_flat < 0.0) {
    throw UsageError("expected_gain_stats: ranges must be non-negative");
  }
  if (head_dim < 1) throw UsageError("expected_gain_stats: head_dim must be >= 1");
  const double levels = static_cast<double>(max_code(bits));
  const double step_raw = r_raw / levels;
  const double step_flat = r_flat / levels;
  const double raw2 = step_raw * step_raw;
  const double flat2 = step_flat * step_flat;
  GainStats s;
  s.mean = (raw2 - flat2) / 12.0;
  s.variance = (raw2 * raw2 + flat2 * flat2) / (180.0 * head_dim);
  return s;
}

// The z-test form of the gate: E[D]/sqrt(Var(D)) >= z_{1-alpha}.
inline bool z_test_rejects_null(double r_raw, double r_flat, int bits, int head_dim,
                                double alpha) {
  const GainStats s = expected_gain_stats(r_raw, r_flat, bits, head_dim);
  if (s.variance <= 0.0) return false;
  return s.mean / std::sqrt(s.variance) >= z_quantile(alpha);
}

}  // namespace patternkv
