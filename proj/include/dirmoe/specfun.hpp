/* Copyright 2026 The DirMoE Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Special functions for Dirichlet divergences and implicit reparameterization:
// log-gamma, digamma, trigamma and the regularized incomplete gamma function
// together with its shape derivative and quantile.
//
// The incomplete gamma routines work on log(x) internally so that Gamma draws
// with very small shape (whose values underflow a double) stay usable.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "dirmoe/errors.hpp"

namespace dirmoe::specfun {

struct SpecfunResult {
  double value = 0.0;
  double abs_err_bound = 0.0;  // estimated truncation + rounding bound
};

// Lower and upper regularized incomplete gamma values. Each side is computed
// directly on its own branch so the smaller one keeps full relative accuracy.
struct GammaLevels {
  double lower = 0.0;  // P(a, x)
  double upper = 1.0;  // Q(a, x) = 1 - P(a, x)
};

namespace detail {

inline constexpr double kEps = std::numeric_limits<double>::epsilon();
inline constexpr double kTiny = std::numeric_limits<double>::min();
inline constexpr double kHalfLog2Pi = 0.91893853320467274178032973640562;
inline constexpr int kMaxIterations = 200000;

inline void check_shape(double a, const char* fn) {
  if (!(a > 0.0) || !std::isfinite(a)) {
    throw DomainError(std::string(fn) + ": shape must be positive and finite");
  }
}

// Lanczos approximation (g = 7, 9 coefficients), valid for a >= 0.5.
inline double lanczos_log_gamma(double a) {
  static constexpr std::array<double, 9> kCoef{
      0.99999999999980993,     676.5203681218851,     -1259.1392167224028,
      771.32342877765313,      -176.61502916214059,   12.507343278686905,
      -0.13857109526572012,    9.9843695780195716e-6, 1.5056327351493116e-7};
  const double z = a - 1.0;
  double sum = kCoef[0];
  for (int i = 1; i < 9; ++i) sum += kCoef[i] / (z + i);
  const double t = z + 7.5;
  return kHalfLog2Pi + (z + 0.5) * std::log(t) - t + std::log(sum);
}

// lnGamma(a) - [(a - 1/2) ln a - a + ln sqrt(2 pi)] for a >= 10.
inline double stirling_correction(double a) {
  const double r = 1.0 / a;
  const double r2 = r * r;
  return r * (1.0 / 12.0 +
              r2 * (-1.0 / 360.0 +
                    r2 * (1.0 / 1260.0 + r2 * (-1.0 / 1680.0 + r2 * (1.0 / 1188.0)))));
}

// log(1 + t) - t
inline double log1pmx(double t) { return std::log1p(t) - t; }

// log of x * gamma_pdf(x; a) = a ln x - x - lnGamma(a).
inline double log_prefactor(double a, double x, double log_x);

}  // namespace detail

inline SpecfunResult evaluate_log_gamma(double a) {
  detail::check_shape(a, "log_gamma");
  double value;
  if (a < 0.5) {
    // Reflection keeps tiny shapes accurate.
    value = std::log(std::numbers::pi / std::sin(std::numbers::pi * a)) -
            detail::lanczos_log_gamma(1.0 - a);
  } else {
    value = detail::lanczos_log_gamma(a);
  }
  const double scale = a > 1.0 ? a * std::log(a) + 1.0 : 1.0 + std::abs(value);
  return {value, 16.0 * detail::kEps * scale};
}

inline double log_gamma(double a) { return evaluate_log_gamma(a).value; }

inline SpecfunResult evaluate_digamma(double a) {
  detail::check_shape(a, "digamma");
  double shift = 0.0;
  double x = a;
  while (x < 10.0) {
    shift += 1.0 / x;
    x += 1.0;
  }
  const double r = 1.0 / x;
  const double r2 = r * r;
  // Asymptotic series with Bernoulli coefficients B_2 .. B_14.
  const double series =
      r2 * (1.0 / 12.0 -
            r2 * (1.0 / 120.0 -
                  r2 * (1.0 / 252.0 -
                        r2 * (1.0 / 240.0 -
                              r2 * (1.0 / 132.0 - r2 * (691.0 / 32760.0 - r2 * (1.0 / 12.0)))))));
  const double value = std::log(x) - 0.5 * r - series - shift;
  const double truncation = 3617.0 / 8160.0 * std::pow(r, 16);
  return {value, truncation + 8.0 * detail::kEps * (std::abs(value) + shift)};
}

inline double digamma(double a) { return evaluate_digamma(a).value; }

// Needed for the gradient of the closed-form Dirichlet divergence.
inline double trigamma(double a) {
  detail::check_shape(a, "trigamma");
  double shift = 0.0;
  double x = a;
  while (x < 10.0) {
    shift += 1.0 / (x * x);
    x += 1.0;
  }
  const double r = 1.0 / x;
  const double r2 = r * r;
  const double series =
      r * (1.0 +
           r * (0.5 +
                r * (1.0 / 6.0 -
                     r2 * (1.0 / 30.0 -
                           r2 * (1.0 / 42.0 -
                                 r2 * (1.0 / 30.0 - r2 * (5.0 / 66.0 - r2 * (691.0 / 2730.0))))))));
  return shift + series;
}

namespace detail {

inline double log_prefactor(double a, double x, double log_x) {
  if (a >= 10.0 && x > 0.0 && std::isfinite(x)) {
    return a * log1pmx((x - a) / a) + 0.5 * std::log(a) - kHalfLog2Pi - stirling_correction(a);
  }
  return a * log_x - x - log_gamma(a);
}

struct LogSeries {
  double log_value;  // log of the regularized quantity
  double rel_err;    // relative truncation bound
};

// log P(a, x) from the power series; converges for all x, fast for x < a + 1.
inline LogSeries log_lower_series(double a, double x, double log_x) {
  double ap = a;
  double term = 1.0;
  double sum = 1.0;
  double tail = 0.0;
  for (int n = 0; n < kMaxIterations; ++n) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (term < sum * kEps) {
      const double ratio = x / (ap + 1.0);
      tail = ratio < 1.0 ? term * ratio / (1.0 - ratio) : term;
      break;
    }
  }
  return {log_prefactor(a, x, log_x) - std::log(a) + std::log(sum), tail / sum + 4.0 * kEps};
}

// log Q(a, x) from the Legendre continued fraction (modified Lentz), x >= a + 1.
inline LogSeries log_upper_cont_frac(double a, double x, double log_x) {
  double b = x + 1.0 - a;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  double last = 0.0;
  for (int i = 1; i < kMaxIterations; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    last = std::abs(del - 1.0);
    if (last < kEps) break;
  }
  return {log_prefactor(a, x, log_x) + std::log(h), last + 4.0 * kEps};
}

inline bool use_series(double a, double x) { return x < a + 1.0; }

struct LogLevels {
  double log_lower;
  double log_upper;
  double rel_err;
};

inline LogLevels log_levels(double a, double x, double log_x) {
  if (use_series(a, x)) {
    const LogSeries s = log_lower_series(a, x, log_x);
    const double lower = std::exp(s.log_value);
    return {s.log_value, std::log1p(-std::min(lower, 1.0)), s.rel_err};
  }
  const LogSeries s = log_upper_cont_frac(a, x, log_x);
  const double upper = std::exp(s.log_value);
  return {std::log1p(-std::min(upper, 1.0)), s.log_value, s.rel_err};
}

}  // namespace detail

// Both tails of the regularized incomplete gamma at x = exp(log_x).
inline GammaLevels gamma_levels_at_log(double a, double log_x) {
  detail::check_shape(a, "gamma_levels");
  if (log_x == -std::numeric_limits<double>::infinity()) return {0.0, 1.0};
  if (log_x == std::numeric_limits<double>::infinity()) return {1.0, 0.0};
  const double x = std::exp(log_x);
  const auto lv = detail::log_levels(a, x, log_x);
  return {std::exp(lv.log_lower), std::exp(lv.log_upper)};
}

inline SpecfunResult evaluate_reg_inc_gamma(double a, double x) {
  detail::check_shape(a, "reg_inc_gamma");
  if (!(x >= 0.0) || std::isnan(x)) throw DomainError("reg_inc_gamma: x must be nonnegative");
  if (x == 0.0) return {0.0, 0.0};
  if (std::isinf(x)) return {1.0, 0.0};
  const double log_x = std::log(x);
  if (detail::use_series(a, x)) {
    const auto s = detail::log_lower_series(a, x, log_x);
    const double v = std::min(std::exp(s.log_value), 1.0);
    return {v, v * s.rel_err + detail::kEps};
  }
  const auto s = detail::log_upper_cont_frac(a, x, log_x);
  const double q = std::min(std::exp(s.log_value), 1.0);
  return {1.0 - q, q * s.rel_err + detail::kEps};
}

// P(a, x) = gamma(a, x) / Gamma(a).
inline double reg_inc_gamma(double a, double x) { return evaluate_reg_inc_gamma(a, x).value; }

// Q(a, x) = 1 - P(a, x), accurate in the upper tail.
inline double reg_inc_gamma_upper(double a, double x) {
  detail::check_shape(a, "reg_inc_gamma_upper");
  if (!(x >= 0.0) || std::isnan(x)) throw DomainError("reg_inc_gamma_upper: x must be nonnegative");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  return gamma_levels_at_log(a, std::log(x)).upper;
}

// dP(a, x)/da at x = exp(log_x), by central difference with
// h = max(1e-5 a, 1e-7). The stencil evaluates whichever tail is small at the
// centre so the difference does not cancel against 1.
inline double d_reg_inc_gamma_da_at_log(double a, double log_x) {
  detail::check_shape(a, "d_reg_inc_gamma_da");
  if (std::isnan(log_x)) throw DomainError("d_reg_inc_gamma_da: x must be positive");
  if (std::isinf(log_x)) return 0.0;
  double h = std::max(1e-5 * a, 1e-7);
  if (a - h <= 0.0) h = 0.5 * a;
  const double x = std::exp(log_x);
  if (detail::use_series(a, x)) {
    const double plus = std::exp(detail::log_lower_series(a + h, x, log_x).log_value);
    const double minus = std::exp(detail::log_lower_series(a - h, x, log_x).log_value);
    return (plus - minus) / (2.0 * h);
  }
  const double plus = std::exp(detail::log_upper_cont_frac(a + h, x, log_x).log_value);
  const double minus = std::exp(detail::log_upper_cont_frac(a - h, x, log_x).log_value);
  return -(plus - minus) / (2.0 * h);
}

inline double d_reg_inc_gamma_da(double a, double x) {
  if (!(x > 0.0) || std::isnan(x)) throw DomainError("d_reg_inc_gamma_da: x must be positive");
  return d_reg_inc_gamma_da_at_log(a, std::log(x));
}

// log of x * gamma_pdf(x; a), i.e. dP/d(log x).
inline double log_gamma_pdf_times_x(double a, double log_x) {
  detail::check_shape(a, "gamma_pdf");
  return detail::log_prefactor(a, std::exp(log_x), log_x);
}

// Quantile of Gamma(a, 1) in log space: returns log x with P(a, x) = levels.lower
// (equivalently Q(a, x) = levels.upper). The smaller tail drives the solve.
inline double gamma_log_quantile(double a, GammaLevels levels) {
  detail::check_shape(a, "gamma_log_quantile");
  const bool lower_side = levels.lower <= levels.upper;
  const double target = lower_side ? levels.lower : levels.upper;
  if (!(target > 0.0) || !(target <= 0.5 + 1e-12)) {
    throw DomainError("gamma_log_quantile: levels must lie strictly inside (0, 1)");
  }
  const double log_target = std::log(target);

  // F is increasing in t = log x; F' = D / tail with D = x * pdf(x).
  auto eval = [&](double t, double& slope) {
    const double x = std::exp(t);
    const auto lv = detail::log_levels(a, x, t);
    const double log_d = detail::log_prefactor(a, x, t);
    if (lower_side) {
      slope = std::exp(log_d - lv.log_lower);
      return lv.log_lower - log_target;
    }
    slope = std::exp(log_d - lv.log_upper);
    return log_target - lv.log_upper;
  };

  double t = lower_side ? (log_target + log_gamma(a + 1.0)) / a
                        : std::log(std::max(a, 1.0) - log_target);
  t = std::clamp(t, -1e300, 700.0);
  double slope = 0.0;
  double f = eval(t, slope);
  double lo = t, hi = t;
  double f_lo = f, f_hi = f;
  for (double step = 1.0; f_lo > 0.0; step *= 2.0) {
    lo -= step * std::max(1.0, std::abs(lo) * 0.5);
    f_lo = eval(lo, slope);
  }
  for (double step = 1.0; f_hi < 0.0 && hi < 700.0; step *= 2.0) {
    hi = std::min(700.0, hi + step);
    f_hi = eval(hi, slope);
  }
  f = eval(t, slope);
  for (int iter = 0; iter < 400; ++iter) {
    if (f == 0.0) return t;
    if (f < 0.0) lo = t; else hi = t;
    double next = t - f / slope;
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    const double tol = 4.0 * detail::kEps * std::max(1.0, std::abs(next));
    if (std::abs(next - t) <= tol || hi - lo <= tol) return next;
    t = next;
    f = eval(t, slope);
  }
  return t;
}

}  // namespace dirmoe::specfun
