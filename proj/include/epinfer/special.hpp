#pragma once

#include <span>

namespace epinfer {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267793994605993438;

/// Standard normal CDF.
double probit(double z);

/// log of the standard normal CDF, accurate far into the lower tail.
double log_probit(double z);

/// N(z; 0, 1) / probit(z). The naive quotient is used for z > -30; below that a
/// continued fraction for the Mills ratio keeps full relative precision.
double probit_ratio(double z);

double log_normal_pdf(double y, double mean, double variance);

/// log(exp(a) + exp(b)) with -inf handled.
double log_add(double a, double b);

double log_sum_exp(std::span<const double> values);

}  // namespace epinfer
