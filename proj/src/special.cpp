#include "epinfer/special.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace epinfer {

namespace {

constexpr double kSqrt1_2 = 0.70710678118654752440084436210485;
constexpr double kTailCutoff = -30.0;

// Mills ratio R(t) = Phi(-t) / N(t) for t >= 30 by backward evaluation of
//   R(t) = 1 / (t + 1 / (t + 2 / (t + 3 / (t + ...))))
// 120 levels reach double precision for t >= 30.
double mills_ratio_large(double t) {
    double tail = t;
    for (int k = 120; k >= 1; --k) {
        tail = t + k / tail;
    }
    return 1.0 / tail;
}

}  // namespace

double probit(double z) { return 0.5 * std::erfc(-z * kSqrt1_2); }

double log_probit(double z) {
    if (z > kTailCutoff) {
        return std::log(probit(z));
    }
    const double t = -z;
    return -0.5 * z * z - 0.5 * kLog2Pi + std::log(mills_ratio_large(t));
}

double probit_ratio(double z) {
    if (z > kTailCutoff) {
        return kInvSqrt2Pi * std::exp(-0.5 * z * z) / probit(z);
    }
    return 1.0 / mills_ratio_large(-z);
}

double log_normal_pdf(double y, double mean, double variance) {
    const double r = y - mean;
    return -0.5 * (kLog2Pi + std::log(variance) + r * r / variance);
}

double log_add(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    const double hi = std::max(a, b);
    const double lo = std::min(a, b);
    return hi + std::log1p(std::exp(lo - hi));
}

double log_sum_exp(std::span<const double> values) {
    if (values.empty()) return -std::numeric_limits<double>::infinity();
    const double hi = *std::max_element(values.begin(), values.end());
    if (!std::isfinite(hi)) return hi;
    double acc = 0.0;
    for (double v : values) acc += std::exp(v - hi);
    return hi + std::log(acc);
}

}  // namespace epinfer
