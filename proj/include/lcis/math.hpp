#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lcis/error.hpp"

namespace lcis {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kLogTwoPi = 1.8378770664093454836;
// Variances below this are treated as point masses.
inline constexpr double kDegenerateVariance = 1e-300;

// Neumaier compensated summation; keeps weight sums accurate to ~1 ulp
// even over millions of terms.
class KahanSum {
public:
    void add(double x) {
        double t = sum_ + x;
        if (!std::isfinite(t)) {  // compensation is meaningless past an overflow or -inf
            sum_ = t;
            c_ = 0.0;
            return;
        }
        if (std::abs(sum_) >= std::abs(x))
            c_ += (sum_ - t) + x;
        else
            c_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + c_; }

private:
    double sum_ = 0.0;
    double c_ = 0.0;
};

inline double compensated_sum(std::span<const double> xs) {
    KahanSum s;
    for (double x : xs) s.add(x);
    return s.value();
}

inline double logsumexp(std::span<const double> xs) {
    double m = kNegInf;
    for (double x : xs) m = std::max(m, x);
    if (!std::isfinite(m)) return m;  // all -inf (or a stray +inf propagates)
    KahanSum s;
    for (double x : xs) s.add(std::exp(x - m));
    return m + std::log(s.value());
}

inline double logsumexp2(double a, double b) {
    double m = std::max(a, b);
    if (!std::isfinite(m)) return m;
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline double logistic(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

// log(logistic(x)), stable for large |x|.
inline double log_sigmoid(double x) {
    if (x >= 0.0) return -std::log1p(std::exp(-x));
    return x - std::log1p(std::exp(x));
}

inline double log_bernoulli_logit(int result, double logit) {
    return result ? log_sigmoid(logit) : log_sigmoid(-logit);
}

inline double log_normal_pdf(double x, double mean, double var) {
    require_valid(var > 0.0 && std::isfinite(var), "log_normal_pdf: variance must be positive");
    double z = x - mean;
    return -0.5 * (kLogTwoPi + std::log(var) + z * z / var);
}

inline double log_beta_pdf(double x, double a, double b) {
    if (!(x > 0.0 && x < 1.0)) return kNegInf;
    return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x)
        + std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
}

// Inverse-gamma with shape a, scale b: density ∝ x^{-(a+1)} exp(-b/x).
inline double log_inv_gamma_pdf(double x, double a, double b) {
    if (!(x > 0.0)) return kNegInf;
    return a * std::log(b) - std::lgamma(a) - (a + 1.0) * std::log(x) - b / x;
}

inline double normal_cdf(double x, double mean = 0.0, double sd = 1.0) {
    return 0.5 * std::erfc(-(x - mean) / (sd * std::sqrt(2.0)));
}

inline double mean_of(std::span<const double> xs) {
    if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
    return compensated_sum(xs) / static_cast<double>(xs.size());
}

inline double variance_of(std::span<const double> xs) {
    if (xs.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    double m = mean_of(xs);
    KahanSum s;
    for (double x : xs) s.add((x - m) * (x - m));
    return s.value() / static_cast<double>(xs.size() - 1);
}

// Empirical q-quantile, nearest-rank convention on sorted data.
inline double quantile_nearest_rank(std::vector<double> xs, double q) {
    require_valid(!xs.empty(), "quantile: empty sample");
    require_valid(q >= 0.0 && q <= 1.0, "quantile: q outside [0,1]");
    std::sort(xs.begin(), xs.end());
    auto n = static_cast<double>(xs.size());
    auto rank = static_cast<std::size_t>(std::ceil(q * n));
    if (rank == 0) rank = 1;
    if (rank > xs.size()) rank = xs.size();
    return xs[rank - 1];
}

// Shortest round-trip decimal form; identical doubles always format to
// identical bytes, so seeded reruns produce byte-identical text artifacts.
inline std::string format_double(double x) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    (void)ec;
    return std::string(buf, ptr);
}

}  // namespace lcis
