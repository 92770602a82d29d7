#include "jointdist/special_math.hpp"

#include <cmath>

namespace jointdist {

double softplus(double x) {
    // log(1 + e^x), stable on both tails.
    if (x > 35.0) return x;
    if (x < -35.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
    // x with log(1 + e^x) = y, i.e. log(e^y - 1) = y + log(1 - e^-y).
    return y + std::log(-std::expm1(-y));
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double digamma(double x) {
    double result = 0.0;
    while (x < 8.0) {
        result -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    // psi(x) ~ ln x - 1/(2x) - sum B_2n / (2n x^(2n))
    const double series =
        inv2 * (1.0 / 12.0 -
                inv2 * (1.0 / 120.0 -
                        inv2 * (1.0 / 252.0 -
                                inv2 * (1.0 / 240.0 -
                                        inv2 * (1.0 / 132.0 - inv2 * 691.0 / 32760.0)))));
    return result + std::log(x) - 0.5 * inv - series;
}

double trigamma(double x) {
    double result = 0.0;
    while (x < 8.0) {
        result += 1.0 / (x * x);
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    // psi'(x) ~ 1/x + 1/(2x^2) + sum B_2n / x^(2n+1)
    const double series =
        inv * (1.0 +
               inv * (0.5 +
                      inv * (1.0 / 6.0 -
                             inv2 * (1.0 / 30.0 -
                                     inv2 * (1.0 / 42.0 -
                                             inv2 * (1.0 / 30.0 -
                                                     inv2 * (5.0 / 66.0 -
                                                             inv2 * 691.0 / 2730.0)))))));
    return result + series;
}

}  // namespace jointdist
