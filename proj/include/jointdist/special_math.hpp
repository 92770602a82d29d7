#pragma once

namespace jointdist {

// Scalar special functions shared by the expression evaluator, the density
// formulas, and the reference oracles in tests.

double softplus(double x);
double softplus_inverse(double y);
double sigmoid(double x);

/// Logarithmic derivative of the gamma function. Recurrence below 6,
/// asymptotic series above; accurate to better than 1e-12 for x >= 1e-3.
double digamma(double x);

/// Derivative of digamma, same scheme.
double trigamma(double x);

}  // namespace jointdist
