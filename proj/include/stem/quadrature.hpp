#pragma once

#include <functional>

namespace stem {

/// Adaptive Gauss-Kronrod integral of f over the finite interval [a, b] to
/// the given absolute tolerance.  Throws std::runtime_error when the
/// requested accuracy cannot be certified.
double integrate(const std::function<double(double)>& f,
                 double a,
                 double b,
                 double abs_tol = 1e-10);

} // namespace stem
