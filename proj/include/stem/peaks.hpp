#pragma once

#include "stem/needlet.hpp"

namespace stem {

/// Spectral moments of one filtered scale.  All entries are exact finite sums
/// over the tabulated band; the closed-form large-scale limits are exposed
/// only through cp2n() for cross-checks.
struct MomentSet {
    double b2 = 0.0;        // sum of l(l+1) weighted by the normalized filtered spectrum
    double b4 = 0.0;        // same with l^2(l+1)^2
    double b6 = 0.0;        // same with l^3(l+1)^3; kept for the short-range Taylor coefficient
    double var_beta = 0.0;  // unnormalized filtered variance
    double c_prime = 0.0;   // b2 / 2
    double c_dprime = 0.0;  // (b4 - 2 b2) / 8
    double kappa1 = 0.0;    // c_prime / c_dprime
    double kappa2 = 0.0;    // c_prime^2 / c_dprime
};

/// Curvature parameters of the unit-variance filtered field together with the
/// total density of local maxima per steradian.
struct HeightModel {
    double kappa1 = 0.0;
    double kappa2 = 0.0;
    double r_total = 0.0;  // 1/(4 pi) + 1/(2 pi kappa1 sqrt(3 + kappa1))
};

/// Quantile of the peak-height distribution.  The flags mark requests that
/// saturate the working bracket [-12, 40]: the tail function is computed to
/// absolute tolerance 1e-10, so probabilities closer than that to 0 or 1
/// pin the result to a bracket edge instead of resolving further.
struct Quantile {
    double u = 0.0;
    bool at_lower_bound = false;
    bool at_upper_bound = false;
};

/// Closed-form detection thresholds in the high-frequency regime.
struct AsymptoticThresholds {
    double u_bh = 0.0;    // sqrt(2 log(B^(2j) / n_sources))
    double u_fwer = 0.0;  // 2 sqrt(j log B)
};

/// Covariance entries of (field, gradient, Hessian) at two points a geodesic
/// angle phi apart, each a Legendre-derivative sum weighted by the normalized
/// filtered spectrum.  Entries not listed here are zero or phi-independent
/// combinations of the moments.
struct CovarianceBlocks {
    double phi = 0.0;
    double rho_c = 0.0;   // field-field correlation, 1 at phi = 0
    double eps = 0.0;     // field-gradient element, carries a sin(phi) factor
    double delta = 0.0;   // field-Hessian element, cos(phi) weighted
    double alpha1 = 0.0;  // gradient-gradient elements
    double alpha2 = 0.0;
    double beta1 = 0.0;   // gradient-Hessian elements
    double beta2 = 0.0;
    double beta3 = 0.0;
    double gamma1 = 0.0;  // Hessian-Hessian elements
    double gamma2 = 0.0;
    double gamma3 = 0.0;
    double gamma4 = 0.0;
};

/// (g0 / 2 pi) * 2^(gamma/2 - 2 - n - 2p) * Gamma(1 - gamma/2 + n + 2p):
/// the 2n-th filtered spectral moment per B^(2nj) in the high-frequency
/// limit of a power-law spectrum.  Requires the Gamma argument positive.
double cp2n(double gamma, int p, int n, double g0);

/// Exact finite-sum moments of the filtered field.  Applies the same
/// band-coverage policy as filtered_variance and caches results keyed by
/// (spectrum digest, params).  Throws DegenerateModelError when the band is
/// so narrow that the curvature parameters degenerate.
MomentSet moments(const PowerSpectrum& spectrum, const NeedletParams& params);

/// Builds the height model from exact moments, or directly from curvature
/// parameters.  Validates kappa1 > 0, kappa2 > 0, and the square-root
/// domain guards 2 + kappa1 - kappa2 > 0 and 3 + kappa1 - kappa2 > 0.
HeightModel height_model(const MomentSet& m);
HeightModel height_model(double kappa1, double kappa2);

/// Density of the height of a local maximum of the unit-variance filtered
/// field, evaluated exactly as the displayed three-term expression.
double height_density(double x, const HeightModel& model);

/// Right tail F(u) of height_density: adaptive quadrature over [u, u + 40]
/// with absolute tolerance 1e-10.  The density decays like a Gaussian, so
/// the fixed window is exhaustive for thresholds of practical size.
double height_tail_F(double u, const HeightModel& model);

/// Solves F(u) = p by bisection on [-12, 40] to |F(u) - p| < 1e-10.
/// Requires p in (0, 1); requests beyond the bracket's resolving power
/// return the corresponding edge with its boundary flag set.
Quantile invert_F(double p, const HeightModel& model);

/// Expected number of local maxima per steradian: r_total, and its
/// above-threshold restriction F(u) * r_total.
double peak_density_rj(const HeightModel& model);
double peak_density_rju(double u, const HeightModel& model);

/// Expected count of noise peaks above u outside n_sources exclusion caps of
/// radius rho: [4 pi - n * cap_area(rho)] * F(u) * r_total.  The exponentially
/// small remainder of the underlying expansion is dropped.
double expected_null_count(double u, double rho, int n_sources, const HeightModel& model);

/// Leading-order bound on the false discovery proportion at fixed threshold
/// u, and on the false discovery rate of the adaptive procedure at level
/// alpha.  Both drop their vanishing remainder terms.
double fdp_bound(double u, double rho, int n_sources, const HeightModel& model);
double fdr_bound(double alpha, double rho, int n_sources, const HeightModel& model);

/// Closed-form high-frequency thresholds.  Requires B^(2j) > n_sources >= 1.
AsymptoticThresholds asymptotic_thresholds(double B, int j, int n_sources);

/// Asymptotic adaptive threshold: the quantile of
/// alpha * n / (n + (1 - alpha) * A * r_total) with A the null-region area.
/// n_sources = 0 degenerates to the upper bracket edge, flagged.
Quantile bh_star_threshold(double alpha, double rho, int n_sources, const HeightModel& model);

/// All distinct covariance entries at separation phi in [0, pi], computed
/// with Legendre derivative sums of orders 0..4.  Applies the same spectrum
/// coverage policy as filtered_variance.
CovarianceBlocks covariance_blocks(double phi,
                                   const PowerSpectrum& spectrum,
                                   const NeedletParams& params);

} // namespace stem
