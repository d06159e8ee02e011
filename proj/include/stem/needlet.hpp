#pragma once

#include "stem/harmonic.hpp"
#include "stem/sky.hpp"

namespace stem {

/// Mexican needlet family: window b(u; p) = u^(2p) exp(-u^2) evaluated at
/// u = ell / B^j.
struct NeedletParams {
    double B = 1.2;
    int j = 1;
    int p = 1;

    double scale() const;  // B^j
};

/// Window values below this fraction of the in-band maximum are dropped, so
/// filtered coefficient sets are finite and reproducible.
inline constexpr double kWindowCut = 1e-8;

/// One sky filtered at scale j: y = beta + mu coefficient-wise, and
/// sigma_beta^2 is the exact filtered noise variance under the spectrum.
struct FilteredSky {
    NeedletParams params;
    AlmSet beta_alm;   // filtered noise
    AlmSet mu_alm;     // filtered signal
    AlmSet y_alm;      // filtered total
    double sigma_beta = 0.0;
};

/// b(ell / B^j; p).
double window(int ell, const NeedletParams& params);

/// Multiplies coefficients by the window and truncates the band where the
/// window falls below kWindowCut times its in-band maximum.
AlmSet filter_alm(const AlmSet& alm, const NeedletParams& params);

/// Real-space filter kernel Psi_j(theta) = sum_l b(l/B^j) (2l+1)/(4pi) P_l(cos theta),
/// truncated like filter_alm.
double kernel_psi(double theta, const NeedletParams& params, int ell_max);

/// Closed-form high-frequency approximation of Psi_j for p = 1:
/// g(theta) = B^(2j)/(4pi) exp(-B^(2j) theta^2 / 4) (1 - B^(2j) theta^2 / 4).
double kernel_approx_g(double theta, const NeedletParams& params);

/// Gaussian-tail envelope c_p B^(2j) exp(-B^(2j) theta^2/4) (1 + |He_2p(B^j theta)|)
/// with He the probabilists' Hermite polynomials.
double localization_bound(double theta, const NeedletParams& params, double c_p);

/// Var(beta_j) = sum_l b^2(l/B^j) C_l (2l+1)/(4pi) over the tabulated band.
/// A spectrum carrying a model tag claims validity beyond its table; if the
/// window has relative mass above 1e-6 outside the table the sum would be
/// materially wrong and a CoverageError is raised.  A bare table is taken as
/// an exactly band-limited model and always sums exactly.
double filtered_variance(const PowerSpectrum& spectrum, const NeedletParams& params);

/// Filters noise, signal and total of one sky and records sigma_beta.
FilteredSky filter_sky(const SkyRealization& sky, const NeedletParams& params);

/// Divides all coefficient sets by sigma_beta so the noise has unit variance.
FilteredSky normalize(const FilteredSky& filtered);

} // namespace stem
