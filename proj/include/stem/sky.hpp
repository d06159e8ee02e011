#pragma once

#include <cstdint>
#include <vector>

#include "stem/harmonic.hpp"
#include "stem/rng.hpp"
#include "stem/sphere.hpp"

namespace stem {

/// One point source: a unit-mass heat-kernel profile at xi scaled by amplitude.
struct Source {
    SpherePoint xi;
    double amplitude = 0.0;
};

/// Deterministic source layout for one sky: positions with a minimum pairwise
/// geodesic separation of rho, amplitudes, and the shared kernel width t_n.
struct SourceCatalog {
    std::vector<Source> sources;
    double t_n = 0.0;
    double rho = 0.0;
    std::uint64_t seed = 0;

    std::size_t size() const { return sources.size(); }
};

/// Signal-plus-noise sky in harmonic space: y = noise + signal coefficient-wise.
struct SkyRealization {
    AlmSet noise_alm;
    AlmSet signal_alm;
    AlmSet y_alm;
    SourceCatalog catalog;
    PowerSpectrum spectrum;
};

/// Kernel degrees with exp(-l(l+1)t) below this threshold are dropped.
inline constexpr double kHeatKernelCut = 1e-12;

/// validate_scaling ratios above this value deserve a warning: the filter no
/// longer dominates the source width.
inline constexpr double kScalingWarnThreshold = 0.1;

/// Band-limited heat kernel centered at xi: a_lm = exp(-l(l+1)t) conj(Y_lm(xi)).
/// The synthesized profile has unit mass before truncation.
AlmSet heat_kernel_alm(const SpherePoint& xi, double t, int ell_max);

/// Draws n positions uniformly, rejecting any draw closer than rho to an
/// accepted source, with amplitudes i.i.d. uniform on (0, a_max].
/// max_attempts bounds the total number of position draws (0 means 100 n).
SourceCatalog generate_catalog(std::size_t n,
                               double rho,
                               double a_max,
                               double t_n,
                               Rng& rng,
                               std::size_t max_attempts = 0);

/// Coefficients of mu = sum_k a_k h(., t_n, xi_k).
AlmSet build_signal_alm(const SourceCatalog& catalog, int ell_max);

/// Samples noise from the spectrum and adds the catalog signal.
SkyRealization compose_sky(const PowerSpectrum& spectrum,
                           const SourceCatalog& catalog,
                           int ell_max,
                           Rng& rng);

/// Gaussian beam smoothing: a_lm *= exp(-l(l+1) sigma_b^2 / 2) with
/// sigma_b = fwhm / sqrt(8 ln 2).
AlmSet apply_beam(const AlmSet& alm, double fwhm);

/// Ratio t_n B^(2j) comparing source width to filter width; callers should
/// warn above kScalingWarnThreshold.
double validate_scaling(double t_n, double B, int j);

} // namespace stem
