#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <optional>
#include <vector>

#include "stem/rng.hpp"
#include "stem/sphere.hpp"

namespace stem {

/// Power-law description C_ell = g0 * ell^(-gamma) attached to a spectrum
/// when the generating model is known.
struct SpectralModel {
    double gamma = 0.0;
    double g0 = 0.0;
};

/// Angular power spectrum tabulated for ell = 0..ell_max().  When `model` is
/// set the table is a finite window onto that power law; without it the table
/// itself defines a (band-limited) model.
struct PowerSpectrum {
    std::vector<double> c_ell;
    std::optional<SpectralModel> model;

    int ell_max() const { return static_cast<int>(c_ell.size()) - 1; }

    /// Tabulates C_ell = g0 * ell^(-gamma) for 1 <= ell <= ell_max; the
    /// monopole carries no power.
    static PowerSpectrum power_law(double gamma, double g0, int ell_max);

    /// Copy of the table up to new_ell_max with the model tag dropped: the
    /// result is exactly the band-limited spectrum it tabulates.
    PowerSpectrum truncated(int new_ell_max) const;
};

/// Spherical-harmonic coefficients for m >= 0 of a real field (negative m
/// follow from conjugation).  Storage is m-major with ell contiguous.
struct AlmSet {
    int ell_max = 0;
    std::vector<std::complex<double>> coef;

    AlmSet() = default;
    explicit AlmSet(int band_limit)
        : ell_max(band_limit),
          coef(static_cast<std::size_t>(band_limit + 1) * (band_limit + 2) / 2) {}

    std::size_t index(int ell, int m) const {
        // Block for order m starts after the m earlier blocks of sizes
        // (L+1), (L), ..., (L+2-m).
        const std::size_t L = static_cast<std::size_t>(ell_max);
        const std::size_t mm = static_cast<std::size_t>(m);
        return mm * (L + 1) - mm * (mm - 1) / 2 + (static_cast<std::size_t>(ell) - mm);
    }
    std::complex<double>& at(int ell, int m) { return coef[index(ell, m)]; }
    const std::complex<double>& at(int ell, int m) const { return coef[index(ell, m)]; }
};

/// Pixelized scalar field with optional covariant frame derivatives in the
/// orthonormal polar frame E1 = d/dtheta, E2 = (1/sin theta) d/dphi.
/// deriv_order 1 fills d1 = E1 f and d2 = E2 f; deriv_order 2 additionally
/// fills the iterated frame second derivatives
///   d11 = E1(E1 f),  d12 = E1(E2 f),  d22 = E2(E2 f).
struct FieldMaps {
    SphereGrid grid;
    int deriv_order = 0;
    std::vector<double> f;
    std::vector<double> d1, d2;
    std::vector<double> d11, d12, d22;
};

/// P_ell(u) and its u-derivatives up to `order` (0..4), exact at u = +-1.
std::array<double, 5> legendre_eval(int ell, double u, int order);

/// Sums S_k = sum_ell w[ell] * d^k/du^k P_ell(u) for k = 0..order (<= 4) in a
/// single streamed recurrence over ell.
std::array<double, 5> weighted_legendre_sums(const std::vector<double>& weights,
                                             double u,
                                             int order);

/// Draws one Gaussian realization of the spectrum: a_{ell,0} real N(0, C_ell);
/// for m >= 1 real and imaginary parts independent N(0, C_ell / 2).  Draw
/// order is ell-major then m, making the stream reproducible from the seed.
AlmSet sample_alm(const PowerSpectrum& spectrum, int ell_max, Rng& rng);

/// Synthesizes the field (and derivatives up to deriv_order in {0,1,2}) on
/// the grid.  Requires alm.ell_max <= grid.ell_max.
FieldMaps synthesize(const AlmSet& alm, const SphereGrid& grid, int deriv_order);

/// Projects a pixelized field back onto coefficients up to ell_max.  Exact
/// (to roundoff) for fields band-limited within the grid's quadrature.
AlmSet analyze(const FieldMaps& maps, int ell_max);

/// Evaluates the field described by alm at arbitrary points.
std::vector<double> evaluate_at_points(const AlmSet& alm,
                                       const std::vector<SpherePoint>& points);

/// Empirical per-ell power: (|a_{l0}|^2 + 2 sum_{m>=1} |a_{lm}|^2) / (2l+1).
std::vector<double> power_spectrum_of(const AlmSet& alm);

/// Coefficients of a rotationally symmetric profile centered at xi, given its
/// per-degree weights: a_lm = weight[ell] conj(Y_lm(xi)).  By the addition
/// theorem the synthesized map is sum_l weight[l] (2l+1)/(4 pi) P_l(<xi, x>).
AlmSet point_source_alm(const SpherePoint& xi, const std::vector<double>& weight_per_ell);

} // namespace stem
