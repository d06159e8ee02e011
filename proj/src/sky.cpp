#include "stem/sky.hpp"

#include <cmath>

#include "stem/errors.hpp"

namespace stem {

namespace {

std::vector<double> heat_kernel_weights(double t, int ell_max) {
    std::vector<double> w(ell_max + 1, 0.0);
    for (int ell = 0; ell <= ell_max; ++ell) {
        const double v = std::exp(-static_cast<double>(ell) * (ell + 1) * t);
        if (v < kHeatKernelCut) break;  // monotone decreasing in ell
        w[ell] = v;
    }
    return w;
}

} // namespace

AlmSet heat_kernel_alm(const SpherePoint& xi, double t, int ell_max) {
    if (!(t > 0.0)) throw DomainError("heat_kernel_alm: t must be positive");
    if (ell_max < 0) throw DomainError("heat_kernel_alm: ell_max must be non-negative");
    return point_source_alm(xi, heat_kernel_weights(t, ell_max));
}

SourceCatalog generate_catalog(std::size_t n,
                               double rho,
                               double a_max,
                               double t_n,
                               Rng& rng,
                               std::size_t max_attempts) {
    if (!(rho > 0.0)) throw DomainError("generate_catalog: rho must be positive");
    if (!(a_max > 0.0)) throw DomainError("generate_catalog: a_max must be positive");
    if (!(t_n > 0.0)) throw DomainError("generate_catalog: t_n must be positive");
    if (n > 0 && static_cast<double>(n) * cap_area(rho) >= 4.0 * M_PI) {
        throw PackingError("generate_catalog: n caps of radius rho exceed the sphere");
    }
    if (max_attempts == 0) max_attempts = 100 * n;

    SourceCatalog catalog;
    catalog.t_n = t_n;
    catalog.rho = rho;
    catalog.sources.reserve(n);

    std::size_t attempts = 0;
    while (catalog.sources.size() < n) {
        if (attempts >= max_attempts) {
            throw PackingError("generate_catalog: attempt budget exhausted "
                               "before reaching the requested separation");
        }
        ++attempts;
        const double z = rng.uniform(-1.0, 1.0);
        const double phi = rng.uniform(0.0, 2.0 * M_PI);
        const SpherePoint candidate = make_point(std::acos(z), phi);
        bool ok = true;
        for (const auto& s : catalog.sources) {
            if (geodesic_distance(candidate, s.xi) <= rho) {
                ok = false;
                break;
            }
        }
        if (!ok) continue;
        // uniform on (0, a_max]: 1 - U with U uniform on [0, 1)
        const double amplitude = a_max * (1.0 - rng.uniform());
        catalog.sources.push_back({candidate, amplitude});
    }
    return catalog;
}

AlmSet build_signal_alm(const SourceCatalog& catalog, int ell_max) {
    if (ell_max < 0) throw DomainError("build_signal_alm: ell_max must be non-negative");
    AlmSet sum(ell_max);
    if (catalog.sources.empty()) return sum;
    const std::vector<double> weights = heat_kernel_weights(catalog.t_n, ell_max);
    for (const auto& s : catalog.sources) {
        const AlmSet one = point_source_alm(s.xi, weights);
        for (std::size_t i = 0; i < sum.coef.size(); ++i) {
            sum.coef[i] += s.amplitude * one.coef[i];
        }
    }
    return sum;
}

SkyRealization compose_sky(const PowerSpectrum& spectrum,
                           const SourceCatalog& catalog,
                           int ell_max,
                           Rng& rng) {
    SkyRealization sky;
    sky.noise_alm = sample_alm(spectrum, ell_max, rng);
    sky.signal_alm = build_signal_alm(catalog, ell_max);
    sky.y_alm = AlmSet(ell_max);
    for (std::size_t i = 0; i < sky.y_alm.coef.size(); ++i) {
        sky.y_alm.coef[i] = sky.noise_alm.coef[i] + sky.signal_alm.coef[i];
    }
    sky.catalog = catalog;
    sky.spectrum = spectrum;
    return sky;
}

AlmSet apply_beam(const AlmSet& alm, double fwhm) {
    if (!(fwhm >= 0.0)) throw DomainError("apply_beam: fwhm must be non-negative");
    const double sigma_b = fwhm / std::sqrt(8.0 * std::log(2.0));
    AlmSet out = alm;
    for (int ell = 0; ell <= alm.ell_max; ++ell) {
        const double damp = std::exp(-0.5 * static_cast<double>(ell) * (ell + 1) * sigma_b * sigma_b);
        for (int m = 0; m <= ell; ++m) out.at(ell, m) *= damp;
    }
    return out;
}

double validate_scaling(double t_n, double B, int j) {
    if (!(t_n > 0.0) || !(B > 1.0) || j < 0) {
        throw DomainError("validate_scaling: need t_n > 0, B > 1, j >= 0");
    }
    return t_n * std::pow(B, 2.0 * j);
}

} // namespace stem
