#include "stem/needlet.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "stem/errors.hpp"

namespace stem {

namespace {

void check_params(const NeedletParams& params) {
    if (!(params.B > 1.0)) throw DomainError("needlet: B must exceed 1");
    if (params.j < 1) throw DomainError("needlet: j must be at least 1");
    if (params.p < 1) throw DomainError("needlet: p must be at least 1");
}

void check_model_compatibility(const PowerSpectrum& spectrum, const NeedletParams& params) {
    if (spectrum.model && !(spectrum.model->gamma < 4.0 * params.p + 2.0)) {
        throw DomainError("needlet: spectral slope gamma must be below 4p + 2 "
                          "for the filtered field to decorrelate");
    }
}

double window_value(double u, int p) {
    if (u == 0.0) return 0.0;
    return std::pow(u, 2 * p) * std::exp(-u * u);
}

/// In-band window values with the relative truncation applied; last_nonzero
/// is -1 when the whole band is cut.
std::vector<double> window_weights(int ell_max, const NeedletParams& params, int& last_nonzero) {
    const double scale = params.scale();
    std::vector<double> w(ell_max + 1, 0.0);
    double w_max = 0.0;
    for (int ell = 0; ell <= ell_max; ++ell) {
        w[ell] = window_value(ell / scale, params.p);
        w_max = std::max(w_max, w[ell]);
    }
    last_nonzero = -1;
    const double cut = kWindowCut * w_max;
    for (int ell = 0; ell <= ell_max; ++ell) {
        if (w[ell] < cut) {
            w[ell] = 0.0;
        } else {
            last_nonzero = ell;
        }
    }
    return w;
}

/// |He_q(x)| for the probabilists' Hermite polynomial of even degree q.
double hermite_abs(int q, double x) {
    double hm1 = 1.0;  // He_0
    if (q == 0) return 1.0;
    double h = x;      // He_1
    for (int k = 1; k < q; ++k) {
        const double next = x * h - k * hm1;
        hm1 = h;
        h = next;
    }
    return std::fabs(h);
}

} // namespace

double NeedletParams::scale() const { return std::pow(B, j); }

double window(int ell, const NeedletParams& params) {
    check_params(params);
    if (ell < 0) throw DomainError("window: ell must be non-negative");
    return window_value(ell / params.scale(), params.p);
}

AlmSet filter_alm(const AlmSet& alm, const NeedletParams& params) {
    check_params(params);
    int last = -1;
    const std::vector<double> w = window_weights(alm.ell_max, params, last);
    AlmSet out(std::max(last, 0));
    for (int m = 0; m <= out.ell_max; ++m) {
        for (int ell = m; ell <= out.ell_max; ++ell) {
            out.at(ell, m) = w[ell] * alm.at(ell, m);
        }
    }
    return out;
}

double kernel_psi(double theta, const NeedletParams& params, int ell_max) {
    check_params(params);
    if (!(theta >= 0.0 && theta <= M_PI)) throw DomainError("kernel_psi: theta outside [0, pi]");
    if (ell_max < 0) throw DomainError("kernel_psi: ell_max must be non-negative");
    int last = -1;
    std::vector<double> w = window_weights(ell_max, params, last);
    for (int ell = 0; ell <= ell_max; ++ell) {
        w[ell] *= (2.0 * ell + 1.0) / (4.0 * M_PI);
    }
    return weighted_legendre_sums(w, std::cos(theta), 0)[0];
}

double kernel_approx_g(double theta, const NeedletParams& params) {
    check_params(params);
    if (params.p != 1) {
        throw UnsupportedOrderError("kernel_approx_g: closed form only covers p = 1");
    }
    if (!(theta >= 0.0 && theta <= M_PI)) {
        throw DomainError("kernel_approx_g: theta outside [0, pi]");
    }
    const double b2j = params.scale() * params.scale();
    const double q = b2j * theta * theta / 4.0;
    return b2j / (4.0 * M_PI) * std::exp(-q) * (1.0 - q);
}

double localization_bound(double theta, const NeedletParams& params, double c_p) {
    check_params(params);
    if (!(theta >= 0.0)) throw DomainError("localization_bound: theta must be non-negative");
    const double scale = params.scale();
    const double b2j = scale * scale;
    return c_p * b2j * std::exp(-b2j * theta * theta / 4.0) *
           (1.0 + hermite_abs(2 * params.p, scale * theta));
}

double filtered_variance(const PowerSpectrum& spectrum, const NeedletParams& params) {
    check_params(params);
    check_model_compatibility(spectrum, params);
    const int L = spectrum.ell_max();
    const double scale = params.scale();

    if (spectrum.model) {
        // Window mass in and out of the table, b^2-weighted like the sum.
        double in_band = 0.0;
        for (int ell = 0; ell <= L; ++ell) {
            const double b = window_value(ell / scale, params.p);
            in_band += b * b * (2.0 * ell + 1.0);
        }
        double out_band = 0.0;
        for (int ell = L + 1; ell / scale < 8.0; ++ell) {
            const double b = window_value(ell / scale, params.p);
            out_band += b * b * (2.0 * ell + 1.0);
        }
        if (out_band > 1e-6 * (in_band + out_band)) {
            throw CoverageError("filtered_variance: spectrum table ends inside the "
                                "window support; extend the table or truncate the model");
        }
    }

    double var = 0.0;
    for (int ell = 0; ell <= L; ++ell) {
        const double b = window_value(ell / scale, params.p);
        var += b * b * spectrum.c_ell[ell] * (2.0 * ell + 1.0) / (4.0 * M_PI);
    }
    return var;
}

FilteredSky filter_sky(const SkyRealization& sky, const NeedletParams& params) {
    check_params(params);
    FilteredSky out;
    out.params = params;
    out.beta_alm = filter_alm(sky.noise_alm, params);
    out.mu_alm = filter_alm(sky.signal_alm, params);
    out.y_alm = AlmSet(out.beta_alm.ell_max);
    for (std::size_t i = 0; i < out.y_alm.coef.size(); ++i) {
        out.y_alm.coef[i] = out.beta_alm.coef[i] + out.mu_alm.coef[i];
    }
    out.sigma_beta = std::sqrt(filtered_variance(sky.spectrum, params));
    return out;
}

FilteredSky normalize(const FilteredSky& filtered) {
    if (!(filtered.sigma_beta > 0.0)) {
        throw DegenerateModelError("normalize: filtered field has zero variance");
    }
    FilteredSky out = filtered;
    const double s = filtered.sigma_beta;
    for (auto& c : out.beta_alm.coef) c /= s;
    for (auto& c : out.mu_alm.coef) c /= s;
    for (auto& c : out.y_alm.coef) c /= s;
    out.sigma_beta = 1.0;
    return out;
}

} // namespace stem
