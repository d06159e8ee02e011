#include "stem/peaks.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <tuple>
#include <vector>

#include "stem/errors.hpp"
#include "stem/harmonic.hpp"
#include "stem/quadrature.hpp"
#include "stem/sphere.hpp"

namespace stem {

namespace {

constexpr double kBracketLo = -12.0;
constexpr double kBracketHi = 40.0;
constexpr double kTailTol = 1e-10;

double normal_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

/// Per-ell filtered spectrum weights b^2(l/B^j) C_l (2l+1)/(4 pi).  The
/// caller is expected to have run filtered_variance first, which performs
/// the parameter, slope and coverage validation for the same band.
std::vector<double> filtered_weights(const PowerSpectrum& spectrum, const NeedletParams& params) {
    const int L = spectrum.ell_max();
    std::vector<double> w(L + 1, 0.0);
    for (int ell = 0; ell <= L; ++ell) {
        const double b = window(ell, params);
        w[ell] = b * b * spectrum.c_ell[ell] * (2.0 * ell + 1.0) / (4.0 * M_PI);
    }
    return w;
}

uint64_t fnv1a64(const void* data, std::size_t size, uint64_t hash) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        hash ^= bytes[i];
        hash *= 1099511628211ull;
    }
    return hash;
}

uint64_t spectrum_digest(const PowerSpectrum& spectrum) {
    uint64_t h = 14695981039346656037ull;
    h = fnv1a64(spectrum.c_ell.data(), spectrum.c_ell.size() * sizeof(double), h);
    if (spectrum.model) {
        const double tag[2] = {spectrum.model->gamma, spectrum.model->g0};
        h = fnv1a64(tag, sizeof(tag), h);
    }
    return h;
}

void check_height_model(const HeightModel& model) {
    if (!(model.kappa1 > 0.0)) {
        throw DomainError("height model: kappa1 must be positive");
    }
    if (!(model.kappa2 > 0.0)) {
        throw DomainError("height model: kappa2 must be positive");
    }
    if (!(2.0 + model.kappa1 - model.kappa2 > 0.0)) {
        throw DomainError("height model: kappa2 must stay below 2 + kappa1 "
                          "for the density square roots to be real");
    }
}

/// Null-region area 4 pi - n * cap_area(rho); positive by precondition.
double null_area(double rho, int n_sources) {
    if (n_sources < 0) throw DomainError("null_area: source count must be non-negative");
    double area = 4.0 * M_PI;
    if (n_sources > 0) area -= n_sources * cap_area(rho);
    if (!(area > 0.0)) {
        throw DomainError("null_area: exclusion caps cover the whole sphere");
    }
    return area;
}

} // namespace

double cp2n(double gamma, int p, int n, double g0) {
    if (p < 1) throw DomainError("cp2n: p must be at least 1");
    if (n < 0) throw DomainError("cp2n: n must be non-negative");
    if (!(g0 > 0.0)) throw DomainError("cp2n: g0 must be positive");
    const double arg = 1.0 - gamma / 2.0 + n + 2.0 * p;
    if (!(arg > 0.0)) {
        throw DomainError("cp2n: Gamma argument 1 - gamma/2 + n + 2p must be positive");
    }
    return g0 / (2.0 * M_PI) * std::pow(2.0, gamma / 2.0 - 2.0 - n - 2.0 * p) * std::tgamma(arg);
}

MomentSet moments(const PowerSpectrum& spectrum, const NeedletParams& params) {
    using CacheKey = std::tuple<uint64_t, int, double, int, int>;
    static std::mutex cache_mutex;
    static std::map<CacheKey, MomentSet> cache;

    const CacheKey key{spectrum_digest(spectrum), spectrum.ell_max(), params.B, params.j,
                       params.p};
    {
        std::lock_guard<std::mutex> lock(cache_mutex);
        const auto hit = cache.find(key);
        if (hit != cache.end()) return hit->second;
    }

    MomentSet m;
    m.var_beta = filtered_variance(spectrum, params);  // validates band and coverage
    if (!(m.var_beta > 0.0)) {
        throw DegenerateModelError("moments: filtered field has zero variance");
    }

    const std::vector<double> w = filtered_weights(spectrum, params);
    double s2 = 0.0, s4 = 0.0, s6 = 0.0;
    for (int ell = 0; ell < static_cast<int>(w.size()); ++ell) {
        const double q = static_cast<double>(ell) * (ell + 1.0);
        s2 += w[ell] * q;
        s4 += w[ell] * q * q;
        s6 += w[ell] * q * q * q;
    }
    m.b2 = s2 / m.var_beta;
    m.b4 = s4 / m.var_beta;
    m.b6 = s6 / m.var_beta;
    m.c_prime = m.b2 / 2.0;
    m.c_dprime = (m.b4 - 2.0 * m.b2) / 8.0;
    if (!(m.c_dprime > 0.0)) {
        throw DegenerateModelError("moments: spectral band too narrow, curvature "
                                   "moment is not positive");
    }
    m.kappa1 = m.c_prime / m.c_dprime;
    m.kappa2 = m.c_prime * m.c_prime / m.c_dprime;
    // 2 + kappa1 - kappa2 = (b4 - b2^2) / (4 c_dprime) >= 0 with equality only
    // for a single-degree band; demand clearance above rounding noise so the
    // density square roots stay meaningful.
    if (!(2.0 + m.kappa1 - m.kappa2 > 1e-12 * (2.0 + m.kappa1)) ||
        !(3.0 + m.kappa1 - m.kappa2 > 0.0)) {
        throw DegenerateModelError("moments: curvature parameters are degenerate "
                                   "(effectively single-degree spectrum)");
    }

    std::lock_guard<std::mutex> lock(cache_mutex);
    cache.emplace(key, m);
    return m;
}

HeightModel height_model(double kappa1, double kappa2) {
    HeightModel model;
    model.kappa1 = kappa1;
    model.kappa2 = kappa2;
    check_height_model(model);
    if (!(3.0 + kappa1 - kappa2 > 0.0)) {
        throw DomainError("height model: kappa2 must stay below 3 + kappa1");
    }
    model.r_total = 1.0 / (4.0 * M_PI) +
                    1.0 / (2.0 * M_PI * kappa1 * std::sqrt(3.0 + kappa1));
    return model;
}

HeightModel height_model(const MomentSet& m) {
    return height_model(m.kappa1, m.kappa2);
}

double height_density(double x, const HeightModel& model) {
    check_height_model(model);
    const double k1 = model.kappa1;
    const double k2 = model.kappa2;
    const double a2 = 2.0 + k1 - k2;  // > 0 by the model guard
    const double a3 = 3.0 + k1 - k2;  // = a2 + 1
    const double s3 = std::sqrt(3.0 + k1);
    const double prefactor = 2.0 * s3 / (2.0 + k1 * s3);

    const double t1 = (k1 + k2 * (x * x - 1.0)) * normal_pdf(x) *
                      normal_cdf(std::sqrt(k2) * x / std::sqrt(a2));
    const double t2 = std::sqrt(k2 * a2) / (2.0 * M_PI) * x *
                      std::exp(-(2.0 + k1) * x * x / (2.0 * a2));
    const double t3 = std::sqrt(2.0) / std::sqrt(M_PI * a3) *
                      std::exp(-(3.0 + k1) * x * x / (2.0 * a3)) *
                      normal_cdf(std::sqrt(k2) * x / std::sqrt(a2 * a3));
    return prefactor * (t1 + t2 + t3);
}

double height_tail_F(double u, const HeightModel& model) {
    check_height_model(model);
    return integrate([&model](double x) { return height_density(x, model); }, u, u + 40.0,
                     kTailTol);
}

Quantile invert_F(double p, const HeightModel& model) {
    if (!(p > 0.0 && p < 1.0)) {
        throw DomainError("invert_F: probability must lie strictly inside (0, 1)");
    }
    const double f_lo = height_tail_F(kBracketLo, model);
    if (p >= f_lo || std::fabs(f_lo - p) < kTailTol) return {kBracketLo, true, false};
    const double f_hi = height_tail_F(kBracketHi, model);
    if (p <= f_hi || std::fabs(f_hi - p) < kTailTol) return {kBracketHi, false, true};

    double lo = kBracketLo;  // F(lo) > p
    double hi = kBracketHi;  // F(hi) < p
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = height_tail_F(mid, model);
        if (std::fabs(fm - p) < kTailTol) return {mid, false, false};
        if (fm > p) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return {0.5 * (lo + hi), false, false};
}

double peak_density_rj(const HeightModel& model) {
    if (!(model.kappa1 > 0.0)) {
        throw DomainError("peak_density_rj: kappa1 must be positive");
    }
    return 1.0 / (4.0 * M_PI) +
           1.0 / (2.0 * M_PI * model.kappa1 * std::sqrt(3.0 + model.kappa1));
}

double peak_density_rju(double u, const HeightModel& model) {
    return height_tail_F(u, model) * peak_density_rj(model);
}

double expected_null_count(double u, double rho, int n_sources, const HeightModel& model) {
    return null_area(rho, n_sources) * peak_density_rju(u, model);
}

double fdp_bound(double u, double rho, int n_sources, const HeightModel& model) {
    const double null_peaks = null_area(rho, n_sources) * peak_density_rju(u, model);
    if (null_peaks == 0.0) return 0.0;  // no expected false discoveries at all
    return null_peaks / (null_peaks + n_sources);
}

double fdr_bound(double alpha, double rho, int n_sources, const HeightModel& model) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw DomainError("fdr_bound: alpha must lie strictly inside (0, 1)");
    }
    const double a_r = null_area(rho, n_sources) * peak_density_rj(model);
    // Ratio first so the pure-null case returns alpha exactly.
    return alpha * (a_r / (a_r + n_sources));
}

AsymptoticThresholds asymptotic_thresholds(double B, int j, int n_sources) {
    if (!(B > 1.0)) throw DomainError("asymptotic_thresholds: B must exceed 1");
    if (j < 1) throw DomainError("asymptotic_thresholds: j must be at least 1");
    if (n_sources < 1) {
        throw DomainError("asymptotic_thresholds: needs at least one source");
    }
    const double log_ratio = 2.0 * j * std::log(B) - std::log(static_cast<double>(n_sources));
    if (!(log_ratio > 0.0)) {
        throw DomainError("asymptotic_thresholds: B^(2j) must exceed the source count");
    }
    AsymptoticThresholds out;
    out.u_bh = std::sqrt(2.0 * log_ratio);
    out.u_fwer = 2.0 * std::sqrt(j * std::log(B));
    return out;
}

Quantile bh_star_threshold(double alpha, double rho, int n_sources, const HeightModel& model) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw DomainError("bh_star_threshold: alpha must lie strictly inside (0, 1)");
    }
    const double a_r = null_area(rho, n_sources) * peak_density_rj(model);
    const double arg = alpha * n_sources / (n_sources + (1.0 - alpha) * a_r);
    if (!(arg > 0.0)) return {kBracketHi, false, true};  // pure null: threshold beyond range
    return invert_F(arg, model);
}

CovarianceBlocks covariance_blocks(double phi,
                                   const PowerSpectrum& spectrum,
                                   const NeedletParams& params) {
    if (!(phi >= 0.0 && phi <= M_PI)) {
        throw DomainError("covariance_blocks: phi outside [0, pi]");
    }
    const double var = filtered_variance(spectrum, params);  // validates band and coverage
    if (!(var > 0.0)) {
        throw DegenerateModelError("covariance_blocks: filtered field has zero variance");
    }
    std::vector<double> w = filtered_weights(spectrum, params);
    for (double& v : w) v /= var;

    const double c = std::cos(phi);
    const double s = std::sin(phi);
    const std::array<double, 5> sums = weighted_legendre_sums(w, c, 4);
    const double s1 = sums[1];
    const double s2 = sums[2];
    const double s3 = sums[3];
    const double s4 = sums[4];

    CovarianceBlocks out;
    out.phi = phi;
    out.rho_c = sums[0];
    out.eps = s * s1;
    out.delta = c * s1;
    out.alpha1 = s1;
    out.alpha2 = -s * s * s2 + c * s1;
    out.beta1 = s * s2;
    out.beta2 = s * c * s2 + s * s1;
    out.beta3 = -s * s * s * s3 + 3.0 * s * c * s2 + s * s1;
    out.gamma1 = (2.0 + c * c) * s2 + c * s1;
    out.gamma2 = -s * s * s3 + c * s2;
    out.gamma3 = -s * s * c * s3 + (c * c - 2.0 * s * s) * s2 + c * s1;
    out.gamma4 = s * s * s * s * s4 - 6.0 * s * s * c * s3 +
                 (3.0 * c * c - 4.0 * s * s) * s2 + c * s1;
    return out;
}

} // namespace stem
