#include "stem/harmonic.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>

#include "stem/errors.hpp"

namespace stem {

namespace {

constexpr double kFourPi = 4.0 * M_PI;

// ---------------------------------------------------------------------------
// Legendre polynomials P_ell(u) with u-derivatives via the differentiated
// three-term recurrence
//   (l+1) P_{l+1}^{(k)} = (2l+1) (u P_l^{(k)} + k P_l^{(k-1)}) - l P_{l-1}^{(k)},
// which stays exact at u = +-1 where the (1-u^2) relations degenerate.
// ---------------------------------------------------------------------------

struct LegendreState {
    std::array<double, 5> cur{};   // P_ell and derivatives
    std::array<double, 5> prev{};  // P_{ell-1}
    int ell = 0;

    explicit LegendreState(double u) {
        cur = {1.0, 0.0, 0.0, 0.0, 0.0};
        prev = {0.0, 0.0, 0.0, 0.0, 0.0};
        (void)u;
    }

    void advance(double u, int order) {
        std::array<double, 5> next{};
        const double l = static_cast<double>(ell);
        for (int k = 0; k <= order; ++k) {
            const double lower = (k > 0) ? cur[k - 1] : 0.0;
            next[k] = ((2 * l + 1) * (u * cur[k] + k * lower) - l * prev[k]) / (l + 1);
        }
        prev = cur;
        cur = next;
        ++ell;
    }
};

void check_legendre_args(int ell, double u, int order) {
    if (order < 0 || order > 4) {
        throw UnsupportedOrderError("legendre: derivative order must be in 0..4");
    }
    if (ell < 0) throw DomainError("legendre: ell must be non-negative");
    if (!(u >= -1.0 && u <= 1.0)) throw DomainError("legendre: argument outside [-1, 1]");
}

// ---------------------------------------------------------------------------
// Orthonormalized associated Legendre functions lambda_{l,m}(theta), defined
// by Y_{lm} = lambda_{lm} e^{i m phi} with unit L2 norm on the sphere.
// Upward recurrence in l for fixed m:
//   lambda_{l,m} = alpha_{lm} cos(theta) lambda_{l-1,m} + beta_{lm} lambda_{l-2,m}
// seeded by lambda_{mm} proportional to sin^m(theta).  The seed underflows
// near the poles long before the recurrence re-enters representable range, so
// columns carry an explicit power-of-two scale until their values matter.
// ---------------------------------------------------------------------------

struct LambdaTables {
    int ell_max = 0;
    std::vector<double> alpha;      // recurrence coefficient on cos(theta) term
    std::vector<double> beta;       // recurrence coefficient on lambda_{l-2,m}
    std::vector<double> deriv;      // e_{lm} in the theta-derivative relation
    std::vector<double> seed_step;  // lambda_{mm} = seed_step[m] sin(theta) lambda_{m-1,m-1}

    std::size_t index(int ell, int m) const {
        const std::size_t L = static_cast<std::size_t>(ell_max);
        const std::size_t mm = static_cast<std::size_t>(m);
        return mm * (L + 1) - mm * (mm - 1) / 2 + (static_cast<std::size_t>(ell) - mm);
    }
};

const LambdaTables& lambda_tables(int ell_max) {
    static std::mutex mutex;
    static std::map<int, std::unique_ptr<LambdaTables>> cache;
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find(ell_max);
    if (it != cache.end()) return *it->second;

    auto t = std::make_unique<LambdaTables>();
    t->ell_max = ell_max;
    const std::size_t n = static_cast<std::size_t>(ell_max + 1) * (ell_max + 2) / 2;
    t->alpha.assign(n, 0.0);
    t->beta.assign(n, 0.0);
    t->deriv.assign(n, 0.0);
    t->seed_step.assign(ell_max + 1, 0.0);
    for (int m = 1; m <= ell_max; ++m) {
        t->seed_step[m] = -std::sqrt((2.0 * m + 1.0) / (2.0 * m));
    }
    for (int m = 0; m <= ell_max; ++m) {
        for (int ell = m + 1; ell <= ell_max; ++ell) {
            const double l = ell;
            const std::size_t idx = t->index(ell, m);
            t->alpha[idx] = std::sqrt((2 * l - 1) * (2 * l + 1) / ((l - m) * (l + m)));
            if (ell >= m + 2) {
                t->beta[idx] = -std::sqrt((2 * l + 1) * (l - 1 - m) * (l - 1 + m) /
                                          ((2 * l - 3) * (l - m) * (l + m)));
            }
            t->deriv[idx] = std::sqrt((l * l - m * m) * (2 * l + 1) / (2 * l - 1));
        }
    }
    const LambdaTables& ref = *t;
    cache.emplace(ell_max, std::move(t));
    return ref;
}

constexpr double kScaleDown = 0x1.0p-512;   // one scale unit
constexpr double kScaleUp = 0x1.0p+512;
constexpr double kSeedFloor = 0x1.0p-256;   // rescale seed below this
constexpr double kGrowCeil = 0x1.0p+256;    // unscale trigger during recurrence

/// Walks lambda columns for one colatitude, m in increasing order.  Column
/// values smaller than 2^-256 are treated as zero; their true contribution is
/// below any double-precision accumulation.
class ColumnScan {
public:
    ColumnScan(double theta, const LambdaTables& t)
        : t_(t),
          x_(std::cos(theta)),
          sin_(std::sin(theta)),
          seed_v_(1.0 / std::sqrt(kFourPi)),
          seed_scale_(0) {}

    double cos_theta() const { return x_; }
    double sin_theta() const { return sin_; }

    struct Start {
        bool dead = false;
        int ell = 0;
        double lam = 0.0;   // lambda_{ell, m}
        double lm1 = 0.0;   // lambda_{ell-1, m}
    };

    /// Prepares column m (call with m = 0, 1, 2, ... in order).
    Start begin_column(int m) {
        const int L = t_.ell_max;
        if (m > 0) {
            seed_v_ *= t_.seed_step[m] * sin_;
            if (seed_v_ == 0.0) {
                seed_scale_ = -1;  // poles: all m >= 1 columns vanish
            } else if (seed_scale_ >= 0 && std::fabs(seed_v_) < kSeedFloor) {
                seed_v_ *= kScaleUp;
                ++seed_scale_;
            }
        }
        Start s;
        if (seed_scale_ < 0) {
            s.dead = true;
            return s;
        }
        double vl = seed_v_;
        double vl1 = 0.0;
        int scale = seed_scale_;
        int ell = m;
        while (scale > 0 && ell < L) {
            const std::size_t idx = t_.index(ell + 1, m);
            const double vn = t_.alpha[idx] * x_ * vl + t_.beta[idx] * vl1;
            vl1 = vl;
            vl = vn;
            ++ell;
            if (std::fabs(vl) > kGrowCeil) {
                vl *= kScaleDown;
                vl1 *= kScaleDown;
                --scale;
            }
        }
        if (scale > 0) {
            s.dead = true;
            return s;
        }
        s.ell = ell;
        s.lam = vl;
        s.lm1 = vl1;
        return s;
    }

private:
    const LambdaTables& t_;
    double x_;
    double sin_;
    double seed_v_;
    int seed_scale_;
};

// ---------------------------------------------------------------------------
// FFTW plan cache.  Plans are created once per transform length on dedicated
// scratch buffers and then executed on caller-owned fftw_malloc'd arrays via
// the new-array interface, which is safe across threads.
// ---------------------------------------------------------------------------

struct RingPlans {
    fftw_plan c2r = nullptr;
    fftw_plan r2c = nullptr;
    fftw_complex* scratch_c = nullptr;
    double* scratch_r = nullptr;
};

const RingPlans& ring_plans(std::size_t n) {
    static std::mutex mutex;
    static std::map<std::size_t, RingPlans> cache;
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;

    RingPlans p;
    p.scratch_c = fftw_alloc_complex(n / 2 + 1);
    p.scratch_r = fftw_alloc_real(n);
    p.c2r = fftw_plan_dft_c2r_1d(static_cast<int>(n), p.scratch_c, p.scratch_r, FFTW_ESTIMATE);
    p.r2c = fftw_plan_dft_r2c_1d(static_cast<int>(n), p.scratch_r, p.scratch_c, FFTW_ESTIMATE);
    return cache.emplace(n, p).first->second;
}

struct FftwBuffers {
    std::size_t n = 0;
    fftw_complex* c = nullptr;
    double* r = nullptr;

    explicit FftwBuffers(std::size_t len) : n(len) {
        c = fftw_alloc_complex(n / 2 + 1);
        r = fftw_alloc_real(n);
    }
    ~FftwBuffers() {
        fftw_free(c);
        fftw_free(r);
    }
    FftwBuffers(const FftwBuffers&) = delete;
    FftwBuffers& operator=(const FftwBuffers&) = delete;
};

/// Pairs ring r with its exact mirror ring when the grid is symmetric under
/// theta -> pi - theta (Gauss-Legendre grids are); second == first marks an
/// unpaired (equatorial or asymmetric) ring.
std::vector<std::pair<std::size_t, std::size_t>> mirror_pairs(const SphereGrid& grid) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    const std::size_t n = grid.rings.size();
    for (std::size_t r = 0; 2 * r < n; ++r) {
        const std::size_t s = n - 1 - r;
        if (s == r) {
            pairs.emplace_back(r, r);
            continue;
        }
        const double xn = std::cos(grid.rings[r].theta);
        const double xs = std::cos(grid.rings[s].theta);
        if (xn == -xs && grid.rings[r].n_phi == grid.rings[s].n_phi) {
            pairs.emplace_back(r, s);
        } else {
            pairs.emplace_back(r, r);
            pairs.emplace_back(s, s);
        }
    }
    return pairs;
}

} // namespace

// ---------------------------------------------------------------------------
// Public Legendre interfaces
// ---------------------------------------------------------------------------

std::array<double, 5> legendre_eval(int ell, double u, int order) {
    check_legendre_args(ell, u, order);
    LegendreState state(u);
    while (state.ell < ell) state.advance(u, order);
    return state.cur;
}

std::array<double, 5> weighted_legendre_sums(const std::vector<double>& weights,
                                             double u,
                                             int order) {
    check_legendre_args(0, u, order);
    std::array<double, 5> sums{};
    LegendreState state(u);
    const int L = static_cast<int>(weights.size()) - 1;
    for (int ell = 0; ell <= L; ++ell) {
        if (ell > 0) state.advance(u, order);
        const double w = weights[ell];
        if (w != 0.0) {
            for (int k = 0; k <= order; ++k) sums[k] += w * state.cur[k];
        }
    }
    return sums;
}

// ---------------------------------------------------------------------------
// Spectra and coefficient sets
// ---------------------------------------------------------------------------

PowerSpectrum PowerSpectrum::power_law(double gamma, double g0, int ell_max) {
    if (!(g0 > 0.0)) throw DomainError("power_law: g0 must be positive");
    if (ell_max < 1) throw DomainError("power_law: ell_max must be >= 1");
    PowerSpectrum s;
    s.c_ell.assign(ell_max + 1, 0.0);
    for (int ell = 1; ell <= ell_max; ++ell) {
        s.c_ell[ell] = g0 * std::pow(static_cast<double>(ell), -gamma);
    }
    s.model = SpectralModel{gamma, g0};
    return s;
}

PowerSpectrum PowerSpectrum::truncated(int new_ell_max) const {
    if (new_ell_max < 0 || new_ell_max > ell_max()) {
        throw DimensionError("PowerSpectrum::truncated: band limit outside table");
    }
    PowerSpectrum s;
    s.c_ell.assign(c_ell.begin(), c_ell.begin() + new_ell_max + 1);
    return s;
}

AlmSet sample_alm(const PowerSpectrum& spectrum, int ell_max, Rng& rng) {
    if (ell_max < 0) throw DomainError("sample_alm: ell_max must be non-negative");
    if (spectrum.ell_max() < ell_max) {
        throw DimensionError("sample_alm: spectrum does not cover ell_max");
    }
    AlmSet alm(ell_max);
    for (int ell = 0; ell <= ell_max; ++ell) {
        const double c = spectrum.c_ell[ell];
        if (!(c >= 0.0)) throw DomainError("sample_alm: negative spectrum entry");
        const double sd_full = std::sqrt(c);
        const double sd_half = std::sqrt(0.5 * c);
        alm.at(ell, 0) = {sd_full * rng.gaussian(), 0.0};
        for (int m = 1; m <= ell; ++m) {
            const double re = sd_half * rng.gaussian();
            const double im = sd_half * rng.gaussian();
            alm.at(ell, m) = {re, im};
        }
    }
    return alm;
}

std::vector<double> power_spectrum_of(const AlmSet& alm) {
    std::vector<double> c(alm.ell_max + 1, 0.0);
    for (int ell = 0; ell <= alm.ell_max; ++ell) {
        double sum = std::norm(alm.at(ell, 0));
        for (int m = 1; m <= ell; ++m) sum += 2.0 * std::norm(alm.at(ell, m));
        c[ell] = sum / (2.0 * ell + 1.0);
    }
    return c;
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

namespace {

/// Per-ring azimuthal coefficient rows built from one lambda pass.
struct RingRows {
    std::vector<std::complex<double>> a;    // sum_l a_lm lambda_lm
    std::vector<std::complex<double>> a1;   // sum_l a_lm dlambda/dtheta
    std::vector<std::complex<double>> a2;   // sum_l a_lm d2lambda/dtheta2
};

/// Accumulates the rows for a mirror pair of rings in one pass over columns.
/// Parity of (ell - m) splits contributions between the northern ring and its
/// mirror: lambda(pi - theta) = (-1)^(ell+m) lambda(theta).
void accumulate_rows(const AlmSet& alm,
                     const LambdaTables& tables,
                     double theta,
                     int order,
                     bool want_south,
                     RingRows& north,
                     RingRows& south) {
    const int L = alm.ell_max;
    ColumnScan scan(theta, tables);
    const double ct = scan.cos_theta() / scan.sin_theta();
    const double inv_s = 1.0 / scan.sin_theta();
    const double x = scan.cos_theta();

    for (int m = 0; m <= L; ++m) {
        std::complex<double> accA[2] = {};
        std::complex<double> accA1[2] = {};
        std::complex<double> accA2[2] = {};
        const auto start = scan.begin_column(m);
        if (!start.dead) {
            const double m2s2 = static_cast<double>(m) * m * inv_s * inv_s;
            const std::complex<double>* a = alm.coef.data() + alm.index(m, m);
            const double* alpha = tables.alpha.data() + tables.index(m, m);
            const double* beta = tables.beta.data() + tables.index(m, m);
            const double* dcoef = tables.deriv.data() + tables.index(m, m);
            double lam = start.lam;
            double lm1 = start.lm1;
            for (int ell = start.ell; ell <= L; ++ell) {
                const int off = ell - m;
                const int par = off & 1;
                const std::complex<double> c = a[off];
                accA[par] += c * lam;
                if (order >= 1) {
                    const double lamd = ell * ct * lam - dcoef[off] * inv_s * lm1;
                    accA1[par] += c * lamd;
                    if (order >= 2) {
                        const double lamdd =
                            -ct * lamd + (m2s2 - static_cast<double>(ell) * (ell + 1)) * lam;
                        accA2[par] += c * lamdd;
                    }
                }
                if (ell < L) {
                    const int noff = off + 1;
                    const double ln = alpha[noff] * x * lam + beta[noff] * lm1;
                    lm1 = lam;
                    lam = ln;
                }
            }
        }
        north.a[m] = accA[0] + accA[1];
        if (order >= 1) north.a1[m] = accA1[0] + accA1[1];
        if (order >= 2) north.a2[m] = accA2[0] + accA2[1];
        if (want_south) {
            south.a[m] = accA[0] - accA[1];
            if (order >= 1) south.a1[m] = -(accA1[0] - accA1[1]);
            if (order >= 2) south.a2[m] = accA2[0] - accA2[1];
        }
    }
}

/// Runs one inverse ring transform: out[k] = sum_m eps_m Re(hc[m] e^{i m phi_k}).
void ring_c2r(const RingPlans& plans, FftwBuffers& buf, std::size_t n_phi) {
    (void)n_phi;
    fftw_execute_dft_c2r(plans.c2r, buf.c, buf.r);
}

/// Fills pixel values of one ring into all requested output maps.
void emit_ring(const RingRows& rows,
               const Ring& ring,
               double theta,
               int order,
               FieldMaps& maps,
               FftwBuffers& buf,
               const RingPlans& plans,
               int coef_ell_max) {
    const std::size_t n = ring.n_phi;
    const std::size_t nc = n / 2 + 1;
    const std::size_t base = ring.first;
    const double inv_s = 1.0 / std::sin(theta);
    const double ct = std::cos(theta) * inv_s;
    const int L = coef_ell_max;

    auto load = [&](auto&& coef_of_m) {
        for (std::size_t m = 0; m < nc; ++m) {
            const std::complex<double> v =
                (m <= static_cast<std::size_t>(L)) ? coef_of_m(static_cast<int>(m))
                                                   : std::complex<double>(0.0, 0.0);
            buf.c[m][0] = v.real();
            buf.c[m][1] = v.imag();
        }
    };

    // f
    load([&](int m) { return rows.a[m]; });
    ring_c2r(plans, buf, n);
    std::copy(buf.r, buf.r + n, maps.f.begin() + base);

    if (order >= 1) {
        // E1 f = df/dtheta
        load([&](int m) { return rows.a1[m]; });
        ring_c2r(plans, buf, n);
        std::copy(buf.r, buf.r + n, maps.d1.begin() + base);

        // E2 f = (df/dphi) / sin(theta)
        load([&](int m) { return std::complex<double>(0.0, m) * rows.a[m]; });
        ring_c2r(plans, buf, n);
        for (std::size_t k = 0; k < n; ++k) maps.d2[base + k] = buf.r[k] * inv_s;
    }
    if (order >= 2) {
        // E1 E1 f
        load([&](int m) { return rows.a2[m]; });
        ring_c2r(plans, buf, n);
        std::copy(buf.r, buf.r + n, maps.d11.begin() + base);

        // E1 E2 f = (f_thetaphi - cot(theta) f_phi) / sin(theta)
        load([&](int m) { return std::complex<double>(0.0, m) * rows.a1[m]; });
        ring_c2r(plans, buf, n);
        for (std::size_t k = 0; k < n; ++k) {
            maps.d12[base + k] = buf.r[k] * inv_s - ct * maps.d2[base + k];
        }

        // E2 E2 f = f_phiphi / sin^2(theta)
        load([&](int m) { return -static_cast<double>(m) * m * rows.a[m]; });
        ring_c2r(plans, buf, n);
        for (std::size_t k = 0; k < n; ++k) maps.d22[base + k] = buf.r[k] * inv_s * inv_s;
    }
}

} // namespace

FieldMaps synthesize(const AlmSet& alm, const SphereGrid& grid, int deriv_order) {
    if (deriv_order < 0 || deriv_order > 2) {
        throw UnsupportedOrderError("synthesize: deriv_order must be 0, 1 or 2");
    }
    if (alm.ell_max > grid.ell_max) {
        throw DimensionError("synthesize: alm band limit exceeds grid band limit");
    }

    FieldMaps maps;
    maps.grid = grid;
    maps.deriv_order = deriv_order;
    maps.f.assign(grid.n_pixels, 0.0);
    if (deriv_order >= 1) {
        maps.d1.assign(grid.n_pixels, 0.0);
        maps.d2.assign(grid.n_pixels, 0.0);
    }
    if (deriv_order >= 2) {
        maps.d11.assign(grid.n_pixels, 0.0);
        maps.d12.assign(grid.n_pixels, 0.0);
        maps.d22.assign(grid.n_pixels, 0.0);
    }

    const LambdaTables& tables = lambda_tables(alm.ell_max);
    const int L = alm.ell_max;
    RingRows north;
    RingRows south;
    north.a.resize(L + 1);
    south.a.resize(L + 1);
    if (deriv_order >= 1) {
        north.a1.resize(L + 1);
        south.a1.resize(L + 1);
    }
    if (deriv_order >= 2) {
        north.a2.resize(L + 1);
        south.a2.resize(L + 1);
    }

    std::map<std::size_t, std::unique_ptr<FftwBuffers>> buffers;
    for (const auto& [rn, rs] : mirror_pairs(grid)) {
        const Ring& ring_n = grid.rings[rn];
        const bool paired = rs != rn;
        accumulate_rows(alm, tables, ring_n.theta, deriv_order, paired, north, south);

        auto& buf = buffers[ring_n.n_phi];
        if (!buf) buf = std::make_unique<FftwBuffers>(ring_n.n_phi);
        const RingPlans& plans = ring_plans(ring_n.n_phi);

        emit_ring(north, ring_n, ring_n.theta, deriv_order, maps, *buf, plans, L);
        if (paired) {
            const Ring& ring_s = grid.rings[rs];
            emit_ring(south, ring_s, ring_s.theta, deriv_order, maps, *buf, plans, L);
        }
    }
    return maps;
}

// ---------------------------------------------------------------------------
// Analysis
// ---------------------------------------------------------------------------

AlmSet analyze(const FieldMaps& maps, int ell_max) {
    const SphereGrid& grid = maps.grid;
    if (ell_max < 0) throw DomainError("analyze: ell_max must be non-negative");
    if (ell_max > grid.ell_max) {
        throw DimensionError("analyze: requested band limit exceeds grid band limit");
    }
    if (maps.f.size() != grid.n_pixels) {
        throw DimensionError("analyze: map size does not match grid");
    }

    const LambdaTables& tables = lambda_tables(ell_max);
    AlmSet alm(ell_max);

    // Forward ring transforms, scaled by the pixel solid angle.
    const std::size_t n_rings = grid.rings.size();
    std::vector<std::vector<std::complex<double>>> ring_coef(n_rings);
    std::map<std::size_t, std::unique_ptr<FftwBuffers>> buffers;
    for (std::size_t r = 0; r < n_rings; ++r) {
        const Ring& ring = grid.rings[r];
        const std::size_t n = ring.n_phi;
        auto& buf = buffers[n];
        if (!buf) buf = std::make_unique<FftwBuffers>(n);
        const RingPlans& plans = ring_plans(n);
        std::copy(maps.f.begin() + ring.first, maps.f.begin() + ring.first + n, buf->r);
        fftw_execute_dft_r2c(plans.r2c, buf->r, buf->c);
        const double w = ring.weight * 2.0 * M_PI / static_cast<double>(n);
        const std::size_t mc = std::min(n / 2, static_cast<std::size_t>(ell_max));
        auto& row = ring_coef[r];
        row.resize(ell_max + 1, {0.0, 0.0});
        for (std::size_t m = 0; m <= mc; ++m) {
            row[m] = std::complex<double>(buf->c[m][0], buf->c[m][1]) * w;
        }
    }

    // Lambda pass, mirror rings combined by parity.
    for (const auto& [rn, rs] : mirror_pairs(grid)) {
        const bool paired = rs != rn;
        ColumnScan scan(grid.rings[rn].theta, tables);
        const double x = scan.cos_theta();
        for (int m = 0; m <= ell_max; ++m) {
            const auto start = scan.begin_column(m);
            if (start.dead) continue;
            const std::complex<double> cn = ring_coef[rn][m];
            const std::complex<double> cs = paired ? ring_coef[rs][m] : std::complex<double>();
            const std::complex<double> even = cn + cs;
            const std::complex<double> odd = cn - cs;
            std::complex<double>* out = alm.coef.data() + alm.index(m, m);
            const double* alpha = tables.alpha.data() + tables.index(m, m);
            const double* beta = tables.beta.data() + tables.index(m, m);
            double lam = start.lam;
            double lm1 = start.lm1;
            for (int ell = start.ell; ell <= ell_max; ++ell) {
                const int off = ell - m;
                out[off] += lam * (((off & 1) == 0) ? even : odd);
                if (ell < ell_max) {
                    const double ln = alpha[off + 1] * x * lam + beta[off + 1] * lm1;
                    lm1 = lam;
                    lam = ln;
                }
            }
        }
    }

    // A real field keeps m = 0 coefficients real; roundoff leaves a residue.
    for (int ell = 0; ell <= ell_max; ++ell) {
        alm.at(ell, 0) = {alm.at(ell, 0).real(), 0.0};
    }
    return alm;
}

// ---------------------------------------------------------------------------
// Point evaluation
// ---------------------------------------------------------------------------

std::vector<double> evaluate_at_points(const AlmSet& alm,
                                       const std::vector<SpherePoint>& points) {
    const LambdaTables& tables = lambda_tables(alm.ell_max);
    const int L = alm.ell_max;
    std::vector<double> values;
    values.reserve(points.size());
    std::vector<std::complex<double>> row(L + 1);

    for (const auto& pt : points) {
        ColumnScan scan(pt.theta, tables);
        for (int m = 0; m <= L; ++m) {
            std::complex<double> acc{};
            const auto start = scan.begin_column(m);
            if (!start.dead) {
                const std::complex<double>* a = alm.coef.data() + alm.index(m, m);
                const double* alpha = tables.alpha.data() + tables.index(m, m);
                const double* beta = tables.beta.data() + tables.index(m, m);
                const double x = scan.cos_theta();
                double lam = start.lam;
                double lm1 = start.lm1;
                for (int ell = start.ell; ell <= L; ++ell) {
                    const int off = ell - m;
                    acc += a[off] * lam;
                    if (ell < L) {
                        const double ln = alpha[off + 1] * x * lam + beta[off + 1] * lm1;
                        lm1 = lam;
                        lam = ln;
                    }
                }
            }
            row[m] = acc;
        }
        double v = row[0].real();
        for (int m = 1; m <= L; ++m) {
            const std::complex<double> phase = std::polar(1.0, m * pt.phi);
            v += 2.0 * (row[m] * phase).real();
        }
        values.push_back(v);
    }
    return values;
}

AlmSet point_source_alm(const SpherePoint& xi, const std::vector<double>& weight_per_ell) {
    if (weight_per_ell.empty()) throw DimensionError("point_source_alm: empty weight table");
    const int L = static_cast<int>(weight_per_ell.size()) - 1;
    const LambdaTables& tables = lambda_tables(L);
    AlmSet alm(L);
    ColumnScan scan(xi.theta, tables);
    const double x = scan.cos_theta();
    for (int m = 0; m <= L; ++m) {
        const auto start = scan.begin_column(m);
        if (start.dead) continue;
        // conj(Y_lm(xi)) = lambda_lm(theta) e^{-i m phi}
        const std::complex<double> phase = std::polar(1.0, -m * xi.phi);
        std::complex<double>* out = alm.coef.data() + alm.index(m, m);
        const double* alpha = tables.alpha.data() + tables.index(m, m);
        const double* beta = tables.beta.data() + tables.index(m, m);
        double lam = start.lam;
        double lm1 = start.lm1;
        for (int ell = start.ell; ell <= L; ++ell) {
            const int off = ell - m;
            const double w = weight_per_ell[ell];
            if (w != 0.0) out[off] = w * lam * phase;
            if (ell < L) {
                const double ln = alpha[off + 1] * x * lam + beta[off + 1] * lm1;
                lm1 = lam;
                lam = ln;
            }
        }
    }
    return alm;
}

} // namespace stem
