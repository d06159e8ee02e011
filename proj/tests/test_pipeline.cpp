#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "stem/errors.hpp"
#include "stem/harmonic.hpp"
#include "stem/needlet.hpp"
#include "stem/peaks.hpp"
#include "stem/pipeline.hpp"
#include "stem/rng.hpp"
#include "stem/sky.hpp"
#include "stem/sphere.hpp"

namespace {

/// Kolmogorov-Smirnov distance between samples and the height law.
double ks_vs_height_law(std::vector<double> xs, const stem::HeightModel& model) {
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double cdf = 1.0 - stem::height_tail_F(xs[i], model);
        d = std::max(d, std::fabs(cdf - (i + 1) / n));
        d = std::max(d, std::fabs(cdf - i / n));
    }
    return d;
}

double ks_vs_uniform(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        d = std::max(d, std::fabs(xs[i] - (i + 1) / n));
        d = std::max(d, std::fabs(xs[i] - i / n));
    }
    return d;
}

/// Signal-only sky (zero noise coefficients) over the given spectrum.
stem::SkyRealization noiseless_sky(const stem::SourceCatalog& catalog,
                                   const stem::PowerSpectrum& spectrum) {
    stem::SkyRealization sky;
    const int L = spectrum.ell_max();
    sky.noise_alm = stem::AlmSet(L);
    sky.signal_alm = stem::build_signal_alm(catalog, L);
    sky.y_alm = sky.signal_alm;
    sky.catalog = catalog;
    sky.spectrum = spectrum;
    return sky;
}

/// Brute-force step-up rule written independently of the implementation.
int bh_oracle(std::vector<double> p, double alpha) {
    std::sort(p.begin(), p.end());
    const int m = static_cast<int>(p.size());
    int k = 0;
    for (int i = 1; i <= m; ++i) {
        if (p[static_cast<std::size_t>(i - 1)] < i * alpha / m) k = i;
    }
    return k;
}

stem::Peak peak_at(double theta, double phi, double height) {
    stem::Peak p;
    p.location = stem::make_point(theta, phi);
    p.height = height;
    return p;
}

} // namespace

TEST_SUITE("pipeline") {

TEST_CASE("strict neighbor maxima match a direct scan") {
    const int L = 40;
    stem::Rng rng(2024);
    const stem::PowerSpectrum spectrum = stem::PowerSpectrum::power_law(2.5, 1.0, L);
    const stem::AlmSet alm = stem::sample_alm(spectrum, L, rng);
    const stem::SphereGrid grid = stem::build_grid(60);
    const stem::FieldMaps maps = stem::synthesize(alm, grid, 2);

    const std::vector<stem::Peak> peaks = stem::detect_peaks(maps);
    REQUIRE(!peaks.empty());

    // Direct scan over every pixel, reusing only the neighbor relation.
    std::vector<std::size_t> oracle;
    for (std::size_t pix = 0; pix < grid.n_pixels; ++pix) {
        bool is_max = true;
        for (std::size_t nb : stem::pixel_neighbors(grid, pix)) {
            if (!(maps.f[pix] > maps.f[nb])) {
                is_max = false;
                break;
            }
        }
        if (is_max) oracle.push_back(pix);
    }
    REQUIRE(peaks.size() == oracle.size());

    std::vector<std::size_t> found;
    for (const stem::Peak& p : peaks) found.push_back(p.pixel);
    std::vector<std::size_t> sorted_found = found;
    std::sort(sorted_found.begin(), sorted_found.end());
    CHECK(sorted_found == oracle);

    for (std::size_t i = 0; i + 1 < peaks.size(); ++i) {
        CHECK(peaks[i].height >= peaks[i + 1].height);
    }
    for (const stem::Peak& p : peaks) {
        CHECK(p.height == maps.f[p.pixel]);
        const stem::SpherePoint c = grid.pixel_center(p.pixel);
        CHECK(p.location.theta == c.theta);
        CHECK(p.location.phi == c.phi);

        // Orthonormal-frame Hessian from the derivative maps: the mixed frame
        // picks up a cot(theta) correction on the second angular entry.
        const double theta = grid.rings[grid.ring_of(p.pixel)].theta;
        const double h11 = maps.d11[p.pixel];
        const double h12 = maps.d12[p.pixel];
        const double h22 = maps.d22[p.pixel] + maps.d1[p.pixel] / std::tan(theta);
        const bool neg_def = h11 < 0.0 && h11 * h22 - h12 * h12 > 0.0;
        CHECK(p.hessian_neg_def == neg_def);
    }
}

TEST_CASE("plateaus never peak and bad maps are rejected") {
    const stem::SphereGrid grid = stem::build_grid(16);
    stem::AlmSet alm(8);
    alm.at(0, 0) = std::sqrt(4.0 * M_PI);  // f == 1 everywhere
    const stem::FieldMaps maps = stem::synthesize(alm, grid, 2);
    CHECK(stem::detect_peaks(maps).empty());

    const stem::FieldMaps first_order = stem::synthesize(alm, grid, 1);
    CHECK_THROWS_AS(stem::detect_peaks(first_order), stem::DomainError);

    stem::FieldMaps poisoned = maps;
    poisoned.f[5] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(stem::detect_peaks(poisoned), stem::DomainError);

    stem::FieldMaps clipped = maps;
    clipped.f.resize(grid.n_pixels - 1);
    CHECK_THROWS_AS(stem::detect_peaks(clipped), stem::DimensionError);
}

TEST_CASE("noiseless filtered source peaks at the source") {
    const stem::NeedletParams params{1.4, 8, 1};
    const int L = static_cast<int>(8.0 * params.scale()) + 2;
    const stem::PowerSpectrum spectrum = stem::PowerSpectrum::power_law(3.0, 1.0, L);

    stem::SourceCatalog cat;
    cat.t_n = 1e-5;
    cat.rho = 0.05;
    cat.sources.push_back({stem::make_point(1.0, 2.0), 1.0});
    const stem::SkyRealization sky = noiseless_sky(cat, spectrum);

    const stem::FilteredSky unit = stem::normalize(stem::filter_sky(sky, params));
    const stem::SphereGrid grid = stem::build_grid(
        static_cast<int>(std::lround(stem::kDefaultOversample * unit.y_alm.ell_max)));
    const stem::FieldMaps maps = stem::synthesize(unit.y_alm, grid, 2);
    const std::vector<stem::Peak> peaks = stem::detect_peaks(maps);

    REQUIRE(!peaks.empty());
    const double top = peaks[0].height;
    CHECK(top > 100.0);  // bright in sigma units
    // The filter's radially symmetric side ripples break into crest maxima
    // about three orders of magnitude below the main peak; above a relative
    // floor the source is the unique maximum.
    int dominant = 0;
    for (const stem::Peak& p : peaks) {
        if (p.height > 1e-3 * top) ++dominant;
    }
    CHECK(dominant == 1);
    CHECK(stem::geodesic_distance(peaks[0].location, cat.sources[0].xi) <
          grid.mean_pixel_spacing());
    CHECK(peaks[0].hessian_neg_def);
}

TEST_CASE("null skies match the height theory end to end") {
    const stem::NeedletParams params{1.4, 10, 1};
    const int L = static_cast<int>(8.0 * params.scale()) + 2;
    const stem::PowerSpectrum spectrum = stem::PowerSpectrum::power_law(3.0, 1.0, L);
    const stem::HeightModel model = stem::height_model(stem::moments(spectrum, params));
    const double expected_count = 4.0 * M_PI * model.r_total;

    const int reps = 100;
    stem::Rng rng(31337);
    stem::SourceCatalog empty_cat;

    double count_sum = 0.0;
    double negdef = 0.0, total = 0.0;
    std::vector<double> heights, pvals, fdps;
    for (int r = 0; r < reps; ++r) {
        stem::SkyRealization sky;
        sky.noise_alm = stem::sample_alm(spectrum, L, rng);
        sky.signal_alm = stem::AlmSet(L);
        sky.y_alm = sky.noise_alm;
        sky.catalog = empty_cat;
        sky.spectrum = spectrum;
        const stem::DetectionResult res = stem::run_stem(sky, params, 0.05, model);

        count_sum += static_cast<double>(res.peaks.size());
        for (const stem::Peak& p : res.peaks) {
            heights.push_back(p.height);
            pvals.push_back(p.p_value);
            total += 1.0;
            negdef += p.hessian_neg_def ? 1.0 : 0.0;
        }
        fdps.push_back(res.fdp);

        // Structural invariants on every replicate.
        CHECK(res.v_count + res.w_count == res.r_count);
        CHECK(res.r_count == res.bh_k);
        CHECK(res.fdp == res.v_count / static_cast<double>(std::max(res.r_count, 1)));
        CHECK(res.power == 0.0);
        int above = 0, above_lo = 0;
        for (const stem::Peak& p : res.peaks) {
            if (p.height > res.u_bh + 1e-6) ++above;
            if (p.height > res.u_bh - 1e-6) ++above_lo;
        }
        CHECK(above <= res.bh_k);
        CHECK(res.bh_k <= above_lo);
        for (std::size_t i = 0; i < res.peaks.size(); ++i) {
            const bool in_first_k = i < static_cast<std::size_t>(res.bh_k);
            CHECK(res.selected[i] == in_first_k);
            if (res.labels[i]) CHECK(res.selected[i]);
        }
    }

    const double mean_count = count_sum / reps;
    CHECK(mean_count == doctest::Approx(expected_count).epsilon(0.05));

    CHECK(ks_vs_height_law(heights, model) < 0.05);
    CHECK(ks_vs_uniform(pvals) < 0.05);

    // Nearly all discrete maxima carry a negative-definite analytic Hessian;
    // the rest sit near saddles the neighbor stencil cannot separate.
    CHECK(negdef / total >= 0.985);

    // Step-up selection on pure noise: mean false discovery proportion stays
    // at the nominal level within Monte Carlo error.
    double mean_fdp = 0.0;
    for (double f : fdps) mean_fdp += f;
    mean_fdp /= reps;
    double var = 0.0;
    for (double f : fdps) var += (f - mean_fdp) * (f - mean_fdp);
    const double se = std::sqrt(var / (reps - 1) / reps);
    CHECK(mean_fdp <= 0.05 + 2.0 * se + 1e-12);
}

TEST_CASE("tail probabilities decrease with height") {
    const stem::HeightModel model = stem::height_model(0.01, 1.2);
    std::vector<stem::Peak> peaks;
    peaks.push_back(peak_at(1.0, 0.0, 3.5));
    peaks.push_back(peak_at(1.1, 0.0, 2.0));
    peaks.push_back(peak_at(1.2, 0.0, 0.0));
    peaks.push_back(peak_at(1.3, 0.0, -1.5));
    peaks.push_back(peak_at(1.4, 0.0, 40.0));
    peaks = stem::assign_pvalues(std::move(peaks), model);

    CHECK(peaks[0].p_value < peaks[1].p_value);
    CHECK(peaks[1].p_value < peaks[2].p_value);
    CHECK(peaks[2].p_value < peaks[3].p_value);

    CHECK(peaks[4].p_value < 1e-12);
    CHECK(peaks[4].p_value > 0.0);

    CHECK(peaks[3].p_value <= 1.0);
    CHECK(peaks[3].p_value > 0.99);

    for (const stem::Peak& p : peaks) {
        CHECK(p.p_value == std::clamp(stem::height_tail_F(p.height, model),
                                      std::numeric_limits<double>::min(), 1.0));
    }
}

TEST_CASE("step-up selection matches a brute-force oracle") {
    // Worked example: the third smallest is the last below its line.
    {
        const std::vector<double> p = {0.001, 0.01, 0.02, 0.2, 0.5};
        const stem::BhSelection sel = stem::bh_select(p, 0.05);
        CHECK(sel.k == 3);
        CHECK(sel.p_star == doctest::Approx(3.0 * 0.05 / 5.0).epsilon(1e-15));
    }
    // Step-up can rescue an index above the nominal level line's start.
    {
        const stem::BhSelection sel = stem::bh_select({0.01, 0.026, 0.9}, 0.05);
        CHECK(sel.k == 2);
    }
    {
        const stem::BhSelection sel =
            stem::bh_select({0.9, 0.9, 0.9, 0.9, 0.9}, 0.05);
        CHECK(sel.k == 0);
        CHECK(sel.p_star == 0.0);
    }
    {
        const stem::BhSelection sel = stem::bh_select({}, 0.05);
        CHECK(sel.k == 0);
        CHECK(sel.p_star == 1.0);
    }

    stem::Rng rng(555);
    for (int trial = 0; trial < 1000; ++trial) {
        const int m = static_cast<int>(rng.uniform() * 50.0);
        std::vector<double> p(static_cast<std::size_t>(m));
        for (double& x : p) {
            x = rng.uniform();
            if (rng.uniform() < 0.3) x *= 1e-3;  // plant some signals
        }
        const double alpha = 0.01 + 0.2 * rng.uniform();
        const stem::BhSelection sel = stem::bh_select(p, alpha);
        const int k = bh_oracle(p, alpha);
        REQUIRE(sel.k == k);
        if (m > 0) {
            REQUIRE(sel.p_star == k * alpha / m);
        } else {
            REQUIRE(sel.p_star == 1.0);
        }
    }

    CHECK_THROWS_AS(stem::bh_select({0.5}, 0.0), stem::DomainError);
    CHECK_THROWS_AS(stem::bh_select({0.5}, 1.0), stem::DomainError);
}

TEST_CASE("step-up selection equals height thresholding") {
    const stem::HeightModel model = stem::height_model(0.02, 1.3);
    stem::Rng rng(808);
    for (int trial = 0; trial < 100; ++trial) {
        const int m = 1 + static_cast<int>(rng.uniform() * 40.0);
        std::vector<double> heights(static_cast<std::size_t>(m));
        for (double& h : heights) {
            h = rng.gaussian();
            if (rng.uniform() < 0.2) h += 4.0;  // planted signals
        }
        std::vector<double> p(heights.size());
        for (std::size_t i = 0; i < heights.size(); ++i) {
            p[i] = stem::height_tail_F(heights[i], model);
        }
        const stem::BhSelection sel = stem::bh_select(p, 0.1);
        if (sel.k == 0) {
            continue;  // threshold is +infinity, nothing to compare
        }
        const double u = stem::invert_F(sel.p_star, model).u;
        int above = 0;
        for (double h : heights) {
            if (h > u) ++above;
        }
        REQUIRE(above == sel.k);
    }
}

TEST_CASE("classification uses closed balls") {
    stem::SourceCatalog cat;
    cat.rho = 0.1;
    cat.sources.push_back({stem::make_point(0.5, 1.0), 1.0});
    cat.sources.push_back({stem::make_point(2.0, 4.0), 1.0});

    std::vector<stem::Peak> selected;
    selected.push_back(peak_at(0.5 + 0.05, 1.0, 5.0));  // inside first ball
    selected.push_back(peak_at(0.5 - 0.08, 1.0, 4.0));  // inside first ball too
    selected.push_back(peak_at(1.2, 2.0, 3.0));         // far from both

    const stem::Classification cls = stem::classify(selected, cat);
    REQUIRE(cls.true_discovery.size() == 3);
    CHECK(cls.true_discovery[0]);
    CHECK(cls.true_discovery[1]);
    CHECK_FALSE(cls.true_discovery[2]);
    REQUIRE(cls.detected_sources.size() == 2);
    CHECK(cls.detected_sources[0]);       // two peaks, still one source
    CHECK_FALSE(cls.detected_sources[1]); // nothing nearby

    // Exact boundary distance counts as a discovery.
    stem::SourceCatalog boundary;
    boundary.sources.push_back({stem::make_point(0.0, 0.0), 1.0});
    const stem::Peak edge = peak_at(0.25, 3.0, 2.0);
    boundary.rho = stem::geodesic_distance(edge.location, boundary.sources[0].xi);
    const stem::Classification bcls = stem::classify({edge}, boundary);
    CHECK(bcls.true_discovery[0]);

    // One peak within reach of two sources detects both.
    stem::SourceCatalog pair;
    pair.rho = 0.2;
    pair.sources.push_back({stem::make_point(1.0, 1.0), 1.0});
    pair.sources.push_back({stem::make_point(1.3, 1.0), 1.0});
    const stem::Classification pcls =
        stem::classify({peak_at(1.15, 1.0, 2.0)}, pair);
    CHECK(pcls.true_discovery[0]);
    CHECK(pcls.detected_sources[0]);
    CHECK(pcls.detected_sources[1]);

    // Empty catalog: everything is a false discovery.
    const stem::Classification ecls =
        stem::classify({peak_at(1.0, 1.0, 2.0)}, stem::SourceCatalog{});
    CHECK_FALSE(ecls.true_discovery[0]);
    CHECK(ecls.detected_sources.empty());

    stem::SourceCatalog bad;
    bad.sources.push_back({stem::make_point(1.0, 1.0), 1.0});
    bad.rho = 0.0;
    CHECK_THROWS_AS(stem::classify({peak_at(1.0, 1.0, 2.0)}, bad), stem::DomainError);
}

TEST_CASE("discovery rates follow the counting identities") {
    {
        stem::Classification cls;
        cls.detected_sources = {false, false};
        const stem::FdpPower fp = stem::compute_fdp_power(cls);
        CHECK(fp.r_count == 0);
        CHECK(fp.fdp == 0.0);
        CHECK(fp.power == 0.0);
    }
    {
        stem::Classification cls;
        cls.true_discovery = {true, true, true, false, false};
        cls.detected_sources = {true, false, true, false};
        const stem::FdpPower fp = stem::compute_fdp_power(cls);
        CHECK(fp.r_count == 5);
        CHECK(fp.v_count == 2);
        CHECK(fp.w_count == 3);
        CHECK(fp.fdp == doctest::Approx(0.4).epsilon(1e-15));
        CHECK(fp.power == doctest::Approx(0.5).epsilon(1e-15));
    }
    {
        const stem::FdpPower fp = stem::compute_fdp_power(stem::Classification{});
        CHECK(fp.power == 0.0);
        CHECK(fp.fdp == 0.0);
    }
}

TEST_CASE("ten bright sources are all recovered") {
    const stem::NeedletParams params{1.4, 8, 1};
    const int L = static_cast<int>(8.0 * params.scale()) + 2;
    const stem::PowerSpectrum spectrum = stem::PowerSpectrum::power_law(3.0, 1.0, L);

    stem::SourceCatalog cat;
    cat.t_n = 1e-5;
    cat.rho = 0.05;
    stem::Rng prng(5);
    const std::vector<stem::SpherePoint> pts = stem::uniform_points(40, prng);
    for (const stem::SpherePoint& pt : pts) {
        bool ok = true;
        for (const stem::Source& s : cat.sources) {
            if (stem::geodesic_distance(pt, s.xi) < 0.5) {
                ok = false;
                break;
            }
        }
        if (ok) cat.sources.push_back({pt, 2.0});
        if (cat.sources.size() == 10) break;
    }
    REQUIRE(cat.sources.size() == 10);

    const stem::SkyRealization sky = noiseless_sky(cat, spectrum);
    const stem::HeightModel model = stem::height_model(stem::moments(spectrum, params));
    const stem::DetectionResult res = stem::run_stem(sky, params, 0.05, model);

    CHECK(res.bh_k == 10);
    CHECK(res.r_count == 10);
    CHECK(res.v_count == 0);
    CHECK(res.w_count == 10);
    CHECK(res.fdp == 0.0);
    CHECK(res.power == 1.0);
    for (bool detected : res.detected_sources) CHECK(detected);

    // Determinism: identical input gives an identical result.
    const stem::DetectionResult res2 = stem::run_stem(sky, params, 0.05, model);
    CHECK(res2.bh_k == res.bh_k);
    CHECK(res2.u_bh == res.u_bh);
    REQUIRE(res2.peaks.size() == res.peaks.size());
    for (std::size_t i = 0; i < res.peaks.size(); ++i) {
        CHECK(res2.peaks[i].pixel == res.peaks[i].pixel);
        CHECK(res2.peaks[i].height == res.peaks[i].height);
    }
}

TEST_CASE("stronger amplitudes never lower source heights") {
    const stem::NeedletParams params{1.4, 8, 1};
    const int L = static_cast<int>(8.0 * params.scale()) + 2;
    const stem::PowerSpectrum spectrum = stem::PowerSpectrum::power_law(3.0, 1.0, L);

    stem::SourceCatalog cat;
    cat.t_n = 1e-5;
    cat.rho = 0.05;
    cat.sources.push_back({stem::make_point(0.8, 0.3), 0.7});
    cat.sources.push_back({stem::make_point(1.7, 2.9), 1.1});
    cat.sources.push_back({stem::make_point(2.4, 5.1), 0.4});

    stem::SourceCatalog doubled = cat;
    for (stem::Source& s : doubled.sources) s.amplitude *= 2.0;

    stem::Rng rng(4242);
    const stem::AlmSet noise = stem::sample_alm(spectrum, L, rng);
    std::vector<stem::SpherePoint> where;
    for (const stem::Source& s : cat.sources) where.push_back(s.xi);

    const auto heights_for = [&](const stem::SourceCatalog& c) {
        stem::SkyRealization sky;
        sky.noise_alm = noise;
        sky.signal_alm = stem::build_signal_alm(c, L);
        sky.y_alm = stem::AlmSet(L);
        for (std::size_t i = 0; i < sky.y_alm.coef.size(); ++i) {
            sky.y_alm.coef[i] = sky.noise_alm.coef[i] + sky.signal_alm.coef[i];
        }
        sky.catalog = c;
        sky.spectrum = spectrum;
        const stem::FilteredSky unit = stem::normalize(stem::filter_sky(sky, params));
        return stem::evaluate_at_points(unit.y_alm, where);
    };

    const std::vector<double> h1 = heights_for(cat);
    const std::vector<double> h2 = heights_for(doubled);
    for (std::size_t i = 0; i < where.size(); ++i) {
        CHECK(h2[i] > h1[i]);
    }
}

TEST_CASE("pipeline validates inputs") {
    const stem::NeedletParams params{1.4, 8, 1};
    const int L = static_cast<int>(8.0 * params.scale()) + 2;
    const stem::PowerSpectrum spectrum = stem::PowerSpectrum::power_law(3.0, 1.0, L);
    stem::SourceCatalog cat;
    cat.t_n = 1e-5;
    cat.rho = 0.05;
    cat.sources.push_back({stem::make_point(1.0, 2.0), 1.0});
    const stem::SkyRealization sky = noiseless_sky(cat, spectrum);
    const stem::HeightModel model = stem::height_model(stem::moments(spectrum, params));

    CHECK_THROWS_AS(stem::run_stem(sky, params, 0.05, model, false, 0.5),
                    stem::DomainError);
    CHECK_THROWS_AS(stem::run_stem(sky, params, 0.0, model), stem::DomainError);
}

} // TEST_SUITE
