#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "stem/errors.hpp"
#include "stem/sphere.hpp"

using namespace stem;

namespace {

/// Oracle for ring-overlap neighbor finding: floating-point closed-interval
/// intersection with a tolerance wide enough to catch corner touches but far
/// narrower than any pixel.
std::vector<std::size_t> brute_force_neighbors(const SphereGrid& grid, std::size_t pix) {
    const std::size_t r = grid.ring_of(pix);
    const Ring& ring = grid.rings[r];
    const std::size_t k = pix - ring.first;
    const double n = static_cast<double>(ring.n_phi);
    const double lo = k / n;
    const double hi = (k + 1) / n;
    const double eps = 1e-9;

    std::vector<std::size_t> out;
    if (ring.n_phi > 1) {
        out.push_back(ring.first + (k + 1) % ring.n_phi);
        out.push_back(ring.first + (k + ring.n_phi - 1) % ring.n_phi);
    }
    for (std::size_t dr : {r - 1, r + 1}) {
        if (dr >= grid.rings.size()) continue;  // r - 1 wraps for r = 0
        const Ring& other = grid.rings[dr];
        const double m = static_cast<double>(other.n_phi);
        for (std::size_t q = 0; q < other.n_phi; ++q) {
            const double qlo = q / m;
            const double qhi = (q + 1) / m;
            // Compare on the circle: also test shifted copies for wraparound.
            bool hit = false;
            for (double shift : {-1.0, 0.0, 1.0}) {
                if (qlo + shift <= hi + eps && lo - eps <= qhi + shift) hit = true;
            }
            if (hit) out.push_back(other.first + q);
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

} // namespace

TEST_SUITE("sphere") {

TEST_CASE("geodesic distance basics") {
    const SpherePoint north = make_point(0.0, 0.0);
    const SpherePoint south = make_point(M_PI, 0.0);
    CHECK(geodesic_distance(north, north) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(geodesic_distance(north, south) == doctest::Approx(M_PI).epsilon(1e-15));

    // Distance from the pole equals the colatitude.
    for (double theta : {0.1, 0.7, 1.3, 2.9}) {
        for (double phi : {0.0, 1.0, 4.5}) {
            CHECK(geodesic_distance(north, make_point(theta, phi)) ==
                  doctest::Approx(theta).epsilon(1e-14));
        }
    }

    // Along the equator the distance is the wrapped longitude gap.
    const SpherePoint a = make_point(M_PI / 2, 0.3);
    const SpherePoint b = make_point(M_PI / 2, 1.1);
    CHECK(geodesic_distance(a, b) == doctest::Approx(0.8).epsilon(1e-13));
}

TEST_CASE("geodesic distance symmetry and triangle inequality") {
    Rng rng(12345);
    const auto pts = uniform_points(60, rng);
    for (std::size_t i = 0; i < pts.size(); i += 3) {
        const auto& x = pts[i];
        const auto& y = pts[i + 1];
        const auto& z = pts[i + 2];
        CHECK(geodesic_distance(x, y) == doctest::Approx(geodesic_distance(y, x)).epsilon(1e-15));
        CHECK(geodesic_distance(x, z) <= geodesic_distance(x, y) + geodesic_distance(y, z) + 1e-12);
    }
}

TEST_CASE("nearly antipodal and nearly coincident points keep precision") {
    const SpherePoint a = make_point(1.0, 2.0);
    const SpherePoint b = make_point(1.0, 2.0 + 1e-9);
    const double d = geodesic_distance(a, b);
    CHECK(d == doctest::Approx(1e-9 * std::sin(1.0)).epsilon(1e-6));

    const SpherePoint c = make_point(M_PI - 1.0, 2.0 + M_PI);
    const double dd = geodesic_distance(a, c);
    CHECK(dd == doctest::Approx(M_PI).epsilon(1e-9));
}

TEST_CASE("make_point canonicalization") {
    CHECK(make_point(0.5, 7.0).phi == doctest::Approx(7.0 - 2 * M_PI));
    CHECK(make_point(0.5, -0.5).phi == doctest::Approx(2 * M_PI - 0.5));
    CHECK(make_point(0.0, 3.0).phi == 0.0);
    CHECK(make_point(M_PI, 3.0).phi == 0.0);
    CHECK_THROWS_AS(make_point(-0.1, 0.0), DomainError);
    CHECK_THROWS_AS(make_point(M_PI + 0.1, 0.0), DomainError);
}

TEST_CASE("cap area closed forms and domain") {
    CHECK(cap_area(M_PI) == doctest::Approx(4 * M_PI).epsilon(1e-15));
    CHECK(cap_area(M_PI / 2) == doctest::Approx(2 * M_PI).epsilon(1e-15));
    CHECK_THROWS_AS(cap_area(0.0), DomainError);
    CHECK_THROWS_AS(cap_area(-1.0), DomainError);
    CHECK_THROWS_AS(cap_area(3.2), DomainError);
}

TEST_CASE("cap area matches Monte Carlo hit fraction") {
    Rng rng(777);
    const SpherePoint center = make_point(1.1, 0.4);
    const double rho = 0.8;
    const std::size_t n = 200000;
    const auto pts = uniform_points(n, rng);
    std::size_t hits = 0;
    for (const auto& p : pts) {
        if (geodesic_distance(center, p) <= rho) ++hits;
    }
    const double frac = cap_area(rho) / (4 * M_PI);
    const double se = std::sqrt(frac * (1 - frac) / n);
    CHECK(std::abs(static_cast<double>(hits) / n - frac) < 5 * se);
}

TEST_CASE("grid structure invariants") {
    const SphereGrid grid = build_grid(16);
    CHECK(grid.rings.size() == 17);
    CHECK(grid.n_pixels == 17 * 34);

    double weight_sum = 0.0;
    double prev_theta = -1.0;
    for (const auto& ring : grid.rings) {
        CHECK(ring.weight > 0.0);
        CHECK(ring.theta > prev_theta);
        CHECK(ring.n_phi >= 2 * 16 + 1);
        prev_theta = ring.theta;
        weight_sum += ring.weight;
    }
    CHECK(weight_sum == doctest::Approx(2.0).epsilon(1e-14));

    double area = 0.0;
    for (std::size_t p = 0; p < grid.n_pixels; ++p) area += grid.pixel_weight(p);
    CHECK(area == doctest::Approx(4 * M_PI).epsilon(1e-13));

    CHECK_THROWS_AS(build_grid(0), DomainError);
}

TEST_CASE("colatitude quadrature is exact through degree 2*ell_max + 1") {
    const int ell_max = 8;
    const SphereGrid grid = build_grid(ell_max);
    for (int k = 0; k <= 2 * ell_max + 1; ++k) {
        double sum = 0.0;
        for (const auto& ring : grid.rings) {
            sum += ring.weight * std::pow(std::cos(ring.theta), k);
        }
        const double exact = (k % 2 == 0) ? 2.0 / (k + 1) : 0.0;
        CHECK(std::abs(sum - exact) < 1e-13);
    }
}

TEST_CASE("pixel indexing round-trips") {
    const SphereGrid grid = build_grid(9);
    std::size_t pix = 0;
    for (std::size_t r = 0; r < grid.rings.size(); ++r) {
        for (std::size_t k = 0; k < grid.rings[r].n_phi; ++k, ++pix) {
            CHECK(grid.ring_of(pix) == r);
            const SpherePoint c = grid.pixel_center(pix);
            CHECK(c.theta == doctest::Approx(grid.rings[r].theta));
            CHECK(c.phi == doctest::Approx(2 * M_PI * k / grid.rings[r].n_phi));
        }
    }
    CHECK(pix == grid.n_pixels);
}

TEST_CASE("pixel neighbors match the brute-force interval oracle") {
    const SphereGrid grid = build_grid(6);
    for (std::size_t p = 0; p < grid.n_pixels; ++p) {
        const auto got = pixel_neighbors(grid, p);
        const auto want = brute_force_neighbors(grid, p);
        CHECK(got == want);
    }
}

TEST_CASE("pixel neighbor relation is symmetric with at least 4 entries") {
    const SphereGrid grid = build_grid(6);
    std::vector<std::set<std::size_t>> nbrs(grid.n_pixels);
    for (std::size_t p = 0; p < grid.n_pixels; ++p) {
        const auto list = pixel_neighbors(grid, p);
        CHECK(list.size() >= 4);
        nbrs[p] = std::set<std::size_t>(list.begin(), list.end());
        CHECK(nbrs[p].count(p) == 0);
    }
    for (std::size_t p = 0; p < grid.n_pixels; ++p) {
        for (std::size_t q : nbrs[p]) {
            CHECK(nbrs[q].count(p) == 1);
        }
    }
}

TEST_CASE("equatorial pixel on aligned uniform rings has 8 neighbors") {
    const SphereGrid grid = build_grid(6);  // 7 rings, middle ring index 3
    const Ring& mid = grid.rings[3];
    const auto nbrs = pixel_neighbors(grid, mid.first + 5);
    CHECK(nbrs.size() == 8);
}

TEST_CASE("uniform points are deterministic and uniformly distributed") {
    Rng a(42);
    Rng b(42);
    const auto pa = uniform_points(50, a);
    const auto pb = uniform_points(50, b);
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].theta == pb[i].theta);
        CHECK(pa[i].phi == pb[i].phi);
    }

    Rng rng(2024);
    const std::size_t n = 100000;
    const auto pts = uniform_points(n, rng);
    double mean_z = 0.0;
    double mean_x = 0.0;
    for (const auto& p : pts) {
        const auto v = p.unit_vector();
        mean_z += v[2];
        mean_x += v[0];
    }
    mean_z /= n;
    mean_x /= n;
    // Components of a uniform direction have variance 1/3.
    const double se = std::sqrt(1.0 / 3.0 / n);
    CHECK(std::abs(mean_z) < 5 * se);
    CHECK(std::abs(mean_x) < 5 * se);
}

} // TEST_SUITE
