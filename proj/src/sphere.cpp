#include "stem/sphere.hpp"

#include <gsl/gsl_integration.h>

#include <algorithm>
#include <cmath>

#include "stem/errors.hpp"

namespace stem {

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

double wrap_phi(double phi) {
    double w = std::fmod(phi, kTwoPi);
    if (w < 0.0) w += kTwoPi;
    // fmod can return exactly 2*pi after the correction when phi is a tiny
    // negative number; fold that back to 0.
    if (w >= kTwoPi) w = 0.0;
    return w;
}

} // namespace

std::array<double, 3> SpherePoint::unit_vector() const {
    const double st = std::sin(theta);
    return {st * std::cos(phi), st * std::sin(phi), std::cos(theta)};
}

SpherePoint make_point(double theta, double phi) {
    if (!std::isfinite(theta) || !std::isfinite(phi)) {
        throw DomainError("make_point: angles must be finite");
    }
    if (theta < -1e-12 || theta > M_PI + 1e-12) {
        throw DomainError("make_point: theta outside [0, pi]");
    }
    theta = std::clamp(theta, 0.0, M_PI);
    const bool at_pole = (theta == 0.0 || theta == M_PI);
    return {theta, at_pole ? 0.0 : wrap_phi(phi)};
}

double geodesic_distance(const SpherePoint& a, const SpherePoint& b) {
    const auto u = a.unit_vector();
    const auto v = b.unit_vector();
    const double dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    const std::array<double, 3> cross = {u[1] * v[2] - u[2] * v[1],
                                         u[2] * v[0] - u[0] * v[2],
                                         u[0] * v[1] - u[1] * v[0]};
    const double cross_norm =
        std::sqrt(cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]);
    // atan2 keeps full precision for both nearly-coincident and
    // nearly-antipodal pairs, unlike acos of the clamped dot product.
    return std::atan2(cross_norm, dot);
}

double cap_area(double rho) {
    if (!(rho > 0.0) || rho > M_PI) {
        throw DomainError("cap_area: rho must lie in (0, pi]");
    }
    return kTwoPi * (1.0 - std::cos(rho));
}

SphereGrid build_grid(int ell_max) {
    if (ell_max < 1) throw DomainError("build_grid: ell_max must be >= 1");

    const std::size_t n_rings = static_cast<std::size_t>(ell_max) + 1;
    gsl_integration_glfixed_table* table = gsl_integration_glfixed_table_alloc(n_rings);
    if (table == nullptr) throw std::bad_alloc();

    SphereGrid grid;
    grid.ell_max = ell_max;
    grid.rings.resize(n_rings);
    const std::size_t n_phi = 2 * static_cast<std::size_t>(ell_max) + 2;

    // Nodes come back ordered by increasing x = cos(theta); fill rings from
    // the south end so colatitude increases with ring index.
    for (std::size_t i = 0; i < n_rings; ++i) {
        double x = 0.0;
        double w = 0.0;
        gsl_integration_glfixed_point(-1.0, 1.0, i, &x, &w, table);
        Ring& ring = grid.rings[n_rings - 1 - i];
        ring.theta = std::acos(std::clamp(x, -1.0, 1.0));
        ring.weight = w;
        ring.n_phi = n_phi;
    }
    gsl_integration_glfixed_table_free(table);

    std::size_t first = 0;
    for (auto& ring : grid.rings) {
        ring.first = first;
        first += ring.n_phi;
    }
    grid.n_pixels = first;
    return grid;
}

std::size_t SphereGrid::ring_of(std::size_t pix) const {
    if (pix >= n_pixels) throw DimensionError("ring_of: pixel index out of range");
    // Rings share a pixel count in grids built here, but the search below
    // stays correct for any ring layout.
    std::size_t lo = 0;
    std::size_t hi = rings.size() - 1;
    while (lo < hi) {
        const std::size_t mid = (lo + hi + 1) / 2;
        if (rings[mid].first <= pix) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    return lo;
}

SpherePoint SphereGrid::pixel_center(std::size_t pix) const {
    const Ring& ring = rings[ring_of(pix)];
    const std::size_t k = pix - ring.first;
    return {ring.theta, kTwoPi * static_cast<double>(k) / static_cast<double>(ring.n_phi)};
}

double SphereGrid::pixel_weight(std::size_t pix) const {
    const Ring& ring = rings[ring_of(pix)];
    return ring.weight * kTwoPi / static_cast<double>(ring.n_phi);
}

double SphereGrid::mean_pixel_spacing() const {
    return std::sqrt(4.0 * M_PI / static_cast<double>(n_pixels));
}

namespace {

/// Appends the pixels of `ring` whose closed longitude interval intersects
/// the closed interval of pixel k on a ring of n pixels, corner touches
/// included.  Exact integer arithmetic avoids floating-point boundary
/// ambiguity: pixel k spans [k/n, (k+1)/n] turns, pixel q spans
/// [q/m, (q+1)/m] turns, and the intervals meet iff
/// k*m <= (q+1)*n and q*n <= (k+1)*m.
void append_overlapping(const Ring& ring,
                        std::size_t k,
                        std::size_t n,
                        std::vector<std::size_t>& out) {
    const long long m = static_cast<long long>(ring.n_phi);
    const long long nn = static_cast<long long>(n);
    const long long km = static_cast<long long>(k) * m;
    const long long k1m = km + m;
    const long long q_min = (km + nn - 1) / nn - 1;  // ceil(k*m/n) - 1
    const long long q_max = k1m / nn;                // floor((k+1)*m/n)
    const long long count = std::min(q_max - q_min + 1, m);
    for (long long i = 0; i < count; ++i) {
        const long long q = ((q_min + i) % m + m) % m;
        out.push_back(ring.first + static_cast<std::size_t>(q));
    }
}

} // namespace

std::vector<std::size_t> pixel_neighbors(const SphereGrid& grid, std::size_t pix) {
    if (pix >= grid.n_pixels) throw DimensionError("pixel_neighbors: pixel index out of range");
    const std::size_t r = grid.ring_of(pix);
    const Ring& ring = grid.rings[r];
    const std::size_t k = pix - ring.first;
    const std::size_t n = ring.n_phi;

    std::vector<std::size_t> out;
    out.reserve(10);
    if (n > 1) {
        out.push_back(ring.first + (k + 1) % n);
        out.push_back(ring.first + (k + n - 1) % n);
    }
    if (r > 0) append_overlapping(grid.rings[r - 1], k, n, out);
    if (r + 1 < grid.rings.size()) append_overlapping(grid.rings[r + 1], k, n, out);

    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    out.erase(std::remove(out.begin(), out.end(), pix), out.end());
    return out;
}

std::vector<SpherePoint> uniform_points(std::size_t n, Rng& rng) {
    std::vector<SpherePoint> points;
    points.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double z = rng.uniform(-1.0, 1.0);
        const double phi = rng.uniform(0.0, kTwoPi);
        points.push_back(make_point(std::acos(std::clamp(z, -1.0, 1.0)), phi));
    }
    return points;
}

} // namespace stem
