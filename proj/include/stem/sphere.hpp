#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "stem/rng.hpp"

namespace stem {

/// Point on the unit sphere: colatitude theta in [0, pi], longitude phi in
/// [0, 2*pi).  Poles are canonicalized to phi = 0.
struct SpherePoint {
    double theta = 0.0;
    double phi = 0.0;

    std::array<double, 3> unit_vector() const;
};

/// Builds a canonical point: theta clamped into [0, pi] (tolerating 1e-12 of
/// roundoff, rejecting anything further out), phi wrapped into [0, 2*pi).
SpherePoint make_point(double theta, double phi);

/// Spherical cap of geodesic radius rho around a center.
struct CapSpec {
    SpherePoint center;
    double rho = 0.0;
};

/// One iso-latitude ring of pixels, phi_k = 2*pi*k / n_phi.
struct Ring {
    double theta = 0.0;       ///< colatitude of every pixel on the ring
    double weight = 0.0;      ///< Gauss-Legendre weight in cos(theta); ring weights sum to 2
    std::size_t n_phi = 0;    ///< pixel count on the ring
    std::size_t first = 0;    ///< global index of the ring's phi = 0 pixel
};

/// Iso-latitude sphere pixelization with Gauss-Legendre nodes in cos(theta):
/// ell_max + 1 rings makes the colatitude quadrature exact for polynomials in
/// cos(theta) up to degree 2*ell_max + 1, and 2*ell_max + 2 uniform
/// longitudes per ring sample every azimuthal frequency |m| <= ell_max
/// alias-free.  Pixels are indexed ring-major, north to south.
struct SphereGrid {
    int ell_max = 0;
    std::vector<Ring> rings;
    std::size_t n_pixels = 0;

    SpherePoint pixel_center(std::size_t pix) const;
    std::size_t ring_of(std::size_t pix) const;

    /// Solid-angle quadrature weight of one pixel: ring weight * 2*pi / n_phi.
    /// Pixel weights sum to 4*pi.
    double pixel_weight(std::size_t pix) const;

    /// Mean linear pixel scale, sqrt(4*pi / n_pixels).
    double mean_pixel_spacing() const;
};

/// Geodesic (great-circle) distance in [0, pi].
double geodesic_distance(const SpherePoint& a, const SpherePoint& b);

/// Area 2*pi*(1 - cos(rho)) of a cap of radius rho, for rho in (0, pi].
double cap_area(double rho);

/// Builds the Gauss-Legendre grid for the given band limit (ell_max >= 1).
SphereGrid build_grid(int ell_max);

/// Neighbors of a pixel: both longitude neighbors on its own ring plus every
/// pixel on an adjacent ring whose closed longitude interval intersects the
/// pixel's own (corner touches count).  The relation is symmetric, works for
/// rings of differing pixel counts, and yields at least 4 neighbors.
std::vector<std::size_t> pixel_neighbors(const SphereGrid& grid, std::size_t pix);

/// n points drawn independently from the uniform distribution on the sphere
/// (cos(theta) uniform in [-1, 1), then phi uniform in [0, 2*pi)).
std::vector<SpherePoint> uniform_points(std::size_t n, Rng& rng);

} // namespace stem
