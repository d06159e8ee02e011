#include "stem/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "stem/errors.hpp"

namespace stem {

namespace {

/// Negative definiteness of the covariant Hessian in the orthonormal polar
/// frame: H11 = d11, H12 = d12, H22 = d22 + cot(theta) d1 (the connection
/// term; it vanishes at exact critical points but not at discrete maxima).
bool neg_def_at(const FieldMaps& maps, std::size_t pix, double theta) {
    const double h11 = maps.d11[pix];
    const double h12 = maps.d12[pix];
    const double h22 = maps.d22[pix] + maps.d1[pix] / std::tan(theta);
    return h11 < 0.0 && h11 * h22 - h12 * h12 > 0.0;
}

} // namespace

std::vector<Peak> detect_peaks(const FieldMaps& maps) {
    if (maps.deriv_order < 2) {
        throw DomainError("detect_peaks: maps must carry second derivatives");
    }
    const SphereGrid& grid = maps.grid;
    if (maps.f.size() != grid.n_pixels) {
        throw DimensionError("detect_peaks: map size does not match its grid");
    }
    for (double v : maps.f) {
        if (!std::isfinite(v)) {
            throw DomainError("detect_peaks: field contains non-finite values");
        }
    }

    std::vector<Peak> peaks;
    for (std::size_t ring = 0; ring < grid.rings.size(); ++ring) {
        const Ring& r = grid.rings[ring];
        for (std::size_t k = 0; k < r.n_phi; ++k) {
            const std::size_t pix = r.first + k;
            const double h = maps.f[pix];
            bool is_max = true;
            for (std::size_t nb : pixel_neighbors(grid, pix)) {
                if (!(h > maps.f[nb])) {
                    is_max = false;
                    break;
                }
            }
            if (!is_max) continue;
            Peak peak;
            peak.pixel = pix;
            peak.location = grid.pixel_center(pix);
            peak.height = h;
            peak.hessian_neg_def = neg_def_at(maps, pix, r.theta);
            peaks.push_back(peak);
        }
    }

    std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
        if (a.height != b.height) return a.height > b.height;
        return a.pixel < b.pixel;
    });
    return peaks;
}

std::vector<Peak> assign_pvalues(std::vector<Peak> peaks, const HeightModel& model) {
    for (Peak& peak : peaks) {
        const double p = height_tail_F(peak.height, model);
        peak.p_value = std::clamp(p, std::numeric_limits<double>::min(), 1.0);
    }
    return peaks;
}

BhSelection bh_select(std::vector<double> p_values, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw DomainError("bh_select: alpha must lie in (0, 1)");
    }
    BhSelection out;
    const int m = static_cast<int>(p_values.size());
    if (m == 0) {
        out.k = 0;
        out.p_star = 1.0;
        return out;
    }
    std::sort(p_values.begin(), p_values.end());
    for (int i = m; i >= 1; --i) {
        if (p_values[static_cast<std::size_t>(i - 1)] < i * alpha / m) {
            out.k = i;
            break;
        }
    }
    out.p_star = out.k * alpha / m;
    return out;
}

Classification classify(const std::vector<Peak>& selected, const SourceCatalog& catalog) {
    if (!catalog.sources.empty() && !(catalog.rho > 0.0)) {
        throw DomainError("classify: catalog tolerance radius must be positive");
    }
    Classification out;
    out.true_discovery.assign(selected.size(), false);
    out.detected_sources.assign(catalog.size(), false);
    for (std::size_t i = 0; i < selected.size(); ++i) {
        for (std::size_t k = 0; k < catalog.size(); ++k) {
            if (geodesic_distance(selected[i].location, catalog.sources[k].xi) <=
                catalog.rho) {
                out.true_discovery[i] = true;
                out.detected_sources[k] = true;
            }
        }
    }
    return out;
}

FdpPower compute_fdp_power(const Classification& cls) {
    FdpPower out;
    out.r_count = static_cast<int>(cls.true_discovery.size());
    for (bool t : cls.true_discovery) {
        if (t) ++out.w_count;
    }
    out.v_count = out.r_count - out.w_count;
    out.fdp = out.v_count / static_cast<double>(std::max(out.r_count, 1));
    if (!cls.detected_sources.empty()) {
        int hit = 0;
        for (bool d : cls.detected_sources) {
            if (d) ++hit;
        }
        out.power = hit / static_cast<double>(cls.detected_sources.size());
    }
    return out;
}

std::vector<Peak> detect_filtered(const FilteredSky& unit,
                                  double oversample,
                                  bool require_neg_def) {
    if (!(oversample >= 1.0)) {
        throw DomainError("detect_filtered: oversample must be >= 1");
    }
    const int band = unit.y_alm.ell_max;
    const SphereGrid grid =
        build_grid(std::max(band, static_cast<int>(std::lround(oversample * band))));
    const FieldMaps maps = synthesize(unit.y_alm, grid, 2);

    std::vector<Peak> peaks = detect_peaks(maps);
    if (require_neg_def) {
        std::erase_if(peaks, [](const Peak& p) { return !p.hessian_neg_def; });
    }
    return peaks;
}

DetectionResult run_stem(const SkyRealization& sky,
                         const NeedletParams& params,
                         double alpha,
                         const HeightModel& model,
                         bool require_neg_def,
                         double oversample) {
    const FilteredSky unit = normalize(filter_sky(sky, params));
    std::vector<Peak> peaks =
        assign_pvalues(detect_filtered(unit, oversample, require_neg_def), model);

    std::vector<double> p_values(peaks.size());
    for (std::size_t i = 0; i < peaks.size(); ++i) p_values[i] = peaks[i].p_value;
    const BhSelection sel = bh_select(p_values, alpha);

    DetectionResult result;
    result.peaks = std::move(peaks);
    result.bh_k = sel.k;
    // Height threshold equivalent to the p-value rule: selected iff height
    // exceeds the p_star quantile.  Empty input keeps the conventional
    // boundary 1, whose quantile is -infinity; k = 0 on a nonempty input has
    // boundary 0, whose quantile is +infinity.
    if (result.peaks.empty()) {
        result.u_bh = -std::numeric_limits<double>::infinity();
    } else if (sel.k == 0) {
        result.u_bh = std::numeric_limits<double>::infinity();
    } else {
        result.u_bh = invert_F(sel.p_star, model).u;
    }

    // Peaks are sorted by descending height and the tail probability is
    // decreasing, so the k smallest p-values are the first k peaks.
    result.selected.assign(result.peaks.size(), false);
    std::vector<Peak> chosen;
    chosen.reserve(static_cast<std::size_t>(sel.k));
    for (int i = 0; i < sel.k; ++i) {
        result.selected[static_cast<std::size_t>(i)] = true;
        chosen.push_back(result.peaks[static_cast<std::size_t>(i)]);
    }

    const Classification cls = classify(chosen, sky.catalog);
    result.labels.assign(result.peaks.size(), false);
    for (int i = 0; i < sel.k; ++i) {
        result.labels[static_cast<std::size_t>(i)] = cls.true_discovery[static_cast<std::size_t>(i)];
    }
    result.detected_sources = cls.detected_sources;

    const FdpPower rates = compute_fdp_power(cls);
    result.r_count = rates.r_count;
    result.v_count = rates.v_count;
    result.w_count = rates.w_count;
    result.fdp = rates.fdp;
    result.power = rates.power;
    return result;
}

} // namespace stem
