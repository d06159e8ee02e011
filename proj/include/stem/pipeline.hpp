#pragma once

#include <cstddef>
#include <vector>

#include "stem/harmonic.hpp"
#include "stem/needlet.hpp"
#include "stem/peaks.hpp"
#include "stem/sky.hpp"
#include "stem/sphere.hpp"

namespace stem {

/// One detected local maximum of a normalized filtered map.
struct Peak {
    std::size_t pixel = 0;        ///< grid index of the maximum
    SpherePoint location;         ///< pixel center
    double height = 0.0;          ///< field value in noise-sigma units
    double p_value = 1.0;         ///< right-tail probability of the height
    bool hessian_neg_def = false; ///< analytic Hessian negative definite
};

/// Step-up selection outcome on a p-value list.
struct BhSelection {
    int k = 0;            ///< number of rejected hypotheses
    double p_star = 1.0;  ///< rejection boundary k*alpha/m; defined as 1 when m = 0
};

/// Truth labels for a selected peak set against a source catalog.
struct Classification {
    std::vector<bool> true_discovery;   ///< per selected peak: within rho of a source
    std::vector<bool> detected_sources; ///< per source: has a selected peak within rho
};

/// Discovery counts and rates of one selection.
struct FdpPower {
    int r_count = 0;    ///< selected peaks
    int v_count = 0;    ///< false discoveries
    int w_count = 0;    ///< true discoveries
    double fdp = 0.0;   ///< v / max(r, 1)
    double power = 0.0; ///< fraction of sources detected (0 when no sources)
};

/// Full outcome of one detection run.  `peaks` is sorted by descending
/// height; `selected` marks the step-up rejections and `labels` marks which
/// of those fall within the catalog tolerance (false wherever unselected).
struct DetectionResult {
    std::vector<Peak> peaks;
    int bh_k = 0;
    double u_bh = 0.0;  ///< height threshold equivalent to the p-value rule
    std::vector<bool> selected;
    std::vector<bool> labels;
    int v_count = 0;
    int r_count = 0;
    int w_count = 0;
    double fdp = 0.0;
    double power = 0.0;
    std::vector<bool> detected_sources;
};

/// Grid band limit used for map synthesis, as a multiple of the filtered
/// band.  3.0 puts roughly three pixels per field correlation radius, small
/// enough that discrete neighbor maxima track the continuous maxima to well
/// under a percent in count.
inline constexpr double kDefaultOversample = 3.0;

/// Strict local maxima of maps.f over the pixel neighbor relation, sorted by
/// descending height (ties broken by pixel index).  Requires second
/// derivatives (deriv_order = 2) to record the analytic-Hessian diagnostic;
/// a plateau never yields a peak.
std::vector<Peak> detect_peaks(const FieldMaps& maps);

/// Synthesis-and-detection front end shared by run_stem and the Monte Carlo
/// drivers: synthesizes the normalized filtered field on a grid whose band
/// limit is oversample times the filtered band, finds the strict neighbor
/// maxima, and optionally drops peaks without a negative-definite Hessian.
std::vector<Peak> detect_filtered(const FilteredSky& unit,
                                  double oversample = kDefaultOversample,
                                  bool require_neg_def = false);

/// Fills p_value = right-tail probability of each height, clamped into
/// (0, 1] so extreme tails stay representable.
std::vector<Peak> assign_pvalues(std::vector<Peak> peaks, const HeightModel& model);

/// Step-up rule: k is the largest index with p_(i) < i*alpha/m on the sorted
/// p-values; the k smallest are rejected.  An empty list selects nothing and
/// reports the conventional boundary 1.
BhSelection bh_select(std::vector<double> p_values, double alpha);

/// Labels each selected peak a true discovery iff its geodesic distance to
/// some source is <= rho (closed ball), and marks which sources have at
/// least one selected peak within rho.
Classification classify(const std::vector<Peak>& selected, const SourceCatalog& catalog);

/// Discovery counts and rates from labels; fdp = V / max(R, 1), power is the
/// fraction of sources detected.
FdpPower compute_fdp_power(const Classification& cls);

/// End-to-end run on one sky: filter, normalize, synthesize with second
/// derivatives, detect, assign p-values, step-up select, classify, summarize.
/// Deterministic given the sky.  When require_neg_def is set, peaks whose
/// analytic Hessian is not negative definite are dropped before testing.
DetectionResult run_stem(const SkyRealization& sky,
                         const NeedletParams& params,
                         double alpha,
                         const HeightModel& model,
                         bool require_neg_def = false,
                         double oversample = kDefaultOversample);

} // namespace stem
