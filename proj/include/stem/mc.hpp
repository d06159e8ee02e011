#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stem/config.hpp"
#include "stem/peaks.hpp"
#include "stem/pipeline.hpp"
#include "stem/sky.hpp"

namespace stem {

/// Stream index reserved for catalog generation; replicate noise uses the
/// plain replicate index, so the catalog never shares a stream with noise.
inline constexpr std::uint64_t kCatalogStream = 0x8000000000000000ULL;

/// One null replicate at one scale.
struct NullRow {
    int j = 0;
    int replicate = 0;
    std::uint64_t seed = 0;
    int n_peaks = 0;
};

/// One selection variant of one FDR replicate: selector 'a' is the step-up
/// rule at level, selector 'u' keeps peaks above the fixed height level.
/// u_applied is the equivalent height threshold actually used.
struct FdrRow {
    int j = 0;
    int replicate = 0;
    std::uint64_t seed = 0;
    char selector = 'a';
    double level = 0.0;
    int r_count = 0;
    int v_count = 0;
    int w_count = 0;
    double fdp = 0.0;
    double power = 0.0;
    double u_applied = 0.0;
};

/// Null-study data for one scale: per-replicate counts and peak heights plus
/// the height model they are tested against.
struct NullScale {
    int j = 0;
    HeightModel model;
    double expected_count = 0.0;               ///< 4 pi r_j
    std::vector<int> counts;                   ///< per replicate
    std::vector<std::vector<double>> heights;  ///< per replicate, detection order
    double mean_count = 0.0;
    double var_count = 0.0;                    ///< unbiased sample variance
    double cv2 = 0.0;                          ///< var / mean^2
};

/// Aggregates of one (scale, selector, level) cell of the FDR study.
struct FdrCell {
    int j = 0;
    char selector = 'a';
    double level = 0.0;
    double mean_fdp = 0.0;
    double se_fdp = 0.0;    ///< sample sd / sqrt(reps)
    double bound = 0.0;     ///< analytic FDR/FDP bound for the cell
    double mean_power = 0.0;
    double se_power = 0.0;
};

/// Per-source tallies at one (scale, alpha): the noise-free filtered height
/// (snr), how often the source cleared u_applied + 1 (qualified), how often
/// it was detected among those replicates (hit), and overall (detected).
struct SourceStat {
    int j = 0;
    double alpha = 0.0;
    int source = 0;
    double snr = 0.0;
    int qualified = 0;
    int hit = 0;
    int detected = 0;
};

/// Everything one Monte Carlo study produced.  Aggregates are recomputable
/// from the raw per-replicate rows.
struct McResult {
    ExperimentConfig config;
    SourceCatalog catalog;      ///< empty for the null study
    double rho = 0.0;           ///< tolerance radius in radians
    int reps = 0;
    std::vector<NullRow> null_rows;
    std::vector<NullScale> null_scales;
    std::vector<FdrRow> fdr_rows;
    std::vector<FdrCell> fdr_cells;
    std::vector<SourceStat> source_stats;
};

/// The band-limited spectrum the experiment runs on: the configured power
/// law truncated at ell_max, or the tabulated file truncated likewise.
PowerSpectrum experiment_spectrum(const ExperimentConfig& config);

/// Tolerance radius in radians: rho_pixels mean pixel spacings of the base
/// grid at config.ell_max.
double tolerance_radius(const ExperimentConfig& config);

/// Post-filter height of a unit-amplitude source at scale j under the
/// config's spectrum, kernel width and beam: the amplitude-to-sigma
/// calibration factor.
double unit_source_height(const ExperimentConfig& config, int j);

/// The experiment's catalog: seeded from kCatalogStream, amplitudes drawn
/// uniformly so the cap a_max is reached in post-filter sigma units at the
/// largest configured scale.
SourceCatalog experiment_catalog(const ExperimentConfig& config);

/// Null study: reps_null replicates of pure noise, detected at every scale
/// without any selection step.  Replicate k draws its sky from
/// replicate_seed(base_seed, k); scales share the replicate's sky.
McResult run_null_mc(const ExperimentConfig& config);

/// FDR study: reps_fdr replicates of noise plus the (default: fixed)
/// catalog signal, selected per (scale, alpha) by the step-up rule and per
/// (scale, u) by fixed thresholds, classified against the catalog.
McResult run_fdr_mc(const ExperimentConfig& config);

/// Writes raw per-replicate rows, derived report tables and the JSON
/// manifest into out_dir.  Identical inputs produce identical bytes.
void emit_report(const McResult& result, const std::string& out_dir);

/// Rebuilds every derived file in dir from the raw rows found there,
/// byte-identical to what emit_report wrote.
void rebuild_report(const ExperimentConfig& config, const std::string& dir);

} // namespace stem
