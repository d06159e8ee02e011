#include "stem/mc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stem/errors.hpp"
#include "stem/io.hpp"
#include "stem/needlet.hpp"
#include "stem/parallel.hpp"
#include "stem/rng.hpp"

namespace stem {

namespace {

constexpr int kHeightBins = 200;
constexpr int kSnrBins = 20;

/// Binned per-replicate peak heights of one scale.  Edges are the exact
/// doubles written to (or parsed back from) the histogram file, so density
/// computations agree byte-for-byte between emission and rebuild.
struct HistScale {
    int j = 0;
    std::vector<double> edges;                    // nbins + 1 values
    std::vector<std::vector<long long>> counts;   // [replicate][bin]
};

void sort_canonical(std::vector<NullRow>& rows) {
    std::sort(rows.begin(), rows.end(), [](const NullRow& a, const NullRow& b) {
        if (a.j != b.j) return a.j < b.j;
        return a.replicate < b.replicate;
    });
}

void sort_canonical(std::vector<FdrRow>& rows) {
    std::sort(rows.begin(), rows.end(), [](const FdrRow& a, const FdrRow& b) {
        if (a.j != b.j) return a.j < b.j;
        if (a.selector != b.selector) return a.selector < b.selector;
        if (a.level != b.level) return a.level < b.level;
        return a.replicate < b.replicate;
    });
}

void sort_canonical(std::vector<SourceStat>& stats) {
    std::sort(stats.begin(), stats.end(), [](const SourceStat& a, const SourceStat& b) {
        if (a.j != b.j) return a.j < b.j;
        if (a.alpha != b.alpha) return a.alpha < b.alpha;
        return a.source < b.source;
    });
}

double mean_of(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

double sample_var(const std::vector<double>& xs, double mean) {
    if (xs.size() < 2) return 0.0;
    double s = 0.0;
    for (double x : xs) s += (x - mean) * (x - mean);
    return s / static_cast<double>(xs.size() - 1);
}

void fill_scale_aggregates(NullScale& scale) {
    std::vector<double> counts;
    counts.reserve(scale.counts.size());
    for (int c : scale.counts) counts.push_back(static_cast<double>(c));
    scale.mean_count = mean_of(counts);
    scale.var_count = sample_var(counts, scale.mean_count);
    scale.cv2 = scale.mean_count > 0.0
                    ? scale.var_count / (scale.mean_count * scale.mean_count)
                    : 0.0;
}

HistScale bin_heights(int j, const std::vector<std::vector<double>>& heights) {
    HistScale hist;
    hist.j = j;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& rep : heights) {
        for (double h : rep) {
            lo = std::min(lo, h);
            hi = std::max(hi, h);
        }
    }
    if (!(lo < hi)) {
        lo = std::isfinite(lo) ? lo : 0.0;
        hi = lo + 1.0;
    }
    const double w = (hi - lo) / kHeightBins;
    hist.edges.resize(kHeightBins + 1);
    for (int b = 0; b <= kHeightBins; ++b) hist.edges[static_cast<std::size_t>(b)] = lo + b * w;
    hist.edges.back() = hi;

    hist.counts.assign(heights.size(), std::vector<long long>(kHeightBins, 0));
    for (std::size_t r = 0; r < heights.size(); ++r) {
        for (double h : heights[r]) {
            int b = static_cast<int>((h - lo) / w);
            b = std::clamp(b, 0, kHeightBins - 1);
            ++hist.counts[r][static_cast<std::size_t>(b)];
        }
    }
    return hist;
}

/// Nearest-rank quantile of an already sorted vector.
double quantile_sorted(const std::vector<double>& sorted, double q) {
    const std::size_t n = sorted.size();
    std::size_t rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
    if (rank < 1) rank = 1;
    if (rank > n) rank = n;
    return sorted[rank - 1];
}

std::vector<FdrCell> aggregate_cells(const std::vector<FdrRow>& sorted_rows,
                                     const std::map<int, HeightModel>& models,
                                     double rho,
                                     int n_sources) {
    std::vector<FdrCell> cells;
    std::size_t i = 0;
    while (i < sorted_rows.size()) {
        const FdrRow& head = sorted_rows[i];
        std::vector<double> fdps, powers;
        std::size_t k = i;
        while (k < sorted_rows.size() && sorted_rows[k].j == head.j &&
               sorted_rows[k].selector == head.selector &&
               sorted_rows[k].level == head.level) {
            fdps.push_back(sorted_rows[k].fdp);
            powers.push_back(sorted_rows[k].power);
            ++k;
        }
        FdrCell cell;
        cell.j = head.j;
        cell.selector = head.selector;
        cell.level = head.level;
        cell.mean_fdp = mean_of(fdps);
        cell.se_fdp = std::sqrt(sample_var(fdps, cell.mean_fdp) /
                                static_cast<double>(fdps.size()));
        cell.mean_power = mean_of(powers);
        cell.se_power = std::sqrt(sample_var(powers, cell.mean_power) /
                                  static_cast<double>(powers.size()));
        const auto model_it = models.find(head.j);
        if (model_it == models.end()) {
            throw ConfigError("needlet.j_list", "rows reference scale j = " +
                                                    std::to_string(head.j) +
                                                    " which is not configured");
        }
        const HeightModel& model = model_it->second;
        cell.bound = head.selector == 'a' ? fdr_bound(head.level, rho, n_sources, model)
                                          : fdp_bound(head.level, rho, n_sources, model);
        cells.push_back(cell);
        i = k;
    }
    return cells;
}

// ---------------------------------------------------------------- CSV text

std::string null_counts_csv(const std::vector<NullRow>& rows) {
    std::string out = "j,replicate,seed,n_peaks\n";
    for (const NullRow& r : rows) {
        out += std::to_string(r.j) + ',' + std::to_string(r.replicate) + ',' +
               std::to_string(r.seed) + ',' + std::to_string(r.n_peaks) + '\n';
    }
    return out;
}

std::string null_hist_csv(const std::vector<HistScale>& hists) {
    std::string out = "j,replicate,bin,lo,hi,count\n";
    for (const HistScale& h : hists) {
        for (std::size_t r = 0; r < h.counts.size(); ++r) {
            for (std::size_t b = 0; b + 1 < h.edges.size(); ++b) {
                out += std::to_string(h.j) + ',' + std::to_string(r) + ',' +
                       std::to_string(b) + ',' + format_double(h.edges[b]) + ',' +
                       format_double(h.edges[b + 1]) + ',' +
                       std::to_string(h.counts[r][b]) + '\n';
            }
        }
    }
    return out;
}

std::string fdr_rows_csv(const std::vector<FdrRow>& rows) {
    std::string out = "j,replicate,seed,selector,level,r,v,w,fdp,power,u_applied\n";
    for (const FdrRow& r : rows) {
        out += std::to_string(r.j) + ',' + std::to_string(r.replicate) + ',' +
               std::to_string(r.seed) + ',' + r.selector + ',' + format_double(r.level) +
               ',' + std::to_string(r.r_count) + ',' + std::to_string(r.v_count) + ',' +
               std::to_string(r.w_count) + ',' + format_double(r.fdp) + ',' +
               format_double(r.power) + ',' + format_double(r.u_applied) + '\n';
    }
    return out;
}

std::string source_stats_csv(const std::vector<SourceStat>& stats) {
    std::string out = "j,alpha,source,snr,qualified,hit,detected\n";
    for (const SourceStat& s : stats) {
        out += std::to_string(s.j) + ',' + format_double(s.alpha) + ',' +
               std::to_string(s.source) + ',' + format_double(s.snr) + ',' +
               std::to_string(s.qualified) + ',' + std::to_string(s.hit) + ',' +
               std::to_string(s.detected) + '\n';
    }
    return out;
}

std::string height_pdf_csv(const std::vector<HistScale>& hists,
                           const std::map<int, HeightModel>& models,
                           const std::vector<NullRow>& sorted_rows) {
    // Per-replicate totals, keyed by scale then replicate index.
    std::map<int, std::vector<double>> totals;
    for (const NullRow& r : sorted_rows) {
        auto& v = totals[r.j];
        if (static_cast<std::size_t>(r.replicate) >= v.size()) {
            v.resize(static_cast<std::size_t>(r.replicate) + 1, 0.0);
        }
        v[static_cast<std::size_t>(r.replicate)] = static_cast<double>(r.n_peaks);
    }

    std::string out =
        "j,x,empirical,analytic,band68_lo,band68_hi,band95_lo,band95_hi,"
        "band99_lo,band99_hi\n";
    for (const HistScale& h : hists) {
        const auto model_it = models.find(h.j);
        const auto totals_it = totals.find(h.j);
        if (model_it == models.end() || totals_it == totals.end()) {
            throw DimensionError("height_pdf: no counts or model for j = " +
                                 std::to_string(h.j));
        }
        const HeightModel& model = model_it->second;
        const std::vector<double>& n_r = totals_it->second;
        double total = 0.0;
        for (double n : n_r) total += n;
        const std::size_t reps = h.counts.size();
        for (std::size_t b = 0; b + 1 < h.edges.size(); ++b) {
            const double width = h.edges[b + 1] - h.edges[b];
            const double x = 0.5 * (h.edges[b] + h.edges[b + 1]);
            long long pooled = 0;
            std::vector<double> density(reps, 0.0);
            for (std::size_t r = 0; r < reps; ++r) {
                pooled += h.counts[r][b];
                if (n_r[r] > 0.0 && width > 0.0) {
                    density[r] = static_cast<double>(h.counts[r][b]) / (n_r[r] * width);
                }
            }
            const double empirical =
                total > 0.0 && width > 0.0 ? static_cast<double>(pooled) / (total * width) : 0.0;
            std::sort(density.begin(), density.end());
            out += std::to_string(h.j) + ',' + format_double(x) + ',' +
                   format_double(empirical) + ',' +
                   format_double(height_density(x, model)) + ',' +
                   format_double(quantile_sorted(density, 0.16)) + ',' +
                   format_double(quantile_sorted(density, 0.84)) + ',' +
                   format_double(quantile_sorted(density, 0.025)) + ',' +
                   format_double(quantile_sorted(density, 0.975)) + ',' +
                   format_double(quantile_sorted(density, 0.005)) + ',' +
                   format_double(quantile_sorted(density, 0.995)) + '\n';
        }
    }
    return out;
}

std::string fdp_vs_u_csv(const std::vector<FdrCell>& cells) {
    std::string out = "j,u,mean_fdp,se_fdp,bound,mean_power,se_power\n";
    for (const FdrCell& c : cells) {
        if (c.selector != 'u') continue;
        out += std::to_string(c.j) + ',' + format_double(c.level) + ',' +
               format_double(c.mean_fdp) + ',' + format_double(c.se_fdp) + ',' +
               format_double(c.bound) + ',' + format_double(c.mean_power) + ',' +
               format_double(c.se_power) + '\n';
    }
    return out;
}

std::string fdr_vs_alpha_csv(const std::vector<FdrCell>& cells) {
    std::string out = "j,alpha,empirical_fdr,se_fdr,bound,mean_power,se_power\n";
    for (const FdrCell& c : cells) {
        if (c.selector != 'a') continue;
        out += std::to_string(c.j) + ',' + format_double(c.level) + ',' +
               format_double(c.mean_fdp) + ',' + format_double(c.se_fdp) + ',' +
               format_double(c.bound) + ',' + format_double(c.mean_power) + ',' +
               format_double(c.se_power) + '\n';
    }
    return out;
}

std::string power_vs_j_csv(const std::vector<FdrCell>& cells) {
    std::string out = "j,alpha,mean_power,se_power\n";
    for (const FdrCell& c : cells) {
        if (c.selector != 'a') continue;
        out += std::to_string(c.j) + ',' + format_double(c.level) + ',' +
               format_double(c.mean_power) + ',' + format_double(c.se_power) + '\n';
    }
    return out;
}

std::string snr_hist_csv(const std::vector<SourceStat>& sorted_stats, int reps) {
    std::string out = "j,alpha,bin,lo,hi,n_sources,mean_detect_rate\n";
    if (sorted_stats.empty() || reps <= 0) return out;

    double hi = 0.0;
    for (const SourceStat& s : sorted_stats) hi = std::max(hi, s.snr);
    if (!(hi > 0.0)) hi = 1.0;
    std::vector<double> edges(kSnrBins + 1);
    for (int b = 0; b <= kSnrBins; ++b) {
        edges[static_cast<std::size_t>(b)] = hi * b / kSnrBins;
    }

    std::size_t i = 0;
    while (i < sorted_stats.size()) {
        const int j = sorted_stats[i].j;
        const double alpha = sorted_stats[i].alpha;
        std::vector<int> n_in(kSnrBins, 0);
        std::vector<double> rate_sum(kSnrBins, 0.0);
        while (i < sorted_stats.size() && sorted_stats[i].j == j &&
               sorted_stats[i].alpha == alpha) {
            const SourceStat& s = sorted_stats[i];
            int b = static_cast<int>(s.snr / hi * kSnrBins);
            b = std::clamp(b, 0, kSnrBins - 1);
            ++n_in[static_cast<std::size_t>(b)];
            rate_sum[static_cast<std::size_t>(b)] +=
                static_cast<double>(s.detected) / static_cast<double>(reps);
            ++i;
        }
        for (int b = 0; b < kSnrBins; ++b) {
            const std::size_t bi = static_cast<std::size_t>(b);
            const double rate = n_in[bi] > 0 ? rate_sum[bi] / n_in[bi] : 0.0;
            out += std::to_string(j) + ',' + format_double(alpha) + ',' +
                   std::to_string(b) + ',' + format_double(edges[bi]) + ',' +
                   format_double(edges[bi + 1]) + ',' + std::to_string(n_in[bi]) + ',' +
                   format_double(rate) + '\n';
        }
    }
    return out;
}

std::string manifest_json(const ExperimentConfig& config,
                          const std::string& study,
                          int reps,
                          const McResult* result) {
    nlohmann::ordered_json doc;
    doc["stem_version"] = kStemVersion;
    doc["format_version"] = 1;
    doc["study"] = study;
    doc["config_digest"] = config.digest_hex();
    doc["base_seed"] = config.base_seed;
    doc["reps"] = reps;
    nlohmann::ordered_json seeds = nlohmann::ordered_json::array();
    for (int k = 0; k < reps; ++k) {
        seeds.push_back(replicate_seed(config.base_seed, static_cast<std::uint64_t>(k)));
    }
    doc["replicate_seeds"] = seeds;
    if (study == "fdr") {
        doc["catalog_seed"] = replicate_seed(config.base_seed, kCatalogStream);
        doc["n_sources"] = config.n_sources;
        if (result != nullptr) {
            doc["rho_radians"] = result->rho;
        }
    }
    // Peak heights, thresholds and amplitudes are all expressed in units of
    // the post-filter noise standard deviation of the normalized field.
    doc["height_units"] = "post-filter normalized sigma";
    nlohmann::ordered_json files;
    if (study == "null") {
        files["null_counts.csv"] = "per-replicate peak counts";
        files["null_height_hist.csv"] = "per-replicate binned peak heights";
        files["height_pdf.csv"] = "pooled height density vs the analytic law";
    } else {
        files["catalog.csv"] = "source positions and raw amplitudes";
        files["fdr_rows.csv"] = "per-replicate selection outcomes";
        files["source_stats.csv"] = "per-source detection tallies";
        files["fdp_vs_u.csv"] = "mean FDP at fixed thresholds vs the bound";
        files["fdr_vs_alpha.csv"] = "empirical FDR vs the bound";
        files["power_vs_j.csv"] = "mean detection power";
        files["snr_hist.csv"] = "detection rate by source brightness";
    }
    doc["files"] = files;
    doc["config"] = config.digest_text();
    return doc.dump(2) + "\n";
}

std::filesystem::path join(const std::string& dir, const char* name) {
    return std::filesystem::path(dir) / name;
}

// --------------------------------------------------------------- CSV parse

std::vector<std::vector<std::string>> parse_csv(const std::string& text,
                                                std::size_t n_cols,
                                                const char* where) {
    std::vector<std::vector<std::string>> rows;
    std::stringstream ss(text);
    std::string line;
    bool first = true;
    while (std::getline(ss, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (first) {  // header
            first = false;
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() != n_cols) {
            throw DimensionError(std::string(where) + ": expected " +
                                 std::to_string(n_cols) + " columns, got '" + line + "'");
        }
        rows.push_back(std::move(cells));
    }
    return rows;
}

double cell_double(const std::string& s, const char* where) {
    const char* begin = s.c_str();
    char* end = nullptr;
    const double x = std::strtod(begin, &end);
    if (end == begin || *end != '\0') {
        throw DomainError(std::string(where) + ": cannot parse number '" + s + "'");
    }
    return x;
}

long long cell_int(const std::string& s, const char* where) {
    const char* begin = s.c_str();
    char* end = nullptr;
    const long long x = std::strtoll(begin, &end, 10);
    if (end == begin || *end != '\0') {
        throw DomainError(std::string(where) + ": cannot parse integer '" + s + "'");
    }
    return x;
}

std::uint64_t cell_u64(const std::string& s, const char* where) {
    const char* begin = s.c_str();
    char* end = nullptr;
    const unsigned long long x = std::strtoull(begin, &end, 10);
    if (end == begin || *end != '\0') {
        throw DomainError(std::string(where) + ": cannot parse integer '" + s + "'");
    }
    return static_cast<std::uint64_t>(x);
}

std::map<int, HeightModel> models_for(const ExperimentConfig& config,
                                      const PowerSpectrum& spectrum) {
    std::map<int, HeightModel> models;
    for (int j : config.j_list) {
        models[j] = height_model(moments(spectrum, NeedletParams{config.B, j, config.p}));
    }
    return models;
}

} // namespace

PowerSpectrum experiment_spectrum(const ExperimentConfig& config) {
    if (config.spectrum_file.empty()) {
        return PowerSpectrum::power_law(config.gamma, config.g0, config.ell_max)
            .truncated(config.ell_max);
    }
    PowerSpectrum table;
    try {
        table = parse_spectrum_csv(read_text_file(config.spectrum_file));
    } catch (const std::exception& e) {
        throw ConfigError("field.spectrum_file", e.what());
    }
    if (table.ell_max() < config.ell_max) {
        throw ConfigError("field.spectrum_file",
                          "table ends at ell = " + std::to_string(table.ell_max()) +
                              " but field.ell_max = " + std::to_string(config.ell_max));
    }
    for (double c : table.c_ell) {
        if (!(c >= 0.0) || !std::isfinite(c)) {
            throw ConfigError("field.spectrum_file", "C_ell values must be finite and >= 0");
        }
    }
    return table.truncated(config.ell_max);
}

double tolerance_radius(const ExperimentConfig& config) {
    const double n_pixels = (config.ell_max + 1.0) * (2.0 * config.ell_max + 2.0);
    return config.rho_pixels * std::sqrt(4.0 * M_PI / n_pixels);
}

double unit_source_height(const ExperimentConfig& config, int j) {
    const PowerSpectrum spectrum = experiment_spectrum(config);
    const int L = spectrum.ell_max();
    SourceCatalog one;
    one.t_n = config.t_n;
    one.rho = 1.0;
    one.sources.push_back({make_point(0.0, 0.0), 1.0});

    SkyRealization sky;
    sky.noise_alm = AlmSet(L);
    sky.signal_alm = build_signal_alm(one, L);
    if (config.beam_fwhm > 0.0) sky.signal_alm = apply_beam(sky.signal_alm, config.beam_fwhm);
    sky.y_alm = sky.signal_alm;
    sky.catalog = one;
    sky.spectrum = spectrum;

    const FilteredSky unit = normalize(filter_sky(sky, NeedletParams{config.B, j, config.p}));
    return evaluate_at_points(unit.mu_alm, {one.sources[0].xi})[0];
}

SourceCatalog experiment_catalog(const ExperimentConfig& config) {
    if (config.n_sources == 0) {
        throw ConfigError("sources.n", "the FDR study needs at least one source");
    }
    const double q = unit_source_height(config, config.j_list.back());
    if (!(q > 0.0)) {
        throw DegenerateModelError("experiment_catalog: unit source height is not positive");
    }
    const double a_max_raw = config.a_max / q;
    Rng rng(replicate_seed(config.base_seed, kCatalogStream));
    SourceCatalog catalog = generate_catalog(config.n_sources, tolerance_radius(config),
                                             a_max_raw, config.t_n, rng);
    catalog.seed = replicate_seed(config.base_seed, kCatalogStream);
    return catalog;
}

McResult run_null_mc(const ExperimentConfig& config) {
    if (config.reps_null < 2) {
        throw ConfigError("run.reps_null", "the null study needs at least 2 replicates");
    }
    const PowerSpectrum spectrum = experiment_spectrum(config);
    const int L = spectrum.ell_max();
    const std::size_t reps = static_cast<std::size_t>(config.reps_null);
    const std::size_t n_j = config.j_list.size();

    McResult result;
    result.config = config;
    result.rho = tolerance_radius(config);
    result.reps = config.reps_null;
    result.null_scales.resize(n_j);
    std::vector<NeedletParams> params(n_j);
    for (std::size_t s = 0; s < n_j; ++s) {
        params[s] = NeedletParams{config.B, config.j_list[s], config.p};
        NullScale& scale = result.null_scales[s];
        scale.j = config.j_list[s];
        scale.model = height_model(moments(spectrum, params[s]));
        scale.expected_count = 4.0 * M_PI * peak_density_rj(scale.model);
        scale.counts.assign(reps, 0);
        scale.heights.assign(reps, {});
    }

    parallel_for(
        reps,
        [&](std::size_t k) {
            const std::uint64_t seed = replicate_seed(config.base_seed, k);
            Rng rng(seed);
            SkyRealization sky;
            sky.noise_alm = sample_alm(spectrum, L, rng);
            sky.signal_alm = AlmSet(L);
            sky.y_alm = sky.noise_alm;
            sky.spectrum = spectrum;
            for (std::size_t s = 0; s < n_j; ++s) {
                const FilteredSky unit = normalize(filter_sky(sky, params[s]));
                const std::vector<Peak> peaks =
                    detect_filtered(unit, config.oversample, config.require_neg_def);
                NullScale& scale = result.null_scales[s];
                scale.counts[k] = static_cast<int>(peaks.size());
                scale.heights[k].reserve(peaks.size());
                for (const Peak& p : peaks) scale.heights[k].push_back(p.height);
            }
        },
        config.workers);

    for (std::size_t s = 0; s < n_j; ++s) {
        NullScale& scale = result.null_scales[s];
        fill_scale_aggregates(scale);
        for (std::size_t k = 0; k < reps; ++k) {
            NullRow row;
            row.j = scale.j;
            row.replicate = static_cast<int>(k);
            row.seed = replicate_seed(config.base_seed, k);
            row.n_peaks = scale.counts[k];
            result.null_rows.push_back(row);
        }
    }
    sort_canonical(result.null_rows);
    return result;
}

McResult run_fdr_mc(const ExperimentConfig& config) {
    if (config.reps_fdr < 2) {
        throw ConfigError("run.reps_fdr", "the FDR study needs at least 2 replicates");
    }
    const PowerSpectrum spectrum = experiment_spectrum(config);
    const int L = spectrum.ell_max();
    const std::size_t reps = static_cast<std::size_t>(config.reps_fdr);
    const std::size_t n_j = config.j_list.size();
    const std::size_t n_a = config.alphas.size();
    const std::size_t n_u = config.u_thresholds.size();

    McResult result;
    result.config = config;
    result.rho = tolerance_radius(config);
    result.reps = config.reps_fdr;

    std::vector<NeedletParams> params(n_j);
    std::map<int, HeightModel> models;
    for (std::size_t s = 0; s < n_j; ++s) {
        params[s] = NeedletParams{config.B, config.j_list[s], config.p};
        models[config.j_list[s]] = height_model(moments(spectrum, params[s]));
    }

    // One catalog and signal for the whole experiment (the default), or a
    // fresh catalog per replicate for robustness studies.
    SourceCatalog catalog;
    AlmSet signal;
    std::vector<std::vector<double>> snr(n_j);  // [scale][source]
    std::vector<SpherePoint> positions;
    double a_max_raw = 0.0;
    if (config.fixed_catalog) {
        catalog = experiment_catalog(config);
        result.catalog = catalog;
        signal = build_signal_alm(catalog, L);
        if (config.beam_fwhm > 0.0) signal = apply_beam(signal, config.beam_fwhm);
        for (const Source& s : catalog.sources) positions.push_back(s.xi);
        SkyRealization mu_sky;
        mu_sky.noise_alm = AlmSet(L);
        mu_sky.signal_alm = signal;
        mu_sky.y_alm = signal;
        mu_sky.catalog = catalog;
        mu_sky.spectrum = spectrum;
        for (std::size_t s = 0; s < n_j; ++s) {
            const FilteredSky unit = normalize(filter_sky(mu_sky, params[s]));
            snr[s] = evaluate_at_points(unit.mu_alm, positions);
        }
    } else {
        if (config.n_sources == 0) {
            throw ConfigError("sources.n", "the FDR study needs at least one source");
        }
        const double q = unit_source_height(config, config.j_list.back());
        if (!(q > 0.0)) {
            throw DegenerateModelError("run_fdr_mc: unit source height is not positive");
        }
        a_max_raw = config.a_max / q;
    }

    // Per-replicate slots, written disjointly under parallel_for.
    const std::size_t rows_per_rep = n_j * (n_a + n_u);
    std::vector<FdrRow> rows(reps * rows_per_rep);
    struct SourceFlags {
        std::vector<std::uint8_t> qualified, hit, detected;  // [scale*alpha*source]
    };
    std::vector<SourceFlags> flags(reps);
    const std::size_t n_src = config.fixed_catalog ? catalog.sources.size() : 0;

    parallel_for(
        reps,
        [&](std::size_t k) {
            const std::uint64_t seed = replicate_seed(config.base_seed, k);
            Rng rng(seed);

            SourceCatalog rep_catalog = catalog;
            AlmSet rep_signal = signal;
            if (!config.fixed_catalog) {
                const std::uint64_t cat_seed =
                    replicate_seed(replicate_seed(config.base_seed, kCatalogStream), k);
                Rng cat_rng(cat_seed);
                rep_catalog = generate_catalog(config.n_sources, result.rho, a_max_raw,
                                               config.t_n, cat_rng);
                rep_catalog.seed = cat_seed;
                rep_signal = build_signal_alm(rep_catalog, L);
                if (config.beam_fwhm > 0.0) {
                    rep_signal = apply_beam(rep_signal, config.beam_fwhm);
                }
            }
            rep_catalog.rho = result.rho;

            SkyRealization sky;
            sky.noise_alm = sample_alm(spectrum, L, rng);
            sky.signal_alm = rep_signal;
            sky.y_alm = AlmSet(L);
            for (std::size_t i = 0; i < sky.y_alm.coef.size(); ++i) {
                sky.y_alm.coef[i] = sky.noise_alm.coef[i] + sky.signal_alm.coef[i];
            }
            sky.catalog = rep_catalog;
            sky.spectrum = spectrum;

            if (n_src > 0) {
                flags[k].qualified.assign(n_j * n_a * n_src, 0);
                flags[k].hit.assign(n_j * n_a * n_src, 0);
                flags[k].detected.assign(n_j * n_a * n_src, 0);
            }

            std::size_t slot = k * rows_per_rep;
            for (std::size_t s = 0; s < n_j; ++s) {
                const HeightModel& model = models.at(config.j_list[s]);
                const FilteredSky unit = normalize(filter_sky(sky, params[s]));
                const std::vector<Peak> peaks = assign_pvalues(
                    detect_filtered(unit, config.oversample, config.require_neg_def),
                    model);

                std::vector<double> p_values(peaks.size());
                for (std::size_t i = 0; i < peaks.size(); ++i) {
                    p_values[i] = peaks[i].p_value;
                }

                for (std::size_t a = 0; a < n_a; ++a) {
                    const double alpha = config.alphas[a];
                    const BhSelection sel = bh_select(p_values, alpha);
                    // Peaks arrive sorted by descending height, so the k
                    // smallest p-values are the first k entries.
                    std::vector<Peak> chosen(peaks.begin(), peaks.begin() + sel.k);
                    const Classification cls = classify(chosen, rep_catalog);
                    const FdpPower rates = compute_fdp_power(cls);
                    const double u_applied =
                        sel.k >= 1 ? invert_F(sel.p_star, model).u
                                   : std::numeric_limits<double>::infinity();

                    FdrRow& row = rows[slot++];
                    row.j = config.j_list[s];
                    row.replicate = static_cast<int>(k);
                    row.seed = seed;
                    row.selector = 'a';
                    row.level = alpha;
                    row.r_count = rates.r_count;
                    row.v_count = rates.v_count;
                    row.w_count = rates.w_count;
                    row.fdp = rates.fdp;
                    row.power = rates.power;
                    row.u_applied = u_applied;

                    if (n_src > 0) {
                        const std::size_t base = (s * n_a + a) * n_src;
                        for (std::size_t i = 0; i < n_src; ++i) {
                            const bool det = cls.detected_sources[i];
                            flags[k].detected[base + i] = det ? 1 : 0;
                            if (snr[s][i] > u_applied + 1.0) {
                                flags[k].qualified[base + i] = 1;
                                flags[k].hit[base + i] = det ? 1 : 0;
                            }
                        }
                    }
                }

                for (std::size_t u = 0; u < n_u; ++u) {
                    const double level = config.u_thresholds[u];
                    std::vector<Peak> chosen;
                    for (const Peak& p : peaks) {
                        if (p.height > level) chosen.push_back(p);
                    }
                    const Classification cls = classify(chosen, rep_catalog);
                    const FdpPower rates = compute_fdp_power(cls);

                    FdrRow& row = rows[slot++];
                    row.j = config.j_list[s];
                    row.replicate = static_cast<int>(k);
                    row.seed = seed;
                    row.selector = 'u';
                    row.level = level;
                    row.r_count = rates.r_count;
                    row.v_count = rates.v_count;
                    row.w_count = rates.w_count;
                    row.fdp = rates.fdp;
                    row.power = rates.power;
                    row.u_applied = level;
                }
            }
        },
        config.workers);

    result.fdr_rows = std::move(rows);
    sort_canonical(result.fdr_rows);
    result.fdr_cells = aggregate_cells(result.fdr_rows, models, result.rho,
                                       static_cast<int>(config.n_sources));

    if (n_src > 0) {
        for (std::size_t s = 0; s < n_j; ++s) {
            for (std::size_t a = 0; a < n_a; ++a) {
                for (std::size_t i = 0; i < n_src; ++i) {
                    SourceStat stat;
                    stat.j = config.j_list[s];
                    stat.alpha = config.alphas[a];
                    stat.source = static_cast<int>(i);
                    stat.snr = snr[s][i];
                    const std::size_t idx = (s * n_a + a) * n_src + i;
                    for (std::size_t k = 0; k < reps; ++k) {
                        stat.qualified += flags[k].qualified[idx];
                        stat.hit += flags[k].hit[idx];
                        stat.detected += flags[k].detected[idx];
                    }
                    result.source_stats.push_back(stat);
                }
            }
        }
        sort_canonical(result.source_stats);
    }
    return result;
}

void emit_report(const McResult& result, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const ExperimentConfig& config = result.config;
    const PowerSpectrum spectrum = experiment_spectrum(config);
    const std::map<int, HeightModel> models = models_for(config, spectrum);

    const bool has_null = !result.null_rows.empty();
    const bool has_fdr = !result.fdr_rows.empty();

    if (has_null) {
        std::vector<NullRow> rows = result.null_rows;
        sort_canonical(rows);
        std::vector<HistScale> hists;
        for (const NullScale& scale : result.null_scales) {
            hists.push_back(bin_heights(scale.j, scale.heights));
        }
        write_text_file(join(out_dir, "null_counts.csv").string(), null_counts_csv(rows));
        write_text_file(join(out_dir, "null_height_hist.csv").string(), null_hist_csv(hists));
        write_text_file(join(out_dir, "height_pdf.csv").string(),
                        height_pdf_csv(hists, models, rows));
    }
    if (has_fdr) {
        std::vector<FdrRow> rows = result.fdr_rows;
        sort_canonical(rows);
        std::vector<SourceStat> stats = result.source_stats;
        sort_canonical(stats);
        const std::vector<FdrCell> cells = aggregate_cells(
            rows, models, result.rho, static_cast<int>(config.n_sources));

        write_text_file(join(out_dir, "catalog.csv").string(), catalog_csv(result.catalog));
        write_text_file(join(out_dir, "fdr_rows.csv").string(), fdr_rows_csv(rows));
        write_text_file(join(out_dir, "source_stats.csv").string(), source_stats_csv(stats));
        write_text_file(join(out_dir, "fdp_vs_u.csv").string(), fdp_vs_u_csv(cells));
        write_text_file(join(out_dir, "fdr_vs_alpha.csv").string(), fdr_vs_alpha_csv(cells));
        write_text_file(join(out_dir, "power_vs_j.csv").string(), power_vs_j_csv(cells));
        write_text_file(join(out_dir, "snr_hist.csv").string(),
                        snr_hist_csv(stats, result.reps));
    }

    const std::string study = has_fdr ? "fdr" : "null";
    const int reps = result.reps;
    write_text_file(join(out_dir, "manifest.json").string(),
                    manifest_json(config, study, reps, &result));
}

void rebuild_report(const ExperimentConfig& config, const std::string& dir) {
    const PowerSpectrum spectrum = experiment_spectrum(config);
    const std::map<int, HeightModel> models = models_for(config, spectrum);

    const bool has_null = std::filesystem::exists(join(dir, "null_counts.csv"));
    const bool has_fdr = std::filesystem::exists(join(dir, "fdr_rows.csv"));
    if (!has_null && !has_fdr) {
        throw ConfigError("", "no raw rows found in '" + dir + "'");
    }

    int reps = 0;
    if (has_null) {
        std::vector<NullRow> rows;
        for (const auto& cells :
             parse_csv(read_text_file(join(dir, "null_counts.csv").string()), 4,
                       "null_counts.csv")) {
            NullRow row;
            row.j = static_cast<int>(cell_int(cells[0], "null_counts.csv"));
            row.replicate = static_cast<int>(cell_int(cells[1], "null_counts.csv"));
            row.seed = cell_u64(cells[2], "null_counts.csv");
            row.n_peaks = static_cast<int>(cell_int(cells[3], "null_counts.csv"));
            rows.push_back(row);
            reps = std::max(reps, row.replicate + 1);
        }
        sort_canonical(rows);

        std::map<int, HistScale> by_j;
        for (const auto& cells :
             parse_csv(read_text_file(join(dir, "null_height_hist.csv").string()), 6,
                       "null_height_hist.csv")) {
            const int j = static_cast<int>(cell_int(cells[0], "null_height_hist.csv"));
            const std::size_t r =
                static_cast<std::size_t>(cell_int(cells[1], "null_height_hist.csv"));
            const std::size_t b =
                static_cast<std::size_t>(cell_int(cells[2], "null_height_hist.csv"));
            HistScale& h = by_j[j];
            h.j = j;
            if (h.edges.size() < b + 2) h.edges.resize(b + 2, 0.0);
            h.edges[b] = cell_double(cells[3], "null_height_hist.csv");
            h.edges[b + 1] = cell_double(cells[4], "null_height_hist.csv");
            if (h.counts.size() < r + 1) h.counts.resize(r + 1);
            if (h.counts[r].size() < b + 1) h.counts[r].resize(b + 1, 0);
            h.counts[r][b] = cell_int(cells[5], "null_height_hist.csv");
        }
        std::vector<HistScale> hists;
        for (int j : config.j_list) {
            auto it = by_j.find(j);
            if (it == by_j.end()) {
                throw DimensionError("null_height_hist.csv: no rows for j = " +
                                     std::to_string(j));
            }
            hists.push_back(std::move(it->second));
        }
        write_text_file(join(dir, "height_pdf.csv").string(),
                        height_pdf_csv(hists, models, rows));
    }

    if (has_fdr) {
        std::vector<FdrRow> rows;
        for (const auto& cells : parse_csv(read_text_file(join(dir, "fdr_rows.csv").string()),
                                           11, "fdr_rows.csv")) {
            FdrRow row;
            row.j = static_cast<int>(cell_int(cells[0], "fdr_rows.csv"));
            row.replicate = static_cast<int>(cell_int(cells[1], "fdr_rows.csv"));
            row.seed = cell_u64(cells[2], "fdr_rows.csv");
            if (cells[3].size() != 1 || (cells[3][0] != 'a' && cells[3][0] != 'u')) {
                throw DomainError("fdr_rows.csv: selector must be 'a' or 'u'");
            }
            row.selector = cells[3][0];
            row.level = cell_double(cells[4], "fdr_rows.csv");
            row.r_count = static_cast<int>(cell_int(cells[5], "fdr_rows.csv"));
            row.v_count = static_cast<int>(cell_int(cells[6], "fdr_rows.csv"));
            row.w_count = static_cast<int>(cell_int(cells[7], "fdr_rows.csv"));
            row.fdp = cell_double(cells[8], "fdr_rows.csv");
            row.power = cell_double(cells[9], "fdr_rows.csv");
            row.u_applied = cell_double(cells[10], "fdr_rows.csv");
            rows.push_back(row);
            reps = std::max(reps, row.replicate + 1);
        }
        sort_canonical(rows);
        const std::vector<FdrCell> cells = aggregate_cells(
            rows, models, tolerance_radius(config), static_cast<int>(config.n_sources));

        std::vector<SourceStat> stats;
        for (const auto& row_cells :
             parse_csv(read_text_file(join(dir, "source_stats.csv").string()), 7,
                       "source_stats.csv")) {
            SourceStat stat;
            stat.j = static_cast<int>(cell_int(row_cells[0], "source_stats.csv"));
            stat.alpha = cell_double(row_cells[1], "source_stats.csv");
            stat.source = static_cast<int>(cell_int(row_cells[2], "source_stats.csv"));
            stat.snr = cell_double(row_cells[3], "source_stats.csv");
            stat.qualified = static_cast<int>(cell_int(row_cells[4], "source_stats.csv"));
            stat.hit = static_cast<int>(cell_int(row_cells[5], "source_stats.csv"));
            stat.detected = static_cast<int>(cell_int(row_cells[6], "source_stats.csv"));
            stats.push_back(stat);
        }
        sort_canonical(stats);

        write_text_file(join(dir, "fdp_vs_u.csv").string(), fdp_vs_u_csv(cells));
        write_text_file(join(dir, "fdr_vs_alpha.csv").string(), fdr_vs_alpha_csv(cells));
        write_text_file(join(dir, "power_vs_j.csv").string(), power_vs_j_csv(cells));
        write_text_file(join(dir, "snr_hist.csv").string(), snr_hist_csv(stats, reps));
    }

    const std::string study = has_fdr ? "fdr" : "null";
    McResult shim;
    shim.rho = tolerance_radius(config);
    write_text_file(join(dir, "manifest.json").string(),
                    manifest_json(config, study, reps, &shim));
}

} // namespace stem
