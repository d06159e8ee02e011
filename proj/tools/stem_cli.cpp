#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "stem/config.hpp"
#include "stem/errors.hpp"
#include "stem/io.hpp"
#include "stem/mc.hpp"
#include "stem/needlet.hpp"
#include "stem/peaks.hpp"
#include "stem/pipeline.hpp"
#include "stem/rng.hpp"

namespace {

using namespace stem;

struct CliOptions {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    unsigned workers = 0;
    bool workers_set = false;
};

ExperimentConfig load_config(const CliOptions& opts) {
    ExperimentConfig config;
    if (!opts.config_path.empty()) {
        config = parse_config(opts.config_path);
    } else {
        validate_config(config);
    }
    if (opts.seed_set) config.base_seed = opts.seed;
    if (opts.workers_set) config.workers = opts.workers;
    if (!opts.out_dir.empty()) config.out_dir = opts.out_dir;
    for (const std::string& warning : config.warnings) {
        std::fprintf(stderr, "warning: %s\n", warning.c_str());
    }
    return config;
}

std::string out_path(const ExperimentConfig& config, const std::string& name) {
    return (std::filesystem::path(config.out_dir) / name).string();
}

/// Noise-plus-catalog sky shared by `simulate`, `detect` and `stem`: the
/// noise stream is replicate 0 of base_seed, the catalog comes from its own
/// reserved stream.
SkyRealization build_sky(const ExperimentConfig& config) {
    const PowerSpectrum spectrum = experiment_spectrum(config);
    SkyRealization sky;
    Rng rng(replicate_seed(config.base_seed, 0));
    sky.noise_alm = sample_alm(spectrum, spectrum.ell_max(), rng);
    sky.signal_alm = AlmSet(spectrum.ell_max());
    sky.spectrum = spectrum;
    if (config.n_sources > 0) {
        sky.catalog = experiment_catalog(config);
        sky.signal_alm = build_signal_alm(sky.catalog, spectrum.ell_max());
        if (config.beam_fwhm > 0.0) {
            sky.signal_alm = apply_beam(sky.signal_alm, config.beam_fwhm);
        }
    }
    sky.y_alm = sky.noise_alm;
    for (std::size_t i = 0; i < sky.y_alm.coef.size(); ++i) {
        sky.y_alm.coef[i] += sky.signal_alm.coef[i];
    }
    return sky;
}

int cmd_theory(const ExperimentConfig& config) {
    const PowerSpectrum spectrum = experiment_spectrum(config);
    for (int j : config.j_list) {
        const NeedletParams params{config.B, j, config.p};
        const MomentSet m = moments(spectrum, params);
        const HeightModel model = height_model(m);
        const double expected = 4.0 * M_PI * peak_density_rj(model);
        std::printf("j=%d kappa1=%s kappa2=%s r_j=%s expected_peaks=%s\n", j,
                    format_double(model.kappa1).c_str(), format_double(model.kappa2).c_str(),
                    format_double(peak_density_rj(model)).c_str(),
                    format_double(expected).c_str());

        std::string csv = "u,f_j,F_j\n";
        for (int i = 0; i <= 500; ++i) {
            const double u = -2.0 + 0.02 * i;
            csv += format_double(u) + ',' + format_double(height_density(u, model)) + ',' +
                   format_double(height_tail_F(u, model)) + '\n';
        }
        write_text_file(out_path(config, "theory_j" + std::to_string(j) + ".csv"), csv);
    }
    std::printf("wrote %zu theory tables to %s\n", config.j_list.size(),
                config.out_dir.c_str());
    return 0;
}

int cmd_simulate(const ExperimentConfig& config) {
    const SkyRealization sky = build_sky(config);
    const SphereGrid grid = build_grid(sky.spectrum.ell_max());
    const FieldMaps maps = synthesize(sky.y_alm, grid, 0);
    write_text_file(out_path(config, "sky_map.csv"), map_csv(maps));
    write_text_file(out_path(config, "catalog.csv"), catalog_csv(sky.catalog));
    write_text_file(out_path(config, "spectrum.csv"), spectrum_csv(sky.spectrum));
    std::printf("simulated sky: ell_max=%d pixels=%zu sources=%zu seed=%llu\n",
                sky.spectrum.ell_max(), maps.f.size(), sky.catalog.size(),
                static_cast<unsigned long long>(config.base_seed));
    return 0;
}

int cmd_detect(const ExperimentConfig& config) {
    const SkyRealization sky = build_sky(config);
    const PowerSpectrum& spectrum = sky.spectrum;
    for (int j : config.j_list) {
        const NeedletParams params{config.B, j, config.p};
        const HeightModel model = height_model(moments(spectrum, params));
        const FilteredSky unit = normalize(filter_sky(sky, params));
        DetectionResult result;
        result.peaks = assign_pvalues(
            detect_filtered(unit, config.oversample, config.require_neg_def), model);
        result.selected.assign(result.peaks.size(), false);
        result.labels.assign(result.peaks.size(), false);
        write_text_file(out_path(config, "peaks_j" + std::to_string(j) + ".csv"),
                        peaks_csv(result));
        std::printf("j=%d peaks=%zu\n", j, result.peaks.size());
    }
    return 0;
}

int cmd_stem(const ExperimentConfig& config) {
    if (config.alphas.empty()) {
        throw ConfigError("test.alphas", "the stem command needs a test level");
    }
    const double alpha = config.alphas.front();
    const SkyRealization sky = build_sky(config);
    for (int j : config.j_list) {
        const NeedletParams params{config.B, j, config.p};
        const HeightModel model = height_model(moments(sky.spectrum, params));
        const DetectionResult result =
            run_stem(sky, params, alpha, model, config.require_neg_def, config.oversample);
        write_text_file(out_path(config, "peaks_j" + std::to_string(j) + ".csv"),
                        peaks_csv(result));
        write_text_file(out_path(config, "summary_j" + std::to_string(j) + ".json"),
                        detection_summary_json(result, config.digest_hex(), j, alpha));
        std::printf("j=%d peaks=%zu selected=%d true=%d fdp=%s power=%s\n", j,
                    result.peaks.size(), result.bh_k, result.w_count,
                    format_double(result.fdp).c_str(), format_double(result.power).c_str());
    }
    return 0;
}

int cmd_mc_null(const ExperimentConfig& config) {
    const McResult result = run_null_mc(config);
    for (const NullScale& scale : result.null_scales) {
        std::printf("j=%d mean_count=%s expected=%s cv2=%s\n", scale.j,
                    format_double(scale.mean_count).c_str(),
                    format_double(scale.expected_count).c_str(),
                    format_double(scale.cv2).c_str());
    }
    emit_report(result, config.out_dir);
    std::printf("null study: %d replicates -> %s\n", result.reps, config.out_dir.c_str());
    return 0;
}

int cmd_mc_fdr(const ExperimentConfig& config) {
    const McResult result = run_fdr_mc(config);
    for (const FdrCell& cell : result.fdr_cells) {
        std::printf("j=%d %s=%s fdp=%s bound=%s power=%s\n", cell.j,
                    cell.selector == 'a' ? "alpha" : "u", format_double(cell.level).c_str(),
                    format_double(cell.mean_fdp).c_str(), format_double(cell.bound).c_str(),
                    format_double(cell.mean_power).c_str());
    }
    emit_report(result, config.out_dir);
    std::printf("fdr study: %d replicates -> %s\n", result.reps, config.out_dir.c_str());
    return 0;
}

int cmd_report(const ExperimentConfig& config) {
    rebuild_report(config, config.out_dir);
    std::printf("rebuilt report tables in %s\n", config.out_dir.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Needlet filtering and multiple-testing peak detection on the sphere"};
    app.require_subcommand(1);

    CliOptions opts;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", opts.config_path, "experiment description file");
        cmd->add_option("--seed", opts.seed, "override run.base_seed")
            ->each([&](const std::string&) { opts.seed_set = true; });
        cmd->add_option("--out", opts.out_dir, "override run.out_dir");
        cmd->add_option("--workers", opts.workers, "override run.workers")
            ->each([&](const std::string&) { opts.workers_set = true; });
    };

    CLI::App* theory = app.add_subcommand("theory", "peak-height law tables per scale");
    CLI::App* simulate = app.add_subcommand("simulate", "one seeded sky map with catalog");
    CLI::App* detect = app.add_subcommand("detect", "filter and list peaks with p-values");
    CLI::App* stem = app.add_subcommand("stem", "full detection run at the first alpha");
    CLI::App* mc_null = app.add_subcommand("mc-null", "null-sky Monte Carlo study");
    CLI::App* mc_fdr = app.add_subcommand("mc-fdr", "FDR and power Monte Carlo study");
    CLI::App* report = app.add_subcommand("report", "rebuild derived tables from raw rows");
    for (CLI::App* cmd : {theory, simulate, detect, stem, mc_null, mc_fdr, report}) {
        add_common(cmd);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const stem::ExperimentConfig config = load_config(opts);
        if (theory->parsed()) return cmd_theory(config);
        if (simulate->parsed()) return cmd_simulate(config);
        if (detect->parsed()) return cmd_detect(config);
        if (stem->parsed()) return cmd_stem(config);
        if (mc_null->parsed()) return cmd_mc_null(config);
        if (mc_fdr->parsed()) return cmd_mc_fdr(config);
        if (report->parsed()) return cmd_report(config);
        std::fprintf(stderr, "error: no subcommand\n");
        return 2;
    } catch (const stem::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
