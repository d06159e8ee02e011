#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace stem {

/// Library version stamped into report manifests.
inline constexpr const char* kStemVersion = "1.0.0";

/// Validated experiment description, parsed from sectioned key=value text
/// with sections [field], [needlet], [sources], [test] and [run].  Unknown
/// sections or keys, duplicate keys, and out-of-range values raise
/// ConfigError with the offending "section.key" path.
///
/// The experiment always runs on an exactly band-limited model: the power
/// law (or the tabulated spectrum) is truncated at ell_max and that table is
/// the field's law, for theory and simulation alike.
struct ExperimentConfig {
    // [field]
    double gamma = 3.0;          ///< spectral index of C_ell = g0 ell^-gamma
    double g0 = 1.0;
    int ell_max = 600;           ///< band limit of the experiment
    double beam_fwhm = 0.0;      ///< optional Gaussian beam on the signal; 0 disables
    std::string spectrum_file;   ///< optional "ell,c_ell" table replacing the power law

    // [needlet]
    double B = 1.2;
    std::vector<int> j_list = {28, 31, 34};  ///< kept sorted and unique
    int p = 1;

    // [sources]
    std::size_t n_sources = 500;
    double a_max = 3.0;          ///< amplitude cap in post-filter sigma units at the largest j
    double t_n = 1e-7;           ///< heat-kernel width of every source
    double rho_pixels = 3.0;     ///< tolerance radius in mean pixel spacings of the base grid

    // [test]
    std::vector<double> alphas = {0.01, 0.05, 0.1, 0.2};  ///< sorted, unique, in (0,1)
    std::vector<double> u_thresholds = {3.0};             ///< sorted, unique
    bool require_neg_def = false;

    // [run]
    int reps_null = 100;
    int reps_fdr = 50;
    std::uint64_t base_seed = 20260819;
    double oversample = 3.0;     ///< synthesis grid band limit per filtered band limit
    unsigned workers = 1;        ///< 0 means the hardware thread count
    bool fixed_catalog = true;   ///< one catalog for the whole experiment
    std::string out_dir = "out";

    /// Non-fatal issues found during validation (e.g. a filter scale that no
    /// longer dominates the source width).  Not part of the canonical text.
    std::vector<std::string> warnings;

    /// Canonical emission: every key in a fixed order, one per line, numbers
    /// in shortest round-trip form.  Reparsing it reproduces the config.
    std::string canonical_text() const;

    /// Canonical text minus the plumbing keys (run.workers, run.out_dir),
    /// which do not affect any output byte.  This is the text the digest
    /// hashes and the report manifests embed.
    std::string digest_text() const;

    /// FNV-1a 64-bit digest of digest_text().
    std::uint64_t digest() const;
    std::string digest_hex() const;
};

/// Range and consistency checks shared by the parser and programmatic
/// construction; fills warnings.  Throws ConfigError with a key path.
void validate_config(ExperimentConfig& config);

/// Parses and validates config text.
ExperimentConfig parse_config_text(const std::string& text);

/// Reads, parses and validates a config file.
ExperimentConfig parse_config(const std::string& path);

} // namespace stem
