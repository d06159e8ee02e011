#include "stem/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>
#include <sstream>

#include "stem/errors.hpp"
#include "stem/io.hpp"
#include "stem/sky.hpp"
#include "stem/sphere.hpp"

namespace stem {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && (s[a] == ' ' || s[a] == '\t')) ++a;
    while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
    return s.substr(a, b - a);
}

double to_double(const std::string& key_path, const std::string& value) {
    const char* begin = value.c_str();
    char* end = nullptr;
    const double x = std::strtod(begin, &end);
    if (end == begin || *end != '\0') {
        throw ConfigError(key_path, "expected a number, got '" + value + "'");
    }
    return x;
}

long long to_int(const std::string& key_path, const std::string& value) {
    const char* begin = value.c_str();
    char* end = nullptr;
    const long long x = std::strtoll(begin, &end, 10);
    if (end == begin || *end != '\0') {
        throw ConfigError(key_path, "expected an integer, got '" + value + "'");
    }
    return x;
}

std::uint64_t to_u64(const std::string& key_path, const std::string& value) {
    if (!value.empty() && value[0] == '-') {
        throw ConfigError(key_path, "expected a nonnegative integer, got '" + value + "'");
    }
    const char* begin = value.c_str();
    char* end = nullptr;
    const unsigned long long x = std::strtoull(begin, &end, 10);
    if (end == begin || *end != '\0') {
        throw ConfigError(key_path, "expected a nonnegative integer, got '" + value + "'");
    }
    return static_cast<std::uint64_t>(x);
}

bool to_bool(const std::string& key_path, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError(key_path, "expected true/false, got '" + value + "'");
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    if (trim(value).empty()) return out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

std::vector<double> to_double_list(const std::string& key_path, const std::string& value) {
    std::vector<double> out;
    for (const std::string& item : split_list(value)) out.push_back(to_double(key_path, item));
    return out;
}

std::vector<int> to_int_list(const std::string& key_path, const std::string& value) {
    std::vector<int> out;
    for (const std::string& item : split_list(value)) {
        out.push_back(static_cast<int>(to_int(key_path, item)));
    }
    return out;
}

template <typename T>
void sort_unique(std::vector<T>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
}

template <typename T>
std::string join_list(const std::vector<T>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        if constexpr (std::is_same_v<T, double>) {
            out += format_double(v[i]);
        } else {
            out += std::to_string(v[i]);
        }
    }
    return out;
}

void require(bool ok, const std::string& key_path, const std::string& message) {
    if (!ok) throw ConfigError(key_path, message);
}

std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

} // namespace

std::string ExperimentConfig::canonical_text() const {
    std::string out;
    out += "[field]\n";
    out += "gamma = " + format_double(gamma) + "\n";
    out += "g0 = " + format_double(g0) + "\n";
    out += "ell_max = " + std::to_string(ell_max) + "\n";
    out += "beam_fwhm = " + format_double(beam_fwhm) + "\n";
    out += "spectrum_file = " + spectrum_file + "\n";
    out += "[needlet]\n";
    out += "B = " + format_double(B) + "\n";
    out += "j_list = " + join_list(j_list) + "\n";
    out += "p = " + std::to_string(p) + "\n";
    out += "[sources]\n";
    out += "n = " + std::to_string(n_sources) + "\n";
    out += "a_max = " + format_double(a_max) + "\n";
    out += "t_n = " + format_double(t_n) + "\n";
    out += "rho_pixels = " + format_double(rho_pixels) + "\n";
    out += "[test]\n";
    out += "alphas = " + join_list(alphas) + "\n";
    out += "u_thresholds = " + join_list(u_thresholds) + "\n";
    out += std::string("require_neg_def = ") + (require_neg_def ? "true" : "false") + "\n";
    out += "[run]\n";
    out += "reps_null = " + std::to_string(reps_null) + "\n";
    out += "reps_fdr = " + std::to_string(reps_fdr) + "\n";
    out += "base_seed = " + std::to_string(base_seed) + "\n";
    out += "oversample = " + format_double(oversample) + "\n";
    out += "workers = " + std::to_string(workers) + "\n";
    out += std::string("fixed_catalog = ") + (fixed_catalog ? "true" : "false") + "\n";
    out += "out_dir = " + out_dir + "\n";
    return out;
}

std::string ExperimentConfig::digest_text() const {
    // Plumbing keys may differ between machines without changing any result
    // byte, so they stay out of the digest and out of the manifests.
    std::string filtered;
    std::stringstream ss(canonical_text());
    std::string line;
    while (std::getline(ss, line)) {
        if (line.rfind("workers =", 0) == 0 || line.rfind("out_dir =", 0) == 0) continue;
        filtered += line;
        filtered += '\n';
    }
    return filtered;
}

std::uint64_t ExperimentConfig::digest() const { return fnv1a64(digest_text()); }

std::string ExperimentConfig::digest_hex() const {
    static const char* hex = "0123456789abcdef";
    std::uint64_t d = digest();
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = hex[d & 0xF];
        d >>= 4;
    }
    return out;
}

void validate_config(ExperimentConfig& config) {
    config.warnings.clear();

    if (config.spectrum_file.empty()) {
        require(config.gamma > 2.0 && config.gamma < 4.0 * config.p + 2.0, "field.gamma",
                "spectral index must satisfy 2 < gamma < 4p + 2 = " +
                    format_double(4.0 * config.p + 2.0));
        require(config.g0 > 0.0, "field.g0", "power-law scale must be positive");
    }
    require(config.ell_max >= 8 && config.ell_max <= 3000, "field.ell_max",
            "band limit must lie in [8, 3000]");
    require(config.beam_fwhm >= 0.0 && config.beam_fwhm <= M_PI, "field.beam_fwhm",
            "beam FWHM must lie in [0, pi] radians");

    require(config.B > 1.0 && config.B <= 10.0, "needlet.B",
            "scale ratio must lie in (1, 10]");
    require(!config.j_list.empty(), "needlet.j_list", "at least one scale is required");
    sort_unique(config.j_list);
    for (int j : config.j_list) {
        require(j >= 1 && j <= 100, "needlet.j_list", "scales must lie in [1, 100]");
    }
    require(config.p >= 1 && config.p <= 4, "needlet.p", "window power must lie in [1, 4]");

    require(config.n_sources <= 100000, "sources.n", "at most 100000 sources");
    require(config.a_max > 0.0, "sources.a_max", "amplitude cap must be positive");
    require(config.t_n > 0.0, "sources.t_n", "kernel width must be positive");
    require(config.rho_pixels > 0.0, "sources.rho_pixels",
            "tolerance radius must be positive");

    sort_unique(config.alphas);
    for (double a : config.alphas) {
        require(a > 0.0 && a < 1.0, "test.alphas", "levels must lie in (0, 1)");
    }
    sort_unique(config.u_thresholds);
    for (double u : config.u_thresholds) {
        require(std::isfinite(u), "test.u_thresholds", "thresholds must be finite");
    }

    require(config.reps_null >= 2 && config.reps_null <= 100000, "run.reps_null",
            "replicate count must lie in [2, 100000]");
    require(config.reps_fdr >= 2 && config.reps_fdr <= 100000, "run.reps_fdr",
            "replicate count must lie in [2, 100000]");
    require(config.oversample >= 1.0 && config.oversample <= 8.0, "run.oversample",
            "grid oversampling must lie in [1, 8]");
    require(config.workers <= 256, "run.workers", "at most 256 workers");

    // Packing feasibility: sources pairwise rho apart give disjoint caps of
    // radius rho/2, so n of them cannot carry more than the sphere's area.
    if (config.n_sources > 0) {
        const double n_pixels = (config.ell_max + 1.0) * (2.0 * config.ell_max + 2.0);
        const double spacing = std::sqrt(4.0 * M_PI / n_pixels);
        const double rho = config.rho_pixels * spacing;
        require(rho <= M_PI, "sources.rho_pixels",
                "tolerance radius " + format_double(rho) + " rad exceeds pi");
        const double packed = static_cast<double>(config.n_sources) * cap_area(rho / 2.0);
        if (packed > 4.0 * M_PI) {
            throw ConfigError("sources.n",
                              std::to_string(config.n_sources) +
                                  " sources with minimum separation rho = " +
                                  format_double(rho) +
                                  " rad (from sources.rho_pixels = " +
                                  format_double(config.rho_pixels) +
                                  ") cannot pack: n * cap_area(rho/2) = " +
                                  format_double(packed) + " exceeds the sphere area " +
                                  format_double(4.0 * M_PI));
        }

        const int j_max = config.j_list.back();
        const double ratio = validate_scaling(config.t_n, config.B, j_max);
        if (ratio > kScalingWarnThreshold) {
            config.warnings.push_back(
                "sources.t_n: t_n * B^(2j) = " + format_double(ratio) + " at j = " +
                std::to_string(j_max) +
                " exceeds " + format_double(kScalingWarnThreshold) +
                "; the filter no longer dominates the source width");
        }
    }
}

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig config;
    std::set<std::string> seen;
    std::string section;

    std::stringstream ss(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(ss, raw)) {
        ++line_no;
        const std::size_t hash = raw.find('#');
        std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError("", "line " + std::to_string(line_no) +
                                          ": malformed section header '" + line + "'");
            }
            section = trim(line.substr(1, line.size() - 2));
            if (section != "field" && section != "needlet" && section != "sources" &&
                section != "test" && section != "run") {
                throw ConfigError(section, "unknown section");
            }
            continue;
        }

        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(section.empty() ? line : section + "." + line,
                              "line " + std::to_string(line_no) +
                                  ": expected 'key = value', got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section.empty()) {
            throw ConfigError(key, "key appears before any [section]");
        }
        const std::string path = section + "." + key;
        if (!seen.insert(path).second) {
            throw ConfigError(path, "duplicate key");
        }

        if (path == "field.gamma") {
            config.gamma = to_double(path, value);
        } else if (path == "field.g0") {
            config.g0 = to_double(path, value);
        } else if (path == "field.ell_max") {
            config.ell_max = static_cast<int>(to_int(path, value));
        } else if (path == "field.beam_fwhm") {
            config.beam_fwhm = to_double(path, value);
        } else if (path == "field.spectrum_file") {
            config.spectrum_file = value;
        } else if (path == "needlet.B") {
            config.B = to_double(path, value);
        } else if (path == "needlet.j_list") {
            config.j_list = to_int_list(path, value);
        } else if (path == "needlet.p") {
            config.p = static_cast<int>(to_int(path, value));
        } else if (path == "sources.n") {
            const long long n = to_int(path, value);
            require(n >= 0, path, "source count must be nonnegative");
            config.n_sources = static_cast<std::size_t>(n);
        } else if (path == "sources.a_max") {
            config.a_max = to_double(path, value);
        } else if (path == "sources.t_n") {
            config.t_n = to_double(path, value);
        } else if (path == "sources.rho_pixels") {
            config.rho_pixels = to_double(path, value);
        } else if (path == "test.alphas") {
            config.alphas = to_double_list(path, value);
        } else if (path == "test.u_thresholds") {
            config.u_thresholds = to_double_list(path, value);
        } else if (path == "test.require_neg_def") {
            config.require_neg_def = to_bool(path, value);
        } else if (path == "run.reps_null") {
            config.reps_null = static_cast<int>(to_int(path, value));
        } else if (path == "run.reps_fdr") {
            config.reps_fdr = static_cast<int>(to_int(path, value));
        } else if (path == "run.base_seed") {
            config.base_seed = to_u64(path, value);
        } else if (path == "run.oversample") {
            config.oversample = to_double(path, value);
        } else if (path == "run.workers") {
            const long long w = to_int(path, value);
            require(w >= 0, path, "worker count must be nonnegative");
            config.workers = static_cast<unsigned>(w);
        } else if (path == "run.fixed_catalog") {
            config.fixed_catalog = to_bool(path, value);
        } else if (path == "run.out_dir") {
            config.out_dir = value;
        } else {
            throw ConfigError(path, "unknown key");
        }
    }

    validate_config(config);
    return config;
}

ExperimentConfig parse_config(const std::string& path) {
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const DimensionError& e) {
        throw ConfigError("", e.what());
    }
    return parse_config_text(text);
}

} // namespace stem
