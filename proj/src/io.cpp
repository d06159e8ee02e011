#include "stem/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stem/errors.hpp"

namespace stem {

namespace {

/// One CSV cell parsed as double with full-token consumption.
double parse_double_token(const std::string& token, const char* where) {
    const char* begin = token.c_str();
    char* end = nullptr;
    const double value = std::strtod(begin, &end);
    if (end == begin || *end != '\0') {
        throw DomainError(std::string(where) + ": cannot parse number '" + token + "'");
    }
    return value;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

bool starts_with_digit_or_sign(const std::string& s) {
    for (char c : s) {
        if (c == ' ' || c == '\t') continue;
        return (c >= '0' && c <= '9') || c == '-' || c == '+' || c == '.';
    }
    return false;
}

} // namespace

std::string format_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DimensionError("read_text_file: cannot open '" + path + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::filesystem::create_directories(p.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DimensionError("write_text_file: cannot open '" + path + "'");
    }
    out << content;
    if (!out) {
        throw DimensionError("write_text_file: short write to '" + path + "'");
    }
}

std::string peaks_csv(const DetectionResult& result) {
    std::string out = "theta,phi,height,p_value,selected,label\n";
    for (std::size_t i = 0; i < result.peaks.size(); ++i) {
        const Peak& p = result.peaks[i];
        out += format_double(p.location.theta);
        out += ',';
        out += format_double(p.location.phi);
        out += ',';
        out += format_double(p.height);
        out += ',';
        out += format_double(p.p_value);
        out += ',';
        out += result.selected[i] ? '1' : '0';
        out += ',';
        out += result.labels[i] ? '1' : '0';
        out += '\n';
    }
    return out;
}

std::string catalog_csv(const SourceCatalog& catalog) {
    std::string out = "theta,phi,amplitude\n";
    for (const Source& s : catalog.sources) {
        out += format_double(s.xi.theta);
        out += ',';
        out += format_double(s.xi.phi);
        out += ',';
        out += format_double(s.amplitude);
        out += '\n';
    }
    return out;
}

std::string spectrum_csv(const PowerSpectrum& spectrum) {
    std::string out = "ell,c_ell\n";
    for (std::size_t ell = 0; ell < spectrum.c_ell.size(); ++ell) {
        out += std::to_string(ell);
        out += ',';
        out += format_double(spectrum.c_ell[ell]);
        out += '\n';
    }
    return out;
}

PowerSpectrum parse_spectrum_csv(const std::string& text) {
    PowerSpectrum spectrum;
    std::stringstream ss(text);
    std::string line;
    int expected_ell = 0;
    while (std::getline(ss, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (!starts_with_digit_or_sign(line)) continue;  // header row
        const std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() != 2) {
            throw DimensionError("spectrum csv: expected 'ell,c_ell' but got '" + line + "'");
        }
        const double ell_value = parse_double_token(cells[0], "spectrum csv");
        const int ell = static_cast<int>(ell_value);
        if (static_cast<double>(ell) != ell_value || ell != expected_ell) {
            throw DimensionError("spectrum csv: degrees must run 0,1,2,... but got '" +
                                 cells[0] + "' at position " + std::to_string(expected_ell));
        }
        spectrum.c_ell.push_back(parse_double_token(cells[1], "spectrum csv"));
        ++expected_ell;
    }
    if (spectrum.c_ell.empty()) {
        throw DimensionError("spectrum csv: no data rows");
    }
    return spectrum;
}

std::string grid_header(const SphereGrid& grid) {
    std::string out = "# ell_max " + std::to_string(grid.ell_max) + " n_pixels " +
                      std::to_string(grid.n_pixels) + "\n";
    for (std::size_t r = 0; r < grid.rings.size(); ++r) {
        const Ring& ring = grid.rings[r];
        out += "# ring " + std::to_string(r) + ' ' + format_double(ring.theta) + ' ' +
               format_double(ring.weight) + ' ' + std::to_string(ring.n_phi) + '\n';
    }
    return out;
}

std::string map_csv(const FieldMaps& maps) {
    std::string out = grid_header(maps.grid);
    out += "pixel,f\n";
    for (std::size_t pix = 0; pix < maps.f.size(); ++pix) {
        out += std::to_string(pix);
        out += ',';
        out += format_double(maps.f[pix]);
        out += '\n';
    }
    return out;
}

std::string detection_summary_json(const DetectionResult& result,
                                   const std::string& config_digest,
                                   int j,
                                   double alpha) {
    nlohmann::ordered_json doc;
    doc["j"] = j;
    doc["alpha"] = alpha;
    doc["n_peaks"] = result.peaks.size();
    doc["bh_k"] = result.bh_k;
    if (std::isfinite(result.u_bh)) {
        doc["u_bh"] = result.u_bh;
    } else {
        doc["u_bh"] = nullptr;
    }
    doc["r_count"] = result.r_count;
    doc["v_count"] = result.v_count;
    doc["w_count"] = result.w_count;
    doc["fdp"] = result.fdp;
    doc["power"] = result.power;
    int detected = 0;
    for (bool d : result.detected_sources) detected += d ? 1 : 0;
    doc["n_sources"] = result.detected_sources.size();
    doc["n_detected_sources"] = detected;
    doc["config_digest"] = config_digest;
    return doc.dump(2) + "\n";
}

} // namespace stem
