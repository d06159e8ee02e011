#pragma once

#include <string>

#include "stem/harmonic.hpp"
#include "stem/pipeline.hpp"
#include "stem/sky.hpp"

namespace stem {

/// Shortest decimal form that parses back to exactly the same double.
/// Infinities and NaN print as "inf", "-inf", "nan".  Used by every text
/// emitter so that reruns produce identical bytes.
std::string format_double(double x);

/// Reads a whole file; throws DimensionError when it cannot be opened.
std::string read_text_file(const std::string& path);

/// Writes content, creating parent directories as needed.
void write_text_file(const std::string& path, const std::string& content);

/// Peak list in detection order (tallest first):
/// "theta,phi,height,p_value,selected,label" with 0/1 flags.
std::string peaks_csv(const DetectionResult& result);

/// Source list: "theta,phi,amplitude" rows.  Kernel width and tolerance
/// radius belong to the run manifest, not the table.
std::string catalog_csv(const SourceCatalog& catalog);

/// "ell,c_ell" rows for every tabulated degree.
std::string spectrum_csv(const PowerSpectrum& spectrum);

/// Parses "ell,c_ell" rows ('#' comments and a non-numeric header line are
/// skipped).  Degrees must run 0..L consecutively; the result is a bare
/// table, i.e. an exactly band-limited model.
PowerSpectrum parse_spectrum_csv(const std::string& text);

/// Grid description as '#' comment lines: one "# ell_max N" line, then one
/// "# ring theta weight n_phi" line per ring.
std::string grid_header(const SphereGrid& grid);

/// Grid header followed by "pixel,f" rows for the scalar map.
std::string map_csv(const FieldMaps& maps);

/// Detection summary with counts, the applied height threshold, rates, and
/// the configuration digest.  A non-finite u_bh serializes as null.
std::string detection_summary_json(const DetectionResult& result,
                                   const std::string& config_digest,
                                   int j,
                                   double alpha);

} // namespace stem
