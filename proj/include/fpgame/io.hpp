#pragma once

// CSV/JSON artifacts. CSV files use ',' separators, '.' decimals, a header row
// and 17 significant digits; an optional leading '#' line carries provenance.

#include "fpgame/transfer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace fpgame {

inline constexpr const char* kToolName = "fpgame";
inline constexpr const char* kToolVersion = "0.1.0";

struct Provenance {
    std::uint64_t config_hash = 0;
};

/// "%.17g"; round-trips every finite double through strtod.
std::string format_real(double value);
std::string hex64(std::uint64_t value);

/// "# fpgame 0.1.0 config=<hash>"
std::string provenance_line(const Provenance& p);
nlohmann::json provenance_json(const Provenance& p);

nlohmann::json partition_to_json(const Partition& partition);
Partition partition_from_json(const nlohmann::json& j, const std::string& path);

/// Writes `cell_index,value` rows to path and the partition to path + ".json".
void write_density(const std::filesystem::path& path, const DensityVector& density,
                   const std::optional<Provenance>& provenance = std::nullopt);

/// Inverse of write_density. Negative values are rejected with the row number;
/// a mass more than 1e-6 away from 1 is rejected rather than rescaled.
DensityVector read_density(const std::filesystem::path& path);

/// Sparse `row,col,value` triplets plus a JSON sidecar (partition, leakage, flow metadata).
void write_ulam(const std::filesystem::path& csv_path, const UlamMatrix& P,
                const std::optional<Provenance>& provenance = std::nullopt);

void write_text(const std::filesystem::path& path, const std::string& text);
/// Stable pretty-printed JSON with a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

/// +-inf and NaN become null.
nlohmann::json real_json(double value);

}  // namespace fpgame
