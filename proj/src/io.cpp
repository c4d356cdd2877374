#include "fpgame/io.hpp"

#include "fpgame/errors.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace fpgame {

using nlohmann::json;

std::string format_real(double value) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

std::string provenance_line(const Provenance& p) {
    return std::string("# ") + kToolName + " " + kToolVersion + " config=" + hex64(p.config_hash);
}

json provenance_json(const Provenance& p) {
    return {{"tool", kToolName}, {"version", kToolVersion}, {"config_hash", hex64(p.config_hash)}};
}

json real_json(double value) { return std::isfinite(value) ? json(value) : json(nullptr); }

json partition_to_json(const Partition& partition) {
    json lower = json::array(), upper = json::array();
    for (Eigen::Index k = 0; k < partition.lower().size(); ++k) {
        lower.push_back(partition.lower()(k));
        upper.push_back(partition.upper()(k));
    }
    return {{"lower", lower},
            {"upper", upper},
            {"cells_per_axis", partition.cells_per_axis()},
            {"cell_count", partition.cell_count()},
            {"cell_volume", partition.cell_volume()}};
}

Partition partition_from_json(const json& j, const std::string& path) {
    try {
        const auto lower = j.at("lower").get<std::vector<double>>();
        const auto upper = j.at("upper").get<std::vector<double>>();
        const auto cells = j.at("cells_per_axis").get<std::vector<std::size_t>>();
        return Partition(Eigen::Map<const Vector>(lower.data(), static_cast<Eigen::Index>(lower.size())),
                         Eigen::Map<const Vector>(upper.data(), static_cast<Eigen::Index>(upper.size())), cells);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": malformed partition (" + e.what() + ")");
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
    if (!out) throw ConfigError("write failed: " + path.string());
}

void write_json(const std::filesystem::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

void write_density(const std::filesystem::path& path, const DensityVector& density,
                   const std::optional<Provenance>& provenance) {
    std::ostringstream os;
    if (provenance) os << provenance_line(*provenance) << '\n';
    os << "cell_index,value\n";
    for (std::size_t i = 0; i < density.size(); ++i) os << i << ',' << format_real(density[i]) << '\n';
    write_text(path, os.str());

    json sidecar = {{"partition", partition_to_json(density.partition())}};
    if (provenance) sidecar["provenance"] = provenance_json(*provenance);
    write_json(path.string() + ".json", sidecar);
}

DensityVector read_density(const std::filesystem::path& path) {
    const std::string where = path.string();
    std::ifstream side(path.string() + ".json");
    if (!side) throw ConfigError(where + ": missing partition sidecar " + path.string() + ".json");
    json sidecar;
    try {
        sidecar = json::parse(side);
    } catch (const json::parse_error& e) {
        throw ConfigError(where + ".json: invalid JSON: " + e.what());
    }
    if (!sidecar.contains("partition")) throw ConfigError(where + ".json: missing 'partition'");
    Partition partition = partition_from_json(sidecar["partition"], where + ".json");

    std::ifstream in(path);
    if (!in) throw ConfigError(where + ": cannot open");
    std::vector<double> values(partition.cell_count(), 0.0);
    std::vector<bool> seen(values.size(), false);
    std::string line;
    bool header = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            if (line != "cell_index,value") throw ConfigError(where + ": expected header 'cell_index,value'");
            header = true;
            continue;
        }
        const auto comma = line.find(',');
        const std::string row = where + " line " + std::to_string(line_no);
        if (comma == std::string::npos) throw ConfigError(row + ": expected 'cell_index,value'");
        char* end = nullptr;
        errno = 0;
        const unsigned long long index = std::strtoull(line.c_str(), &end, 10);
        if (end != line.c_str() + comma || errno != 0) throw ConfigError(row + ": bad cell index");
        const char* vstart = line.c_str() + comma + 1;
        const double value = std::strtod(vstart, &end);
        if (end == vstart || *end != '\0') throw ConfigError(row + ": bad value");
        if (index >= values.size()) throw ConfigError(row + ": cell index out of range");
        if (seen[index]) throw ConfigError(row + ": duplicate cell index");
        if (!std::isfinite(value)) throw ConfigError(row + ": value must be finite");
        if (value < 0.0) throw ConfigError(row + ": negative density value");
        values[index] = value;
        seen[index] = true;
    }
    if (!header) throw ConfigError(where + ": empty density file");
    double mass = 0.0;
    for (double v : values) mass += v;
    mass *= partition.cell_volume();
    if (std::abs(mass - 1.0) > 1e-6)
        throw ConfigError(where + ": normalization error, mass " + format_real(mass) + " differs from 1");
    return DensityVector::create(std::move(partition), std::move(values), 1e-6);
}

void write_ulam(const std::filesystem::path& csv_path, const UlamMatrix& P,
                const std::optional<Provenance>& provenance) {
    std::ostringstream os;
    if (provenance) os << provenance_line(*provenance) << '\n';
    os << "row,col,value\n";
    for (std::size_t i = 0; i < P.size(); ++i)
        for (const auto& e : P.row(i))
            os << i << ',' << e.col << ','
               << format_real(static_cast<double>(e.count) / P.samples_per_row()) << '\n';
    write_text(csv_path, os.str());

    json leakage = json::array();
    for (std::size_t i = 0; i < P.size(); ++i) leakage.push_back(P.leakage(i));
    json sidecar = {{"partition", partition_to_json(P.partition())},
                    {"samples_per_row", P.samples_per_row()},
                    {"leak_tol", P.leak_tol()},
                    {"max_leakage", P.max_leakage()},
                    {"leakage", leakage},
                    {"flow", {{"t0", P.metadata().t0}, {"t1", P.metadata().t1},
                              {"profile_hash", hex64(P.metadata().profile_hash)}}}};
    if (provenance) sidecar["provenance"] = provenance_json(*provenance);
    write_json(csv_path.string() + ".json", sidecar);
}

}  // namespace fpgame
