#pragma once

#include "slowfast/averaging.hpp"
#include "slowfast/common.hpp"
#include "slowfast/integrator.hpp"
#include "slowfast/switching.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <variant>
#include <vector>

namespace slowfast {

using Json = nlohmann::json;

/// 17 significant digits: enough for binary64 round trips.
inline std::string format_double(double v) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.17g", v);
    return buffer;
}

using CsvCell = std::variant<std::string, double, std::int64_t>;

inline std::string csv_cell_to_string(const CsvCell& cell) {
    if (std::holds_alternative<std::string>(cell)) return std::get<std::string>(cell);
    if (std::holds_alternative<double>(cell)) return format_double(std::get<double>(cell));
    return std::to_string(std::get<std::int64_t>(cell));
}

inline void write_csv(const std::filesystem::path& file, const std::vector<std::string>& header,
                      const std::vector<std::vector<CsvCell>>& rows) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw StudyError("cannot open '" + file.string() + "' for writing");
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i > 0) out << ',';
        out << header[i];
    }
    out << '\n';
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i > 0) out << ',';
            out << csv_cell_to_string(row[i]);
        }
        out << '\n';
    }
    if (!out) throw StudyError("write failed for '" + file.string() + "'");
}

inline void write_text(const std::filesystem::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw StudyError("cannot open '" + file.string() + "' for writing");
    out << text;
    if (!out) throw StudyError("write failed for '" + file.string() + "'");
}

inline std::uint64_t fnv1a64(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw StudyError("cannot open '" + file.string() + "' for digest");
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    char chunk[4096];
    while (in.read(chunk, sizeof(chunk)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            hash ^= static_cast<unsigned char>(chunk[i]);
            hash *= 0x100000001b3ULL;
        }
        if (!in) break;
    }
    return hash;
}

inline std::string hex64(std::uint64_t v) {
    char buffer[19];
    std::snprintf(buffer, sizeof(buffer), "%016llx", static_cast<unsigned long long>(v));
    return buffer;
}

/// Path CSV: one row per grid node, columns t, x_*, xi_*, regime.
inline void export_path_csv(const SamplePath& path, const std::filesystem::path& file) {
    std::vector<std::string> header{"t_seconds"};
    const Eigen::Index dx = path.slow.empty() ? 0 : path.slow.front().size();
    const Eigen::Index dxi = path.fast.empty() ? 0 : path.fast.front().size();
    for (Eigen::Index i = 0; i < dx; ++i) header.push_back("x_" + std::to_string(i));
    for (Eigen::Index i = 0; i < dxi; ++i) header.push_back("xi_" + std::to_string(i));
    header.push_back("regime");

    const bool frozen_slow = path.slow.size() == 1 && path.fast.size() > 1;
    const std::size_t nodes = std::max(path.slow.size(), path.fast.size());
    std::vector<std::vector<CsvCell>> rows;
    rows.reserve(nodes);
    for (std::size_t k = 0; k < nodes; ++k) {
        std::vector<CsvCell> row;
        row.emplace_back(path.grid.time_at(k));
        const Vec& x = frozen_slow ? path.slow.front() : path.slow[k];
        for (Eigen::Index i = 0; i < dx; ++i) row.emplace_back(x(i));
        if (dxi > 0 && k < path.fast.size()) {
            for (Eigen::Index i = 0; i < dxi; ++i) row.emplace_back(path.fast[k](i));
        } else {
            for (Eigen::Index i = 0; i < dxi; ++i) row.emplace_back(0.0);
        }
        row.emplace_back(static_cast<std::int64_t>(k < path.regime.size() ? path.regime[k] : 0));
        rows.push_back(std::move(row));
    }
    write_csv(file, header, rows);
}

/// Jump-event CSV: t, component (slow/fast), mark coordinates.
inline void export_jump_log_csv(const SamplePath& path, const std::filesystem::path& file) {
    std::size_t mark_dim = 0;
    for (const auto& event : path.jump_log) {
        mark_dim = std::max(mark_dim, static_cast<std::size_t>(event.mark.size()));
    }
    std::vector<std::string> header{"t_seconds", "component"};
    for (std::size_t i = 0; i < std::max<std::size_t>(mark_dim, 1); ++i) {
        header.push_back("z_" + std::to_string(i));
    }
    std::vector<std::vector<CsvCell>> rows;
    rows.reserve(path.jump_log.size());
    for (const auto& event : path.jump_log) {
        std::vector<CsvCell> row;
        row.emplace_back(event.time);
        row.emplace_back(std::string(event.fast ? "fast" : "slow"));
        for (std::size_t i = 0; i < std::max<std::size_t>(mark_dim, 1); ++i) {
            row.emplace_back(i < static_cast<std::size_t>(event.mark.size())
                                 ? event.mark(static_cast<Eigen::Index>(i))
                                 : 0.0);
        }
        rows.push_back(std::move(row));
    }
    write_csv(file, header, rows);
}

/// Chain path CSV: columns (time, state); first row is the initial state.
inline void export_chain_csv(const SwitchingPath& path, const std::filesystem::path& file) {
    std::vector<std::vector<CsvCell>> rows;
    rows.push_back({CsvCell{path.t0}, CsvCell{static_cast<std::int64_t>(path.initial_state)}});
    for (std::size_t k = 0; k < path.jump_count(); ++k) {
        rows.push_back(
            {CsvCell{path.jump_times[k]}, CsvCell{static_cast<std::int64_t>(path.jump_states[k])}});
    }
    write_csv(file, {"t_seconds", "state"}, rows);
}

inline Json matrix_to_json(const Mat& m) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Mat matrix_from_json(const Json& rows, const std::string& key_path) {
    if (!rows.is_array() || rows.empty()) {
        throw ConfigError(key_path, "expected a non-empty list of rows");
    }
    const std::size_t n = rows.size();
    Mat m(static_cast<Eigen::Index>(n), 0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& row = rows[i];
        if (!row.is_array() || (i == 0 ? false : row.size() != static_cast<std::size_t>(m.cols()))) {
            throw ConfigError(key_path, "rows must be equal-length lists");
        }
        if (i == 0) m.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(row.size()));
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (!row[j].is_number()) throw ConfigError(key_path, "matrix entries must be numbers");
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j].get<double>();
        }
    }
    return m;
}

/// Schedule schema: {"matrices": [rows...], "breakpoints_seconds": [...]}.
/// A single matrix with no breakpoints means one segment covering all time.
inline GeneratorSchedule schedule_from_json(const Json& obj, const std::string& key_path) {
    if (!obj.is_object()) throw ConfigError(key_path, "expected an object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (key != "matrices" && key != "breakpoints_seconds") {
            throw ConfigError(key_path + "." + key, "unknown key");
        }
    }
    if (!obj.contains("matrices")) throw ConfigError(key_path + ".matrices", "required");
    const auto& matrices = obj.at("matrices");
    if (!matrices.is_array() || matrices.empty()) {
        throw ConfigError(key_path + ".matrices", "expected a non-empty list of matrices");
    }
    GeneratorSchedule schedule;
    for (std::size_t s = 0; s < matrices.size(); ++s) {
        schedule.matrices.push_back(
            matrix_from_json(matrices[s], key_path + ".matrices[" + std::to_string(s) + "]"));
    }
    if (obj.contains("breakpoints_seconds")) {
        for (const auto& b : obj.at("breakpoints_seconds")) {
            if (!b.is_number()) {
                throw ConfigError(key_path + ".breakpoints_seconds", "entries must be numbers");
            }
            schedule.breakpoints.push_back(b.get<double>());
        }
        if (schedule.breakpoints.size() != schedule.matrices.size() + 1) {
            throw ConfigError(key_path + ".breakpoints_seconds",
                              "need one more breakpoint than matrices");
        }
    } else {
        if (schedule.matrices.size() != 1) {
            throw ConfigError(key_path + ".breakpoints_seconds",
                              "required when more than one segment is given");
        }
        schedule.breakpoints = {-std::numeric_limits<double>::infinity(),
                                std::numeric_limits<double>::infinity()};
    }
    schedule.validate();
    return schedule;
}

/// Two-scale generator schema: class sizes plus fast/slow schedules.
inline TwoScaleGenerator two_scale_from_json(const Json& obj, const std::string& key_path) {
    if (!obj.is_object()) throw ConfigError(key_path, "expected an object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (key != "class_sizes" && key != "fast" && key != "slow") {
            throw ConfigError(key_path + "." + key, "unknown key");
        }
    }
    if (!obj.contains("class_sizes")) throw ConfigError(key_path + ".class_sizes", "required");
    if (!obj.contains("fast")) throw ConfigError(key_path + ".fast", "required");
    TwoScaleGenerator gen;
    for (const auto& s : obj.at("class_sizes")) {
        if (!s.is_number_integer() || s.get<std::int64_t>() <= 0) {
            throw ConfigError(key_path + ".class_sizes", "entries must be positive integers");
        }
        gen.partition.class_sizes.push_back(static_cast<std::size_t>(s.get<std::int64_t>()));
    }
    gen.fast = schedule_from_json(obj.at("fast"), key_path + ".fast");
    const std::size_t n = gen.partition.state_count();
    if (obj.contains("slow")) {
        gen.slow = schedule_from_json(obj.at("slow"), key_path + ".slow");
    } else {
        gen.slow = GeneratorSchedule::constant(
            Mat::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)));
    }
    gen.validate();
    return gen;
}

inline Json averaged_table_to_json(const AveragedTable& table) {
    Json j;
    j["grid"]["lo"] = std::vector<double>(table.lo.data(), table.lo.data() + table.lo.size());
    j["grid"]["hi"] = std::vector<double>(table.hi.data(), table.hi.data() + table.hi.size());
    j["grid"]["nodes_per_dim"] = table.nodes_per_dim;
    j["class_count"] = table.class_count;
    j["atom_count"] = table.atom_count;
    j["dim"] = table.dim;
    j["drift"] = table.drift;
    j["diffusion_root"] = table.diff_root;
    j["diffusion_sq"] = table.diff_sq;
    j["jump"] = table.jump;
    j["jump_integral"] = table.jump_integral;
    j["provenance"]["seed"] = table.seed;
    j["provenance"]["measure_paths"] = table.measure_paths;
    j["provenance"]["burn_in_seconds"] = table.burn_in;
    j["provenance"]["horizon_seconds"] = table.horizon;
    j["provenance"]["dt_seconds"] = table.dt;
    return j;
}

}  // namespace slowfast
