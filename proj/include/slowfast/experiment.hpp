#pragma once

#include "slowfast/analysis.hpp"
#include "slowfast/averaging.hpp"
#include "slowfast/benchmarks.hpp"
#include "slowfast/common.hpp"
#include "slowfast/integrator.hpp"
#include "slowfast/io.hpp"
#include "slowfast/model.hpp"
#include "slowfast/switching.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace slowfast {

namespace config {

inline void check_keys(const Json& obj, const std::string& path,
                       const std::vector<std::string_view>& allowed) {
    if (!obj.is_object()) throw ConfigError(path, "expected an object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        bool known = false;
        for (const auto& candidate : allowed) {
            if (key == candidate) {
                known = true;
                break;
            }
        }
        if (!known) throw ConfigError(path + "." + key, "unknown key");
    }
}

inline double number(const Json& obj, const std::string& path, const std::string& key,
                     std::optional<double> fallback = {}) {
    if (!obj.contains(key)) {
        if (fallback) return *fallback;
        throw ConfigError(path + "." + key, "required");
    }
    if (!obj.at(key).is_number()) throw ConfigError(path + "." + key, "expected a number");
    return obj.at(key).get<double>();
}

inline double positive_number(const Json& obj, const std::string& path, const std::string& key,
                              std::optional<double> fallback = {}) {
    const double v = number(obj, path, key, fallback);
    if (!(v > 0.0)) throw ConfigError(path + "." + key, "must be positive");
    return v;
}

inline std::size_t count(const Json& obj, const std::string& path, const std::string& key,
                         std::optional<std::size_t> fallback = {}) {
    if (!obj.contains(key)) {
        if (fallback) return *fallback;
        throw ConfigError(path + "." + key, "required");
    }
    if (!obj.at(key).is_number_integer() || obj.at(key).get<std::int64_t>() < 0) {
        throw ConfigError(path + "." + key, "expected a nonnegative integer");
    }
    return static_cast<std::size_t>(obj.at(key).get<std::int64_t>());
}

inline std::string text(const Json& obj, const std::string& path, const std::string& key,
                        std::optional<std::string> fallback = {}) {
    if (!obj.contains(key)) {
        if (fallback) return *fallback;
        throw ConfigError(path + "." + key, "required");
    }
    if (!obj.at(key).is_string()) throw ConfigError(path + "." + key, "expected a string");
    return obj.at(key).get<std::string>();
}

inline std::vector<double> number_list(const Json& obj, const std::string& path,
                                       const std::string& key, bool allow_empty = false) {
    if (!obj.contains(key)) throw ConfigError(path + "." + key, "required");
    if (!obj.at(key).is_array()) throw ConfigError(path + "." + key, "expected a list");
    std::vector<double> values;
    for (const auto& v : obj.at(key)) {
        if (!v.is_number()) throw ConfigError(path + "." + key, "entries must be numbers");
        values.push_back(v.get<double>());
    }
    if (values.empty() && !allow_empty) throw ConfigError(path + "." + key, "must not be empty");
    return values;
}

inline PathGrid grid(const Json& obj, const std::string& path) {
    check_keys(obj, path, {"t0_seconds", "t1_seconds", "dt_seconds"});
    PathGrid g;
    g.t0 = number(obj, path, "t0_seconds", 0.0);
    g.t1 = number(obj, path, "t1_seconds");
    g.dt = number(obj, path, "dt_seconds");
    if (!(g.dt > 0.0)) throw ConfigError(path + ".dt_seconds", "must be positive");
    if (!(g.t1 > g.t0)) throw ConfigError(path + ".t1_seconds", "must exceed t0_seconds");
    try {
        g.validate();
    } catch (const std::exception& err) {
        throw ConfigError(path, err.what());
    }
    return g;
}

inline InvariantMeasureSettings measure_settings(const Json& obj, const std::string& path,
                                                 std::uint64_t seed, int jobs) {
    check_keys(obj, path,
               {"dt_seconds", "burn_in_seconds", "horizon_seconds", "paths", "stride",
                "rate_hint"});
    InvariantMeasureSettings s;
    s.dt = positive_number(obj, path, "dt_seconds", 1e-2);
    s.burn_in = number(obj, path, "burn_in_seconds", -1.0);
    s.horizon = number(obj, path, "horizon_seconds", -1.0);
    s.path_count = count(obj, path, "paths", std::size_t{64});
    s.stride = std::max<std::size_t>(1, count(obj, path, "stride", std::size_t{5}));
    s.rate_hint = number(obj, path, "rate_hint", -1.0);
    s.seed = seed;
    s.jobs = jobs;
    return s;
}

}  // namespace config

/// Collects study outputs under one directory and remembers what was written;
/// nothing is ever written outside out_dir.
class ReportEmitter {
public:
    ReportEmitter(std::filesystem::path out_dir, std::set<std::string> formats)
        : out_dir_(std::move(out_dir)), formats_(std::move(formats)) {
        std::filesystem::create_directories(out_dir_);
    }

    bool wants(const std::string& format) const { return formats_.count(format) > 0; }

    void csv(const std::string& name, const std::vector<std::string>& header,
             const std::vector<std::vector<CsvCell>>& rows) {
        if (!wants("csv")) return;
        write_csv(out_dir_ / name, header, rows);
        files_.push_back(name);
    }

    void json(const std::string& name, const Json& payload) {
        if (!wants("json")) return;
        force_json(name, payload);
    }

    /// For summary/manifest documents that are emitted regardless of format.
    void force_json(const std::string& name, const Json& payload) {
        write_text(out_dir_ / name, payload.dump(2) + "\n");
        files_.push_back(name);
    }

    void file_written(const std::string& name) { files_.push_back(name); }

    const std::filesystem::path& out_dir() const { return out_dir_; }
    const std::vector<std::string>& files() const { return files_; }

private:
    std::filesystem::path out_dir_;
    std::set<std::string> formats_;
    std::vector<std::string> files_;
};

struct ExperimentOutcome {
    std::filesystem::path out_dir;
    Json summary;
    Json manifest;
};

namespace detail {

struct ExperimentContext {
    std::string study;
    Benchmark benchmark;
    std::uint64_t seed = 1;
    int jobs = 0;
    Json study_config;  // the study's sub-object (possibly empty)
};

inline ExperimentContext parse_context(const Json& cfg, std::optional<std::uint64_t> seed_override,
                                       std::optional<int> jobs_override) {
    static const std::set<std::string> studies{"qsd",       "simulate", "average",
                                               "converge",  "ergodicity", "modulus",
                                               "picard",    "perturbation", "validate"};
    if (!cfg.is_object()) throw ConfigError("$", "config root must be an object");
    std::vector<std::string_view> allowed{"study", "model", "switching", "seed",
                                          "jobs",  "output_formats"};
    for (const auto& s : studies) allowed.push_back(s);
    config::check_keys(cfg, "$", allowed);

    ExperimentContext ctx;
    ctx.study = config::text(cfg, "$", "study");
    if (studies.count(ctx.study) == 0) {
        throw ConfigError("$.study", "unknown study '" + ctx.study + "'");
    }
    const std::string model_name = config::text(cfg, "$", "model", std::string("constant"));
    try {
        ctx.benchmark = make_benchmark(model_name);
    } catch (const std::exception& err) {
        throw ConfigError("$.model", err.what());
    }
    if (cfg.contains("switching")) {
        ctx.benchmark.model.switching = two_scale_from_json(cfg.at("switching"), "$.switching");
        ctx.benchmark.model.initial_regime = 0;
        ctx.benchmark.analytic_averaged.reset();  // the override invalidates closed forms
    }
    if (cfg.contains("seed")) {
        if (!cfg.at("seed").is_number_integer() || cfg.at("seed").get<std::int64_t>() < 0) {
            throw ConfigError("$.seed", "expected a nonnegative integer");
        }
        ctx.seed = cfg.at("seed").get<std::uint64_t>();
    }
    if (seed_override) ctx.seed = *seed_override;
    if (cfg.contains("jobs")) {
        if (!cfg.at("jobs").is_number_integer()) throw ConfigError("$.jobs", "expected an integer");
        ctx.jobs = cfg.at("jobs").get<int>();
    }
    if (jobs_override) ctx.jobs = *jobs_override;
    if (cfg.contains(ctx.study)) ctx.study_config = cfg.at(ctx.study);
    if (!ctx.study_config.is_object() && !ctx.study_config.is_null()) {
        throw ConfigError("$." + ctx.study, "expected an object");
    }
    if (ctx.study_config.is_null()) ctx.study_config = Json::object();
    return ctx;
}

inline std::set<std::string> parse_formats(const Json& cfg) {
    std::set<std::string> formats{"csv", "json"};
    if (cfg.contains("output_formats")) {
        formats.clear();
        if (!cfg.at("output_formats").is_array()) {
            throw ConfigError("$.output_formats", "expected a list");
        }
        for (const auto& f : cfg.at("output_formats")) {
            if (!f.is_string() || (f != "csv" && f != "json")) {
                throw ConfigError("$.output_formats", "entries must be 'csv' or 'json'");
            }
            formats.insert(f.get<std::string>());
        }
        if (formats.empty()) throw ConfigError("$.output_formats", "must not be empty");
    }
    return formats;
}

inline Json run_qsd_study(const ExperimentContext& ctx, ReportEmitter& emit) {
    const auto& gen = ctx.benchmark.model.switching;
    const auto qsd = quasi_stationary_schedule(gen);

    std::vector<std::vector<CsvCell>> rows;
    for (std::size_t s = 0; s < qsd.segment_count(); ++s) {
        for (std::size_t cls = 0; cls < qsd.partition.class_count(); ++cls) {
            const Vec& nu = qsd.class_weights(s, cls);
            for (Eigen::Index m = 0; m < nu.size(); ++m) {
                rows.push_back({CsvCell{static_cast<std::int64_t>(s)},
                                CsvCell{qsd.breakpoints[s]},
                                CsvCell{qsd.breakpoints[s + 1]},
                                CsvCell{static_cast<std::int64_t>(cls)},
                                CsvCell{static_cast<std::int64_t>(
                                    qsd.partition.offset(cls) + static_cast<std::size_t>(m))},
                                CsvCell{nu(m)}});
            }
        }
    }
    emit.csv("qsd.csv",
             {"segment", "t_start_seconds", "t_end_seconds", "class", "state", "weight"}, rows);

    const auto aggregated = aggregated_schedule(gen);
    std::vector<std::vector<CsvCell>> agg_rows;
    for (std::size_t s = 0; s < aggregated.segment_count(); ++s) {
        const Mat& q = aggregated.matrices[s];
        for (Eigen::Index i = 0; i < q.rows(); ++i) {
            for (Eigen::Index j = 0; j < q.cols(); ++j) {
                agg_rows.push_back({CsvCell{static_cast<std::int64_t>(s)},
                                    CsvCell{static_cast<std::int64_t>(i)},
                                    CsvCell{static_cast<std::int64_t>(j)}, CsvCell{q(i, j)}});
            }
        }
    }
    emit.csv("aggregated_generator.csv", {"segment", "row", "col", "rate_per_second"}, agg_rows);

    Json summary;
    summary["states"] = gen.state_count();
    summary["classes"] = gen.partition.class_count();
    summary["segments"] = qsd.segment_count();
    Json weights = Json::array();
    for (std::size_t s = 0; s < qsd.segment_count(); ++s) {
        Json per_class = Json::array();
        for (std::size_t cls = 0; cls < qsd.partition.class_count(); ++cls) {
            const Vec& nu = qsd.class_weights(s, cls);
            per_class.push_back(std::vector<double>(nu.data(), nu.data() + nu.size()));
        }
        weights.push_back(per_class);
    }
    summary["weights"] = weights;
    emit.json("qsd.json", summary);
    return summary;
}

inline Json run_simulate_study(const ExperimentContext& ctx, ReportEmitter& emit) {
    const auto& sc = ctx.study_config;
    config::check_keys(sc, "$.simulate", {"epsilon", "grid", "paths"});
    const double eps = config::positive_number(sc, "$.simulate", "epsilon", 1.0);
    if (!sc.contains("grid")) throw ConfigError("$.simulate.grid", "required");
    const PathGrid grid = config::grid(sc.at("grid"), "$.simulate.grid");
    const std::size_t paths = config::count(sc, "$.simulate", "paths", std::size_t{1});

    const NoiseBundle noise{ctx.seed};
    Json terminals = Json::array();
    for (std::size_t p = 0; p < paths; ++p) {
        const auto path = simulate_coupled(ctx.benchmark.model, eps, grid, noise, p);
        if (emit.wants("csv")) {
            export_path_csv(path, emit.out_dir() / ("path_" + std::to_string(p) + ".csv"));
            emit.file_written("path_" + std::to_string(p) + ".csv");
            export_jump_log_csv(path, emit.out_dir() / ("jumps_" + std::to_string(p) + ".csv"));
            emit.file_written("jumps_" + std::to_string(p) + ".csv");
            export_chain_csv(path.chain, emit.out_dir() / ("chain_" + std::to_string(p) + ".csv"));
            emit.file_written("chain_" + std::to_string(p) + ".csv");
        }
        const Vec& x = path.terminal_slow();
        terminals.push_back(std::vector<double>(x.data(), x.data() + x.size()));
    }
    Json summary;
    summary["epsilon"] = eps;
    summary["paths"] = paths;
    summary["terminal_slow"] = terminals;
    emit.json("simulate.json", summary);
    return summary;
}

inline Json run_average_study(const ExperimentContext& ctx, ReportEmitter& emit) {
    const auto& sc = ctx.study_config;
    config::check_keys(sc, "$.average", {"box_lo", "box_hi", "nodes", "measure"});
    const auto lo = config::number_list(sc, "$.average", "box_lo");
    const auto hi = config::number_list(sc, "$.average", "box_hi");
    if (!sc.contains("nodes")) throw ConfigError("$.average.nodes", "required");
    GridSpec spec;
    spec.lo = Eigen::Map<const Vec>(lo.data(), static_cast<Eigen::Index>(lo.size()));
    spec.hi = Eigen::Map<const Vec>(hi.data(), static_cast<Eigen::Index>(hi.size()));
    for (const auto& n : sc.at("nodes")) {
        if (!n.is_number_integer() || n.get<std::int64_t>() < 2) {
            throw ConfigError("$.average.nodes", "entries must be integers >= 2");
        }
        spec.nodes_per_dim.push_back(static_cast<std::size_t>(n.get<std::int64_t>()));
    }

    AveragedBuildSettings settings;
    settings.measure = config::measure_settings(
        sc.contains("measure") ? sc.at("measure") : Json::object(), "$.average.measure", ctx.seed,
        ctx.jobs);
    const auto qsd = quasi_stationary_schedule(ctx.benchmark.model.switching);
    const auto avg = build_averaged_model(ctx.benchmark.model, qsd, settings, spec);

    Json model_json;
    model_json["table"] = averaged_table_to_json(*avg.table);
    model_json["class_count"] = avg.class_count;
    if (avg.aggregated) {
        Json q_bar = Json::array();
        for (const Mat& q : avg.aggregated->matrices) q_bar.push_back(matrix_to_json(q));
        model_json["aggregated_generator"] = q_bar;
    }
    emit.force_json("averaged_model.json", model_json);

    const auto& table = *avg.table;
    std::vector<std::string> header{"node", "class"};
    for (std::size_t d = 0; d < table.dim; ++d) header.push_back("x_" + std::to_string(d));
    for (std::size_t d = 0; d < table.dim; ++d) header.push_back("drift_" + std::to_string(d));
    for (std::size_t d = 0; d < table.dim * table.dim; ++d) {
        header.push_back("diffusion_sq_" + std::to_string(d));
    }
    for (std::size_t a = 0; a < table.atom_count; ++a) {
        for (std::size_t d = 0; d < table.dim; ++d) {
            header.push_back("jump_" + std::to_string(a) + "_" + std::to_string(d));
        }
    }
    for (std::size_t d = 0; d < table.dim * table.dim; ++d) {
        header.push_back("jump_integral_" + std::to_string(d));
    }
    std::vector<std::vector<CsvCell>> rows;
    for (std::size_t n = 0; n < table.node_count(); ++n) {
        const Vec x = table.node_point(n);
        for (std::size_t c = 0; c < table.class_count; ++c) {
            std::vector<CsvCell> row{CsvCell{static_cast<std::int64_t>(n)},
                                     CsvCell{static_cast<std::int64_t>(c)}};
            for (Eigen::Index d = 0; d < x.size(); ++d) row.emplace_back(x(d));
            for (std::size_t d = 0; d < table.dim; ++d) {
                row.emplace_back(table.drift[(n * table.class_count + c) * table.dim + d]);
            }
            for (std::size_t d = 0; d < table.dim * table.dim; ++d) {
                row.emplace_back(table.diff_sq[(n * table.class_count + c) * table.dim * table.dim + d]);
            }
            for (std::size_t a = 0; a < table.atom_count; ++a) {
                for (std::size_t d = 0; d < table.dim; ++d) {
                    row.emplace_back(
                        table.jump[((n * table.class_count + c) * table.atom_count + a) * table.dim +
                                   d]);
                }
            }
            rows.push_back(std::move(row));
        }
    }
    emit.csv("averaged_table.csv", header, rows);

    Json summary;
    summary["nodes"] = table.node_count();
    summary["classes"] = table.class_count;
    summary["files"] = Json::array({"averaged_model.json"});
    return summary;
}

inline AveragedModel resolve_averaged(const ExperimentContext& ctx, const Json& sc,
                                      const std::string& path) {
    const std::string mode =
        sc.contains("averaged") && sc.at("averaged").is_string() ? sc.at("averaged").get<std::string>()
                                                                 : "analytic";
    if (sc.contains("averaged") && !sc.at("averaged").is_string()) {
        throw ConfigError(path + ".averaged", "expected 'analytic' or 'grid'");
    }
    if (mode == "analytic") {
        if (!ctx.benchmark.analytic_averaged) {
            throw ConfigError(path + ".averaged",
                              "benchmark '" + ctx.benchmark.name +
                                  "' has no closed-form averaged model; use 'grid'");
        }
        return *ctx.benchmark.analytic_averaged;
    }
    if (mode != "grid") throw ConfigError(path + ".averaged", "expected 'analytic' or 'grid'");
    if (!sc.contains("averaged_grid")) {
        throw ConfigError(path + ".averaged_grid", "required for grid averaging");
    }
    const auto& gc = sc.at("averaged_grid");
    config::check_keys(gc, path + ".averaged_grid", {"box_lo", "box_hi", "nodes", "measure"});
    const auto lo = config::number_list(gc, path + ".averaged_grid", "box_lo");
    const auto hi = config::number_list(gc, path + ".averaged_grid", "box_hi");
    GridSpec spec;
    spec.lo = Eigen::Map<const Vec>(lo.data(), static_cast<Eigen::Index>(lo.size()));
    spec.hi = Eigen::Map<const Vec>(hi.data(), static_cast<Eigen::Index>(hi.size()));
    if (!gc.contains("nodes")) throw ConfigError(path + ".averaged_grid.nodes", "required");
    for (const auto& n : gc.at("nodes")) {
        if (!n.is_number_integer() || n.get<std::int64_t>() < 2) {
            throw ConfigError(path + ".averaged_grid.nodes", "entries must be integers >= 2");
        }
        spec.nodes_per_dim.push_back(static_cast<std::size_t>(n.get<std::int64_t>()));
    }
    AveragedBuildSettings settings;
    settings.measure = config::measure_settings(
        gc.contains("measure") ? gc.at("measure") : Json::object(), path + ".averaged_grid.measure",
        ctx.seed, ctx.jobs);
    const auto qsd = quasi_stationary_schedule(ctx.benchmark.model.switching);
    return build_averaged_model(ctx.benchmark.model, qsd, settings, spec);
}

inline Json run_converge_study(const ExperimentContext& ctx, ReportEmitter& emit) {
    const auto& sc = ctx.study_config;
    config::check_keys(sc, "$.converge",
                       {"terminal_time_seconds", "dt_seconds", "epsilons", "paths", "averaged",
                        "averaged_grid", "occupation_paths"});
    const auto epsilons = config::number_list(sc, "$.converge", "epsilons", /*allow_empty=*/true);

    const std::vector<std::string> header{"epsilon",        "dt_seconds",     "coordinate", "w1",
                                          "ks",             "noise_floor_w1", "noise_floor_ks"};
    Json summary;
    summary["epsilons"] = epsilons;
    if (epsilons.empty()) {
        emit.csv("convergence.csv", header, {});
        summary["rows"] = Json::array();
        emit.json("convergence.json", summary);
        return summary;
    }

    ConvergenceStudySettings settings;
    settings.terminal_time = config::positive_number(sc, "$.converge", "terminal_time_seconds", 1.0);
    settings.dt_base = config::positive_number(sc, "$.converge", "dt_seconds", 1e-3);
    settings.path_count = config::count(sc, "$.converge", "paths", std::size_t{10000});
    settings.seed = ctx.seed;
    settings.jobs = ctx.jobs;

    const AveragedModel averaged = resolve_averaged(ctx, sc, "$.converge");
    const auto report = weak_convergence_study(ctx.benchmark.model, averaged, epsilons, settings);

    std::vector<std::vector<CsvCell>> rows;
    Json json_rows = Json::array();
    for (const auto& row : report.rows) {
        for (std::size_t d = 0; d < row.w1.size(); ++d) {
            rows.push_back({CsvCell{row.epsilon}, CsvCell{row.dt},
                            CsvCell{static_cast<std::int64_t>(d)}, CsvCell{row.w1[d]},
                            CsvCell{row.ks[d]}, CsvCell{report.noise_floor_w1[d]},
                            CsvCell{report.noise_floor_ks[d]}});
            Json jr;
            jr["epsilon"] = row.epsilon;
            jr["dt_seconds"] = row.dt;
            jr["coordinate"] = d;
            jr["w1"] = row.w1[d];
            jr["ks"] = row.ks[d];
            json_rows.push_back(jr);
        }
    }
    emit.csv("convergence.csv", header, rows);

    summary["rows"] = json_rows;
    summary["noise_floor_w1"] = report.noise_floor_w1;
    summary["noise_floor_ks"] = report.noise_floor_ks;
    summary["strictly_decreasing"] = report.strictly_decreasing;
    summary["final_within_floor"] = report.final_within_floor;
    if (report.slope_valid) summary["slope"] = report.slope;
    summary["paths"] = settings.path_count;
    summary["terminal_time_seconds"] = settings.terminal_time;

    if (averaged.aggregated) {
        const std::size_t occ_paths =
            config::count(sc, "$.converge", "occupation_paths", std::size_t{4000});
        const auto cmp =
            compare_aggregated_occupation(ctx.benchmark.model, averaged, epsilons.back(),
                                          settings.terminal_time, occ_paths, ctx.seed, ctx.jobs);
        std::vector<std::vector<CsvCell>> occ_rows;
        for (std::size_t c = 0; c < cmp.coupled_fraction.size(); ++c) {
            occ_rows.push_back({CsvCell{static_cast<std::int64_t>(c)},
                                CsvCell{cmp.coupled_fraction[c]},
                                CsvCell{cmp.aggregated_fraction[c]}});
        }
        emit.csv("occupation.csv", {"class", "coupled_fraction", "aggregated_fraction"}, occ_rows);
        summary["occupation_max_abs_diff"] = cmp.max_abs_diff;
    }
    emit.json("convergence.json", summary);
    return summary;
}

inline Json run_ergodicity_study(const ExperimentContext& ctx, ReportEmitter& emit) {
    const auto& sc = ctx.study_config;
    config::check_keys(sc, "$.ergodicity",
                       {"target", "epsilons", "paths", "t1_seconds", "beta_constant", "x_frozen",
                        "regime", "eta", "times_seconds", "measure", "dt_seconds"});
    const std::string target = config::text(sc, "$.ergodicity", "target", std::string("switching"));
    Json summary;
    summary["target"] = target;

    if (target == "switching") {
        const auto epsilons = config::number_list(sc, "$.ergodicity", "epsilons");
        SwitchingErgodicitySettings settings;
        settings.t1 = config::positive_number(sc, "$.ergodicity", "t1_seconds", 1.0);
        settings.n_paths = config::count(sc, "$.ergodicity", "paths", std::size_t{1000});
        settings.seed = ctx.seed;
        settings.jobs = ctx.jobs;
        const double beta = config::number(sc, "$.ergodicity", "beta_constant", 1.0);
        const auto report = switching_ergodicity_study(
            ctx.benchmark.model.switching, epsilons, [beta](double) { return beta; }, settings);
        std::vector<std::vector<CsvCell>> rows;
        for (std::size_t e = 0; e < epsilons.size(); ++e) {
            for (std::size_t s = 0; s < report.mean_square[e].size(); ++s) {
                rows.push_back({CsvCell{epsilons[e]}, CsvCell{static_cast<std::int64_t>(s)},
                                CsvCell{report.mean_square[e][s]}});
            }
        }
        emit.csv("switching_ergodicity.csv", {"epsilon", "state", "mean_square_deviation"}, rows);
        summary["max_mean_square"] = report.max_mean_square;
        summary["decreasing"] = report.decreasing;
    } else if (target == "fast") {
        const auto times = config::number_list(sc, "$.ergodicity", "times_seconds");
        const std::size_t paths = config::count(sc, "$.ergodicity", "paths", std::size_t{10000});
        auto measure = config::measure_settings(
            sc.contains("measure") ? sc.at("measure") : Json::object(), "$.ergodicity.measure",
            ctx.seed, ctx.jobs);
        if (sc.contains("dt_seconds")) {
            measure.dt = config::positive_number(sc, "$.ergodicity", "dt_seconds");
        }
        const double x_frozen = config::number(sc, "$.ergodicity", "x_frozen", 0.0);
        const double eta = config::number(sc, "$.ergodicity", "eta", 0.0);
        const std::size_t regime = config::count(sc, "$.ergodicity", "regime", std::size_t{0});
        const auto report = ergodicity_decay(
            ctx.benchmark.model, Vec::Constant(1, x_frozen), regime,
            [](const Vec& xi) { return xi(0); }, Vec::Constant(1, eta), times, paths, measure);
        std::vector<std::vector<CsvCell>> rows;
        for (std::size_t i = 0; i < times.size(); ++i) {
            rows.push_back({CsvCell{times[i]}, CsvCell{report.deviation[i]},
                            CsvCell{report.standard_error[i]},
                            CsvCell{static_cast<std::int64_t>(report.usable[i] ? 1 : 0)}});
        }
        emit.csv("ergodicity_decay.csv",
                 {"t_seconds", "deviation", "standard_error", "usable"}, rows);
        summary["lambda_hat"] = report.lambda_hat;
        summary["lambda_star"] = report.lambda_star;
        summary["mu_f"] = report.mu_f;
        summary["all_below_noise_floor"] = report.all_below_noise_floor;
    } else {
        throw ConfigError("$.ergodicity.target", "expected 'switching' or 'fast'");
    }
    emit.json("ergodicity.json", summary);
    return summary;
}

inline Json run_modulus_study(const ExperimentContext& ctx, ReportEmitter& emit) {
    const auto& sc = ctx.study_config;
    config::check_keys(sc, "$.modulus",
                       {"epsilon", "taus_seconds", "anchor_seconds", "dt_seconds", "paths"});
    const double eps = config::positive_number(sc, "$.modulus", "epsilon", 1.0);
    const auto taus = config::number_list(sc, "$.modulus", "taus_seconds");
    ModulusSettings settings;
    settings.anchor_time = config::number(sc, "$.modulus", "anchor_seconds", 0.5);
    settings.dt = config::positive_number(sc, "$.modulus", "dt_seconds", 1e-3);
    settings.n_paths = config::count(sc, "$.modulus", "paths", std::size_t{5000});
    settings.seed = ctx.seed;
    settings.jobs = ctx.jobs;
    const auto report = modulus_check(ctx.benchmark.model, eps, taus, settings);

    std::vector<std::vector<CsvCell>> rows;
    for (std::size_t i = 0; i < taus.size(); ++i) {
        rows.push_back({CsvCell{taus[i]}, CsvCell{report.moments[i]}});
    }
    emit.csv("modulus.csv", {"tau_seconds", "second_moment"}, rows);
    Json summary;
    summary["epsilon"] = eps;
    if (report.slope_valid) summary["slope"] = report.slope;
    emit.json("modulus.json", summary);
    return summary;
}

inline Json run_picard_study(const ExperimentContext& ctx, ReportEmitter& emit) {
    const auto& sc = ctx.study_config;
    config::check_keys(sc, "$.picard", {"epsilon", "regime", "grid", "iterations"});
    const double eps = config::positive_number(sc, "$.picard", "epsilon", 1.0);
    const std::size_t regime =
        config::count(sc, "$.picard", "regime", ctx.benchmark.model.initial_regime);
    const std::size_t iters = config::count(sc, "$.picard", "iterations", std::size_t{8});
    if (!sc.contains("grid")) throw ConfigError("$.picard.grid", "required");
    const PathGrid grid = config::grid(sc.at("grid"), "$.picard.grid");

    const auto result =
        picard_iterate(ctx.benchmark.model, regime, grid, NoiseBundle{ctx.seed}, iters, eps);
    std::vector<std::vector<CsvCell>> rows;
    for (std::size_t n = 0; n < result.slow_deltas.size(); ++n) {
        rows.push_back({CsvCell{static_cast<std::int64_t>(n)}, CsvCell{result.slow_deltas[n]},
                        CsvCell{result.fast_deltas[n]}});
    }
    emit.csv("picard.csv", {"iteration", "delta_slow", "delta_fast"}, rows);
    Json summary;
    summary["iterations"] = iters;
    summary["delta_slow"] = result.slow_deltas;
    summary["delta_fast"] = result.fast_deltas;
    emit.json("picard.json", summary);
    return summary;
}

inline Json run_perturbation_study(const ExperimentContext& ctx, ReportEmitter& emit) {
    const auto& sc = ctx.study_config;
    config::check_keys(sc, "$.perturbation",
                       {"epsilons", "probe_times_seconds", "horizon_seconds", "outer_paths",
                        "inner_paths", "bump_radius", "budget_cap", "averaged", "averaged_grid"});
    const auto epsilons = config::number_list(sc, "$.perturbation", "epsilons");
    PerturbationSettings settings;
    if (sc.contains("probe_times_seconds")) {
        settings.probe_times = config::number_list(sc, "$.perturbation", "probe_times_seconds");
    }
    settings.horizon = config::positive_number(sc, "$.perturbation", "horizon_seconds", 1.0);
    settings.outer_paths = config::count(sc, "$.perturbation", "outer_paths", std::size_t{32});
    settings.inner_paths = config::count(sc, "$.perturbation", "inner_paths", std::size_t{128});
    settings.budget_cap =
        config::count(sc, "$.perturbation", "budget_cap", std::size_t{200000000});
    settings.seed = ctx.seed;
    settings.jobs = ctx.jobs;
    const double radius = config::positive_number(sc, "$.perturbation", "bump_radius", 10.0);
    const auto iota = bump_test_function(radius);
    const AveragedModel averaged = resolve_averaged(ctx, sc, "$.perturbation");

    std::vector<std::vector<CsvCell>> rows;
    std::vector<double> sups;
    for (const double eps : epsilons) {
        const auto report =
            perturbation_magnitude(ctx.benchmark.model, averaged, eps, iota, settings);
        for (std::size_t i = 0; i < report.times.size(); ++i) {
            rows.push_back({CsvCell{eps}, CsvCell{report.times[i]},
                            CsvCell{report.magnitude[i]}});
        }
        sups.push_back(report.sup_magnitude);
    }
    emit.csv("perturbation.csv", {"epsilon", "t_seconds", "magnitude"}, rows);
    Json summary;
    summary["epsilons"] = epsilons;
    summary["sup_magnitude"] = sups;
    if (sups.size() >= 2 && sups.front() > 0.0) {
        summary["final_over_first_ratio"] = sups.back() / sups.front();
    }
    emit.json("perturbation.json", summary);
    return summary;
}

inline Json run_validate_study(const ExperimentContext& ctx, ReportEmitter& emit) {
    const auto& sc = ctx.study_config;
    config::check_keys(sc, "$.validate", {"half_width", "pairs", "x_frozen"});
    SamplingSpec spec;
    const double half_width = config::positive_number(sc, "$.validate", "half_width", 3.0);
    spec.box = SamplingBox::cube(ctx.benchmark.model.slow_dim, ctx.benchmark.model.fast_dim,
                                 half_width);
    spec.pair_count = config::count(sc, "$.validate", "pairs", std::size_t{3000});
    spec.seed = ctx.seed;

    const auto lipschitz =
        validate_lipschitz(ctx.benchmark.model, spec, ctx.benchmark.declared_lipschitz);
    std::vector<std::vector<CsvCell>> rows;
    for (std::size_t r = 0; r < lipschitz.regimes.size(); ++r) {
        const auto& est = lipschitz.regimes[r];
        rows.push_back({CsvCell{static_cast<std::int64_t>(r)}, CsvCell{est.ratio},
                        CsvCell{est.declared}, CsvCell{std::string(est.pass ? "pass" : "fail")},
                        CsvCell{static_cast<std::int64_t>(est.flagged_pairs)}});
    }
    emit.csv("lipschitz.csv", {"regime", "ratio", "declared", "verdict", "flagged_pairs"}, rows);

    const double x_frozen = config::number(sc, "$.validate", "x_frozen", 0.0);
    const auto dissipativity = validate_dissipativity(
        ctx.benchmark.model, Vec::Constant(static_cast<Eigen::Index>(ctx.benchmark.model.slow_dim),
                                           x_frozen),
        spec);
    Json summary;
    summary["lipschitz_pass"] = lipschitz.pass();
    summary["dissipativity"] = {
        {"alpha1", dissipativity.constants.alpha1},
        {"alpha2", dissipativity.constants.alpha2},
        {"alpha3", dissipativity.constants.alpha3},
        {"alpha1_growth", dissipativity.constants.alpha1_growth},
        {"alpha2_growth", dissipativity.constants.alpha2_growth},
        {"alpha3_growth", dissipativity.constants.alpha3_growth},
        {"alpha_const", dissipativity.constants.alpha_const},
        {"margin", dissipativity.constants.margin()},
        {"growth_margin", dissipativity.constants.growth_margin()},
        {"pass", dissipativity.pass},
    };
    emit.json("validate.json", summary);
    return summary;
}

}  // namespace detail

/// Dispatches a parsed configuration to the named study, writes its reports
/// and a run manifest under out_dir, and returns the summary. Reruns with the
/// same config and seed produce byte-identical study outputs for any job
/// count; the manifest carries the wall clock and is the one file that may
/// differ.
inline ExperimentOutcome run_experiment(const Json& cfg, const std::filesystem::path& out_dir,
                                        std::optional<std::uint64_t> seed_override = {},
                                        std::optional<int> jobs_override = {}) {
    const auto start = std::chrono::steady_clock::now();
    const auto ctx = detail::parse_context(cfg, seed_override, jobs_override);
    ReportEmitter emit(out_dir, detail::parse_formats(cfg));

    Json summary;
    try {
        if (ctx.study == "qsd") summary = detail::run_qsd_study(ctx, emit);
        else if (ctx.study == "simulate") summary = detail::run_simulate_study(ctx, emit);
        else if (ctx.study == "average") summary = detail::run_average_study(ctx, emit);
        else if (ctx.study == "converge") summary = detail::run_converge_study(ctx, emit);
        else if (ctx.study == "ergodicity") summary = detail::run_ergodicity_study(ctx, emit);
        else if (ctx.study == "modulus") summary = detail::run_modulus_study(ctx, emit);
        else if (ctx.study == "picard") summary = detail::run_picard_study(ctx, emit);
        else if (ctx.study == "perturbation") summary = detail::run_perturbation_study(ctx, emit);
        else if (ctx.study == "validate") summary = detail::run_validate_study(ctx, emit);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& err) {
        throw StudyError("study '" + ctx.study + "' failed: " + err.what());
    }

    summary["study"] = ctx.study;
    summary["model"] = ctx.benchmark.name;
    summary["seed"] = ctx.seed;
    emit.force_json("summary.json", summary);

    const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start);
    Json manifest;
    manifest["toolkit_version"] = kVersion;
    manifest["study"] = ctx.study;
    manifest["seed"] = ctx.seed;
    manifest["jobs"] = ctx.jobs;
    manifest["config"] = cfg;
    manifest["wall_clock_seconds"] = elapsed.count();
    Json outputs = Json::array();
    for (const auto& name : emit.files()) {
        const auto file = out_dir / name;
        Json entry;
        entry["file"] = name;
        entry["fnv1a64"] = hex64(fnv1a64(file));
        entry["bytes"] = std::filesystem::file_size(file);
        outputs.push_back(entry);
    }
    manifest["outputs"] = outputs;
    write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");

    ExperimentOutcome outcome;
    outcome.out_dir = out_dir;
    outcome.summary = summary;
    outcome.manifest = manifest;
    return outcome;
}

inline ExperimentOutcome run_experiment_file(const std::filesystem::path& config_path,
                                             const std::filesystem::path& out_dir,
                                             std::optional<std::uint64_t> seed_override = {},
                                             std::optional<int> jobs_override = {}) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("$", "cannot read config file '" + config_path.string() + "'");
    Json cfg;
    try {
        cfg = Json::parse(in);
    } catch (const std::exception& err) {
        throw ConfigError("$", std::string("config is not valid JSON: ") + err.what());
    }
    return run_experiment(cfg, out_dir, seed_override, jobs_override);
}

}  // namespace slowfast
