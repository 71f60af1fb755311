#pragma once

// Config-driven pipelines behind the condlab CLI. Every subcommand reads a
// schema-versioned JSON config, writes CSV/JSON artifacts plus a manifest
// with content hashes into the output directory, and reports through exit
// codes: 0 success, 2 precondition error, 3 numeric failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "condlab/effective_dynamics.hpp"
#include "condlab/io.hpp"
#include "condlab/matrix_lab.hpp"
#include "condlab/nn_lab.hpp"
#include "condlab/rng.hpp"
#include "condlab/stage_conditions.hpp"

namespace condlab {

inline constexpr int kExitOk = 0;
inline constexpr int kExitPrecondition = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kSchemaVersion = 1;

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string fnv1a64_hex(std::string_view s) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(s)));
    return buf;
}

// Collects artifacts in memory and flushes them together with the manifest,
// so a failed run never leaves partial outputs behind.
class ArtifactSet {
  public:
    void add(const std::string& rel_path, std::string content) {
        artifacts_.emplace_back(rel_path, std::move(content));
    }

    void flush(const std::filesystem::path& out_dir, const std::string& subcommand,
               std::uint64_t seed, const nlohmann::json& extra = {}) const {
        std::filesystem::create_directories(out_dir);
        nlohmann::json manifest;
        manifest["schema_version"] = kSchemaVersion;
        manifest["subcommand"] = subcommand;
        manifest["seed"] = seed;
        if (!extra.is_null() && !extra.empty()) manifest["run"] = extra;
        nlohmann::json list = nlohmann::json::array();
        for (const auto& [rel, content] : artifacts_) {
            const std::filesystem::path p = out_dir / rel;
            if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
            std::ofstream f(p, std::ios::binary);
            if (!f) throw std::runtime_error("cannot write artifact: " + p.string());
            f.write(content.data(), static_cast<std::streamsize>(content.size()));
            list.push_back({{"path", rel},
                            {"bytes", content.size()},
                            {"fnv1a64", fnv1a64_hex(content)}});
        }
        manifest["artifacts"] = std::move(list);
        std::ofstream mf(out_dir / "manifest.json", std::ios::binary);
        mf << manifest.dump(2) << '\n';
    }

  private:
    std::vector<std::pair<std::string, std::string>> artifacts_;
};

struct RunConfig {
    std::string subcommand;  // simulate | check | nn | matrix | sweep
    std::filesystem::path config_path;
    std::filesystem::path output_dir;
    std::optional<std::uint64_t> seed;  // overrides the config's seed
    std::vector<std::pair<std::string, std::string>> overrides;  // --set key=value
};

struct RunResult {
    int exit_code = kExitOk;
    std::string message;
};

namespace detail {

inline nlohmann::json load_config(const RunConfig& rc) {
    std::ifstream f(rc.config_path);
    if (!f) throw std::invalid_argument("cannot read config: " + rc.config_path.string());
    nlohmann::json cfg;
    try {
        f >> cfg;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("config parse error: ") + e.what());
    }
    if (!cfg.is_object() || !cfg.contains("schema_version") ||
        cfg["schema_version"].get<int>() != kSchemaVersion)
        throw std::invalid_argument("config schema_version mismatch (expected 1)");
    for (const auto& [key, value] : rc.overrides) {
        try {
            cfg[key] = nlohmann::json::parse(value);
        } catch (const nlohmann::json::exception&) {
            cfg[key] = value;  // plain string override
        }
    }
    if (rc.seed) cfg["seed"] = *rc.seed;
    return cfg;
}

inline EffectiveState state_from_config(const nlohmann::json& cfg) {
    const auto& init = cfg.at("init");
    const std::string kind = init.at("kind").get<std::string>();
    if (kind == "explicit") {
        EffectiveState s;
        s.a = init.at("a").get<Vector>();
        const auto rows = init.at("b").get<std::vector<Vector>>();
        const std::size_t m = s.a.size();
        s.b = Matrix(rows.size(), rows.empty() ? 0 : rows.front().size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != s.b.cols)
                throw std::invalid_argument("config init.b: ragged rows");
            for (std::size_t j = 0; j < s.b.cols; ++j) s.b(i, j) = rows[i][j];
        }
        s.c = init.at("c").get<Vector>();
        (void)m;
        validate_state(s);
        return s;
    }
    if (kind == "gaussian") {
        const std::size_t m = cfg.at("m").get<std::size_t>();
        const double std_dev = init.at("std").get<double>();
        const std::uint64_t seed = cfg.value("seed", 0ULL);
        return random_state(m, std_dev, seed);
    }
    throw std::invalid_argument("config init.kind must be 'explicit' or 'gaussian'");
}

inline IntegrateOptions integrate_options_from_config(const nlohmann::json& cfg) {
    IntegrateOptions opts;
    opts.t_end = cfg.value("t_end", 10.0);
    opts.energy_ceiling = cfg.value("energy_ceiling", 1e9);
    opts.rel_tol = cfg.value("rel_tol", 1e-10);
    opts.abs_tol = cfg.value("abs_tol", 1e-12);
    opts.min_step = cfg.value("min_step", 1e-14);
    opts.sample_stride = cfg.value("sample_stride", 0.0);
    return opts;
}

inline nlohmann::json bracket_to_json(const BlowUpBracket& br) {
    nlohmann::json j;
    j["e0"] = br.e0;
    j["assumption_holds"] = br.assumption_holds;
    // fitted from the trajectory tail, not derived from the initial data
    j["c_estimate"] = br.c_estimate;
    j["c_estimate_is_empirical_surrogate"] = true;
    if (br.upper_time)
        j["upper_time"] = *br.upper_time;
    else
        j["upper_time"] = nullptr;
    if (br.lower_time)
        j["lower_time"] = *br.lower_time;
    else
        j["lower_time"] = nullptr;
    return j;
}

inline int run_simulate(const nlohmann::json& cfg, const RunConfig& rc) {
    const EffectiveState s0 = state_from_config(cfg);
    const IntegrateOptions opts = integrate_options_from_config(cfg);
    const double strict_margin = cfg.value("strict_margin", 0.0);
    const Trajectory traj = integrate(s0, opts);

    ArtifactSet artifacts;
    {
        std::ostringstream os;
        write_trajectory_csv(traj, os);
        artifacts.add("trajectory.csv", os.str());
    }
    {
        std::ostringstream os;
        write_fsc_series_csv(traj, strict_margin, os);
        artifacts.add("fsc_series.csv", os.str());
    }
    {
        std::ostringstream os;
        write_angle_series_csv(traj, os);
        artifacts.add("angle_series.csv", os.str());
    }
    if (cfg.value("full_state_json", false))
        artifacts.add("trajectory.json", trajectory_to_json(traj).dump(2) + "\n");

    nlohmann::json report;
    report["schema_version"] = kSchemaVersion;
    report["seed"] = cfg.value("seed", 0ULL);
    report["stop_reason"] = stop_reason_name(traj.stop_reason);
    report["snapshots"] = traj.snapshots.size();
    report["final_t"] = traj.snapshots.back().t;
    report["final_energy"] = traj.energies.back();
    const ConservationReport cons = conservation_check(traj);
    double row_drift = 0.0, col_drift = 0.0;
    for (double d : cons.per_row_drift) row_drift = std::max(row_drift, d);
    for (double d : cons.per_col_drift) col_drift = std::max(col_drift, d);
    report["conservation"] = {{"max_row_drift", row_drift},
                              {"max_col_drift", col_drift},
                              {"global_drift", cons.global_drift}};
    report["bracket"] = bracket_to_json(blowup_bracket(traj));
    const FscPersistence pers = fsc_persistence(traj, strict_margin);
    report["fsc"] = {{"first_hold_t",
                      pers.first_hold_t ? nlohmann::json(*pers.first_hold_t)
                                        : nlohmann::json(nullptr)},
                     {"violated_after", pers.violated_after}};
    artifacts.add("report.json", report.dump(2) + "\n");

    artifacts.flush(rc.output_dir, "simulate", cfg.value("seed", 0ULL));
    return traj.stop_reason == StopReason::non_finite ? kExitNumeric : kExitOk;
}

inline int run_check(const nlohmann::json& cfg, const RunConfig& rc) {
    const EffectiveState s0 = state_from_config(cfg);
    const double strict_margin = cfg.value("strict_margin", 0.0);

    const BlowupAssumptionReport rep = check_blowup_assumption(s0);
    const FscReport fsc = check_fsc(s0, strict_margin);

    nlohmann::json report;
    report["schema_version"] = kSchemaVersion;
    report["seed"] = cfg.value("seed", 0ULL);
    report["energy"] = energy(s0);
    report["assumption_holds"] = rep.holds;
    report["norm_gap"] = rep.norm_gap;
    report["discriminant"] = rep.discriminant;
    report["fsc"] = {{"holds", fsc.holds},
                     {"cond1_positive_count", fsc.cond1_positive_count},
                     {"cond2_positive_count", fsc.cond2_positive_count},
                     {"min_margin", fsc.min_margin}};

    ArtifactSet artifacts;
    artifacts.add("report.json", report.dump(2) + "\n");
    artifacts.flush(rc.output_dir, "check", cfg.value("seed", 0ULL));
    return kExitOk;
}

inline int run_nn(const nlohmann::json& cfg, const RunConfig& rc) {
    const std::size_t m = cfg.value("m", 40);
    const std::size_t d = cfg.value("d", 1);
    const std::size_t n = cfg.value("n", 100);
    if (d != 1)
        throw std::invalid_argument("nn: only d=1 datasets are generated by this subcommand");

    InitSpec init;
    init.seed = cfg.value("seed", 0ULL);
    if (cfg.contains("alpha"))
        init.alpha = cfg["alpha"].get<double>();
    else
        init.epsilon = cfg.value("epsilon", 1e-3);

    const std::uint64_t data_seed = cfg.value("data_seed", 7ULL);
    const Dataset data = make_tanh_dataset(n, data_seed);
    ThreeLayerNet net = make_net(m, d, init);

    TrainOptions opts;
    opts.lr = cfg.value("lr", 5e-3);
    opts.iters = cfg.value("iters", 400000L);
    opts.log_every = cfg.value("log_every", 100L);
    opts.plateau_switch = cfg.value("plateau_switch", true);
    opts.plateau_lr = cfg.value("plateau_lr", 5e-4);
    opts.plateau_window = cfg.value("plateau_window", 200L);
    opts.plateau_drop = cfg.value("plateau_drop", 0.5);
    opts.stop_loss = cfg.value("target_loss", 1e-3);
    if (cfg.contains("lr_schedule"))
        for (const auto& pair : cfg["lr_schedule"])
            opts.lr_schedule.emplace_back(pair.at(0).get<long>(), pair.at(1).get<double>());

    const TrainLog log = train(net, data, opts);
    const Vector v = target_direction(data);
    const CosineSimilarityMap cmap = cosine_similarity_map(net.w1, v);

    ArtifactSet artifacts;
    {
        std::ostringstream os;
        write_train_log_csv(log, os);
        artifacts.add("trainlog.csv", os.str());
    }
    {
        std::ostringstream os;
        write_cosine_rows_csv(cmap, os);
        artifacts.add("cosine_rows.csv", os.str());
    }
    {
        std::ostringstream os;
        write_matrix_csv(cmap.pairwise_cos, os);
        artifacts.add("cosine_pairwise.csv", os.str());
    }

    std::size_t max_fsc = 0;
    for (std::size_t c : log.fsc_counts) max_fsc = std::max(max_fsc, c);
    nlohmann::json summary;
    summary["schema_version"] = kSchemaVersion;
    summary["seed"] = init.seed;
    summary["data_seed"] = data_seed;
    summary["m"] = m;
    summary["epsilon"] = init.resolve_epsilon(m);
    summary["final_loss"] = log.losses.back();
    summary["iterations_run"] = log.iterations.back();
    summary["plateau_exit_iter"] = log.plateau_exit_iter;
    summary["max_fsc_count"] = max_fsc;
    summary["diverged"] = log.diverged;
    artifacts.add("summary.json", summary.dump(2) + "\n");

    artifacts.flush(rc.output_dir, "nn", init.seed);
    return log.diverged ? kExitNumeric : kExitOk;
}

inline Matrix target_from_config(const nlohmann::json& cfg, std::size_t m) {
    const auto& spec = cfg.at("target_spec");
    const std::string kind = spec.at("kind").get<std::string>();
    Matrix t(m, m);
    if (kind == "diag") {
        const Vector diag = spec.at("values").get<Vector>();
        if (diag.size() > m) throw std::invalid_argument("target diag longer than m");
        for (std::size_t i = 0; i < diag.size(); ++i) t(i, i) = diag[i];
        return t;
    }
    if (kind == "zero") return t;
    throw std::invalid_argument("target.kind must be 'diag' or 'zero'");
}

inline int run_matrix(const nlohmann::json& cfg, const RunConfig& rc) {
    const std::size_t m = cfg.value("m", 10);
    const Matrix target = target_from_config(cfg, m);
    const std::string family = cfg.value("measurement_family", std::string("projectors"));
    SensingProblem problem;
    if (family == "projectors")
        problem = make_projector_problem(target);
    else if (family == "sym_entries")
        problem = make_symmetric_entry_problem(target);
    else
        throw std::invalid_argument("measurement_family must be 'projectors' or 'sym_entries'");

    const double init_std = cfg.value("init_std", std::pow(static_cast<double>(m), -3.0));
    const std::uint64_t seed = cfg.value("seed", 0ULL);
    DeepLinearNet net = make_deep_linear_net(m, init_std, seed);
    const DeepLinearNet net0 = net;

    DeepTrainOptions opts;
    opts.lr = cfg.value("lr", 0.5);
    opts.iters = cfg.value("iters", 100000L);
    opts.log_every = cfg.value("log_every", 100L);
    opts.stop_loss = cfg.value("stop_loss", 1e-3);
    const DeepTrainLog log = train_deep_linear(net, problem, opts);

    ArtifactSet artifacts;
    {
        std::ostringstream os;
        write_deep_train_log_csv(log, os);
        artifacts.add("mc_log.csv", os.str());
    }

    nlohmann::json summary;
    summary["schema_version"] = kSchemaVersion;
    summary["seed"] = seed;
    summary["m"] = m;
    summary["measurement_family"] = family;
    summary["init_std"] = init_std;
    summary["final_loss"] = log.losses.back();
    summary["iterations_run"] = log.iterations.back();
    summary["final_singular_values"] = log.singular_values.back();
    summary["diverged"] = log.diverged;
    const double commutator = max_pairwise_commutator(problem);
    summary["max_pairwise_commutator"] = commutator;
    summary["noncommuting_family"] = commutator > 1e-12;

    if (cfg.value("effective_check", true)) {
        // effective trajectory from the normalized initial factors
        DeepLinearNet norm0 = net0;
        for (auto* w : {&norm0.w3, &norm0.w2, &norm0.w1})
            for (double& x : w->data) x /= init_std;
        const Matrix v = build_v(problem);
        const MatrixEffectiveState es = diagonalize_and_transform(v, norm0);
        IntegrateOptions eopts;
        eopts.t_end = cfg.value("effective_t_end", 1e6);
        eopts.energy_ceiling = cfg.value("effective_energy_ceiling", 1e6);
        const McTrajectory traj = mc_integrate(es, eopts);
        bool monotone = true;
        for (std::size_t i = 1; i < traj.energies.size(); ++i)
            if (traj.energies[i] <
                traj.energies[i - 1] - 1e-9 * std::max(1.0, std::abs(traj.energies[i - 1])))
                monotone = false;
        const McFscPersistence pers = mc_fsc_persistence(traj, cfg.value("strict_margin", 0.0));
        summary["effective"] = {
            {"stop_reason", stop_reason_name(traj.stop_reason)},
            {"energy_monotone", monotone},
            {"final_energy", traj.energies.back()},
            {"fsc_first_hold_t", pers.first_hold_t ? nlohmann::json(*pers.first_hold_t)
                                                   : nlohmann::json(nullptr)},
            {"fsc_violated_after", pers.violated_after}};
    }
    artifacts.add("summary.json", summary.dump(2) + "\n");

    artifacts.flush(rc.output_dir, "matrix", seed);
    return log.diverged ? kExitNumeric : kExitOk;
}

inline int run_sweep(const nlohmann::json& cfg, const RunConfig& rc) {
    const std::string sub = cfg.at("subcommand").get<std::string>();
    if (sub != "nn" && sub != "matrix" && sub != "simulate")
        throw std::invalid_argument("sweep.subcommand must be nn, matrix or simulate");
    const auto& grid = cfg.at("grid");
    const std::string param = grid.at("param").get<std::string>();
    const auto values = grid.at("values");
    if (!values.is_array() || values.empty())
        throw std::invalid_argument("sweep.grid.values must be a non-empty array");
    nlohmann::json base = cfg.value("base", nlohmann::json::object());
    base["schema_version"] = kSchemaVersion;
    const std::uint64_t root_seed = cfg.value("seed", 0ULL);
    const std::string metric = cfg.value("summary_metric", std::string("max_fsc_count"));

    std::ostringstream summary_csv;
    summary_csv << param << ',' << metric << ",exit_code\n";
    int worst = kExitOk;
    nlohmann::json cells = nlohmann::json::array();

    for (std::size_t k = 0; k < values.size(); ++k) {
        nlohmann::json cell_cfg = base;
        cell_cfg[param] = values[k];
        cell_cfg["seed"] = derive_seed(root_seed, k);
        const std::filesystem::path cell_dir =
            rc.output_dir / ("cell_" + std::to_string(k));

        RunConfig cell_rc = rc;
        cell_rc.output_dir = cell_dir;
        int code = kExitOk;
        std::string error;
        try {
            if (sub == "nn")
                code = run_nn(cell_cfg, cell_rc);
            else if (sub == "matrix")
                code = run_matrix(cell_cfg, cell_rc);
            else
                code = run_simulate(cell_cfg, cell_rc);
        } catch (const std::invalid_argument& e) {
            code = kExitPrecondition;
            error = e.what();
        } catch (const std::exception& e) {
            code = kExitNumeric;
            error = e.what();
        }
        worst = std::max(worst, code);

        nlohmann::json metric_value = nullptr;
        if (code == kExitOk) {
            std::ifstream sf(cell_dir / "summary.json");
            if (sf) {
                nlohmann::json cell_summary;
                sf >> cell_summary;
                if (cell_summary.contains(metric)) metric_value = cell_summary[metric];
            }
        }
        summary_csv << values[k].dump() << ','
                    << (metric_value.is_null() ? "nan" : metric_value.dump()) << ',' << code
                    << '\n';
        cells.push_back({{"cell", k},
                         {"param", param},
                         {"value", values[k]},
                         {"seed", derive_seed(root_seed, k)},
                         {"exit_code", code},
                         {"metric", metric_value},
                         {"error", error}});
    }

    ArtifactSet artifacts;
    artifacts.add("sweep_summary.csv", summary_csv.str());
    nlohmann::json report;
    report["schema_version"] = kSchemaVersion;
    report["seed"] = root_seed;
    report["param"] = param;
    report["cells"] = cells;
    artifacts.add("sweep_report.json", report.dump(2) + "\n");
    artifacts.flush(rc.output_dir, "sweep", root_seed);
    return worst;
}

}  // namespace detail

// Executes a subcommand against a config file. Returns the process exit code
// and a human-readable message on failure.
inline RunResult run(const RunConfig& rc) {
    nlohmann::json cfg;
    try {
        cfg = detail::load_config(rc);
    } catch (const std::invalid_argument& e) {
        return {kExitPrecondition, e.what()};
    }

    try {
        int code = kExitPrecondition;
        if (rc.subcommand == "simulate")
            code = detail::run_simulate(cfg, rc);
        else if (rc.subcommand == "check")
            code = detail::run_check(cfg, rc);
        else if (rc.subcommand == "nn")
            code = detail::run_nn(cfg, rc);
        else if (rc.subcommand == "matrix")
            code = detail::run_matrix(cfg, rc);
        else if (rc.subcommand == "sweep")
            code = detail::run_sweep(cfg, rc);
        else
            return {kExitPrecondition, "unknown subcommand: " + rc.subcommand};
        return {code, code == kExitOk ? "" : "run finished with non-zero status"};
    } catch (const std::invalid_argument& e) {
        return {kExitPrecondition, e.what()};
    } catch (const std::exception& e) {
        return {kExitNumeric, e.what()};
    }
}

}  // namespace condlab
