#pragma once

// CSV and JSON emitters for trajectories, diagnostics series and training
// logs. Doubles are printed with %.17g so values round-trip exactly and
// repeated runs produce byte-identical files.

#include <cstdio>
#include <ostream>
#include <string>

#include <json.hpp>

#include "condlab/effective_dynamics.hpp"
#include "condlab/matrix_lab.hpp"
#include "condlab/nn_lab.hpp"
#include "condlab/stage_conditions.hpp"

namespace condlab {

inline std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline void write_trajectory_csv(const Trajectory& traj, std::ostream& os) {
    os << "t,E,norm_a,norm_b,norm_c,step\n";
    for (std::size_t i = 0; i < traj.snapshots.size(); ++i) {
        const EffectiveState& s = traj.snapshots[i];
        os << format_double(s.t) << ',' << format_double(traj.energies[i]) << ','
           << format_double(norm2(s.a)) << ',' << format_double(frobenius(s.b)) << ','
           << format_double(norm2(s.c)) << ',' << format_double(traj.step_sizes[i]) << '\n';
    }
}

inline nlohmann::json trajectory_to_json(const Trajectory& traj) {
    nlohmann::json out;
    out["m"] = traj.width();
    out["stop_reason"] = stop_reason_name(traj.stop_reason);
    out["energy_ceiling"] = traj.energy_ceiling;
    nlohmann::json snaps = nlohmann::json::array();
    for (const EffectiveState& s : traj.snapshots) {
        nlohmann::json snap;
        snap["t"] = s.t;
        snap["a"] = s.a;
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t i = 0; i < s.b.rows; ++i) rows.push_back(row(s.b, i));
        snap["b"] = rows;
        snap["c"] = s.c;
        snaps.push_back(std::move(snap));
    }
    out["snapshots"] = std::move(snaps);
    return out;
}

inline void write_fsc_series_csv(const Trajectory& traj, double strict_margin,
                                 std::ostream& os) {
    os << "t,holds,cond1_pos,cond2_pos,min_margin\n";
    for (const EffectiveState& s : traj.snapshots) {
        const FscReport r = check_fsc(s, strict_margin);
        os << format_double(s.t) << ',' << (r.holds ? 1 : 0) << ',' << r.cond1_positive_count
           << ',' << r.cond2_positive_count << ',' << format_double(r.min_margin) << '\n';
    }
}

// The min-cos-xi column is taken over C1 of the final snapshot when the run
// blew up, over all indices otherwise.
inline void write_angle_series_csv(const Trajectory& traj, std::ostream& os,
                                   double rel_threshold = 0.01) {
    std::vector<std::size_t> c1;
    if (traj.stop_reason == StopReason::energy_ceiling ||
        traj.stop_reason == StopReason::min_step) {
        c1 = partition(traj, rel_threshold).c1;
    } else {
        for (std::size_t i = 0; i < traj.width(); ++i) c1.push_back(i);
    }
    const std::size_t m = traj.width();
    os << "t,min_cos_xi_c1,zeta,adot_over_c2,adot_over_a2\n";
    for (const EffectiveState& s : traj.snapshots) {
        const AngleDiagnostics d = angles(s);
        double min_xi = 1.0;
        for (std::size_t i : c1)
            for (std::size_t j : c1)
                if (!d.xi_degenerate[i * m + j]) min_xi = std::min(min_xi, d.xi(i, j));
        os << format_double(s.t) << ',' << format_double(min_xi) << ','
           << format_double(d.zeta) << ',' << format_double(d.adot_over_c2) << ','
           << format_double(d.adot_over_a2) << '\n';
    }
}

inline void write_train_log_csv(const TrainLog& log, std::ostream& os) {
    os << "iter,loss,fsc_count,energy\n";
    for (std::size_t i = 0; i < log.iterations.size(); ++i)
        os << log.iterations[i] << ',' << format_double(log.losses[i]) << ','
           << log.fsc_counts[i] << ',' << format_double(log.energies[i]) << '\n';
}

inline void write_cosine_rows_csv(const CosineSimilarityMap& map, std::ostream& os) {
    os << "row,norm,cos_v\n";
    for (std::size_t k = 0; k < map.row_v_cos.size(); ++k)
        os << k << ',' << format_double(map.row_norms[k]) << ','
           << format_double(map.row_v_cos[k]) << '\n';
}

inline void write_matrix_csv(const Matrix& m, std::ostream& os) {
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            if (j) os << ',';
            os << format_double(m(i, j));
        }
        os << '\n';
    }
}

inline void write_deep_train_log_csv(const DeepTrainLog& log, std::ostream& os) {
    std::size_t k = 0;
    for (const Vector& sv : log.singular_values) k = std::max(k, sv.size());
    os << "iter,loss";
    for (std::size_t j = 0; j < k; ++j) os << ",sv" << (j + 1);
    os << '\n';
    for (std::size_t i = 0; i < log.iterations.size(); ++i) {
        os << log.iterations[i] << ',' << format_double(log.losses[i]);
        for (std::size_t j = 0; j < k; ++j)
            os << ','
               << format_double(j < log.singular_values[i].size() ? log.singular_values[i][j]
                                                                  : 0.0);
        os << '\n';
    }
}

}  // namespace condlab
