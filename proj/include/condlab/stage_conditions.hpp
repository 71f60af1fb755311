#pragma once

// Final stage condition, angle diagnostics, the C1/C2 partition and the
// condensation verdict. The final stage condition is a family of strict sign
// conditions that, once true along the flow, persists and forces condensed
// blow-up; the diagnostics here track its indicators and the angle limits it
// implies.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "condlab/effective_dynamics.hpp"
#include "condlab/linalg.hpp"

namespace condlab {

struct FscReport {
    bool holds = false;
    std::size_t cond1_positive_count = 0;  // of 2m indicators c_i a.b^i and a_i b_i.c
    std::size_t cond2_positive_count = 0;  // of 2m^2 pairwise inner products
    double min_margin = 0.0;
    double t = 0.0;
};

// Evaluates all 2m + 2m^2 indicators of the final stage condition; an
// indicator counts as positive iff it exceeds strict_margin. The conditions
// are strict inequalities, so the default margin is 0; tests that need
// robustness pass a positive margin explicitly.
inline FscReport check_fsc(const EffectiveState& s, double strict_margin = 0.0) {
    validate_state(s);
    const std::size_t m = s.width();
    FscReport rep;
    rep.t = s.t;
    rep.min_margin = std::numeric_limits<double>::infinity();

    const Vector ab = matvec_transposed(s.b, s.a);  // (a^T b^i)_i
    const Vector bc = matvec(s.b, s.c);             // (b_i c)_i
    for (std::size_t i = 0; i < m; ++i) {
        const double v1 = s.c[i] * ab[i];
        const double v2 = s.a[i] * bc[i];
        if (v1 > strict_margin) ++rep.cond1_positive_count;
        if (v2 > strict_margin) ++rep.cond1_positive_count;
        rep.min_margin = std::min({rep.min_margin, v1, v2});
    }

    // gram matrices of the columns and rows of b
    const Matrix bt = transpose(s.b);
    const Matrix gcol = matmul(bt, s.b);
    const Matrix grow = matmul(s.b, bt);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const double v1 = s.c[i] * s.c[j] * gcol(i, j);
            const double v2 = s.a[i] * s.a[j] * grow(i, j);
            if (v1 > strict_margin) ++rep.cond2_positive_count;
            if (v2 > strict_margin) ++rep.cond2_positive_count;
            rep.min_margin = std::min({rep.min_margin, v1, v2});
        }
    }

    rep.holds = rep.cond1_positive_count == 2 * m && rep.cond2_positive_count == 2 * m * m;
    return rep;
}

struct FscPersistence {
    std::optional<double> first_hold_t;
    bool violated_after = false;
};

inline FscPersistence fsc_persistence(const Trajectory& traj, double strict_margin = 0.0) {
    if (traj.snapshots.empty())
        throw std::invalid_argument("fsc_persistence: empty trajectory");
    FscPersistence out;
    for (const EffectiveState& s : traj.snapshots) {
        const bool holds = check_fsc(s, strict_margin).holds;
        if (!out.first_hold_t) {
            if (holds) out.first_hold_t = s.t;
        } else if (!holds) {
            out.violated_after = true;
        }
    }
    return out;
}

// Angle diagnostics at one state. Cosines whose denominator falls below
// degenerate_tol are emitted as the sentinel 0 with the matching flag set,
// which keeps downstream CSV numeric and forces explicit flag checks.
struct AngleDiagnostics {
    Matrix xi;                            // cos xi_ij between c_i b^i and c_j b^j
    std::vector<std::uint8_t> xi_degenerate;  // row-major m*m
    Vector psi;                           // cos psi_i between adot and c_i b^i
    std::vector<std::uint8_t> psi_degenerate;
    Vector phi;                           // cos phi_i between a and c_i b^i
    std::vector<std::uint8_t> phi_degenerate;
    double zeta = 0.0;                    // cos zeta between a and adot
    bool zeta_degenerate = false;
    double adot_over_c2 = 0.0;            // ||adot|| / ||c||^2
    double adot_over_a2 = 0.0;            // ||adot|| / ||a||^2
    bool ratios_degenerate = false;
    Vector bi_over_ci;                    // ||b^i||^2 / c_i^2
    std::vector<std::uint8_t> bi_over_ci_degenerate;
};

inline AngleDiagnostics angles(const EffectiveState& s, double degenerate_tol = 1e-12) {
    validate_state(s);
    const std::size_t m = s.width();
    AngleDiagnostics d;
    d.xi = Matrix(m, m);
    d.xi_degenerate.assign(m * m, 0);
    d.psi.assign(m, 0.0);
    d.psi_degenerate.assign(m, 0);
    d.phi.assign(m, 0.0);
    d.phi_degenerate.assign(m, 0);
    d.bi_over_ci.assign(m, 0.0);
    d.bi_over_ci_degenerate.assign(m, 0);

    std::vector<Vector> cb(m);  // c_i b^i
    Vector cb_norm(m);
    for (std::size_t i = 0; i < m; ++i) {
        cb[i] = column(s.b, i);
        for (double& x : cb[i]) x *= s.c[i];
        cb_norm[i] = norm2(cb[i]);
    }
    const Vector adot = matvec(s.b, s.c);
    const double adot_norm = norm2(adot);
    const double a_norm = norm2(s.a);
    const double c_norm = norm2(s.c);

    auto cosine = [&](const Vector& u, const Vector& v, double nu, double nv, bool& degen) {
        if (nu < degenerate_tol || nv < degenerate_tol) {
            degen = true;
            return 0.0;
        }
        degen = false;
        return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
    };

    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            bool degen = false;
            double cx = cosine(cb[i], cb[j], cb_norm[i], cb_norm[j], degen);
            if (i == j && !degen) cx = 1.0;  // unit diagonal where defined
            d.xi(i, j) = cx;
            d.xi_degenerate[i * m + j] = degen ? 1 : 0;
        }
        bool degen = false;
        d.psi[i] = cosine(adot, cb[i], adot_norm, cb_norm[i], degen);
        d.psi_degenerate[i] = degen ? 1 : 0;
        d.phi[i] = cosine(s.a, cb[i], a_norm, cb_norm[i], degen);
        d.phi_degenerate[i] = degen ? 1 : 0;

        const double ci2 = s.c[i] * s.c[i];
        if (ci2 < degenerate_tol) {
            d.bi_over_ci_degenerate[i] = 1;
        } else {
            double bn2 = 0.0;
            for (std::size_t k = 0; k < m; ++k) bn2 += s.b(k, i) * s.b(k, i);
            d.bi_over_ci[i] = bn2 / ci2;
        }
    }

    bool degen = false;
    d.zeta = cosine(s.a, adot, a_norm, adot_norm, degen);
    d.zeta_degenerate = degen;

    if (c_norm * c_norm < degenerate_tol || a_norm * a_norm < degenerate_tol) {
        d.ratios_degenerate = true;
    } else {
        d.adot_over_c2 = adot_norm / (c_norm * c_norm);
        d.adot_over_a2 = adot_norm / (a_norm * a_norm);
    }
    return d;
}

// Split of the hidden indices at the final snapshot into entries of c that
// diverged (C1) versus stayed small (C2). Only defined on trajectories that
// actually stopped in blow-up (energy ceiling or step collapse); any finite-
// time threshold is a surrogate for the asymptotic partition, so the
// threshold used is reported alongside.
struct Partition {
    std::vector<std::size_t> c1;
    std::vector<std::size_t> c2;
    double threshold_used = 0.0;
};

inline Partition partition(const Trajectory& traj, double rel_threshold = 0.01) {
    if (traj.snapshots.empty()) throw std::invalid_argument("partition: empty trajectory");
    if (traj.stop_reason != StopReason::energy_ceiling &&
        traj.stop_reason != StopReason::min_step)
        throw std::invalid_argument("partition: trajectory did not blow up, partition undefined");

    const EffectiveState& last = traj.snapshots.back();
    const std::size_t m = last.width();
    double cmax = 0.0;
    for (double x : last.c) cmax = std::max(cmax, std::abs(x));
    Partition p;
    p.threshold_used = rel_threshold * cmax;
    for (std::size_t i = 0; i < m; ++i) {
        if (std::abs(last.c[i]) >= p.threshold_used)  // ties go to C1
            p.c1.push_back(i);
        else
            p.c2.push_back(i);
    }
    return p;
}

struct RatioErrors {
    double adot_c2 = 0.0;
    double adot_a2 = 0.0;
    double max_bi_ci_dev = 0.0;
};

struct CondensationVerdict {
    bool condensed = false;
    double min_cos_xi_on_c1 = 0.0;
    RatioErrors ratio_errors;
    Partition part;
};

// Condensation check at the final snapshot: C1 column directions aligned
// (cos xi), the norm ratios of the angle limits converged, and every C1 entry
// past energy_ceiling^{1/3}/2 as the divergence proxy.
inline CondensationVerdict condensation_verdict(const Trajectory& traj,
                                                double rel_threshold = 0.01,
                                                double cos_tol = 1e-2) {
    CondensationVerdict v;
    v.part = partition(traj, rel_threshold);
    const EffectiveState& last = traj.snapshots.back();
    const AngleDiagnostics d = angles(last);
    const std::size_t m = last.width();

    v.min_cos_xi_on_c1 = 1.0;
    bool any_degenerate = false;
    for (std::size_t i : v.part.c1)
        for (std::size_t j : v.part.c1) {
            if (d.xi_degenerate[i * m + j]) any_degenerate = true;
            v.min_cos_xi_on_c1 = std::min(v.min_cos_xi_on_c1, d.xi(i, j));
        }

    v.ratio_errors.adot_c2 = std::abs(d.adot_over_c2 - 1.0);
    v.ratio_errors.adot_a2 = std::abs(d.adot_over_a2 - 1.0);
    for (std::size_t i : v.part.c1) {
        if (d.bi_over_ci_degenerate[i]) any_degenerate = true;
        v.ratio_errors.max_bi_ci_dev =
            std::max(v.ratio_errors.max_bi_ci_dev, std::abs(d.bi_over_ci[i] - 1.0));
    }

    const double divergence_floor = std::pow(traj.energy_ceiling, 1.0 / 3.0) / 2.0;
    bool all_diverged = true;
    for (std::size_t i : v.part.c1)
        if (std::abs(last.c[i]) < divergence_floor) all_diverged = false;

    v.condensed = !any_degenerate && !d.ratios_degenerate &&
                  v.min_cos_xi_on_c1 >= 1.0 - cos_tol &&
                  v.ratio_errors.adot_c2 <= cos_tol &&
                  v.ratio_errors.max_bi_ci_dev <= cos_tol && all_diverged;
    return v;
}

// Verifies the post-final-stage energy upper bound
// E(t) <= (E(s)^{-1/3} - C (t - s))^{-3} over all snapshot pairs from from_t
// on, for a supplied C >= 1, with 1e-6 relative slack.
inline BoundCheck upper_bound_check(const Trajectory& traj, double from_t, double c_constant) {
    if (traj.snapshots.empty())
        throw std::invalid_argument("upper_bound_check: empty trajectory");
    if (!(c_constant >= 1.0))
        throw std::invalid_argument("upper_bound_check: requires C >= 1");

    std::vector<std::size_t> window;
    for (std::size_t i = 0; i < traj.snapshots.size(); ++i)
        if (traj.snapshots[i].t >= from_t - 1e-12) window.push_back(i);
    if (window.empty() || !(traj.energies[window.front()] > 0.0))
        throw std::invalid_argument("upper_bound_check: requires E(from_t) > 0");

    BoundCheck out;
    out.valid = true;
    out.worst_margin = std::numeric_limits<double>::infinity();
    for (std::size_t wi = 0; wi < window.size(); ++wi) {
        const std::size_t i = window[wi];
        const double es = traj.energies[i];
        if (!(es > 0.0)) continue;
        const double es13 = std::pow(es, -1.0 / 3.0);
        for (std::size_t wj = wi + 1; wj < window.size(); ++wj) {
            const std::size_t j = window[wj];
            const double denom = es13 - c_constant * (traj.snapshots[j].t - traj.snapshots[i].t);
            if (!(denom > 0.0)) continue;
            const double bound = std::pow(denom, -3.0);
            const double margin = bound - traj.energies[j];
            out.worst_margin = std::min(out.worst_margin, margin);
            if (margin < -1e-6 * std::max(1.0, bound)) out.valid = false;
        }
    }
    if (!std::isfinite(out.worst_margin)) out.worst_margin = 0.0;
    return out;
}

}  // namespace condlab
