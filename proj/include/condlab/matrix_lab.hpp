#pragma once

// Deep matrix factorization lab: matrix sensing risk for W = W3 W2 W1, the
// effective dynamics obtained by diagonalizing V = (1/n) sum y_i X_i, the
// matrix-completion final stage condition with its induction property, and
// full-batch training with singular-value tracking.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "condlab/effective_dynamics.hpp"
#include "condlab/linalg.hpp"
#include "condlab/ode.hpp"
#include "condlab/rng.hpp"

namespace condlab {

struct SensingProblem {
    std::vector<Matrix> measurements;  // symmetric X_i
    Vector labels;                     // y_i = <X_i, W*> when target present
    std::optional<Matrix> target;
};

inline void validate_problem(const SensingProblem& p) {
    if (p.measurements.empty() || p.measurements.size() != p.labels.size())
        throw std::invalid_argument("SensingProblem: needs matching measurements and labels");
    const std::size_t m = p.measurements.front().rows;
    for (const Matrix& x : p.measurements) {
        if (x.rows != m || x.cols != m)
            throw std::invalid_argument("SensingProblem: measurements must be square, equal size");
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = i + 1; j < m; ++j)
                if (std::abs(x(i, j) - x(j, i)) > 1e-12)
                    throw std::invalid_argument("SensingProblem: asymmetric measurement");
    }
}

inline double inner(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("inner: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

// V = (1/n) sum_i y_i X_i.
inline Matrix build_v(const SensingProblem& p) {
    validate_problem(p);
    const std::size_t m = p.measurements.front().rows;
    Matrix v(m, m);
    for (std::size_t i = 0; i < p.measurements.size(); ++i)
        for (std::size_t k = 0; k < m * m; ++k)
            v.data[k] += p.labels[i] * p.measurements[i].data[k];
    const double inv_n = 1.0 / static_cast<double>(p.measurements.size());
    for (double& x : v.data) x *= inv_n;
    return v;
}

// Largest pairwise commutator norm among the measurements. The effective
// model assumes a commuting family; non-commuting inputs are accepted but
// should be flagged with this.
inline double max_pairwise_commutator(const SensingProblem& p) {
    validate_problem(p);
    double worst = 0.0;
    for (std::size_t i = 0; i < p.measurements.size(); ++i)
        for (std::size_t j = i + 1; j < p.measurements.size(); ++j) {
            const Matrix ij = matmul(p.measurements[i], p.measurements[j]);
            const Matrix ji = matmul(p.measurements[j], p.measurements[i]);
            double s = 0.0;
            for (std::size_t k = 0; k < ij.data.size(); ++k) {
                const double diff = ij.data[k] - ji.data[k];
                s += diff * diff;
            }
            worst = std::max(worst, std::sqrt(s));
        }
    return worst;
}

struct DeepLinearNet {
    Matrix w3, w2, w1;  // all m x m

    std::size_t width() const { return w2.rows; }
};

inline void validate_deep_net(const DeepLinearNet& net) {
    const std::size_t m = net.w2.rows;
    if (m == 0 || net.w3.rows != m || net.w3.cols != m || net.w2.cols != m ||
        net.w1.rows != m || net.w1.cols != m)
        throw std::invalid_argument("DeepLinearNet: factors must be square, equal size");
}

inline DeepLinearNet make_deep_linear_net(std::size_t m, double std, std::uint64_t seed) {
    Rng rng(seed);
    DeepLinearNet net{Matrix(m, m), Matrix(m, m), Matrix(m, m)};
    for (auto& x : net.w3.data) x = rng.gaussian(0.0, std);
    for (auto& x : net.w2.data) x = rng.gaussian(0.0, std);
    for (auto& x : net.w1.data) x = rng.gaussian(0.0, std);
    return net;
}

// Coordinate-projector measurement family {e_i e_i^T}: symmetric, commuting,
// so the diagonalization of V is exact. Senses only the diagonal.
inline SensingProblem make_projector_problem(const Matrix& target) {
    if (target.rows != target.cols)
        throw std::invalid_argument("make_projector_problem: target must be square");
    const std::size_t m = target.rows;
    SensingProblem p;
    p.target = target;
    for (std::size_t i = 0; i < m; ++i) {
        Matrix x(m, m);
        x(i, i) = 1.0;
        p.labels.push_back(inner(x, target));
        p.measurements.push_back(std::move(x));
    }
    return p;
}

// Symmetrized full-entry family: diagonal projectors plus (E_ij + E_ji)/2 for
// i < j. Pins the symmetric part of W; the members do not pairwise commute.
inline SensingProblem make_symmetric_entry_problem(const Matrix& target) {
    if (target.rows != target.cols)
        throw std::invalid_argument("make_symmetric_entry_problem: target must be square");
    const std::size_t m = target.rows;
    SensingProblem p;
    p.target = target;
    for (std::size_t i = 0; i < m; ++i) {
        Matrix x(m, m);
        x(i, i) = 1.0;
        p.labels.push_back(inner(x, target));
        p.measurements.push_back(std::move(x));
    }
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) {
            Matrix x(m, m);
            x(i, j) = 0.5;
            x(j, i) = 0.5;
            p.labels.push_back(inner(x, target));
            p.measurements.push_back(std::move(x));
        }
    return p;
}

inline double sensing_risk(const DeepLinearNet& net, const SensingProblem& p) {
    validate_deep_net(net);
    validate_problem(p);
    const Matrix w = matmul(net.w3, matmul(net.w2, net.w1));
    double s = 0.0;
    for (std::size_t i = 0; i < p.measurements.size(); ++i) {
        const double r = inner(w, p.measurements[i]) - p.labels[i];
        s += r * r;
    }
    return s / (2.0 * static_cast<double>(p.measurements.size()));
}

struct DeepNetGradient {
    Matrix g3, g2, g1;
};

inline DeepNetGradient sensing_gradient(const DeepLinearNet& net, const SensingProblem& p) {
    validate_deep_net(net);
    validate_problem(p);
    const std::size_t m = net.width();
    const Matrix w21 = matmul(net.w2, net.w1);
    const Matrix w32 = matmul(net.w3, net.w2);
    const Matrix w = matmul(net.w3, w21);
    Matrix g(m, m);  // (1/n) sum r_i X_i
    const double inv_n = 1.0 / static_cast<double>(p.measurements.size());
    for (std::size_t i = 0; i < p.measurements.size(); ++i) {
        const double r = (inner(w, p.measurements[i]) - p.labels[i]) * inv_n;
        for (std::size_t k = 0; k < m * m; ++k) g.data[k] += r * p.measurements[i].data[k];
    }
    return {matmul(g, transpose(w21)), matmul(transpose(net.w3), matmul(g, transpose(net.w1))),
            matmul(transpose(w32), g)};
}

// Effective coordinates after diagonalizing V = O Lambda O^T and conjugating
// the layers: a_i are the rows of W3~ (columns of W3~^T), b = W2~, c_i the
// columns of W1~. Indices with |lambda_i| below the relative tolerance are
// retained in the state but flagged neglected; they are excluded from the
// energy and the final-stage counts.
struct MatrixEffectiveState {
    std::vector<Vector> a_rows;
    Matrix b;
    std::vector<Vector> c_cols;
    Vector lambda;
    std::vector<std::uint8_t> retained;
    Matrix o;  // diagonalizing basis, kept for round-trips
    double t = 0.0;

    std::size_t width() const { return lambda.size(); }
};

inline void validate_mc_state(const MatrixEffectiveState& s) {
    const std::size_t m = s.lambda.size();
    if (m == 0 || s.a_rows.size() != m || s.c_cols.size() != m || s.b.rows != m ||
        s.b.cols != m || s.retained.size() != m)
        throw std::invalid_argument("MatrixEffectiveState: inconsistent shapes");
    for (std::size_t i = 0; i < m; ++i)
        if (s.a_rows[i].size() != m || s.c_cols[i].size() != m)
            throw std::invalid_argument("MatrixEffectiveState: inconsistent vector lengths");
}

inline MatrixEffectiveState diagonalize_and_transform(const Matrix& v, const DeepLinearNet& net,
                                                      double neglect_rel_tol = 1e-12) {
    validate_deep_net(net);
    if (v.rows != v.cols || v.rows != net.width())
        throw std::invalid_argument("diagonalize_and_transform: shape mismatch");
    const EigenDecomposition ed = symmetric_eigen(v, 1e-9);
    const std::size_t m = v.rows;

    const Matrix ot = transpose(ed.o);
    const Matrix w3t = matmul(ot, matmul(net.w3, ed.o));
    const Matrix w2t = matmul(ot, matmul(net.w2, ed.o));
    const Matrix w1t = matmul(ot, matmul(net.w1, ed.o));

    MatrixEffectiveState s;
    s.lambda = ed.eigenvalues;
    s.o = ed.o;
    s.b = w2t;
    double lmax = 0.0;
    for (double l : s.lambda) lmax = std::max(lmax, std::abs(l));
    s.retained.assign(m, 0);
    for (std::size_t i = 0; i < m; ++i) {
        s.a_rows.push_back(row(w3t, i));
        s.c_cols.push_back(column(w1t, i));
        s.retained[i] = (lmax > 0.0 && std::abs(s.lambda[i]) >= neglect_rel_tol * lmax) ? 1 : 0;
    }
    return s;
}

inline DeepLinearNet inverse_transform(const MatrixEffectiveState& s) {
    validate_mc_state(s);
    const std::size_t m = s.width();
    Matrix w3t(m, m), w1t(m, m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            w3t(i, j) = s.a_rows[i][j];
            w1t(j, i) = s.c_cols[i][j];
        }
    const Matrix ot = transpose(s.o);
    return {matmul(s.o, matmul(w3t, ot)), matmul(s.o, matmul(s.b, ot)),
            matmul(s.o, matmul(w1t, ot))};
}

struct MatrixStateDerivative {
    std::vector<Vector> da_rows;
    Matrix db;
    std::vector<Vector> dc_cols;
};

// da_i = lambda_i b c_i;  db = sum_i lambda_i a_i c_i^T;  dc_i = lambda_i b^T a_i.
inline MatrixStateDerivative mc_derivative(const MatrixEffectiveState& s) {
    validate_mc_state(s);
    const std::size_t m = s.width();
    MatrixStateDerivative d;
    d.db = Matrix(m, m);
    for (std::size_t i = 0; i < m; ++i) {
        Vector dai = matvec(s.b, s.c_cols[i]);
        Vector dci = matvec_transposed(s.b, s.a_rows[i]);
        for (std::size_t k = 0; k < m; ++k) {
            dai[k] *= s.lambda[i];
            dci[k] *= s.lambda[i];
        }
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < m; ++c)
                d.db(r, c) += s.lambda[i] * s.a_rows[i][r] * s.c_cols[i][c];
        d.da_rows.push_back(std::move(dai));
        d.dc_cols.push_back(std::move(dci));
    }
    return d;
}

// E = sum over retained i of lambda_i a_i^T b c_i.
inline double mc_energy(const MatrixEffectiveState& s) {
    validate_mc_state(s);
    double e = 0.0;
    for (std::size_t i = 0; i < s.width(); ++i) {
        if (!s.retained[i]) continue;
        e += s.lambda[i] * dot(s.a_rows[i], matvec(s.b, s.c_cols[i]));
    }
    return e;
}

struct McTrajectory {
    std::vector<MatrixEffectiveState> snapshots;
    Vector energies;
    Vector step_sizes;
    StopReason stop_reason = StopReason::reached_t_end;
    double energy_ceiling = 0.0;
};

namespace detail {

// flat layout: [a_1..a_m | b row-major | c_1..c_m], 3 m^2 doubles
inline std::vector<double> mc_flatten(const MatrixEffectiveState& s) {
    const std::size_t m = s.width();
    std::vector<double> y;
    y.reserve(3 * m * m);
    for (const Vector& a : s.a_rows) y.insert(y.end(), a.begin(), a.end());
    y.insert(y.end(), s.b.data.begin(), s.b.data.end());
    for (const Vector& c : s.c_cols) y.insert(y.end(), c.begin(), c.end());
    return y;
}

inline MatrixEffectiveState mc_unflatten(const std::vector<double>& y,
                                         const MatrixEffectiveState& proto, double t) {
    const std::size_t m = proto.width();
    MatrixEffectiveState s = proto;
    s.t = t;
    for (std::size_t i = 0; i < m; ++i)
        s.a_rows[i].assign(y.begin() + i * m, y.begin() + (i + 1) * m);
    std::copy(y.begin() + m * m, y.begin() + 2 * m * m, s.b.data.begin());
    for (std::size_t i = 0; i < m; ++i)
        s.c_cols[i].assign(y.begin() + 2 * m * m + i * m, y.begin() + 2 * m * m + (i + 1) * m);
    return s;
}

inline void mc_rhs(const std::vector<double>& y, std::vector<double>& dy, const Vector& lambda) {
    const std::size_t m = lambda.size();
    const double* a = y.data();
    const double* b = y.data() + m * m;
    const double* c = y.data() + 2 * m * m;
    double* da = dy.data();
    double* db = dy.data() + m * m;
    double* dc = dy.data() + 2 * m * m;
    std::fill(db, db + m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double li = lambda[i];
        const double* ai = a + i * m;
        const double* ci = c + i * m;
        for (std::size_t r = 0; r < m; ++r) {
            double s = 0.0;
            for (std::size_t k = 0; k < m; ++k) s += b[r * m + k] * ci[k];
            da[i * m + r] = li * s;
        }
        for (std::size_t k = 0; k < m; ++k) {
            double s = 0.0;
            for (std::size_t r = 0; r < m; ++r) s += b[r * m + k] * ai[r];
            dc[i * m + k] = li * s;
        }
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t k = 0; k < m; ++k) db[r * m + k] += li * ai[r] * ci[k];
    }
}

inline double mc_flat_energy(const std::vector<double>& y, const Vector& lambda,
                             const std::vector<std::uint8_t>& retained) {
    const std::size_t m = lambda.size();
    const double* a = y.data();
    const double* b = y.data() + m * m;
    const double* c = y.data() + 2 * m * m;
    double e = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (!retained[i]) continue;
        double s = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
            double bc = 0.0;
            for (std::size_t k = 0; k < m; ++k) bc += b[r * m + k] * c[i * m + k];
            s += a[i * m + r] * bc;
        }
        e += lambda[i] * s;
    }
    return e;
}

}  // namespace detail

// Same integrator contract as the vector system, with mc_energy as the
// monitored functional.
inline McTrajectory mc_integrate(const MatrixEffectiveState& s0, const IntegrateOptions& opts) {
    validate_mc_state(s0);
    if (!(opts.t_end > s0.t))
        throw std::invalid_argument("mc_integrate: t_end must exceed s0.t");
    if (!(opts.energy_ceiling > 0.0))
        throw std::invalid_argument("mc_integrate: energy_ceiling must be positive");

    const double stride =
        opts.sample_stride > 0.0 ? opts.sample_stride : (opts.t_end - s0.t) / 512.0;

    McTrajectory traj;
    traj.energy_ceiling = opts.energy_ceiling;

    OdeOptions ode;
    ode.t_end = opts.t_end;
    ode.rel_tol = opts.rel_tol;
    ode.abs_tol = opts.abs_tol;
    ode.min_step = opts.min_step;

    double t = s0.t;
    std::vector<double> y = detail::mc_flatten(s0);
    double next_sample = s0.t;
    double last_step = 0.0;

    auto record = [&](double tt, const std::vector<double>& yy, double h) {
        traj.snapshots.push_back(detail::mc_unflatten(yy, s0, tt));
        traj.energies.push_back(detail::mc_flat_energy(yy, s0.lambda, s0.retained));
        traj.step_sizes.push_back(h);
    };
    auto on_accept = [&](double tt, const std::vector<double>& yy, double h) {
        last_step = h;
        if (tt + 1e-15 >= next_sample) {
            record(tt, yy, h);
            while (next_sample <= tt + 1e-15) next_sample += stride;
        }
    };
    auto stop = [&](double, const std::vector<double>& yy) -> std::optional<StopReason> {
        if (!detail::finite_all(yy)) return StopReason::non_finite;
        if (std::abs(detail::mc_flat_energy(yy, s0.lambda, s0.retained)) >= opts.energy_ceiling)
            return StopReason::energy_ceiling;
        return std::nullopt;
    };

    auto stop_is_tight = [&](double, const std::vector<double>& yy) {
        return std::abs(detail::mc_flat_energy(yy, s0.lambda, s0.retained)) <=
               opts.energy_ceiling * (1.0 + 1e-3);
    };

    traj.stop_reason = integrate_adaptive(
        [&](const std::vector<double>& yy, std::vector<double>& dy) {
            detail::mc_rhs(yy, dy, s0.lambda);
        },
        t, y, ode, stop, on_accept, stop_is_tight);

    if (traj.snapshots.empty() || traj.snapshots.back().t < t) record(t, y, last_step);
    return traj;
}

struct McFscReport {
    bool holds = false;
    std::array<std::size_t, 3> cond_counts{0, 0, 0};
    std::array<std::size_t, 3> cond_maxima{0, 0, 0};
    double min_margin = 0.0;
};

// The three condition families of the matrix-completion final stage
// condition, evaluated over the retained-lambda index set.
inline McFscReport check_mc_fsc(const MatrixEffectiveState& s, double strict_margin = 0.0) {
    validate_mc_state(s);
    const std::size_t m = s.width();
    std::vector<std::size_t> ret;
    for (std::size_t i = 0; i < m; ++i)
        if (s.retained[i]) ret.push_back(i);
    const std::size_t nr = ret.size();

    McFscReport rep;
    rep.cond_maxima = {2 * nr * m, 2 * nr * m * m, nr * nr * m * m};
    rep.min_margin = std::numeric_limits<double>::infinity();
    if (nr == 0) {
        rep.min_margin = 0.0;
        return rep;
    }

    const Matrix bt = transpose(s.b);
    const Matrix gcol = matmul(bt, s.b);  // <b^j, b^k>
    const Matrix grow = matmul(s.b, bt);  // <b_j, b_k>

    for (std::size_t i : ret) {
        const Vector ab = matvec_transposed(s.b, s.a_rows[i]);  // (a_i^T b^j)_j
        const Vector bc = matvec(s.b, s.c_cols[i]);             // (b_j c_i)_j
        for (std::size_t j = 0; j < m; ++j) {
            const double v1 = s.lambda[i] * s.c_cols[i][j] * ab[j];
            const double v2 = s.lambda[i] * s.a_rows[i][j] * bc[j];
            if (v1 > strict_margin) ++rep.cond_counts[0];
            if (v2 > strict_margin) ++rep.cond_counts[0];
            rep.min_margin = std::min({rep.min_margin, v1, v2});
        }
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t k = 0; k < m; ++k) {
                const double v1 = s.c_cols[i][k] * s.c_cols[i][j] * gcol(k, j);
                const double v2 = s.a_rows[i][k] * s.a_rows[i][j] * grow(k, j);
                if (v1 > strict_margin) ++rep.cond_counts[1];
                if (v2 > strict_margin) ++rep.cond_counts[1];
                rep.min_margin = std::min({rep.min_margin, v1, v2});
            }
    }
    for (std::size_t i : ret)
        for (std::size_t j : ret)
            for (std::size_t k = 0; k < m; ++k)
                for (std::size_t l = 0; l < m; ++l) {
                    const double v = s.lambda[i] * s.lambda[j] * s.a_rows[i][k] *
                                     s.a_rows[j][k] * s.c_cols[i][l] * s.c_cols[j][l];
                    if (v > strict_margin) ++rep.cond_counts[2];
                    rep.min_margin = std::min(rep.min_margin, v);
                }

    rep.holds = rep.cond_counts[0] == rep.cond_maxima[0] &&
                rep.cond_counts[1] == rep.cond_maxima[1] &&
                rep.cond_counts[2] == rep.cond_maxima[2];
    return rep;
}

struct McFscPersistence {
    std::optional<double> first_hold_t;
    bool violated_after = false;
};

inline McFscPersistence mc_fsc_persistence(const McTrajectory& traj, double strict_margin = 0.0) {
    if (traj.snapshots.empty())
        throw std::invalid_argument("mc_fsc_persistence: empty trajectory");
    McFscPersistence out;
    for (const MatrixEffectiveState& s : traj.snapshots) {
        const bool holds = check_mc_fsc(s, strict_margin).holds;
        if (!out.first_hold_t) {
            if (holds) out.first_hold_t = s.t;
        } else if (!holds) {
            out.violated_after = true;
        }
    }
    return out;
}

struct DeepTrainOptions {
    double lr = 0.5;
    long iters = 100000;
    long log_every = 100;   // loss and singular values share this cadence
    std::size_t top_k = 4;
    double stop_loss = -1.0;
};

struct DeepTrainLog {
    std::vector<long> iterations;
    Vector losses;
    std::vector<Vector> singular_values;  // top_k per logged iteration
    bool diverged = false;
};

// Full-batch GD on the sensing risk with exact product-rule gradients; logs
// loss and the top singular values of W = W3 W2 W1 at every log point.
inline DeepTrainLog train_deep_linear(DeepLinearNet& net, const SensingProblem& p,
                                      const DeepTrainOptions& opts) {
    validate_deep_net(net);
    validate_problem(p);
    if (!(opts.lr > 0.0)) throw std::invalid_argument("train_deep_linear: lr must be positive");
    if (opts.log_every <= 0)
        throw std::invalid_argument("train_deep_linear: log_every must be positive");

    DeepTrainLog log;
    DeepLinearNet checkpoint = net;

    auto top_svs = [&]() {
        const Matrix w = matmul(net.w3, matmul(net.w2, net.w1));
        Vector sv = singular_values(w);
        sv.resize(std::min(opts.top_k, sv.size()));
        return sv;
    };
    auto log_state = [&](long it, double loss) {
        log.iterations.push_back(it);
        log.losses.push_back(loss);
        log.singular_values.push_back(top_svs());
    };

    long it = 0;
    for (; it < opts.iters; ++it) {
        const double loss = sensing_risk(net, p);
        if (!std::isfinite(loss)) {
            net = checkpoint;
            log.diverged = true;
            break;
        }
        if (it % opts.log_every == 0) {
            log_state(it, loss);
            checkpoint = net;
        }
        if (opts.stop_loss > 0.0 && loss < opts.stop_loss) break;

        const DeepNetGradient g = sensing_gradient(net, p);
        for (std::size_t k = 0; k < net.w3.data.size(); ++k) net.w3.data[k] -= opts.lr * g.g3.data[k];
        for (std::size_t k = 0; k < net.w2.data.size(); ++k) net.w2.data[k] -= opts.lr * g.g2.data[k];
        for (std::size_t k = 0; k < net.w1.data.size(); ++k) net.w1.data[k] -= opts.lr * g.g1.data[k];
    }

    if (!log.diverged) {
        const double loss = sensing_risk(net, p);
        if (log.iterations.empty() || log.iterations.back() != it) log_state(it, loss);
    }
    return log;
}

}  // namespace condlab
