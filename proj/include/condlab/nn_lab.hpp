#pragma once

// The real three-layer tanh network f(x) = a^T sigma(W2 sigma(W1 x)) trained
// by full-batch gradient descent from small Gaussian initialization, plus the
// bridge between the trained network and the effective model: the target
// direction v, condensation cosine maps, final-stage-condition counts on the
// network's effective coordinates, and a direct consistency check of the
// effective dynamics against the full gradient flow at small epsilon.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "condlab/effective_dynamics.hpp"
#include "condlab/linalg.hpp"
#include "condlab/ode.hpp"
#include "condlab/rng.hpp"

namespace condlab {

enum class Activation { Tanh };

struct ThreeLayerNet {
    Vector a;   // m
    Matrix w2;  // m x m
    Matrix w1;  // m x d
    Activation activation = Activation::Tanh;
    double sigma_prime_at_zero = 1.0;

    std::size_t width() const { return a.size(); }
    std::size_t input_dim() const { return w1.cols; }
};

inline void validate_net(const ThreeLayerNet& net) {
    const std::size_t m = net.a.size();
    if (m == 0 || net.w2.rows != m || net.w2.cols != m || net.w1.rows != m ||
        net.w1.cols == 0)
        throw std::invalid_argument("ThreeLayerNet: inconsistent shapes");
}

struct Dataset {
    std::vector<Vector> inputs;
    Vector labels;

    std::size_t n() const { return inputs.size(); }
    std::size_t dim() const { return inputs.empty() ? 0 : inputs.front().size(); }
};

inline void validate_dataset(const Dataset& data) {
    if (data.inputs.empty() || data.inputs.size() != data.labels.size())
        throw std::invalid_argument("Dataset: needs matching, non-empty inputs and labels");
    for (const Vector& x : data.inputs)
        if (x.size() != data.dim()) throw std::invalid_argument("Dataset: ragged inputs");
}

struct InitSpec {
    double epsilon = 1e-3;          // std of the Gaussian init
    std::optional<double> alpha;    // when set, epsilon = m^-alpha
    std::uint64_t seed = 0;

    double resolve_epsilon(std::size_t m) const {
        const double eps = alpha ? std::pow(static_cast<double>(m), -*alpha) : epsilon;
        if (!(eps > 0.0)) throw std::invalid_argument("InitSpec: epsilon must be positive");
        return eps;
    }
};

inline ThreeLayerNet make_net(std::size_t m, std::size_t d, const InitSpec& init) {
    const double eps = init.resolve_epsilon(m);
    Rng rng(init.seed);
    ThreeLayerNet net;
    net.a.resize(m);
    net.w2 = Matrix(m, m);
    net.w1 = Matrix(m, d);
    for (auto& x : net.a) x = rng.gaussian(0.0, eps);
    for (auto& x : net.w2.data) x = rng.gaussian(0.0, eps);
    for (auto& x : net.w1.data) x = rng.gaussian(0.0, eps);
    return net;
}

// The experiment dataset: n samples of y = tanh(x), x uniform on [-pi, pi].
inline Dataset make_tanh_dataset(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    Dataset data;
    data.inputs.reserve(n);
    data.labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = rng.uniform(-3.14159265358979323846, 3.14159265358979323846);
        data.inputs.push_back({x});
        data.labels.push_back(std::tanh(x));
    }
    return data;
}

inline double forward(const ThreeLayerNet& net, const Vector& x) {
    validate_net(net);
    if (x.size() != net.input_dim()) throw std::invalid_argument("forward: input dim mismatch");
    Vector h1 = matvec(net.w1, x);
    for (double& z : h1) z = std::tanh(z);
    Vector h2 = matvec(net.w2, h1);
    for (double& z : h2) z = std::tanh(z);
    return dot(net.a, h2);
}

namespace detail {

// Flattened batch workspace so the training loop never reallocates.
struct NnWorkspace {
    std::size_t n = 0, m = 0, d = 0;
    std::vector<double> x;   // n x d
    Vector y;                // n
    std::vector<double> h1;  // n x m
    std::vector<double> h2;  // n x m
    std::vector<double> d2;  // n x m
    std::vector<double> d1;  // n x m
    Vector e;                // n

    NnWorkspace(const Dataset& data, std::size_t m_) {
        n = data.n();
        d = data.dim();
        m = m_;
        x.resize(n * d);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) x[i * d + j] = data.inputs[i][j];
        y = data.labels;
        h1.resize(n * m);
        h2.resize(n * m);
        d2.resize(n * m);
        d1.resize(n * m);
        e.resize(n);
    }
};

// Full-batch risk and exact gradients in one pass. Gradient buffers must be
// pre-sized; returns the empirical risk.
inline double nn_loss_and_gradient(const double* a, const double* w2, const double* w1,
                                   NnWorkspace& ws, double* ga, double* gw2, double* gw1) {
    const std::size_t n = ws.n, m = ws.m, d = ws.d;
    const double inv_n = 1.0 / static_cast<double>(n);

    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = ws.x.data() + i * d;
        double* h1i = ws.h1.data() + i * m;
        for (std::size_t k = 0; k < m; ++k) {
            double z = 0.0;
            for (std::size_t j = 0; j < d; ++j) z += w1[k * d + j] * xi[j];
            h1i[k] = std::tanh(z);
        }
        double* h2i = ws.h2.data() + i * m;
        for (std::size_t k = 0; k < m; ++k) {
            double z = 0.0;
            const double* w2k = w2 + k * m;
            for (std::size_t j = 0; j < m; ++j) z += w2k[j] * h1i[j];
            h2i[k] = std::tanh(z);
        }
        double f = 0.0;
        for (std::size_t k = 0; k < m; ++k) f += a[k] * h2i[k];
        ws.e[i] = f - ws.y[i];
    }

    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) loss += ws.e[i] * ws.e[i];
    loss *= 0.5 * inv_n;

    std::fill(ga, ga + m, 0.0);
    std::fill(gw2, gw2 + m * m, 0.0);
    std::fill(gw1, gw1 + m * d, 0.0);

    for (std::size_t i = 0; i < n; ++i) {
        const double* h1i = ws.h1.data() + i * m;
        const double* h2i = ws.h2.data() + i * m;
        const double scale = ws.e[i] * inv_n;
        double* d2i = ws.d2.data() + i * m;
        for (std::size_t k = 0; k < m; ++k) {
            ga[k] += scale * h2i[k];
            d2i[k] = scale * a[k] * (1.0 - h2i[k] * h2i[k]);
        }
        for (std::size_t k = 0; k < m; ++k) {
            const double d2k = d2i[k];
            if (d2k == 0.0) continue;
            double* gw2k = gw2 + k * m;
            for (std::size_t j = 0; j < m; ++j) gw2k[j] += d2k * h1i[j];
        }
        double* d1i = ws.d1.data() + i * m;
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < m; ++k) s += d2i[k] * w2[k * m + j];
            d1i[j] = s * (1.0 - h1i[j] * h1i[j]);
        }
        const double* xi = ws.x.data() + i * d;
        for (std::size_t k = 0; k < m; ++k) {
            const double d1k = d1i[k];
            for (std::size_t j = 0; j < d; ++j) gw1[k * d + j] += d1k * xi[j];
        }
    }
    return loss;
}

}  // namespace detail

inline double risk(const ThreeLayerNet& net, const Dataset& data) {
    validate_net(net);
    validate_dataset(data);
    double s = 0.0;
    for (std::size_t i = 0; i < data.n(); ++i) {
        const double e = forward(net, data.inputs[i]) - data.labels[i];
        s += e * e;
    }
    return s / (2.0 * static_cast<double>(data.n()));
}

struct NetGradient {
    Vector ga;
    Matrix gw2;
    Matrix gw1;
};

inline NetGradient gradient(const ThreeLayerNet& net, const Dataset& data) {
    validate_net(net);
    validate_dataset(data);
    const std::size_t m = net.width(), d = net.input_dim();
    detail::NnWorkspace ws(data, m);
    NetGradient g{Vector(m), Matrix(m, m), Matrix(m, d)};
    detail::nn_loss_and_gradient(net.a.data(), net.w2.data.data(), net.w1.data.data(), ws,
                                 g.ga.data(), g.gw2.data.data(), g.gw1.data.data());
    return g;
}

// v = sum_i y_i x_i / ||sum_i y_i x_i||, determined by the data alone.
inline Vector target_direction(const Dataset& data) {
    validate_dataset(data);
    Vector s(data.dim(), 0.0);
    double scale = 0.0;
    for (std::size_t i = 0; i < data.n(); ++i) {
        for (std::size_t j = 0; j < data.dim(); ++j) s[j] += data.labels[i] * data.inputs[i][j];
        scale = std::max(scale, std::abs(data.labels[i]) * norm2(data.inputs[i]));
    }
    const double nrm = norm2(s);
    if (nrm <= 1e-12 * std::max(1.0, scale))
        throw std::invalid_argument("target_direction: sum of y_i x_i vanishes");
    for (double& x : s) x /= nrm;
    return s;
}

// Counts the strictly positive condition-1 indicators of the final stage
// condition on the network's effective coordinates (a, b = W2, c = W1 v).
inline std::size_t fsc_count_on_net(const ThreeLayerNet& net, const Vector& v) {
    validate_net(net);
    const std::size_t m = net.width();
    const Vector c = matvec(net.w1, v);
    const Vector ab = matvec_transposed(net.w2, net.a);
    const Vector bc = matvec(net.w2, c);
    std::size_t count = 0;
    for (std::size_t i = 0; i < m; ++i) {
        if (c[i] * ab[i] > 0.0) ++count;
        if (net.a[i] * bc[i] > 0.0) ++count;
    }
    return count;
}

struct CosineSimilarityMap {
    Vector row_v_cos;                         // cos(W1 row k, v); sentinel 0 when degenerate
    std::vector<std::uint8_t> degenerate;     // rows with norm below tolerance
    Vector row_norms;
    Matrix pairwise_cos;                      // full row-pairwise cosine matrix
};

inline CosineSimilarityMap cosine_similarity_map(const Matrix& w1, const Vector& v,
                                                 double tol = 1e-12) {
    if (w1.cols != v.size())
        throw std::invalid_argument("cosine_similarity_map: shape mismatch");
    if (std::abs(norm2(v) - 1.0) > 1e-6)
        throw std::invalid_argument("cosine_similarity_map: v must be unit norm");
    const std::size_t m = w1.rows;
    CosineSimilarityMap out;
    out.row_v_cos.assign(m, 0.0);
    out.degenerate.assign(m, 0);
    out.row_norms.assign(m, 0.0);
    out.pairwise_cos = Matrix(m, m);

    std::vector<Vector> rows(m);
    for (std::size_t k = 0; k < m; ++k) {
        rows[k] = row(w1, k);
        out.row_norms[k] = norm2(rows[k]);
        if (out.row_norms[k] < tol)
            out.degenerate[k] = 1;
        else
            out.row_v_cos[k] = std::clamp(dot(rows[k], v) / out.row_norms[k], -1.0, 1.0);
    }
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            if (out.degenerate[i] || out.degenerate[j]) continue;
            out.pairwise_cos(i, j) = std::clamp(
                dot(rows[i], rows[j]) / (out.row_norms[i] * out.row_norms[j]), -1.0, 1.0);
        }
    return out;
}

struct TrainOptions {
    double lr = 5e-3;
    long iters = 100000;
    long log_every = 100;
    std::vector<std::pair<long, double>> lr_schedule;  // explicit (iteration, lr) switches

    // plateau-exit detector: once the loss drops below plateau_drop times the
    // trailing-window mean, switch the learning rate to plateau_lr (the
    // two-phase run of the experiments)
    bool plateau_switch = false;
    double plateau_lr = 5e-4;
    long plateau_window = 200;
    long plateau_min_history = 50;
    double plateau_drop = 0.5;

    double stop_loss = -1.0;  // if > 0, stop at the first iterate below this
                              // (after the plateau switch when one is enabled)
};

struct TrainLog {
    std::vector<long> iterations;
    Vector losses;
    std::vector<std::size_t> fsc_counts;
    Vector energies;  // effective-coordinate energy a^T W2 (W1 v), raw scale
    long checkpoint_every = 0;
    bool diverged = false;
    long plateau_exit_iter = -1;
    bool v_defined = false;
};

// Plain full-batch gradient descent on the empirical risk. Logs loss, the
// condition-1 indicator count and the effective energy every log_every
// iterations (and at the final iterate). On divergence the last logged
// checkpoint is restored and the log is marked.
inline TrainLog train(ThreeLayerNet& net, const Dataset& data, const TrainOptions& opts) {
    validate_net(net);
    validate_dataset(data);
    if (!(opts.lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
    if (opts.iters < 0) throw std::invalid_argument("train: iters must be non-negative");
    if (opts.log_every <= 0) throw std::invalid_argument("train: log_every must be positive");

    const std::size_t m = net.width(), d = net.input_dim();
    detail::NnWorkspace ws(data, m);
    Vector ga(m);
    std::vector<double> gw2(m * m), gw1(m * d);

    TrainLog log;
    log.checkpoint_every = opts.log_every;
    Vector v;
    try {
        v = target_direction(data);
        log.v_defined = true;
    } catch (const std::invalid_argument&) {
        log.v_defined = false;
    }

    auto effective_energy = [&]() {
        if (!log.v_defined) return 0.0;
        const Vector c = matvec(net.w1, v);
        return dot(net.a, matvec(net.w2, c));
    };
    auto log_state = [&](long it, double loss) {
        log.iterations.push_back(it);
        log.losses.push_back(loss);
        log.fsc_counts.push_back(log.v_defined ? fsc_count_on_net(net, v) : 0);
        log.energies.push_back(effective_energy());
    };

    ThreeLayerNet checkpoint = net;
    double lr = opts.lr;
    std::size_t schedule_pos = 0;
    std::vector<double> window;
    window.reserve(static_cast<std::size_t>(opts.plateau_window));
    std::size_t window_head = 0;
    double window_sum = 0.0;
    bool in_plateau_phase = opts.plateau_switch;

    long it = 0;
    for (; it < opts.iters; ++it) {
        while (schedule_pos < opts.lr_schedule.size() &&
               opts.lr_schedule[schedule_pos].first <= it)
            lr = opts.lr_schedule[schedule_pos++].second;

        const double loss = detail::nn_loss_and_gradient(
            net.a.data(), net.w2.data.data(), net.w1.data.data(), ws, ga.data(), gw2.data(),
            gw1.data());

        if (!std::isfinite(loss)) {
            net = checkpoint;
            log.diverged = true;
            break;
        }
        if (it % opts.log_every == 0) {
            log_state(it, loss);
            checkpoint = net;
        }

        if (in_plateau_phase) {
            if (window.size() < static_cast<std::size_t>(opts.plateau_window)) {
                window.push_back(loss);
                window_sum += loss;
            } else {
                window_sum += loss - window[window_head];
                window[window_head] = loss;
                window_head = (window_head + 1) % window.size();
            }
            if (window.size() >= static_cast<std::size_t>(opts.plateau_min_history) &&
                loss < opts.plateau_drop * (window_sum / static_cast<double>(window.size()))) {
                in_plateau_phase = false;
                log.plateau_exit_iter = it;
                lr = opts.plateau_lr;
            }
        }

        if (opts.stop_loss > 0.0 && loss < opts.stop_loss &&
            (!opts.plateau_switch || log.plateau_exit_iter >= 0))
            break;

        for (std::size_t k = 0; k < m; ++k) net.a[k] -= lr * ga[k];
        for (std::size_t k = 0; k < m * m; ++k) net.w2.data[k] -= lr * gw2[k];
        for (std::size_t k = 0; k < m * d; ++k) net.w1.data[k] -= lr * gw1[k];
    }

    if (!log.diverged) {
        const double loss = risk(net, data);
        if (log.iterations.empty() || log.iterations.back() != it) log_state(it, loss);
    }
    return log;
}

struct EffFullReport {
    double max_rel_err = 0.0;
};

// Integrates the full gradient flow of the risk (exact gradients, adaptive
// RK) alongside the effective system started from the normalized parameters,
// and compares the normalized observables (a/eps, W2/eps, (W1/eps) v) on the
// rescaled clock over [0, horizon]. The error should shrink linearly-or-
// better as epsilon does.
inline EffFullReport effective_vs_full(const ThreeLayerNet& net0, const Dataset& data,
                                       double horizon, double epsilon,
                                       std::size_t checkpoints = 32) {
    validate_net(net0);
    validate_dataset(data);
    if (!(epsilon > 0.0) || epsilon > 1e-2)
        throw std::invalid_argument("effective_vs_full: epsilon must lie in (0, 1e-2]");
    if (!(horizon > 0.0)) throw std::invalid_argument("effective_vs_full: horizon must be positive");

    const Vector v = target_direction(data);  // throws when undefined
    const std::size_t m = net0.width(), d = net0.input_dim(), n = data.n();
    double snorm = 0.0;
    {
        Vector s(d, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) s[j] += data.labels[i] * data.inputs[i][j];
        snorm = norm2(s);
    }
    const double sp0 = net0.sigma_prime_at_zero;
    const double rescale = sp0 * sp0 * snorm / static_cast<double>(n);
    const double t_full_end = horizon / (epsilon * rescale);

    detail::NnWorkspace ws(data, m);
    Vector ga(m);
    std::vector<double> gw2(m * m), gw1(m * d);

    // full flow state: [a, w2, w1] at raw scale
    std::vector<double> yf;
    yf.insert(yf.end(), net0.a.begin(), net0.a.end());
    yf.insert(yf.end(), net0.w2.data.begin(), net0.w2.data.end());
    yf.insert(yf.end(), net0.w1.data.begin(), net0.w1.data.end());
    double tf = 0.0;

    auto full_rhs = [&](const std::vector<double>& y, std::vector<double>& dy) {
        detail::nn_loss_and_gradient(y.data(), y.data() + m, y.data() + m + m * m, ws,
                                     ga.data(), gw2.data(), gw1.data());
        for (std::size_t k = 0; k < m; ++k) dy[k] = -ga[k];
        for (std::size_t k = 0; k < m * m; ++k) dy[m + k] = -gw2[k];
        for (std::size_t k = 0; k < m * d; ++k) dy[m + m * m + k] = -gw1[k];
    };

    // effective state from normalized parameters
    EffectiveState es;
    es.a = net0.a;
    es.b = net0.w2;
    {
        Matrix w1n = net0.w1;
        for (double& x : w1n.data) x /= epsilon;
        es.c = matvec(w1n, v);
    }
    for (double& x : es.a) x /= epsilon;
    for (double& x : es.b.data) x /= epsilon;
    std::vector<double> ye = detail::flatten(es);
    double te = 0.0;

    auto no_stop = [](double, const std::vector<double>&) -> std::optional<StopReason> {
        return std::nullopt;
    };
    auto no_accept = [](double, const std::vector<double>&, double) {};

    EffFullReport rep;
    for (std::size_t k = 1; k <= checkpoints; ++k) {
        const double frac = static_cast<double>(k) / static_cast<double>(checkpoints);

        OdeOptions of;
        of.t_end = frac * t_full_end;
        of.rel_tol = 1e-10;
        of.abs_tol = 1e-13 * epsilon;  // raw parameters live at scale epsilon
        integrate_adaptive(full_rhs, tf, yf, of, no_stop, no_accept);

        OdeOptions oe;
        oe.t_end = frac * horizon;
        oe.rel_tol = 1e-10;
        oe.abs_tol = 1e-13;
        integrate_adaptive(
            [m](const std::vector<double>& y, std::vector<double>& dy) {
                detail::effective_rhs(y, dy, m);
            },
            te, ye, oe, no_stop, no_accept);

        // normalized full observables vs effective state
        const double floor = 1e-8;
        double na = 0.0, da2 = 0.0, nb = 0.0, db2 = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double ref = ye[i];
            const double diff = yf[i] / epsilon - ref;
            na += ref * ref;
            da2 += diff * diff;
        }
        for (std::size_t i = 0; i < m * m; ++i) {
            const double ref = ye[m + i];
            const double diff = yf[m + i] / epsilon - ref;
            nb += ref * ref;
            db2 += diff * diff;
        }
        double nc = 0.0, dc2 = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            double ci = 0.0;
            for (std::size_t j = 0; j < d; ++j) ci += yf[m + m * m + i * d + j] / epsilon * v[j];
            const double ref = ye[m + m * m + i];
            const double diff = ci - ref;
            nc += ref * ref;
            dc2 += diff * diff;
        }
        rep.max_rel_err = std::max(
            {rep.max_rel_err, std::sqrt(da2) / std::max(std::sqrt(na), floor),
             std::sqrt(db2) / std::max(std::sqrt(nb), floor),
             std::sqrt(dc2) / std::max(std::sqrt(nc), floor)});
    }
    return rep;
}

}  // namespace condlab
