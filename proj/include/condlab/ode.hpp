#pragma once

// Embedded Dormand-Prince 4(5) integrator with step rejection. Blow-up
// trajectories need aggressive step shrinkage near the singular time, so a
// fixed-step scheme is not trustworthy here; the controller uses a mixed
// absolute/relative error norm per component.

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

namespace condlab {

enum class StopReason { reached_t_end, energy_ceiling, min_step, non_finite };

inline const char* stop_reason_name(StopReason r) {
    switch (r) {
        case StopReason::reached_t_end: return "reached_t_end";
        case StopReason::energy_ceiling: return "energy_ceiling";
        case StopReason::min_step: return "min_step";
        case StopReason::non_finite: return "non_finite";
    }
    return "unknown";
}

struct OdeOptions {
    double t_end = 1.0;
    double rel_tol = 1e-10;
    double abs_tol = 1e-12;
    double min_step = 1e-14;
    double initial_step = 0.0;  // 0 = choose automatically
};

namespace detail {
inline bool finite_all(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}
}  // namespace detail

// Integrates dy/dt = rhs(y) from (t, y) until t_end or until `stop` returns a
// reason on an accepted state. `on_accept` sees every accepted state (the
// initial one included, with step 0). When `stop` fires on a candidate step
// and `stop_is_tight` says the state overshot, the step is halved instead of
// committed, which localizes the stopping event. On return, (t, y) hold the
// final accepted state.
//
// Rhs:      void(const std::vector<double>& y, std::vector<double>& dydt)
// StopFn:   std::optional<StopReason>(double t, const std::vector<double>& y)
// AcceptFn: void(double t, const std::vector<double>& y, double step)
// TightFn:  bool(double t, const std::vector<double>& y)
template <typename Rhs, typename StopFn, typename AcceptFn,
          typename TightFn = bool (*)(double, const std::vector<double>&)>
StopReason integrate_adaptive(
    Rhs&& rhs, double& t, std::vector<double>& y, const OdeOptions& opt, StopFn&& stop,
    AcceptFn&& on_accept,
    TightFn&& stop_is_tight = [](double, const std::vector<double>&) { return true; }) {
    if (!(opt.rel_tol > 0.0) || !(opt.abs_tol > 0.0) || !(opt.min_step > 0.0))
        throw std::invalid_argument("integrate_adaptive: tolerances must be positive");
    if (!(opt.t_end > t))
        throw std::invalid_argument("integrate_adaptive: t_end must exceed start time");
    if (!detail::finite_all(y)) return StopReason::non_finite;

    const std::size_t n = y.size();

    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                            a53 = 64448.0 / 6561, a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                            a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                            b5 = -2187.0 / 6784, b6 = 11.0 / 84;
    static constexpr double e1 = 35.0 / 384 - 5179.0 / 57600, e3 = 500.0 / 1113 - 7571.0 / 16695,
                            e4 = 125.0 / 192 - 393.0 / 640, e5 = -2187.0 / 6784 + 92097.0 / 339200,
                            e6 = 11.0 / 84 - 187.0 / 2100, e7 = -1.0 / 40;

    std::vector<double> k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), tmp(n), ynew(n);

    on_accept(t, y, 0.0);
    if (auto r = stop(t, y)) return *r;

    rhs(y, k1);
    double fmax = 0.0, ymax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        fmax = std::max(fmax, std::abs(k1[i]));
        ymax = std::max(ymax, std::abs(y[i]));
    }
    double h = opt.initial_step > 0.0
                   ? opt.initial_step
                   : std::min(opt.t_end - t, 1e-2 * (1.0 + ymax) / (1.0 + fmax));

    // k1 always holds rhs(y): refreshed via FSAL on acceptance, unchanged on rejection
    while (t < opt.t_end) {
        if (opt.t_end - t < opt.min_step) return StopReason::reached_t_end;
        h = std::min(h, opt.t_end - t);
        if (h < opt.min_step) return StopReason::min_step;

        for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + h * a21 * k1[i];
        rhs(tmp, k2);
        for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
        rhs(tmp, k3);
        for (std::size_t i = 0; i < n; ++i)
            tmp[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
        rhs(tmp, k4);
        for (std::size_t i = 0; i < n; ++i)
            tmp[i] = y[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
        rhs(tmp, k5);
        for (std::size_t i = 0; i < n; ++i)
            tmp[i] = y[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] +
                                 a65 * k5[i]);
        rhs(tmp, k6);
        for (std::size_t i = 0; i < n; ++i)
            ynew[i] = y[i] + h * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
        rhs(ynew, k7);

        double err = 0.0;
        bool finite = true;
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(ynew[i])) {
                finite = false;
                break;
            }
            const double e = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] +
                                  e6 * k6[i] + e7 * k7[i]);
            const double scale =
                opt.abs_tol + opt.rel_tol * std::max(std::abs(y[i]), std::abs(ynew[i]));
            err += (e / scale) * (e / scale);
        }
        err = std::sqrt(err / static_cast<double>(n));

        if (!finite || !std::isfinite(err)) {
            h *= 0.2;
            if (h < opt.min_step) return StopReason::non_finite;
            continue;
        }

        if (err <= 1.0) {
            const auto reason = stop(t + h, ynew);
            if (reason && h > 64.0 * opt.min_step && !stop_is_tight(t + h, ynew)) {
                h *= 0.5;  // localize the stopping event
                continue;
            }
            t += h;
            y.swap(ynew);
            k1.swap(k7);  // FSAL: k7 was evaluated at the accepted state
            on_accept(t, y, h);
            if (reason) return *reason;
            const double grow = err > 0.0 ? 0.9 * std::pow(err, -0.2) : 5.0;
            h *= std::clamp(grow, 0.2, 5.0);
        } else {
            h *= std::clamp(0.9 * std::pow(err, -0.2), 0.1, 0.9);
        }
    }
    return StopReason::reached_t_end;
}

}  // namespace condlab
