#pragma once

// Fixed-point steering for  y_t + y_x + y_xxx + y y_x = 0,  control h2 = y_x(L,t).
//
// With a shift s (the auxiliary drift eps, or the constant c being linearised
// around) the equation is rewritten as
//     y_t + (1+s) y_x + y_xxx = -y y_x + s y_x
// and the map
//     Gamma(y) = Lambda_s(y_start, h_y, 0) + Lambda_s(0, 0, -y y_x + s y_x),
//     h_y = Psi^s(y_start, y_target - Lambda_s(0, 0, -y y_x + s y_x)(tau))
// is iterated.  Its fixed point solves the shift-free equation exactly at the
// discrete level, which is what the re-simulation audit checks.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "kdvlab/critical_lengths.hpp"
#include "kdvlab/linear_control.hpp"

namespace kdvlab {

struct SteeringConfig {
    double L = 2.0 * std::numbers::pi;
    int nx = 128;
    int nt = 256;  // per phase
    ControlBasis basis{BasisKind::Hat, 64, 0.0, 1.0, true};  // horizon is reset per run
    // Relative SVD cutoff for Psi.  Finer cutoffs make the least-norm control
    // large enough that Gamma no longer maps a small ball into itself.
    double reg_threshold = 1e-2;
    double c = 0.0;  // constant the construction is centred on
    double epsilon = std::numeric_limits<double>::quiet_NaN();  // NaN: automatic
    double preference = 0.5;
    double delta = 0.01;
    double picard_tol = 1e-10;
    double terminal_tol = 1e-3;  // relative to max(||y_target||, d sqrt(L), 1e-6)
    int max_picard = 100;
    int max_restarts = 5;
    double radius = 1.0;  // Z-norm ball the iterates must stay in
};

struct SteeringResult {
    SpaceTimeGrid grid;
    BoundarySignal control;
    Trajectory trajectory;
    Vec y_start, y_target;
    double shift = 0.0;  // drift perturbation used by Gamma
    int picard_iterations = 0;
    std::vector<double> updates;
    std::vector<double> contraction_history;
    double terminal_error = 0.0;
    double terminal_scale = 0.0;  // what terminal_tol is relative to
    bool meets_tolerance = false;
    double control_norm = 0.0;
    double psi_norm = 0.0;  // 1 / smallest retained singular value
    int rank = 0;
    std::vector<std::string> notes;
};

// Largest ratio of bilinear_estimate_report over a fixed family of smooth pairs.
inline double empirical_bilinear_constant(const SpaceTimeGrid& g) {
    double worst = 0.0;
    const double pi = std::numbers::pi;
    for (int k = 1; k <= 3; ++k)
        for (int j = 1; j <= 3; ++j) {
            Trajectory u(g), v(g);
            for (int n = 0; n <= g.nt; ++n)
                for (int i = 0; i <= g.nx; ++i) {
                    const double x = g.x(i), t = g.t(n) - g.T0;
                    u.values(n, i) = std::cos(k * pi * x / g.L + t);
                    v.values(n, i) = std::sin(j * pi * x / g.L - 0.5 * t);
                }
            worst = std::max(worst, bilinear_estimate_report(u, v).ratio);
        }
    return worst;
}

// eps = safe offset, clamped so that C (tau^{1/2} + tau^{1/3}) ||eps||_Z < delta.
inline double choose_epsilon(const SteeringConfig& cfg, double tau, std::vector<std::string>* notes = nullptr) {
    if (std::isfinite(cfg.epsilon)) return cfg.epsilon;
    const double offset = safe_drift(cfg.L, cfg.c, cfg.preference) - cfg.c;
    const SpaceTimeGrid g(cfg.L, 0.0, tau, std::min(cfg.nx, 64), std::min(cfg.nt, 64));
    const double C = empirical_bilinear_constant(g);
    const double unit_z = std::sqrt(cfg.L) + std::sqrt(cfg.L * tau);  // ||1||_Z on [0,tau]
    const double cap = cfg.delta / (C * (std::sqrt(tau) + std::cbrt(tau)) * unit_z);
    const double eps = std::min(offset, 0.999 * cap);
    if (notes)
        notes->push_back("epsilon: safe offset " + std::to_string(offset) + ", smallness cap " + std::to_string(cap) +
                         " (bilinear constant " + std::to_string(C) + ")");
    return eps;
}

namespace detail {

inline SteeringResult fixed_point_steer(const Vec& start, const Vec& target, double shift, double tau, double t0,
                                        const SteeringConfig& cfg, double scale) {
    const SpaceTimeGrid g(cfg.L, t0, t0 + tau, cfg.nx, cfg.nt);
    if (start.size() != g.nx + 1 || target.size() != g.nx + 1)
        throw ShapeError("nonlinear_control", "states must have nx+1 entries");
    ControlBasis basis = cfg.basis;
    basis.T0 = g.T0;
    basis.T1 = g.T1;
    const auto op = build_control_operator(1.0 + shift, g, basis);
    const auto& st = op.stepper();
    const Vec free_tau = op.free_response(start);

    SteeringResult res;
    res.grid = g;
    res.y_start = start;
    res.y_target = target;
    res.shift = shift;
    res.terminal_scale = scale;
    const auto& sg = op.singular_values();

    Trajectory y(g);
    for (int n = 0; n <= g.nt; ++n) y.values.row(n) = start.transpose();
    BoundarySignal h(g.nt);
    Vec coeffs = Vec::Zero(basis.count);
    double prev = -1.0;
    bool converged = false;
    for (int it = 1; it <= cfg.max_picard; ++it) {
        const Field yx = space_derivative(y, h, st.op());
        const Field F = ((shift - y.values.array()) * yx.array()).matrix();
        const Vec z_tau = st.solve(Vec::Zero(g.nx + 1), BoundarySignal(g.nt), F).final_state();
        int rank = 0;
        coeffs = op.least_norm(target - free_tau - z_tau, cfg.reg_threshold, &rank);
        res.rank = rank;
        BoundarySignal hn = BoundarySignal::from_h2(op.control_samples(coeffs));
        Trajectory ynew = st.solve(start, hn, F);

        const double upd = zt_distance(ynew, y);
        res.picard_iterations = it;
        res.updates.push_back(upd);
        if (prev > 0.0) res.contraction_history.push_back(upd / prev);
        prev = upd;
        y = std::move(ynew);
        h = std::move(hn);
        if (!std::isfinite(upd)) break;
        const double zn = zt_norm(y);
        if (zn > cfg.radius)
            throw NoConvergenceError("nonlinear_control", "iterate " + std::to_string(it) + " left the ball: ||y||_Z = " +
                                                              std::to_string(zn) + " > " + std::to_string(cfg.radius));
        if (upd < cfg.picard_tol) {
            converged = true;
            break;
        }
    }
    if (!converged)
        throw NoConvergenceError("nonlinear_control", "Picard iteration did not reach tolerance in " +
                                                          std::to_string(cfg.max_picard) + " iterations (last update " +
                                                          std::to_string(prev) + ")");
    res.control = h;
    res.trajectory = y;
    res.control_norm = time_l2_norm(h.h2, g.dt());
    if (res.rank > 0) res.psi_norm = 1.0 / sg[res.rank - 1];
    const Vec w = quadrature_weights(g);
    res.terminal_error = l2_norm(y.final_state() - target, w);
    res.meets_tolerance = res.terminal_error < cfg.terminal_tol * scale;
    return res;
}

inline double terminal_scale(const Vec& target, double d, const SteeringConfig& cfg) {
    const Vec w = quadrature_weights(cfg.nx, cfg.L / cfg.nx);
    return std::max({l2_norm(target, w), std::abs(d) * std::sqrt(cfg.L), 1e-6});
}

inline void check_small(const Vec& y, const Vec& w, double bound, const char* what, std::vector<std::string>& notes) {
    const double n = l2_norm(y, w);
    if (n >= bound)
        notes.push_back(std::string(what) + " norm " + std::to_string(n) + " is not below delta " + std::to_string(bound));
}

}  // namespace detail

// y0 (small) -> constant c + d over [0, tau] (first third of the return method).
inline SteeringResult steer_to_constant(const Vec& y0, double d, double tau, const SteeringConfig& cfg,
                                        double t0 = 0.0) {
    detail::check_drift(cfg.c, "nonlinear_control");
    std::vector<std::string> notes;
    const double eps = choose_epsilon(cfg, tau, &notes);
    if (is_critical(cfg.L, cfg.c + eps).critical)
        throw CriticalLengthError("auxiliary drift leaves L critical");
    const Vec target = Vec::Constant(cfg.nx + 1, cfg.c + d);
    const Vec w = quadrature_weights(cfg.nx, cfg.L / cfg.nx);
    detail::check_small(y0 - Vec::Constant(cfg.nx + 1, cfg.c), w, cfg.delta, "initial state", notes);
    if (!(d > 0.0 && d < cfg.delta)) notes.push_back("d is outside (0, delta)");
    auto res = detail::fixed_point_steer(y0, target, cfg.c + eps, tau, t0, cfg, detail::terminal_scale(target, d, cfg));
    res.notes.insert(res.notes.begin(), notes.begin(), notes.end());
    return res;
}

// constant c + d -> yT (small) over [t0, t0 + tau] (last third).
inline SteeringResult steer_from_constant(double d, const Vec& yT, double tau, const SteeringConfig& cfg,
                                          double t0 = 0.0) {
    detail::check_drift(cfg.c, "nonlinear_control");
    std::vector<std::string> notes;
    const double eps = choose_epsilon(cfg, tau, &notes);
    if (is_critical(cfg.L, cfg.c + eps).critical)
        throw CriticalLengthError("auxiliary drift leaves L critical");
    const Vec start = Vec::Constant(cfg.nx + 1, cfg.c + d);
    const Vec w = quadrature_weights(cfg.nx, cfg.L / cfg.nx);
    detail::check_small(yT - Vec::Constant(cfg.nx + 1, cfg.c), w, cfg.delta, "target state", notes);
    if (!(d > 0.0 && d < cfg.delta)) notes.push_back("d is outside (0, delta)");
    auto res = detail::fixed_point_steer(start, yT, cfg.c + eps, tau, t0, cfg, detail::terminal_scale(yT, d, cfg));
    res.notes.insert(res.notes.begin(), notes.begin(), notes.end());
    return res;
}

// Steering near the constant c when L is not critical for c.
inline SteeringResult local_steer_off_critical(const Vec& y0, const Vec& yT, double c, double T,
                                               const SteeringConfig& cfg, double t0 = 0.0) {
    detail::check_drift(c, "nonlinear_control");
    if (is_critical(cfg.L, c).critical)
        throw CriticalLengthError("L = " + std::to_string(cfg.L) + " is critical for c = " + std::to_string(c));
    return detail::fixed_point_steer(y0, yT, c, T, t0, cfg, detail::terminal_scale(yT, 0.0, cfg));
}

struct SteeringAudit {
    double z_deviation = 0.0;
    double terminal_error = 0.0;
    double terminal_error_gap = 0.0;
    Trajectory resimulated;
};

// Re-run the control through solve_nonlinear (drift 1, no shift).
inline SteeringAudit audit_steering(const SteeringResult& r, const NonlinearOptions& opt = {1e-13, 200, 4, 6}) {
    SteeringAudit a;
    auto sol = solve_nonlinear(r.y_start, r.control, Field(), Drift(1.0), r.grid, opt);
    a.resimulated = std::move(sol.trajectory);
    a.z_deviation = zt_distance(a.resimulated, r.trajectory);
    a.terminal_error = l2_norm(a.resimulated.final_state() - r.y_target, quadrature_weights(r.grid));
    a.terminal_error_gap = std::abs(a.terminal_error - r.terminal_error);
    return a;
}

}  // namespace kdvlab
