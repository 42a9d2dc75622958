#pragma once

// Three-phase steering y0 -> c+d -> (hold) -> yT over [0,T] split in thirds.

#include <cmath>
#include <cstdio>
#include <future>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "kdvlab/nonlinear_control.hpp"

namespace kdvlab {

struct ReturnConfig {
    SteeringConfig steering;
    double d = std::numeric_limits<double>::quiet_NaN();  // NaN: delta / 2
    double end_to_end_tol = 1e-2;
};

struct PhaseAttempt {
    double d = 0.0;
    double delta = 0.0;
    std::string phase1, phase3;  // "ok" or the failure text
    double phase1_error = std::numeric_limits<double>::quiet_NaN();
    double phase3_error = std::numeric_limits<double>::quiet_NaN();
};

struct ReturnPlan {
    double T = 0.0;
    double L = 0.0;
    double c = 0.0;
    double d = 0.0;
    bool off_critical = false;
    std::optional<SteeringResult> phase1, phase3, local;
    Trajectory phase2;
    BoundarySignal glued_control;
    Trajectory glued_trajectory;
    Vec y0, yT;
    double hold_drift = 0.0;                 // max |y - (c+d)| on the middle third
    double joint_jumps[2] = {0.0, 0.0};      // L^2 jumps at T/3 and 2T/3
    double end_to_end_error = 0.0;
    double phase_tolerance = 0.0;            // largest absolute phase tolerance
    std::vector<PhaseAttempt> attempts;
    std::vector<std::string> notes;
};

struct PlanFailure : PlanError {
    PlanFailure(const std::string& msg, std::vector<PhaseAttempt> a) : PlanError(msg), attempts(std::move(a)) {}
    std::vector<PhaseAttempt> attempts;
    // phase results of the attempt with the smallest combined error, if any
    // attempt produced both
    std::optional<SteeringResult> best_phase1, best_phase3;
};

namespace detail {

inline Trajectory glue(const SpaceTimeGrid& g, const std::vector<const Trajectory*>& parts) {
    Trajectory out(g);
    int row = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto& v = parts[p]->values;
        const int skip = p == 0 ? 0 : 1;  // shared joint node keeps the earlier phase's value
        out.values.middleRows(row, v.rows() - skip) = v.bottomRows(v.rows() - skip);
        row += int(v.rows()) - skip;
    }
    return out;
}

}  // namespace detail

inline ReturnPlan plan_return(const Vec& y0, const Vec& yT, double T, const ReturnConfig& rc) {
    const auto& base = rc.steering;
    detail::check_drift(base.c, "return_method");
    if (!(T > 0.0)) throw PreconditionError("return_method", "T must be positive");
    if (base.basis.kind != BasisKind::Hat || !base.basis.closed_end)
        throw PreconditionError("return_method", "gluing needs controls that vanish at both phase ends");
    const double tau = T / 3.0;
    const int nt = base.nt;
    const SpaceTimeGrid full(base.L, 0.0, T, base.nx, 3 * nt);

    ReturnPlan plan;
    plan.T = T;
    plan.L = base.L;
    plan.c = base.c;
    plan.y0 = y0;
    plan.yT = yT;
    const Vec w = quadrature_weights(full);

    if (!is_critical(base.L, base.c).critical) {
        plan.off_critical = true;
        plan.notes.push_back("L is not critical: delegated to local steering around c over [0,T]");
        SteeringConfig sc = base;
        sc.nt = 3 * nt;
        auto r = local_steer_off_critical(y0, yT, base.c, T, sc);
        if (!r.meets_tolerance)
            throw PlanFailure("local steering missed the terminal tolerance (error " + std::to_string(r.terminal_error) +
                                  ")",
                              {});
        plan.glued_control = r.control;
        plan.glued_trajectory = r.trajectory;
        plan.end_to_end_error = l2_norm(r.trajectory.final_state() - yT, w);
        plan.phase_tolerance = base.terminal_tol * r.terminal_scale;
        plan.local = std::move(r);
        return plan;
    }

    const double d0 = std::isfinite(rc.d) ? rc.d : base.delta / 2.0;
    std::optional<SteeringResult> best1, best3;
    for (int attempt = 0; attempt <= base.max_restarts; ++attempt) {
        const double scale = std::ldexp(1.0, -attempt);
        SteeringConfig sc = base;
        sc.delta = base.delta * scale;
        PhaseAttempt at;
        at.d = d0 * scale;
        at.delta = sc.delta;
        auto run = [&](int which) -> std::optional<SteeringResult> {
            return which == 1 ? steer_to_constant(y0, at.d, tau, sc, 0.0)
                              : steer_from_constant(at.d, yT, tau, sc, 2.0 * tau);
        };
        std::optional<SteeringResult> p1, p3;
        auto f3 = std::async(std::launch::async, [&] { return run(3); });
        try {
            p1 = run(1);
            at.phase1 = p1->meets_tolerance ? "ok" : "terminal error above tolerance";
            at.phase1_error = p1->terminal_error;
        } catch (const Error& e) {
            at.phase1 = e.what();
        }
        try {
            p3 = f3.get();
            at.phase3 = p3->meets_tolerance ? "ok" : "terminal error above tolerance";
            at.phase3_error = p3->terminal_error;
        } catch (const Error& e) {
            at.phase3 = e.what();
        }
        plan.attempts.push_back(at);
        if (!(p1 && p3 && p1->meets_tolerance && p3->meets_tolerance)) {
            if (p1 && p3 &&
                (!best1 || p1->terminal_error + p3->terminal_error < best1->terminal_error + best3->terminal_error)) {
                best1 = std::move(p1);
                best3 = std::move(p3);
            }
            continue;
        }

        plan.d = at.d;
        const double cd = base.c + at.d;
        const SpaceTimeGrid g2(base.L, tau, 2.0 * tau, base.nx, nt);
        plan.phase2 = solve_nonlinear(Vec::Constant(base.nx + 1, cd), BoundarySignal(nt), Field(), Drift(1.0), g2)
                          .trajectory;
        plan.hold_drift = (plan.phase2.values.array() - cd).abs().maxCoeff();

        plan.glued_trajectory = detail::glue(full, {&p1->trajectory, &plan.phase2, &p3->trajectory});
        plan.glued_control = BoundarySignal(3 * nt);
        plan.glued_control.h2.head(nt + 1) = p1->control.h2;
        plan.glued_control.h2.tail(nt + 1) = p3->control.h2;
        plan.joint_jumps[0] = l2_norm(p1->trajectory.final_state() - plan.phase2.slice(0), w);
        plan.joint_jumps[1] = l2_norm(plan.phase2.final_state() - p3->trajectory.slice(0), w);
        plan.end_to_end_error = l2_norm(plan.glued_trajectory.final_state() - yT, w);
        plan.phase_tolerance =
            base.terminal_tol * std::max(p1->terminal_scale, p3->terminal_scale);
        plan.phase1 = std::move(p1);
        plan.phase3 = std::move(p3);
        if (attempt > 0) plan.notes.push_back("succeeded after " + std::to_string(attempt) + " restart(s)");
        if (plan.end_to_end_error >= rc.end_to_end_tol)
            plan.notes.push_back("end-to-end error above end_to_end_tol");
        return plan;
    }
    PlanFailure fail("no admissible d found after " + std::to_string(base.max_restarts) + " restart(s)",
                     plan.attempts);
    fail.best_phase1 = std::move(best1);
    fail.best_phase3 = std::move(best3);
    throw fail;
}

struct PlanAudit {
    double z_deviation = 0.0;
    double final_error = 0.0;
    double tolerance = 0.0;
    double phase_deviation[3] = {0.0, 0.0, 0.0};  // Z-norm deviation per third
    bool passed = false;
    Trajectory resimulated;
};

struct PlanAuditFailure : AuditFailure {
    PlanAuditFailure(const std::string& msg, PlanAudit a) : AuditFailure(msg), audit(std::move(a)) {}
    PlanAudit audit;
};

// One-pass re-simulation of the glued control from y0.  Throws
// PlanAuditFailure unless both the Z-norm deviation from the glued trajectory
// and the final-time error stay below 10x the phase tolerance.
inline PlanAudit verify_plan(const ReturnPlan& plan) {
    const auto& g = plan.glued_trajectory.grid;
    PlanAudit a;
    auto sol = solve_nonlinear(plan.y0, plan.glued_control, Field(), Drift(1.0), g, {1e-13, 200, 12, 6});
    a.resimulated = std::move(sol.trajectory);
    a.z_deviation = zt_distance(a.resimulated, plan.glued_trajectory);
    const Vec w = quadrature_weights(g);
    a.final_error = l2_norm(a.resimulated.final_state() - plan.yT, w);
    a.tolerance = 10.0 * std::max(plan.phase_tolerance, 1e-12);
    if (!plan.off_critical) {
        const int nt = g.nt / 3;
        for (int p = 0; p < 3; ++p) {
            const auto sg = detail::subgrid(g, p * nt, (p + 1) * nt);
            a.phase_deviation[p] =
                zt_norm(Trajectory(sg, a.resimulated.values.middleRows(p * nt, nt + 1) -
                                           plan.glued_trajectory.values.middleRows(p * nt, nt + 1)));
        }
    }
    a.passed = a.z_deviation < a.tolerance && a.final_error < a.tolerance;
    if (!a.passed) {
        char buf[256];
        std::snprintf(buf, sizeof buf,
                      "audit failed: Z deviation %.3e, final error %.3e, tolerance %.3e; per third %.3e %.3e %.3e",
                      a.z_deviation, a.final_error, a.tolerance, a.phase_deviation[0], a.phase_deviation[1],
                      a.phase_deviation[2]);
        throw PlanAuditFailure(buf, std::move(a));
    }
    return a;
}

}  // namespace kdvlab
