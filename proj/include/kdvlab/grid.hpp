#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <variant>

#include "kdvlab/errors.hpp"

namespace kdvlab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
// (time, space) arrays, one row per time node
using Field = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SpaceTimeGrid {
    double L = 1.0;
    double T0 = 0.0;
    double T1 = 1.0;
    int nx = 8;
    int nt = 4;

    SpaceTimeGrid() = default;
    SpaceTimeGrid(double L_, double T0_, double T1_, int nx_, int nt_)
        : L(L_), T0(T0_), T1(T1_), nx(nx_), nt(nt_) {
        validate();
    }

    void validate() const {
        if (!(L > 0.0) || !std::isfinite(L)) throw ShapeError("kdv_solver", "grid: L must be positive");
        if (!(T1 > T0)) throw ShapeError("kdv_solver", "grid: T1 must exceed T0");
        if (nx < 8) throw ShapeError("kdv_solver", "grid: nx must be >= 8");
        if (nt < 1) throw ShapeError("kdv_solver", "grid: nt must be >= 1");
    }
    double dx() const { return L / nx; }
    double dt() const { return (T1 - T0) / nt; }
    double x(int i) const { return i * dx(); }
    double t(int n) const { return T0 + n * dt(); }
    int npts() const { return nx + 1; }
    Vec xs() const { return Vec::LinSpaced(nx + 1, 0.0, L); }
    bool operator==(const SpaceTimeGrid&) const = default;
};

struct Trajectory {
    SpaceTimeGrid grid;
    Field values;  // (nt+1) x (nx+1)

    Trajectory() = default;
    explicit Trajectory(const SpaceTimeGrid& g) : grid(g), values(Field::Zero(g.nt + 1, g.nx + 1)) {}
    Trajectory(const SpaceTimeGrid& g, Field v) : grid(g), values(std::move(v)) { check(); }

    void check() const {
        if (values.rows() != grid.nt + 1 || values.cols() != grid.nx + 1)
            throw ShapeError("kdv_solver", "trajectory shape does not match grid");
    }
    Vec slice(int n) const { return values.row(n).transpose(); }
    Vec final_state() const { return slice(grid.nt); }
};

// Boundary data (h1, h2, h3) = (u_xx(0,t), u_x(L,t), u_xx(L,t)) at the time nodes.
struct BoundarySignal {
    Vec h1, h2, h3;

    BoundarySignal() = default;
    explicit BoundarySignal(int nt) : h1(Vec::Zero(nt + 1)), h2(Vec::Zero(nt + 1)), h3(Vec::Zero(nt + 1)) {}
    static BoundarySignal from_h2(const Vec& h2) {
        BoundarySignal s(int(h2.size()) - 1);
        s.h2 = h2;
        return s;
    }
    int nt() const { return int(h2.size()) - 1; }
    void check(const SpaceTimeGrid& g) const {
        if (h1.size() != g.nt + 1 || h2.size() != g.nt + 1 || h3.size() != g.nt + 1)
            throw ShapeError("kdv_solver", "boundary signal length must be nt+1");
        if (!h1.allFinite() || !h2.allFinite() || !h3.allFinite())
            throw ShapeError("kdv_solver", "boundary signal has non-finite entries");
    }
    Eigen::Vector3d at(int n) const { return {h1[n], h2[n], h3[n]}; }
};

// Coefficient a in (a y)_x: a constant or a full field a(x,t).
struct Drift {
    std::variant<double, Field> value = 1.0;

    Drift() = default;
    Drift(double a) : value(a) {}  // NOLINT: implicit on purpose
    Drift(Field a) : value(std::move(a)) {}
    bool is_constant() const { return std::holds_alternative<double>(value); }
    double constant() const { return std::get<double>(value); }
    const Field& field() const { return std::get<Field>(value); }
};

// Spatial quadrature weights: Simpson when nx is even, trapezoid otherwise.
inline Vec quadrature_weights(int nx, double h) {
    Vec w(nx + 1);
    if (nx % 2 == 0) {
        for (int i = 0; i <= nx; ++i) w[i] = (i == 0 || i == nx) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        w *= h / 3.0;
    } else {
        w.setConstant(h);
        w[0] = w[nx] = h / 2;
    }
    return w;
}

inline Vec quadrature_weights(const SpaceTimeGrid& g) { return quadrature_weights(g.nx, g.dx()); }

inline double l2_norm(const Vec& u, const Vec& w) { return std::sqrt(std::max(0.0, w.dot(u.cwiseAbs2()))); }

// H^1 norm squared: L^2 part plus cellwise forward difference quotients.
inline double h1_norm_sq(const Vec& u, const Vec& w, double h) {
    double s = 0.0;
    for (Eigen::Index i = 0; i + 1 < u.size(); ++i) {
        const double q = (u[i + 1] - u[i]) / h;
        s += h * q * q;
    }
    return w.dot(u.cwiseAbs2()) + s;
}

// max_t ||y||_{L^2} + (int ||y||_{H^1}^2 dt)^{1/2}, trapezoid in time
inline double zt_norm(const Trajectory& y) {
    y.check();
    const auto& g = y.grid;
    const Vec w = quadrature_weights(g);
    double mx = 0.0, integ = 0.0;
    for (int n = 0; n <= g.nt; ++n) {
        const Vec u = y.slice(n);
        mx = std::max(mx, l2_norm(u, w));
        const double h1 = h1_norm_sq(u, w, g.dx());
        integ += (n == 0 || n == g.nt) ? 0.5 * h1 : h1;
    }
    return mx + std::sqrt(integ * g.dt());
}

inline double zt_distance(const Trajectory& a, const Trajectory& b) {
    if (!(a.grid == b.grid)) throw ShapeError("kdv_solver", "grids differ");
    return zt_norm(Trajectory(a.grid, a.values - b.values));
}

// L^2(T0,T1) norm of a nodal time signal (trapezoid).
inline double time_l2_norm(const Vec& s, double dt) {
    double acc = 0.0;
    for (Eigen::Index n = 0; n < s.size(); ++n) acc += (n == 0 || n + 1 == s.size() ? 0.5 : 1.0) * s[n] * s[n];
    return std::sqrt(acc * dt);
}

}  // namespace kdvlab
