#pragma once

// Finite-difference solver for
//     u_t + (a u)_x + u_xxx (+ u u_x) = f   on (0,L)
//     u_xx(0,t) = h1,  u_x(L,t) = h2,  u_xx(L,t) = h3.
//
// Fourth-order centred stencils at every node 0..N.  Three ghost values on
// each side are eliminated through the boundary conditions plus polynomial
// extrapolation, so the semi-discrete system is u' = A u + B h + f.
// Time stepping is Crank-Nicolson with nodal sampling of h and f.

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <sstream>
#include <vector>

#include "kdvlab/grid.hpp"

namespace kdvlab {

using SpMat = Eigen::SparseMatrix<double>;
using Mat3 = Eigen::Matrix<double, Eigen::Dynamic, 3>;

namespace detail {

inline double binom(int n, int k) {
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

}  // namespace detail

// Discrete d/dx and d^3/dx^3 with boundary data folded in:
//   u_x   ~ D1p u + D1q h,   u_xxx ~ D3p u + D3q h,   h = (h1,h2,h3).
class SpatialOperator {
public:
    SpatialOperator(double L, int nx) : L_(L), nx_(nx) { build(); }

    int nx() const { return nx_; }
    double L() const { return L_; }
    const SpMat& D1p() const { return D1p_; }
    const SpMat& D3p() const { return D3p_; }
    const Mat3& D1q() const { return D1q_; }
    const Mat3& D3q() const { return D3q_; }

    Vec dx(const Vec& u, const Eigen::Vector3d& h) const { return D1p_ * u + D1q_ * h; }

    // Ghost values u_{-3},u_{-2},u_{-1},u_{N+1},u_{N+2},u_{N+3}.
    Eigen::Matrix<double, 6, 1> ghosts(const Vec& u, const Eigen::Vector3d& h) const {
        return Gu_ * u + Gb_ * h;
    }

private:
    void build() {
        const int N = nx_;
        const double h = L_ / N;
        // ghost slots: -3,-2,-1 -> 0,1,2 ; N+1,N+2,N+3 -> 3,4,5
        auto gslot = [N](int j) -> int {
            if (j < 0) return j + 3;
            if (j > N) return j - N + 2;
            return -1;
        };
        Eigen::Matrix<double, 6, 6> Eg = Eigen::Matrix<double, 6, 6>::Zero();
        Mat Eu = Mat::Zero(6, N + 1);
        Eigen::Matrix<double, 6, 3> Eb = Eigen::Matrix<double, 6, 3>::Zero();
        auto put = [&](int row, int j, double coef) {
            const int s = gslot(j);
            if (s >= 0)
                Eg(row, s) += coef;
            else
                Eu(row, j) -= coef;
        };
        const std::array<double, 5> c2{-1, 16, -30, 16, -1};
        // u_xx(0) = h1
        for (int k = 0; k < 5; ++k) put(0, -2 + k, c2[k] / (12 * h * h));
        Eb(0, 0) = 1;
        // sixth differences vanish, anchored at u_{-3} and u_{-2}
        for (int r = 1; r <= 2; ++r) {
            const int start = r == 1 ? -3 : -2;
            for (int k = 0; k <= 6; ++k) put(r, start + k, ((k % 2) ? -1.0 : 1.0) * detail::binom(6, k));
        }
        // u_x(L) = h2
        const std::array<double, 5> c1{1, -8, 0, 8, -1};
        for (int k = 0; k < 5; ++k)
            if (c1[k] != 0) put(3, N - 2 + k, c1[k] / (12 * h));
        Eb(3, 1) = 1;
        // u_xx(L) = h3
        for (int k = 0; k < 5; ++k) put(4, N - 2 + k, c2[k] / (12 * h * h));
        Eb(4, 2) = 1;
        // fifth difference vanishes, anchored at u_{N+3}
        for (int k = 0; k <= 5; ++k) put(5, N + 3 - k, ((k % 2) ? -1.0 : 1.0) * detail::binom(5, k));

        const auto lu = Eg.fullPivLu();
        Gu_ = lu.solve(Eu);
        Gb_ = lu.solve(Eb);

        // Extended vector X = [u_{-3} .. u_{N+3}] = P u + Q h.
        std::vector<Eigen::Triplet<double>> tp;
        Mat Q = Mat::Zero(N + 7, 3);
        for (int j = 0; j <= N; ++j) tp.emplace_back(j + 3, j, 1.0);
        for (int j : {-3, -2, -1, N + 1, N + 2, N + 3}) {
            const int s = gslot(j);
            for (int i = 0; i <= N; ++i)
                if (Gu_(s, i) != 0.0) tp.emplace_back(j + 3, i, Gu_(s, i));
            Q.row(j + 3) = Gb_.row(s);
        }
        SpMat P(N + 7, N + 1);
        P.setFromTriplets(tp.begin(), tp.end());

        const std::array<double, 5> d1{1, -8, 0, 8, -1};
        const std::array<double, 7> d3{1, -8, 13, 0, -13, 8, -1};
        std::vector<Eigen::Triplet<double>> t1, t3;
        for (int i = 0; i <= N; ++i) {
            for (int k = 0; k < 5; ++k)
                if (d1[k] != 0) t1.emplace_back(i, i + 3 - 2 + k, d1[k] / (12 * h));
            for (int k = 0; k < 7; ++k)
                if (d3[k] != 0) t3.emplace_back(i, i + 3 - 3 + k, d3[k] / (8 * h * h * h));
        }
        SpMat D1(N + 1, N + 7), D3(N + 1, N + 7);
        D1.setFromTriplets(t1.begin(), t1.end());
        D3.setFromTriplets(t3.begin(), t3.end());
        D1p_ = (D1 * P).pruned();
        D3p_ = (D3 * P).pruned();
        D1q_ = D1 * Q;
        D3q_ = D3 * Q;
    }

    double L_;
    int nx_;
    Mat Gu_;
    Eigen::Matrix<double, 6, 3> Gb_;
    SpMat D1p_, D3p_;
    Mat3 D1q_, D3q_;
};

// Fourth-order first derivative of nodal data, one-sided near the ends.
inline Vec dx4(const Vec& y, double h) {
    const Eigen::Index N = y.size() - 1;
    Vec d(N + 1);
    for (Eigen::Index i = 2; i <= N - 2; ++i) d[i] = (-y[i + 2] + 8 * y[i + 1] - 8 * y[i - 1] + y[i - 2]) / (12 * h);
    const double c0[5] = {-25, 48, -36, 16, -3};
    const double c1[5] = {-3, -10, 18, -6, 1};
    double a0 = 0, a1 = 0, b0 = 0, b1 = 0;
    for (int k = 0; k < 5; ++k) {
        a0 += c0[k] * y[k];
        a1 += c1[k] * y[k];
        b0 += c0[k] * y[N - k];
        b1 += c1[k] * y[N - k];
    }
    d[0] = a0 / (12 * h);
    d[1] = a1 / (12 * h);
    d[N] = -b0 / (12 * h);
    d[N - 1] = -b1 / (12 * h);
    return d;
}

// Crank-Nicolson integrator for u' = A u + B h + f on a fixed grid.
class LinearStepper {
public:
    LinearStepper(const SpaceTimeGrid& grid, const Drift& a)
        : grid_(grid), op_(grid.L, grid.nx), drift_(a) {
        grid_.validate();
        if (!a.is_constant()) {
            const auto& F = a.field();
            if (F.rows() != grid.nt + 1 || F.cols() != grid.nx + 1)
                throw ShapeError("kdv_solver", "drift field shape does not match grid");
            if (!F.allFinite()) throw ShapeError("kdv_solver", "drift field has non-finite entries");
            return;
        }
        const double av = a.constant();
        if (!std::isfinite(av)) throw ShapeError("kdv_solver", "drift must be finite");
        A_ = -(av * op_.D1p() + op_.D3p());
        B_ = -(av * op_.D1q() + op_.D3q());
        factor(A_, 0);
    }

    const SpaceTimeGrid& grid() const { return grid_; }
    const SpatialOperator& op() const { return op_; }

    // f: empty (zero) or (nt+1) x (nx+1).  Rows of the result are time slices.
    Trajectory solve(const Vec& y0, const BoundarySignal& h, const Field& f = Field()) const {
        const int N = grid_.nx, nt = grid_.nt;
        if (y0.size() != N + 1) throw ShapeError("kdv_solver", "initial state must have nx+1 entries");
        if (!y0.allFinite()) throw ShapeError("kdv_solver", "initial state has non-finite entries");
        h.check(grid_);
        const bool has_f = f.size() > 0;
        if (has_f && (f.rows() != nt + 1 || f.cols() != N + 1))
            throw ShapeError("kdv_solver", "forcing shape does not match grid");
        if (has_f && !f.allFinite()) throw ShapeError("kdv_solver", "forcing has non-finite entries");

        const double dt = grid_.dt();
        Trajectory Y(grid_);
        Y.values.row(0) = y0.transpose();
        Vec u = y0, rhs(N + 1);
        if (drift_.is_constant()) {
            for (int n = 0; n < nt; ++n) {
                rhs = u + 0.5 * dt * (A_ * u + B_ * (h.at(n) + h.at(n + 1)));
                if (has_f) rhs += 0.5 * dt * (f.row(n) + f.row(n + 1)).transpose();
                u = lu_.solve(rhs);
                store(Y, u, n + 1);
            }
            return Y;
        }
        SpMat An = variable_A(0);
        Mat3 Bn = variable_B(0);
        for (int n = 0; n < nt; ++n) {
            SpMat An1 = variable_A(n + 1);
            Mat3 Bn1 = variable_B(n + 1);
            rhs = u + 0.5 * dt * (An * u + Bn * h.at(n) + Bn1 * h.at(n + 1));
            if (has_f) rhs += 0.5 * dt * (f.row(n) + f.row(n + 1)).transpose();
            factor(An1, n + 1);
            u = lu_.solve(rhs);
            store(Y, u, n + 1);
            An = std::move(An1);
            Bn = std::move(Bn1);
        }
        return Y;
    }

    // Only the final slice; cheaper for control-map assembly.
    Vec final_state(const Vec& y0, const Vec& h2) const {
        if (!drift_.is_constant()) {
            BoundarySignal s = BoundarySignal::from_h2(h2);
            return solve(y0, s).final_state();
        }
        const double dt = grid_.dt();
        const Eigen::VectorXd b = B_.col(1);
        Vec u = y0;
        for (int n = 0; n < grid_.nt; ++n) {
            Vec rhs = u + 0.5 * dt * (A_ * u + b * (h2[n] + h2[n + 1]));
            u = lu_.solve(rhs);
        }
        if (!u.allFinite()) throw BlowUpError("non-finite final state", grid_.nt);
        return u;
    }

private:
    void factor(const SpMat& A, int step) const {
        SpMat I(A.rows(), A.cols());
        I.setIdentity();
        SpMat M = I - 0.5 * grid_.dt() * A;
        M.makeCompressed();
        lu_.compute(M);
        if (lu_.info() != Eigen::Success)
            throw SingularSystemError("implicit step operator is singular at step " + std::to_string(step), step);
    }

    SpMat variable_A(int n) const {
        const Vec a = drift_.field().row(n).transpose();
        const Vec ax = dx4(a, grid_.dx());
        SpMat Da(a.size(), a.size()), Dax(a.size(), a.size());
        std::vector<Eigen::Triplet<double>> ta, tx;
        for (Eigen::Index i = 0; i < a.size(); ++i) {
            ta.emplace_back(i, i, a[i]);
            tx.emplace_back(i, i, ax[i]);
        }
        Da.setFromTriplets(ta.begin(), ta.end());
        Dax.setFromTriplets(tx.begin(), tx.end());
        return -(SpMat(Da * op_.D1p()) + Dax + op_.D3p());
    }
    Mat3 variable_B(int n) const {
        const Vec a = drift_.field().row(n).transpose();
        return -(a.asDiagonal() * op_.D1q() + op_.D3q());
    }

    void store(Trajectory& Y, const Vec& u, int n) const {
        if (!u.allFinite()) {
            std::ostringstream os;
            os << "non-finite values at time step " << n << " (t = " << grid_.t(n)
               << "); max |u| at previous step = " << Y.values.row(n - 1).cwiseAbs().maxCoeff();
            throw BlowUpError(os.str(), n);
        }
        Y.values.row(n) = u.transpose();
    }

    SpaceTimeGrid grid_;
    SpatialOperator op_;
    Drift drift_;
    SpMat A_;
    Mat3 B_;
    mutable Eigen::SparseLU<SpMat> lu_;
};

inline Trajectory solve_linear(const Vec& y0, const BoundarySignal& h, const Field& f, const Drift& a,
                               const SpaceTimeGrid& grid) {
    return LinearStepper(grid, a).solve(y0, h, f);
}

// Discrete u_x at every node and time, using the boundary data of h.
inline Field space_derivative(const Trajectory& y, const BoundarySignal& h, const SpatialOperator& op) {
    Field d(y.values.rows(), y.values.cols());
    for (Eigen::Index n = 0; n < y.values.rows(); ++n)
        d.row(n) = op.dx(y.slice(int(n)), h.at(int(n))).transpose();
    return d;
}

struct NonlinearSolution {
    Trajectory trajectory;
    int iterations = 0;        // largest Picard count over the time slabs
    int total_iterations = 0;  // summed over slabs
    int slabs = 0;
    std::vector<double> updates;              // ||y^{k+1}-y^k||_Z per iteration
    std::vector<double> contraction_history;  // successive update ratios
};

struct NonlinearOptions {
    double tol = 1e-12;
    int max_iter = 100;
    int initial_slabs = 4;
    int max_halvings = 6;
};

namespace detail {

inline SpaceTimeGrid subgrid(const SpaceTimeGrid& g, int n0, int n1) {
    SpaceTimeGrid s = g;
    s.T0 = g.t(n0);
    s.T1 = g.t(n1);
    s.nt = n1 - n0;
    return s;
}

inline BoundarySignal subsignal(const BoundarySignal& h, int n0, int n1) {
    BoundarySignal s;
    s.h1 = h.h1.segment(n0, n1 - n0 + 1);
    s.h2 = h.h2.segment(n0, n1 - n0 + 1);
    s.h3 = h.h3.segment(n0, n1 - n0 + 1);
    return s;
}

inline Field subrows(const Field& f, int n0, int n1) {
    if (f.size() == 0) return Field();
    return f.middleRows(n0, n1 - n0 + 1);
}

}  // namespace detail

// Picard iteration y <- solve_linear(y0, h, f - y y_x, a) on consecutive time
// slabs.  Slabs are halved (up to max_halvings times) when a slab fails.
inline NonlinearSolution solve_nonlinear(const Vec& y0, const BoundarySignal& h, const Field& f, const Drift& a,
                                         const SpaceTimeGrid& grid, const NonlinearOptions& opt = {}) {
    if (!(opt.tol > 0.0)) throw PreconditionError("kdv_solver", "tol must be positive");
    h.check(grid);
    if (y0.size() != grid.nx + 1) throw ShapeError("kdv_solver", "initial state must have nx+1 entries");
    std::string last_failure;
    int slabs = std::max(1, opt.initial_slabs);
    for (int attempt = 0; attempt <= opt.max_halvings; ++attempt, slabs *= 2) {
        const int S = std::min(slabs, grid.nt);
        NonlinearSolution out;
        out.trajectory = Trajectory(grid);
        out.trajectory.values.row(0) = y0.transpose();
        out.slabs = S;
        bool failed = false;
        for (int s = 0; s < S && !failed; ++s) {
            const int n0 = int(std::llround(double(s) * grid.nt / S));
            const int n1 = int(std::llround(double(s + 1) * grid.nt / S));
            const auto g = detail::subgrid(grid, n0, n1);
            const auto hs = detail::subsignal(h, n0, n1);
            const Field fs = detail::subrows(f, n0, n1);
            Drift as = a.is_constant() ? a : Drift(Field(detail::subrows(a.field(), n0, n1)));
            const LinearStepper st(g, as);
            const Vec start = out.trajectory.slice(n0);

            Trajectory y(g);
            for (int n = 0; n <= g.nt; ++n) y.values.row(n) = start.transpose();
            double prev = -1.0;
            bool ok = false;
            int it = 0;
            try {
                while (it < opt.max_iter) {
                    ++it;
                    Field F = -(y.values.array() * space_derivative(y, hs, st.op()).array()).matrix();
                    if (fs.size()) F += fs;
                    Trajectory ynew = st.solve(start, hs, F);
                    const double upd = zt_distance(ynew, y);
                    if (!std::isfinite(upd)) break;
                    out.updates.push_back(upd);
                    if (prev > 0.0) out.contraction_history.push_back(upd / prev);
                    prev = upd;
                    y = std::move(ynew);
                    if (upd < opt.tol) {
                        ok = true;
                        break;
                    }
                }
            } catch (const BlowUpError& e) {
                last_failure = e.what();
            }
            out.total_iterations += it;
            out.iterations = std::max(out.iterations, it);
            if (!ok) {
                failed = true;
                if (last_failure.empty())
                    last_failure = "slab " + std::to_string(s) + " did not converge in " + std::to_string(it) +
                                   " iterations";
                break;
            }
            out.trajectory.values.middleRows(n0, n1 - n0 + 1) = y.values;
        }
        if (!failed) return out;
    }
    throw NoConvergenceError("kdv_solver", "Picard iteration failed after slab halving: " + last_failure);
}

// Empirical ratio ||y||_Z / (||y0|| + ||h|| + ||f||_{L1 L2}).
struct EstimateReport {
    double zt_norm_of_solution = 0.0;
    double data_norm = 0.0;
    double empirical_constant = 0.0;
};

inline EstimateReport estimate_report(const Trajectory& y, const Vec& y0, const BoundarySignal& h, const Field& f) {
    const auto& g = y.grid;
    const Vec w = quadrature_weights(g);
    double fn = 0.0;
    if (f.size()) {
        for (int n = 0; n <= g.nt; ++n)
            fn += (n == 0 || n == g.nt ? 0.5 : 1.0) * l2_norm(f.row(n).transpose(), w);
        fn *= g.dt();
    }
    EstimateReport r;
    r.zt_norm_of_solution = zt_norm(y);
    r.data_norm = l2_norm(y0, w) + time_l2_norm(h.h1, g.dt()) + time_l2_norm(h.h2, g.dt()) +
                  time_l2_norm(h.h3, g.dt()) + fn;
    r.empirical_constant = r.data_norm > 0.0 ? r.zt_norm_of_solution / r.data_norm : 0.0;
    return r;
}

struct BilinearReport {
    double lhs = 0.0;         // int ||u v_x||_{L2} dt
    double rhs_factor = 0.0;  // (T^{1/2}+T^{1/3}) ||u||_Z ||v||_Z
    double ratio = 0.0;
};

inline BilinearReport bilinear_estimate_report(const Trajectory& u, const Trajectory& v) {
    if (!(u.grid == v.grid)) throw ShapeError("kdv_solver", "bilinear report needs matching grids");
    const auto& g = u.grid;
    const Vec w = quadrature_weights(g);
    double lhs = 0.0;
    for (int n = 0; n <= g.nt; ++n) {
        const Vec p = u.slice(n).cwiseProduct(dx4(v.slice(n), g.dx()));
        lhs += (n == 0 || n == g.nt ? 0.5 : 1.0) * l2_norm(p, w);
    }
    lhs *= g.dt();
    const double T = g.T1 - g.T0;
    BilinearReport r;
    r.lhs = lhs;
    r.rhs_factor = (std::sqrt(T) + std::cbrt(T)) * zt_norm(u) * zt_norm(v);
    r.ratio = r.rhs_factor > 0.0 ? lhs / r.rhs_factor : 0.0;
    return r;
}

// Largest gap, over time nodes, between E(t_n) - E(t_0) and the trapezoid
// integral of the boundary flux, with E = ||y||^2/2 and flux
//   a/2 (y(0)^2 - y(L)^2) + 1/2 (y_x(L)^2 - y_x(0)^2).
inline double energy_balance_report(const Trajectory& y, const BoundarySignal& h, const Drift& a) {
    const auto& g = y.grid;
    h.check(g);
    if (!a.is_constant()) throw PreconditionError("kdv_solver", "energy balance needs a constant drift");
    if (h.h1.cwiseAbs().maxCoeff() != 0.0 || h.h3.cwiseAbs().maxCoeff() != 0.0)
        throw PreconditionError("kdv_solver", "energy balance needs h1 = h3 = 0");
    const double av = a.constant();
    const SpatialOperator op(g.L, g.nx);
    const Vec w = quadrature_weights(g);
    auto energy = [&](int n) { return 0.5 * w.dot(y.slice(n).cwiseAbs2()); };
    auto flux = [&](int n) {
        const Vec u = y.slice(n);
        const Vec ux = op.dx(u, h.at(n));
        return 0.5 * av * (u[0] * u[0] - u[g.nx] * u[g.nx]) + 0.5 * (ux[g.nx] * ux[g.nx] - ux[0] * ux[0]);
    };
    const double e0 = energy(0);
    double acc = 0.0, worst = 0.0, fprev = flux(0);
    for (int n = 1; n <= g.nt; ++n) {
        const double fn = flux(n);
        acc += 0.5 * g.dt() * (fprev + fn);
        worst = std::max(worst, std::abs(energy(n) - e0 - acc));
        fprev = fn;
    }
    return worst;
}

}  // namespace kdvlab
