#pragma once

// Single boundary control h2 = u_x(L,t) (h1 = h3 = 0) for the linear system
// with constant drift.  Controls live in a finite basis of L^2(T0,T1);
// the input-to-final-state map is assembled column by column and inverted
// with a truncated SVD in the L^2 metrics of state and control.

#include <Eigen/Cholesky>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include "kdvlab/kdv_solver.hpp"

namespace kdvlab {

enum class BasisKind { PiecewiseConstant, Hat };

inline const char* to_string(BasisKind k) { return k == BasisKind::Hat ? "hat" : "piecewise_constant"; }

// Hat k is centred at T0 + (k+1) D with half-width D = (T1-T0)/count, so every
// basis function vanishes at T0.  With closed_end the spacing is
// (T1-T0)/(count+1) and the hats vanish at T1 as well, which is what gluing
// consecutive phases needs: a nodal control value at a joint is shared by the
// last step of one phase and the first step of the next.  Slot k of the
// piecewise-constant basis is [T0 + k D, T0 + (k+1) D), D = (T1-T0)/count.
struct ControlBasis {
    BasisKind kind = BasisKind::Hat;
    int count = 64;
    double T0 = 0.0;
    double T1 = 1.0;
    bool closed_end = false;  // hats only

    // count x (nt+1) nodal samples
    Mat samples(const SpaceTimeGrid& g) const {
        if (count < 1) throw ShapeError("linear_control", "basis count must be >= 1");
        const double D = (T1 - T0) / (kind == BasisKind::Hat && closed_end ? count + 1 : count);
        Mat S = Mat::Zero(count, g.nt + 1);
        for (int n = 0; n <= g.nt; ++n) {
            const double s = (g.t(n) - T0) / D;
            if (kind == BasisKind::Hat) {
                for (int k = 0; k < count; ++k) S(k, n) = std::max(0.0, 1.0 - std::abs(s - (k + 1)));
            } else {
                const int k = std::clamp(int(std::floor(s + 1e-9)), 0, count - 1);
                S(k, n) = 1.0;
            }
        }
        return S;
    }
};

struct ControlSolution {
    BoundarySignal signal;  // h2 only
    Vec coefficients;
    double residual = 0.0;           // ||final - target||_{L^2}
    double relative_residual = 0.0;  // residual / ||target|| (absolute when target = 0)
    double control_norm = 0.0;       // ||h2||_{L^2(T0,T1)}
    int rank = 0;
    bool ill_conditioned = false;    // sigma_min/sigma_max below the cutoff
};

class ControlOperator {
public:
    ControlOperator(double drift, const SpaceTimeGrid& grid, const ControlBasis& basis)
        : drift_(drift), grid_(grid), basis_(basis) {
        grid_.validate();
        if (std::abs(basis.T0 - grid.T0) > 1e-12 * std::max(1.0, std::abs(grid.T1)) ||
            std::abs(basis.T1 - grid.T1) > 1e-12 * std::max(1.0, std::abs(grid.T1)))
            throw ShapeError("linear_control", "basis horizon must equal the grid time span");
        stepper_ = std::make_shared<LinearStepper>(grid_, Drift(drift_));
        samples_ = basis_.samples(grid_);
        assemble();
    }

    double drift() const { return drift_; }
    const SpaceTimeGrid& grid() const { return grid_; }
    const ControlBasis& basis() const { return basis_; }
    const Mat& map() const { return map_; }          // (nx+1) x count, final states
    const Mat& samples() const { return samples_; }  // count x (nt+1)
    const Vec& singular_values() const { return sigma_; }
    const Mat& left_vectors() const { return U_; }    // in weighted state coordinates
    const Mat& right_vectors() const { return V_; }   // in whitened control coordinates
    const Vec& sqrt_weights() const { return sw_; }
    const LinearStepper& stepper() const { return *stepper_; }

    // Weighted map W^{1/2} G R^{-1}: orthonormal coordinates on both sides.
    const Mat& whitened() const { return Gt_; }

    Vec free_response(const Vec& u0) const { return stepper_->final_state(u0, Vec::Zero(grid_.nt + 1)); }

    // Least-norm coefficients c minimising ||G c - r||, truncated at
    // sigma > reg * sigma_max.
    Vec least_norm(const Vec& r, double reg, int* rank = nullptr) const {
        if (r.size() != grid_.nx + 1) throw ShapeError("linear_control", "target must have nx+1 entries");
        const double smax = sigma_.size() ? sigma_[0] : 0.0;
        Vec proj = U_.transpose() * sw_.cwiseProduct(r);
        Vec z = Vec::Zero(V_.cols());
        int k = 0;
        for (Eigen::Index i = 0; i < sigma_.size(); ++i)
            if (smax > 0.0 && sigma_[i] > reg * smax) {
                z[i] = proj[i] / sigma_[i];
                ++k;
            }
        if (rank) *rank = k;
        return R_.triangularView<Eigen::Upper>().solve(V_ * z);
    }

    Vec control_samples(const Vec& coeffs) const { return samples_.transpose() * coeffs; }

    double control_norm(const Vec& coeffs) const { return (R_.triangularView<Eigen::Upper>() * coeffs).norm(); }

private:
    void assemble() {
        const int K = basis_.count, N = grid_.nx;
        map_.resize(N + 1, K);
        const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
        const int nthreads = int(std::min<unsigned>(hw, unsigned(K)));
        // Each worker owns a stepper and fills a disjoint set of columns.
        std::vector<std::exception_ptr> errs(nthreads);
        {
            std::vector<std::jthread> pool;
            for (int w = 0; w < nthreads; ++w)
                pool.emplace_back([&, w] {
                    try {
                        const LinearStepper st(grid_, Drift(drift_));
                        const Vec zero = Vec::Zero(N + 1);
                        for (int k = w; k < K; k += nthreads)
                            map_.col(k) = st.final_state(zero, samples_.row(k).transpose());
                    } catch (...) {
                        errs[w] = std::current_exception();
                    }
                });
        }
        for (auto& e : errs)
            if (e) std::rethrow_exception(e);

        // control Gram matrix (trapezoid in time) = R^T R
        const double dt = grid_.dt();
        Vec tw = Vec::Constant(grid_.nt + 1, dt);
        tw[0] = tw[grid_.nt] = dt / 2;
        const Mat M = samples_ * tw.asDiagonal() * samples_.transpose();
        Eigen::LLT<Mat> llt(M);
        if (llt.info() != Eigen::Success)
            throw ShapeError("linear_control", "control basis is not resolved by the time grid");
        R_ = llt.matrixU();

        sw_ = quadrature_weights(grid_).cwiseSqrt();
        const Mat GR = R_.transpose().triangularView<Eigen::Lower>().solve(map_.transpose()).transpose();
        Gt_ = sw_.asDiagonal() * GR;
        Eigen::BDCSVD<Mat> svd(Gt_, Eigen::ComputeThinU | Eigen::ComputeThinV);
        sigma_ = svd.singularValues();
        U_ = svd.matrixU();
        V_ = svd.matrixV();
    }

    double drift_;
    SpaceTimeGrid grid_;
    ControlBasis basis_;
    std::shared_ptr<LinearStepper> stepper_;
    Mat samples_, map_, R_, Gt_, U_, V_;
    Vec sigma_, sw_;
};

inline ControlOperator build_control_operator(double drift, const SpaceTimeGrid& grid, const ControlBasis& basis) {
    return ControlOperator(drift, grid, basis);
}

inline ControlSolution make_solution(const ControlOperator& op, const Vec& coeffs, const Vec& r,
                                     const Vec& target, double reg, int rank) {
    const auto& g = op.grid();
    ControlSolution s;
    s.coefficients = coeffs;
    s.signal = BoundarySignal::from_h2(op.control_samples(coeffs));
    const Vec w = quadrature_weights(g);
    s.residual = l2_norm(op.map() * coeffs - r, w);
    const double tn = l2_norm(target, w);
    s.relative_residual = tn > 0.0 ? s.residual / tn : s.residual;
    s.control_norm = time_l2_norm(s.signal.h2, g.dt());
    s.rank = rank;
    const auto& sg = op.singular_values();
    s.ill_conditioned = sg.size() == 0 || sg[sg.size() - 1] < reg * sg[0];
    return s;
}

// Least-norm h2 steering u0 to u_tau over the operator's horizon.
inline ControlSolution solve_linear_control(const ControlOperator& op, const Vec& u0, const Vec& u_tau,
                                            double reg_threshold = 1e-10) {
    const int n = op.grid().nx + 1;
    if (u0.size() != n || u_tau.size() != n) throw ShapeError("linear_control", "states must have nx+1 entries");
    const Vec r = u_tau - op.free_response(u0);
    int rank = 0;
    const Vec c = op.least_norm(r, reg_threshold, &rank);
    return make_solution(op, c, r, u_tau, reg_threshold, rank);
}

struct Resolution {
    int nx = 128;
    int nt = 256;
    int basis_count = 64;
};

struct DefectMode {
    double sigma = 0.0;
    double ratio = 0.0;  // sigma / sigma_max
    Vec state;           // unit L^2 final-state direction
};

struct ReachabilityReport {
    double L = 0.0;
    double drift = 0.0;
    double sigma_min = 0.0;
    double sigma_max = 0.0;
    std::vector<double> sigma;
    std::vector<DefectMode> defect_modes;
    int state_modes = 0;
    double ratio() const { return sigma_max > 0.0 ? sigma_min / sigma_max : 0.0; }
};

struct ReachabilityOptions {
    double horizon = 1.0;
    // Number of cosine modes cos(k pi x / L), k < state_modes, onto which final
    // states are projected; 0 keeps the full discrete state.
    int state_modes = 4;
    BasisKind basis = BasisKind::Hat;
};

inline ReachabilityReport reachability_report(double L, double c, const Resolution& res, double threshold,
                                              const ReachabilityOptions& opt = {}) {
    if (!std::isfinite(c) || std::abs(c + 1.0) < 1e-14)
        throw DomainError("linear_control", "c = -1: the linearised system is not controllable for any L");
    const SpaceTimeGrid g(L, 0.0, opt.horizon, res.nx, res.nt);
    const ControlBasis basis{opt.basis, res.basis_count, 0.0, opt.horizon};
    const auto op = build_control_operator(1.0 + c, g, basis);

    const Vec& sw = op.sqrt_weights();
    Mat Qm;  // orthonormal state directions in weighted coordinates
    if (opt.state_modes > 0) {
        const Vec x = g.xs();
        Mat C(g.nx + 1, opt.state_modes);
        for (int k = 0; k < opt.state_modes; ++k)
            C.col(k) = sw.cwiseProduct((k * std::numbers::pi / L * x).array().cos().matrix());
        Eigen::HouseholderQR<Mat> qr(C);
        Qm = qr.householderQ() * Mat::Identity(g.nx + 1, opt.state_modes);
    } else {
        Qm = Mat::Identity(g.nx + 1, g.nx + 1);
    }
    const Mat P = Qm.transpose() * op.whitened();
    Eigen::BDCSVD<Mat> svd(P, Eigen::ComputeThinU);
    const Vec s = svd.singularValues();

    ReachabilityReport rep;
    rep.L = L;
    rep.drift = 1.0 + c;
    rep.state_modes = opt.state_modes;
    rep.sigma.assign(s.data(), s.data() + s.size());
    rep.sigma_max = s.size() ? s[0] : 0.0;
    rep.sigma_min = s.size() ? s[s.size() - 1] : 0.0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        const double ratio = rep.sigma_max > 0.0 ? s[i] / rep.sigma_max : 0.0;
        if (ratio < threshold) {
            DefectMode d;
            d.sigma = s[i];
            d.ratio = ratio;
            d.state = (Qm * svd.matrixU().col(i)).cwiseQuotient(sw);
            rep.defect_modes.push_back(std::move(d));
        }
    }
    return rep;
}

}  // namespace kdvlab
