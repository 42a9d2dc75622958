#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "kdvlab/kdv_solver.hpp"

using namespace kdvlab;

namespace {

constexpr double pi = std::numbers::pi;

Vec bump(const SpaceTimeGrid& g, double amp, double center, double width) {
    Vec y(g.nx + 1);
    for (int i = 0; i <= g.nx; ++i) y[i] = amp * std::exp(-std::pow((g.x(i) / g.L - center) / width, 2));
    return y;
}

// Smooth random data: a few low cosine modes in x and sines in t.
struct RandomData {
    Vec y0;
    BoundarySignal h;
    Field f;
};

RandomData smooth_data(const SpaceTimeGrid& g, std::mt19937_64& rng, double scale) {
    std::normal_distribution<double> n(0.0, scale);
    RandomData d{Vec::Zero(g.nx + 1), BoundarySignal(g.nt), Field::Zero(g.nt + 1, g.nx + 1)};
    for (int k = 0; k < 4; ++k) {
        const double a = n(rng), b = n(rng);
        for (int i = 0; i <= g.nx; ++i) d.y0[i] += a * std::cos(k * pi * g.x(i) / g.L);
        for (int m = 0; m <= g.nt; ++m) {
            const double s = std::sin((k + 1) * pi * (g.t(m) - g.T0) / (g.T1 - g.T0));
            d.h.h1[m] += 0.1 * a * s;
            d.h.h2[m] += b * s;
            d.h.h3[m] += 0.1 * b * s;
            for (int i = 0; i <= g.nx; ++i) d.f(m, i) += a * b * s * std::sin((k + 1) * g.x(i));
        }
    }
    return d;
}

// Simpson in x (nx even), forward differences for the derivative, trapezoid
// in t, summed slice by slice from the right end.
double z_norm_oracle(const Trajectory& y) {
    const auto& g = y.grid;
    const double h = g.dx();
    double mx = 0.0, integ = 0.0;
    for (int n = g.nt; n >= 0; --n) {
        double l2 = 0.0;
        for (int i = g.nx; i >= 2; i -= 2) {
            const double a = y.values(n, i - 2), b = y.values(n, i - 1), c = y.values(n, i);
            l2 += h / 3.0 * (a * a + 4.0 * b * b + c * c);
        }
        double dsq = 0.0;
        for (int i = g.nx - 1; i >= 0; --i) dsq += std::pow(y.values(n, i + 1) - y.values(n, i), 2) / h;
        mx = std::max(mx, std::sqrt(l2));
        integ += (n == 0 || n == g.nt ? 0.5 : 1.0) * g.dt() * (l2 + dsq);
    }
    return mx + std::sqrt(integ);
}

// u = exp(-t) sin(k x + 0.3) with matching boundary data and forcing
double mms_error(int N, double a) {
    const double L = 2 * pi, k = pi / L, ph = 0.3;
    const SpaceTimeGrid g(L, 0.0, 1.0, N, 2 * N);
    BoundarySignal h(g.nt);
    Field f(g.nt + 1, N + 1);
    for (int n = 0; n <= g.nt; ++n) {
        const double e = std::exp(-g.t(n));
        h.h1[n] = -e * k * k * std::sin(ph);
        h.h2[n] = e * k * std::cos(k * L + ph);
        h.h3[n] = -e * k * k * std::sin(k * L + ph);
        for (int i = 0; i <= N; ++i) {
            const double x = g.x(i);
            f(n, i) = e * (-std::sin(k * x + ph) + (a - k * k) * k * std::cos(k * x + ph));
        }
    }
    Vec y0(N + 1);
    for (int i = 0; i <= N; ++i) y0[i] = std::sin(k * g.x(i) + ph);
    const auto Y = solve_linear(y0, h, f, Drift(a), g);
    return l2_norm(Y.final_state() - std::exp(-1.0) * y0, quadrature_weights(g));
}

}  // namespace

TEST(Grid, RejectsBadShapes) {
    EXPECT_THROW(SpaceTimeGrid(0.0, 0, 1, 16, 16), ShapeError);
    EXPECT_THROW(SpaceTimeGrid(1.0, 1, 1, 16, 16), ShapeError);
    EXPECT_THROW(SpaceTimeGrid(1.0, 0, 1, 4, 16), ShapeError);
}

TEST(ZtNorm, ZeroAndConstant) {
    const SpaceTimeGrid g(3.0, 0.0, 2.0, 32, 20);
    EXPECT_EQ(zt_norm(Trajectory(g)), 0.0);
    Trajectory y(g);
    y.values.setConstant(0.25);
    EXPECT_NEAR(zt_norm(y), 0.25 * std::sqrt(3.0) + 0.25 * std::sqrt(6.0), 1e-14);
}

TEST(ZtNorm, MatchesIndependentQuadrature) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const SpaceTimeGrid g(5.0, 0.5, 2.0, 40, 30);
    Trajectory y(g);
    for (int n = 0; n <= g.nt; ++n)
        for (int i = 0; i <= g.nx; ++i) y.values(n, i) = u(rng);
    EXPECT_NEAR(zt_norm(y), z_norm_oracle(y), 1e-12 * z_norm_oracle(y));
}

TEST(LinearSolver, ZeroDataGivesZero) {
    const SpaceTimeGrid g(2 * pi, 0, 1, 32, 32);
    const auto Y = solve_linear(Vec::Zero(33), BoundarySignal(32), Field(), Drift(1.0), g);
    EXPECT_EQ(Y.values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(LinearSolver, ConstantIsSteady) {
    const SpaceTimeGrid g(2 * pi, 0, 2, 64, 64);
    for (double a : {1.0, 1.3}) {
        const auto Y = solve_linear(Vec::Constant(65, 0.7), BoundarySignal(64), Field(), Drift(a), g);
        EXPECT_LT((Y.values.array() - 0.7).abs().maxCoeff(), 1e-12);
    }
}

TEST(LinearSolver, ManufacturedSolutionSecondOrder) {
    for (double a : {1.0, 0.4}) {
        const double e1 = mms_error(32, a), e2 = mms_error(64, a), e3 = mms_error(128, a);
        EXPECT_GE(std::log2(e1 / e2), 1.9) << a;
        EXPECT_GE(std::log2(e2 / e3), 1.9) << a;
    }
}

TEST(LinearSolver, Superposition) {
    std::mt19937_64 rng(5);
    const SpaceTimeGrid g(2 * pi, 0, 1, 64, 80);
    const auto A = smooth_data(g, rng, 1.0), B = smooth_data(g, rng, 1.0);
    const double s = 2.5;
    BoundarySignal hs(g.nt);
    hs.h1 = A.h.h1 + s * B.h.h1;
    hs.h2 = A.h.h2 + s * B.h.h2;
    hs.h3 = A.h.h3 + s * B.h.h3;
    const LinearStepper st(g, Drift(1.0));
    const auto ya = st.solve(A.y0, A.h, A.f), yb = st.solve(B.y0, B.h, B.f);
    const auto ys = st.solve(A.y0 + s * B.y0, hs, A.f + s * B.f);
    const Field expect = ya.values + s * yb.values;
    EXPECT_LT((ys.values - expect).norm() / expect.norm(), 1e-10);
}

TEST(LinearSolver, Deterministic) {
    std::mt19937_64 rng(9);
    const SpaceTimeGrid g(2 * pi, 0, 1, 64, 64);
    const auto D = smooth_data(g, rng, 1.0);
    const auto a = solve_linear(D.y0, D.h, D.f, Drift(1.0), g);
    const auto b = solve_linear(D.y0, D.h, D.f, Drift(1.0), g);
    EXPECT_TRUE((a.values.array() == b.values.array()).all());
}

TEST(LinearSolver, UniformFieldDriftMatchesConstant) {
    std::mt19937_64 rng(13);
    const SpaceTimeGrid g(2 * pi, 0, 1, 64, 64);
    const auto D = smooth_data(g, rng, 1.0);
    const auto a = solve_linear(D.y0, D.h, D.f, Drift(1.2), g);
    const auto b = solve_linear(D.y0, D.h, D.f, Drift(Field(Field::Constant(65, 65, 1.2))), g);
    EXPECT_LT((a.values - b.values).cwiseAbs().maxCoeff(), 1e-11);
}

TEST(LinearSolver, FinalStateShortcutAgrees) {
    const SpaceTimeGrid g(2 * pi, 0, 1, 64, 64);
    Vec h2(65);
    for (int n = 0; n <= 64; ++n) h2[n] = std::sin(3.0 * g.t(n));
    const LinearStepper st(g, Drift(1.0));
    const Vec y0 = bump(g, 0.1, 0.5, 0.1);
    EXPECT_LT((st.final_state(y0, h2) - st.solve(y0, BoundarySignal::from_h2(h2)).final_state()).norm(), 1e-14);
}

TEST(LinearSolver, RejectsNonFiniteData) {
    const SpaceTimeGrid g(2 * pi, 0, 1, 32, 32);
    Vec y0 = Vec::Zero(33);
    y0[4] = std::nan("");
    try {
        solve_linear(y0, BoundarySignal(32), Field(), Drift(1.0), g);
        FAIL();
    } catch (const ShapeError& e) {
        EXPECT_EQ(e.code(), "kdv_solver.shape");
    }
    EXPECT_THROW(solve_linear(Vec::Zero(20), BoundarySignal(32), Field(), Drift(1.0), g), ShapeError);
}

TEST(LinearSolver, LipschitzConstantStableUnderRefinement) {
    std::vector<double> K;
    for (int N : {32, 64, 128}) {
        std::mt19937_64 rng(21);
        const SpaceTimeGrid g(2 * pi, 0, 1, N, N);
        double worst = 0.0;
        for (int k = 0; k < 4; ++k) {
            const auto A = smooth_data(g, rng, 0.02), B = smooth_data(g, rng, 0.02);
            const auto ya = solve_linear(A.y0, A.h, Field(), Drift(1.0), g);
            const auto yb = solve_linear(B.y0, B.h, Field(), Drift(1.0), g);
            BoundarySignal dh(g.nt);
            dh.h1 = A.h.h1 - B.h.h1;
            dh.h2 = A.h.h2 - B.h.h2;
            dh.h3 = A.h.h3 - B.h.h3;
            const double data = estimate_report(Trajectory(g), A.y0 - B.y0, dh, Field()).data_norm;
            worst = std::max(worst, zt_distance(ya, yb) / data);
        }
        K.push_back(worst);
    }
    EXPECT_LT(K[2], 2.0 * K[0]);
    EXPECT_GT(K[2], 0.5 * K[0]);
}

TEST(NonlinearSolver, ZeroInOneIteration) {
    const SpaceTimeGrid g(2 * pi, 0, 1, 32, 32);
    const auto s = solve_nonlinear(Vec::Zero(33), BoundarySignal(32), Field(), Drift(1.0), g);
    EXPECT_EQ(s.iterations, 1);
    EXPECT_EQ(s.trajectory.values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(NonlinearSolver, ConstantIsSteady) {
    const SpaceTimeGrid g(2 * pi, 0, 1, 64, 64);
    const auto s = solve_nonlinear(Vec::Constant(65, 0.01), BoundarySignal(64), Field(), Drift(1.0), g);
    EXPECT_LT((s.trajectory.values.array() - 0.01).abs().maxCoeff(), 1e-12);
}

TEST(NonlinearSolver, SmallDataContracts) {
    const SpaceTimeGrid g(2 * pi, 0, 1, 128, 256);
    Vec y0 = bump(g, 1.0, 0.5, 0.1);
    y0 *= 0.01 / l2_norm(y0, quadrature_weights(g));
    const auto s = solve_nonlinear(y0, BoundarySignal(256), Field(), Drift(1.0), g);
    ASSERT_FALSE(s.contraction_history.empty());
    for (double r : s.contraction_history) EXPECT_LT(r, 0.5);
}

TEST(NonlinearSolver, ReducesToLinearForTinyData) {
    const SpaceTimeGrid g(2 * pi, 0, 1, 64, 64);
    const Vec y0 = bump(g, 1e-8, 0.5, 0.1);
    const auto nl = solve_nonlinear(y0, BoundarySignal(64), Field(), Drift(1.0), g);
    const auto li = solve_linear(y0, BoundarySignal(64), Field(), Drift(1.0), g);
    EXPECT_LT(zt_distance(nl.trajectory, li), 1e-6 * zt_norm(li));
}

TEST(Bilinear, TrivialCases) {
    const SpaceTimeGrid g(2 * pi, 0, 1, 32, 32);
    Trajectory z(g), c(g);
    c.values.setConstant(0.3);
    EXPECT_EQ(bilinear_estimate_report(z, c).ratio, 0.0);
    EXPECT_NEAR(bilinear_estimate_report(c, c).lhs, 0.0, 1e-13);
}

TEST(Bilinear, RatioBoundedUnderRefinement) {
    std::vector<double> worst;
    for (int N : {32, 64, 128}) {
        std::mt19937_64 rng(17);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        const SpaceTimeGrid g(2 * pi, 0, 1, N, 32);
        double w = 0.0;
        for (int p = 0; p < 200; ++p) {
            Trajectory a(g), b(g);
            const double a1 = u(rng), a2 = u(rng), k1 = 1 + 3 * std::abs(u(rng)), k2 = 1 + 3 * std::abs(u(rng));
            for (int n = 0; n <= g.nt; ++n)
                for (int i = 0; i <= N; ++i) {
                    a.values(n, i) = a1 * std::cos(k1 * g.x(i) + g.t(n));
                    b.values(n, i) = a2 * std::sin(k2 * g.x(i) - g.t(n));
                }
            w = std::max(w, bilinear_estimate_report(a, b).ratio);
        }
        worst.push_back(w);
    }
    for (double w : worst) EXPECT_TRUE(std::isfinite(w));
    EXPECT_NEAR(worst[2], worst[1], 0.1 * worst[1]);
}

TEST(Energy, TrivialCases) {
    const SpaceTimeGrid g(2 * pi, 0, 1, 32, 32);
    EXPECT_EQ(energy_balance_report(Trajectory(g), BoundarySignal(32), Drift(1.0)), 0.0);
    const auto Y = solve_linear(Vec::Constant(33, 0.2), BoundarySignal(32), Field(), Drift(1.0), g);
    EXPECT_LT(energy_balance_report(Y, BoundarySignal(32), Drift(1.0)), 1e-13);
}

TEST(Energy, DefectSecondOrder) {
    std::vector<double> def;
    for (int N : {64, 128, 256}) {
        const SpaceTimeGrid g(2 * pi, 0, 1, N, 2 * N);
        BoundarySignal h(g.nt);
        for (int n = 0; n <= g.nt; ++n) h.h2[n] = 0.3 * std::sin(pi * g.t(n));
        const auto Y = solve_linear(bump(g, 1.0, 0.5, 0.1), h, Field(), Drift(1.0), g);
        def.push_back(energy_balance_report(Y, h, Drift(1.0)));
    }
    EXPECT_GE(std::log2(def[0] / def[1]), 1.9);
    EXPECT_GE(std::log2(def[1] / def[2]), 1.9);
}

TEST(Energy, RequiresHomogeneousOuterData) {
    const SpaceTimeGrid g(2 * pi, 0, 1, 32, 32);
    BoundarySignal h(32);
    h.h1[3] = 1.0;
    EXPECT_THROW(energy_balance_report(Trajectory(g), h, Drift(1.0)), PreconditionError);
}

TEST(Estimate, ReportsRatio) {
    const SpaceTimeGrid g(2 * pi, 0, 1, 64, 64);
    const Vec y0 = bump(g, 0.1, 0.5, 0.1);
    const auto Y = solve_linear(y0, BoundarySignal(64), Field(), Drift(1.0), g);
    const auto r = estimate_report(Y, y0, BoundarySignal(64), Field());
    EXPECT_NEAR(r.data_norm, l2_norm(y0, quadrature_weights(g)), 1e-15);
    EXPECT_NEAR(r.empirical_constant, zt_norm(Y) / r.data_norm, 1e-14);
}
