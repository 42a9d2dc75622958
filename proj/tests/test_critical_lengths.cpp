#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "kdvlab/critical_lengths.hpp"

using namespace kdvlab;

namespace {

constexpr double pi = std::numbers::pi;

// Distinct lengths from the two defining formulas, by plain double loops.
std::vector<double> brute_force(double c, double lmax) {
    const int bound = int(std::ceil(lmax * std::sqrt(3.0 * (c + 1.0)) / (2.0 * pi))) + 1;
    std::vector<double> v;
    for (int m = 1; m <= bound; ++m)
        for (int l = 1; l <= bound; ++l) {
            const double x = 2.0 * pi * std::sqrt(double(m * m + m * l + l * l)) / std::sqrt(3.0 * (c + 1.0));
            if (x <= lmax) v.push_back(x);
        }
    for (int m = 1; m * pi / std::sqrt(c + 1.0) <= lmax; ++m) v.push_back(m * pi / std::sqrt(c + 1.0));
    std::sort(v.begin(), v.end());
    std::vector<double> out;
    for (double x : v)
        if (out.empty() || x - out.back() > 1e-9 * x) out.push_back(x);
    return out;
}

std::vector<double> lengths(const CriticalSet& s) {
    std::vector<double> v;
    for (const auto& m : s.members) v.push_back(m.length);
    return v;
}

}  // namespace

TEST(CriticalLengths, SmallSetAtZeroDrift) {
    const auto s = enumerate_critical(0.0, 7.0);
    ASSERT_EQ(s.members.size(), 2u);
    EXPECT_NEAR(s.members[0].length, pi, 1e-14);
    EXPECT_NEAR(s.members[1].length, 2 * pi, 1e-14);
    ASSERT_EQ(s.members[0].generators.size(), 1u);
    EXPECT_EQ(s.members[0].generators[0], (CriticalGenerator{Branch::OneIndex, 1, 0}));
    ASSERT_EQ(s.members[1].generators.size(), 2u);
    EXPECT_EQ(s.members[1].generators[0], (CriticalGenerator{Branch::TwoIndex, 1, 1}));
    EXPECT_EQ(s.members[1].generators[1], (CriticalGenerator{Branch::OneIndex, 2, 0}));
}

TEST(CriticalLengths, OnlyPiBelowThree) {
    const auto s = enumerate_critical(0.0, 3.0);
    ASSERT_EQ(s.members.size(), 0u);
    const auto s2 = enumerate_critical(0.0, 3.2);
    ASSERT_EQ(s2.members.size(), 1u);
    EXPECT_NEAR(s2.members[0].length, pi, 1e-14);
}

TEST(CriticalLengths, DriftThreeHalvesLengths) {
    const auto s = enumerate_critical(3.0, 4.0);
    ASSERT_EQ(s.members.size(), 2u);
    EXPECT_NEAR(s.members[0].length, pi / 2, 1e-14);
    EXPECT_NEAR(s.members[1].length, pi, 1e-14);
    EXPECT_EQ(s.members[1].generators.size(), 2u);
}

TEST(CriticalLengths, GeneratorValues) {
    EXPECT_NEAR((CriticalGenerator{Branch::TwoIndex, 1, 2}.value(0.5)), 2 * pi * std::sqrt(7.0) / std::sqrt(4.5),
                1e-13);
    EXPECT_NEAR((CriticalGenerator{Branch::OneIndex, 3, 0}.value(0.5)), 3 * pi / std::sqrt(1.5), 1e-13);
}

TEST(CriticalLengths, MatchesBruteForce) {
    for (double c : {0.0, 0.5, 3.0})
        for (double lmax : {1.0, 7.0, 20.0, 50.0}) {
            const auto got = lengths(enumerate_critical(c, lmax));
            const auto want = brute_force(c, lmax);
            ASSERT_EQ(got.size(), want.size()) << "c=" << c << " lmax=" << lmax;
            for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-10 * want[i]);
        }
}

TEST(CriticalLengths, RandomDriftsMatchBruteForce) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> cd(-0.9, 5.0), ld(1.0, 40.0);
    for (int k = 0; k < 50; ++k) {
        const double c = cd(rng), lmax = ld(rng);
        const auto got = lengths(enumerate_critical(c, lmax));
        const auto want = brute_force(c, lmax);
        ASSERT_EQ(got.size(), want.size());
        for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-10 * want[i]);
    }
}

TEST(CriticalLengths, MembersStrictlyIncreasingAndBounded) {
    const auto s = enumerate_critical(0.5, 30.0);
    for (std::size_t i = 0; i < s.members.size(); ++i) {
        EXPECT_LE(s.members[i].length, 30.0);
        if (i) EXPECT_GT(s.members[i].length, s.members[i - 1].length);
        for (const auto& g : s.members[i].generators) {
            EXPECT_GE(g.m, 1);
            if (g.branch == Branch::TwoIndex) EXPECT_GE(g.l, 1);
            EXPECT_NEAR(g.value(0.5), s.members[i].length, 1e-12 * s.members[i].length);
        }
    }
}

TEST(CriticalLengths, EnumerationMonotoneInBound) {
    const auto small = lengths(enumerate_critical(0.0, 12.0));
    const auto big = lengths(enumerate_critical(0.0, 25.0));
    for (double x : small) EXPECT_TRUE(std::find(big.begin(), big.end(), x) != big.end()) << x;
}

TEST(CriticalLengths, RejectsNonPhysicalDrift) {
    for (double c : {-1.0, -2.0, std::nan("")}) {
        try {
            enumerate_critical(c, 5.0);
            FAIL() << "no error for c=" << c;
        } catch (const DomainError& e) {
            EXPECT_EQ(e.code(), "critical_lengths.domain");
        }
    }
}

TEST(IsCritical, KnownLengths) {
    auto a = is_critical(2 * pi, 0.0, 1e-12);
    ASSERT_TRUE(a.critical);
    EXPECT_EQ(*a.generator, (CriticalGenerator{Branch::TwoIndex, 1, 1}));
    auto b = is_critical(pi, 0.0, 1e-12);
    ASSERT_TRUE(b.critical);
    EXPECT_EQ(*b.generator, (CriticalGenerator{Branch::OneIndex, 1, 0}));
    EXPECT_FALSE(is_critical(1.0, 0.0).critical);
    EXPECT_FALSE(is_critical(2.2 * pi, 0.0).critical);
}

TEST(IsCritical, EveryEnumeratedLengthIsCritical) {
    for (const auto& m : enumerate_critical(0.5, 30.0).members) EXPECT_TRUE(is_critical(m.length, 0.5).critical);
}

TEST(Perturbation, SeparationAtTwoPi) {
    const auto pa = perturbation_analysis(2 * pi, 0.0);
    EXPECT_EQ(pa.kase, PerturbationCase::TwoIndexCase);
    EXPECT_NEAR(pa.separation, 1.0 / 12.0, 1e-15);
    EXPECT_EQ(pa.base_key, 12);
    // c itself is a bad drift: (m,l) = (j,k)
    const auto bad = bad_drifts(pa, 100);
    EXPECT_TRUE(std::any_of(bad.begin(), bad.end(), [](double d) { return std::abs(d) < 1e-15; }));
}

TEST(Perturbation, SeparationAtPi) {
    const auto pa = perturbation_analysis(pi, 0.0);
    EXPECT_EQ(pa.kase, PerturbationCase::OneIndexCase);
    EXPECT_NEAR(pa.separation, 1.0 / 3.0, 1e-15);
}

TEST(Perturbation, NotCriticalRejected) {
    try {
        perturbation_analysis(2.2 * pi, 0.0);
        FAIL();
    } catch (const NotCriticalError& e) {
        EXPECT_EQ(e.code(), "critical_lengths.not_critical");
    }
}

// Bad drifts from the separation argument's explicit formulas, j = k = 1
// (L = 2 pi) and k = 1 (L = pi), c = 0.
TEST(Perturbation, BadDriftsMatchExplicitSets) {
    std::vector<double> ab1, ab2;
    for (int m = 1; m < 40; ++m) {
        for (int l = 1; l < 40; ++l) {
            ab1.push_back((m * m + m * l + l * l) / 3.0 - 1.0);
            ab2.push_back(4.0 * (m * m + m * l + l * l) / 3.0 - 1.0);
        }
        ab1.push_back(3.0 * m * m / 12.0 - 1.0);
        ab2.push_back(double(m * m) - 1.0);
    }
    for (auto* v : {&ab1, &ab2}) {
        std::sort(v->begin(), v->end());
        v->erase(std::unique(v->begin(), v->end(), [](double a, double b) { return std::abs(a - b) < 1e-12; }),
                 v->end());
        v->resize(20);
    }
    auto lib1 = bad_drifts(perturbation_analysis(2 * pi, 0.0), 400);
    auto lib2 = bad_drifts(perturbation_analysis(pi, 0.0), 400);
    for (int i = 0; i < 20; ++i) {
        EXPECT_NEAR(lib1[i], ab1[i], 1e-12);
        EXPECT_NEAR(lib2[i], ab2[i], 1e-12);
    }
    for (int i = 1; i < 20; ++i) {
        EXPECT_GE(lib1[i] - lib1[i - 1], 1.0 / 12.0 - 1e-12);
        EXPECT_GE(lib2[i] - lib2[i - 1], 1.0 / 3.0 - 1e-12);
    }
}

TEST(Perturbation, PuncturedIntervalIsSafe) {
    for (double L : {pi, 2 * pi, 2 * pi * std::sqrt(7.0 / 3.0)}) {
        for (double c : {0.0, 0.5}) {
            const double Lc = L / std::sqrt(c + 1.0);
            const auto pa = perturbation_analysis(Lc, c);
            for (int i = 1; i < 400; ++i) {
                const double d = c - pa.epsilon_c + 2.0 * pa.epsilon_c * i / 400.0;
                if (std::abs(d - c) < 1e-12 || d <= -1.0) continue;
                EXPECT_FALSE(is_critical(Lc, d).critical) << "L=" << Lc << " c=" << c << " d=" << d;
            }
        }
    }
}

TEST(SafeDrift, Examples) {
    const double d = safe_drift(2 * pi, 0.0, 0.5);
    EXPECT_NEAR(d, perturbation_analysis(2 * pi, 0.0).epsilon_c / 2, 1e-15);
    EXPECT_FALSE(is_critical(2 * pi, d).critical);
    EXPECT_LE(std::abs(safe_drift(pi, 0.0, 0.5)), 1.0 / 6.0 + 1e-15);
    EXPECT_THROW(safe_drift(2 * pi, 0.0, 0.0), DomainError);
    EXPECT_THROW(safe_drift(2 * pi, 0.0, 1.0), DomainError);
}

TEST(SafeDrift, RandomPreferencesAreNonCritical) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> p(1e-6, 1.0 - 1e-6);
    for (double L : {pi, 2 * pi})
        for (int k = 0; k < 100; ++k) EXPECT_FALSE(is_critical(L, safe_drift(L, 0.0, p(rng))).critical);
}
