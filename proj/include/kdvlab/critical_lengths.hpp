#pragma once

// Critical lengths R_c and their behaviour under a change of drift.
//
// Every element of R_c is written as  pi/sqrt(3(c+1)) * sqrt(q)  with an
// integer key q:  q = 4(m^2+ml+l^2) for the two-index branch, q = 3m^2 for
// the one-index branch.  Coincidences between branches are then integer
// equalities, and the drifts d with L in R_d are  (c+1) q / q_L - 1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "kdvlab/errors.hpp"

namespace kdvlab {

enum class Branch { TwoIndex, OneIndex };

inline const char* to_string(Branch b) { return b == Branch::TwoIndex ? "two_index" : "one_index"; }

struct CriticalGenerator {
    Branch branch = Branch::OneIndex;
    int m = 1;
    int l = 0;  // unused for OneIndex

    std::int64_t key() const {
        const std::int64_t mm = m, ll = l;
        return branch == Branch::TwoIndex ? 4 * (mm * mm + mm * ll + ll * ll) : 3 * mm * mm;
    }
    double value(double c) const {
        if (branch == Branch::TwoIndex) {
            const double n = double(m) * m + double(m) * l + double(l) * l;
            return 2.0 * std::numbers::pi * std::sqrt(n) / std::sqrt(3.0 * (c + 1.0));
        }
        return m * std::numbers::pi / std::sqrt(c + 1.0);
    }
    bool operator==(const CriticalGenerator&) const = default;
};

struct CriticalMember {
    double length = 0.0;
    std::int64_t key = 0;
    std::vector<CriticalGenerator> generators;  // two-index first, then one-index
};

struct CriticalSet {
    double c = 0.0;
    double l_max = 0.0;
    std::vector<CriticalMember> members;
};

namespace detail {

inline void check_drift(double c, const char* module = "critical_lengths") {
    if (!std::isfinite(c) || c <= -1.0)
        throw DomainError(module, "drift c must satisfy c > -1 (got " + std::to_string(c) + ")");
}

// Is n = m^2+ml+l^2 for some m,l >= 1?  Returns the pair with m <= l.
inline std::optional<std::pair<int, int>> two_index_pair(std::int64_t n) {
    for (std::int64_t m = 1; 3 * m * m <= n; ++m) {
        const std::int64_t disc = 4 * n - 3 * m * m;
        auto s = static_cast<std::int64_t>(std::llround(std::sqrt(double(disc))));
        while (s * s > disc) --s;
        while ((s + 1) * (s + 1) <= disc) ++s;
        if (s * s != disc || (s - m) % 2 != 0) continue;
        const std::int64_t l = (s - m) / 2;
        if (l >= m) return std::pair<int, int>(int(m), int(l));
    }
    return std::nullopt;
}

inline std::optional<int> one_index_m(std::int64_t q) {
    if (q % 3 != 0) return std::nullopt;
    const std::int64_t s = q / 3;
    auto r = static_cast<std::int64_t>(std::llround(std::sqrt(double(s))));
    if (r >= 1 && r * r == s) return int(r);
    return std::nullopt;
}

// q belongs to the key set {4n : n = m^2+ml+l^2} U {3m^2}.
inline bool is_key(std::int64_t q) {
    if (q <= 0) return false;
    if (one_index_m(q)) return true;
    return q % 4 == 0 && two_index_pair(q / 4).has_value();
}

inline double length_scale(double c) { return std::numbers::pi / std::sqrt(3.0 * (c + 1.0)); }

}  // namespace detail

// All members of R_c in (0, l_max], merged across branches.
inline CriticalSet enumerate_critical(double c, double l_max) {
    detail::check_drift(c);
    if (!(l_max > 0.0)) throw DomainError("critical_lengths", "l_max must be positive");

    std::map<std::int64_t, CriticalMember> by_key;
    auto add = [&](const CriticalGenerator& g) {
        const double v = g.value(c);
        if (v > l_max) return false;
        auto& mem = by_key[g.key()];
        mem.key = g.key();
        mem.length = detail::length_scale(c) * std::sqrt(double(g.key()));
        mem.generators.push_back(g);
        return true;
    };
    for (int m = 1;; ++m) {
        if (!add({Branch::TwoIndex, m, m})) break;
        for (int l = m + 1; add({Branch::TwoIndex, m, l}); ++l) {}
    }
    for (int m = 1; add({Branch::OneIndex, m, 0}); ++m) {}

    CriticalSet out{c, l_max, {}};
    for (auto& [k, mem] : by_key) {
        std::stable_sort(mem.generators.begin(), mem.generators.end(),
                         [](const auto& a, const auto& b) { return a.branch < b.branch; });
        out.members.push_back(std::move(mem));
    }
    return out;
}

struct CriticalCheck {
    bool critical = false;
    std::optional<CriticalGenerator> generator;
    std::optional<CriticalMember> member;
};

// Two-index generators are preferred as witnesses.
inline CriticalCheck is_critical(double L, double c, double tol = 1e-9) {
    detail::check_drift(c);
    if (!(L > 0.0) || !std::isfinite(L)) throw DomainError("critical_lengths", "L must be positive");
    if (tol < 0.0) throw DomainError("critical_lengths", "tol must be non-negative");
    CriticalCheck out;
    const auto set = enumerate_critical(c, L + tol + 1e-12 * L);
    for (const auto& mem : set.members) {
        if (std::abs(mem.length - L) <= tol) {
            out.critical = true;
            out.generator = mem.generators.front();
            out.member = mem;
            return out;
        }
    }
    return out;
}

enum class PerturbationCase { TwoIndexCase, OneIndexCase };

struct PerturbationAnalysis {
    double c = 0.0;
    double L = 0.0;
    PerturbationCase kase = PerturbationCase::TwoIndexCase;
    CriticalGenerator base_generator;
    std::int64_t base_key = 0;
    double separation = 0.0;
    double epsilon_c = 0.0;
};

// Drift d whose critical set contains L, from the integer key q.
inline double drift_for_key(const PerturbationAnalysis& pa, std::int64_t q) {
    return (pa.c + 1.0) * double(q) / double(pa.base_key) - 1.0;
}

inline PerturbationAnalysis perturbation_analysis(double L, double c) {
    const auto chk = is_critical(L, c);
    if (!chk.critical)
        throw NotCriticalError("L = " + std::to_string(L) + " is not critical for c = " + std::to_string(c));

    PerturbationAnalysis pa;
    pa.c = c;
    pa.L = L;
    pa.base_generator = *chk.generator;
    pa.base_key = chk.member->key;
    pa.kase = pa.base_generator.branch == Branch::TwoIndex ? PerturbationCase::TwoIndexCase
                                                          : PerturbationCase::OneIndexCase;
    // Keys are integers, so distinct bad drifts are at least (c+1)/q_L apart.
    // q_L = 4(j^2+jk+k^2) or 3k^2.
    pa.separation = (c + 1.0) / double(pa.base_key);

    // Any other bad drift is (c+1)(q - q_L)/q_L away with q != q_L an integer,
    // so no candidate lies within one separation of c and the scan over that
    // radius returns the separation itself.
    const double eps = std::min(c + 1.0, pa.separation);
    pa.epsilon_c = eps;
    return pa;
}

// Sorted distinct elements of the set of drifts d with L in R_d, restricted
// to keys q <= q_max.  The base drift c is included.
inline std::vector<double> bad_drifts(const PerturbationAnalysis& pa, std::int64_t q_max) {
    std::vector<double> out;
    for (std::int64_t q = 1; q <= q_max; ++q)
        if (detail::is_key(q)) out.push_back(drift_for_key(pa, q));
    return out;
}

// d = c + preference * epsilon_c, preference in (0,1).
inline double safe_drift(double L, double c, double preference) {
    if (!(preference > 0.0 && preference < 1.0))
        throw DomainError("critical_lengths", "preference must lie in (0,1)");
    const auto pa = perturbation_analysis(L, c);
    return c + preference * pa.epsilon_c;
}

}  // namespace kdvlab
