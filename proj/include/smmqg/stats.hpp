#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace smmqg {

/// Systems paired with one metric value each. Labels must be unique.
struct RankedList {
    std::vector<std::pair<std::string, double>> items;

    void validate() const;
};

struct TauResult {
    double tau = 0.0;
    double p = 1.0;
    std::int64_t concordant = 0;
    std::int64_t discordant = 0;
    bool exact = false;  // p from full permutation enumeration
};

inline constexpr std::size_t kExactTauMaxN = 10;

/// Kendall's tau between the rankings two lists induce on a shared label
/// set: tau-a without ties, tau-b with ties. Two-sided p by enumerating
/// every arrangement of y against x for n <= 10, normal approximation with
/// tie-corrected variance above.
TauResult kendall_tau(const RankedList& x, const RankedList& y);

struct MwuResult {
    double u = 0.0;  // statistic for the first sample
    double p = 1.0;
    bool exact = false;
};

inline constexpr std::size_t kExactMwuMaxN = 12;

/// Mann-Whitney U with midranks. Exact two-sided p by enumerating group
/// labelings when |a|+|b| <= 12, otherwise normal approximation with tie
/// correction and continuity correction.
MwuResult mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b);

/// Rows are groups, columns are yes/no counts.
struct Table2x2 {
    std::int64_t a = 0, b = 0, c = 0, d = 0;
};

/// Hypergeometric probability of the table with top-left cell x under the
/// margins of t.
double hypergeometric_pmf(const Table2x2& t, std::int64_t x);

/// Two-sided Fisher exact test: total probability of tables, at fixed
/// margins, no more likely than the observed one (relative tolerance 1e-7).
double fisher_exact(const Table2x2& t);

/// Midranks (1-based, ties averaged) of the values, in input order.
std::vector<double> midranks(const std::vector<double>& values);

}  // namespace smmqg
