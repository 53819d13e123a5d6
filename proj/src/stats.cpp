#include "smmqg/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "smmqg/error.hpp"

namespace smmqg {

void RankedList::validate() const {
    std::set<std::string> seen;
    for (const auto& [label, value] : items) {
        if (!seen.insert(label).second) {
            throw ValidationError("duplicate system label " + label);
        }
        if (!std::isfinite(value)) {
            throw ValidationError("non-finite metric value for " + label);
        }
    }
}

namespace {

int sign(double v) { return (v > 0) - (v < 0); }

/// Σ over tie groups of f(group size).
template <typename F>
double tie_sum(const std::vector<double>& v, F f) {
    std::map<double, std::int64_t> groups;
    for (double x : v) {
        ++groups[x];
    }
    double s = 0.0;
    for (const auto& [_, t] : groups) {
        s += f(static_cast<double>(t));
    }
    return s;
}

double two_sided_normal(double z) {
    const double p = std::erfc(std::abs(z) / std::sqrt(2.0));
    return std::clamp(p, std::numeric_limits<double>::min(), 1.0);
}

}  // namespace

TauResult kendall_tau(const RankedList& x, const RankedList& y) {
    x.validate();
    y.validate();
    if (x.items.size() != y.items.size()) {
        throw ValidationError("ranked lists have different sizes: " + std::to_string(x.items.size()) + " vs " +
                              std::to_string(y.items.size()));
    }
    const auto n = x.items.size();
    if (n < 2) {
        throw ValidationError("kendall_tau needs at least 2 systems");
    }
    std::map<std::string, double> y_of(y.items.begin(), y.items.end());
    std::vector<double> xs;
    std::vector<double> ys;
    for (const auto& [label, value] : x.items) {
        auto it = y_of.find(label);
        if (it == y_of.end()) {
            throw ValidationError("system " + label + " missing from second list");
        }
        xs.push_back(value);
        ys.push_back(it->second);
    }

    // Sign matrix of x, reused by the permutation enumeration.
    std::vector<int> sx(n * n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            sx[i * n + j] = sign(xs[i] - xs[j]);
        }
    }
    auto score = [&](const std::vector<double>& v) {
        std::int64_t s = 0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                s += sx[i * n + j] * sign(v[i] - v[j]);
            }
        }
        return s;
    };

    TauResult r;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const int prod = sx[i * n + j] * sign(ys[i] - ys[j]);
            r.concordant += prod > 0;
            r.discordant += prod < 0;
        }
    }
    const double nd = static_cast<double>(n);
    const double n0 = nd * (nd - 1) / 2;
    const double n1 = tie_sum(xs, [](double t) { return t * (t - 1) / 2; });
    const double n2 = tie_sum(ys, [](double t) { return t * (t - 1) / 2; });
    if (n1 == n0 || n2 == n0) {
        throw ValidationError("kendall_tau is undefined for a constant ranking");
    }
    const auto s_obs = r.concordant - r.discordant;
    const bool ties = n1 > 0 || n2 > 0;
    r.tau = ties ? static_cast<double>(s_obs) / std::sqrt((n0 - n1) * (n0 - n2)) : static_cast<double>(s_obs) / n0;

    if (n <= kExactTauMaxN) {
        // Every distinct arrangement of the y multiset is equally likely
        // under the null; std::next_permutation visits each exactly once.
        auto perm = ys;
        std::sort(perm.begin(), perm.end());
        std::uint64_t total = 0;
        std::uint64_t extreme = 0;
        const auto threshold = s_obs < 0 ? -s_obs : s_obs;
        do {
            auto s = score(perm);
            ++total;
            extreme += (s < 0 ? -s : s) >= threshold;
        } while (std::next_permutation(perm.begin(), perm.end()));
        r.p = static_cast<double>(extreme) / static_cast<double>(total);
        r.exact = true;
        return r;
    }

    auto v0 = nd * (nd - 1) * (2 * nd + 5);
    auto f1 = [](double t) { return t * (t - 1) * (2 * t + 5); };
    auto f2 = [](double t) { return t * (t - 1) * (t - 2); };
    auto f3 = [](double t) { return t * (t - 1); };
    const double var = (v0 - tie_sum(xs, f1) - tie_sum(ys, f1)) / 18.0 +
                       tie_sum(xs, f2) * tie_sum(ys, f2) / (9.0 * nd * (nd - 1) * (nd - 2)) +
                       tie_sum(xs, f3) * tie_sum(ys, f3) / (2.0 * nd * (nd - 1));
    r.p = var > 0 ? two_sided_normal(static_cast<double>(s_obs) / std::sqrt(var)) : 1.0;
    return r;
}

std::vector<double> midranks(const std::vector<double>& values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return values[i] < values[j]; });
    std::vector<double> ranks(values.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) {
            ++j;
        }
        const double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            ranks[order[k]] = mid;
        }
        i = j + 1;
    }
    return ranks;
}

MwuResult mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) {
        throw ValidationError("mann_whitney_u needs two nonempty samples");
    }
    for (double v : a) {
        if (!std::isfinite(v)) throw ValidationError("mann_whitney_u: non-finite value");
    }
    for (double v : b) {
        if (!std::isfinite(v)) throw ValidationError("mann_whitney_u: non-finite value");
    }
    std::vector<double> pooled = a;
    pooled.insert(pooled.end(), b.begin(), b.end());
    const auto ranks = midranks(pooled);
    const auto n = a.size();
    const auto m = b.size();
    const auto big_n = n + m;
    // Midranks are multiples of 1/2, so doubled rank sums are exact integers.
    std::vector<std::int64_t> r2(big_n);
    for (std::size_t i = 0; i < big_n; ++i) {
        r2[i] = std::llround(2.0 * ranks[i]);
    }
    const auto nn = static_cast<std::int64_t>(n);
    const auto mm = static_cast<std::int64_t>(m);
    auto doubled_u = [&](std::int64_t doubled_rank_sum) { return doubled_rank_sum - nn * (nn + 1); };
    std::int64_t obs_sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        obs_sum += r2[i];
    }
    const auto u2 = doubled_u(obs_sum);
    MwuResult res;
    res.u = static_cast<double>(u2) / 2.0;
    const auto centre = nn * mm;  // doubled mean of U
    const auto dev_obs = std::abs(u2 - centre);

    if (big_n <= kExactMwuMaxN) {
        std::vector<bool> in_a(big_n, false);
        std::fill(in_a.begin(), in_a.begin() + static_cast<std::ptrdiff_t>(n), true);
        std::uint64_t total = 0;
        std::uint64_t extreme = 0;
        do {
            std::int64_t s = 0;
            for (std::size_t i = 0; i < big_n; ++i) {
                if (in_a[i]) s += r2[i];
            }
            ++total;
            extreme += std::abs(doubled_u(s) - centre) >= dev_obs;
        } while (std::prev_permutation(in_a.begin(), in_a.end()));
        res.p = static_cast<double>(extreme) / static_cast<double>(total);
        res.exact = true;
        return res;
    }

    const double nd = static_cast<double>(n);
    const double md = static_cast<double>(m);
    const double bn = static_cast<double>(big_n);
    const double ties = tie_sum(pooled, [](double t) { return t * t * t - t; });
    const double var = nd * md / 12.0 * ((bn + 1) - ties / (bn * (bn - 1)));
    if (var <= 0) {
        res.p = 1.0;
        return res;
    }
    const double z = (static_cast<double>(dev_obs) / 2.0 - 0.5) / std::sqrt(var);
    res.p = z <= 0 ? 1.0 : two_sided_normal(z);
    return res;
}

namespace {

void check_table(const Table2x2& t) {
    if (t.a < 0 || t.b < 0 || t.c < 0 || t.d < 0) {
        throw ValidationError("2x2 table cells must be nonnegative");
    }
    if (t.a + t.b == 0 || t.c + t.d == 0 || t.a + t.c == 0 || t.b + t.d == 0) {
        throw ValidationError("2x2 table has an empty row or column");
    }
}

double log_choose(std::int64_t n, std::int64_t k) {
    return std::lgamma(static_cast<double>(n + 1)) - std::lgamma(static_cast<double>(k + 1)) -
           std::lgamma(static_cast<double>(n - k + 1));
}

}  // namespace

double hypergeometric_pmf(const Table2x2& t, std::int64_t x) {
    check_table(t);
    const auto r1 = t.a + t.b;
    const auto r2 = t.c + t.d;
    const auto c1 = t.a + t.c;
    const auto lo = std::max<std::int64_t>(0, c1 - r2);
    const auto hi = std::min(r1, c1);
    if (x < lo || x > hi) {
        return 0.0;
    }
    return std::exp(log_choose(r1, x) + log_choose(r2, c1 - x) - log_choose(r1 + r2, c1));
}

double fisher_exact(const Table2x2& t) {
    check_table(t);
    const auto r1 = t.a + t.b;
    const auto r2 = t.c + t.d;
    const auto c1 = t.a + t.c;
    const auto lo = std::max<std::int64_t>(0, c1 - r2);
    const auto hi = std::min(r1, c1);
    const double p_obs = hypergeometric_pmf(t, t.a);
    const double cutoff = p_obs * (1.0 + 1e-7);
    double p = 0.0;
    for (auto x = lo; x <= hi; ++x) {
        const double px = hypergeometric_pmf(t, x);
        if (px <= cutoff) {
            p += px;
        }
    }
    return std::min(1.0, p);
}

}  // namespace smmqg
