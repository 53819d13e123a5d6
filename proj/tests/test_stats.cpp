#include <catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "smmqg/error.hpp"
#include "smmqg/stats.hpp"

using namespace smmqg;
using Catch::Approx;

namespace {

RankedList list(const std::vector<std::string>& labels, const std::vector<double>& values) {
    RankedList out;
    for (std::size_t i = 0; i < labels.size(); ++i) out.items.emplace_back(labels[i], values[i]);
    return out;
}

// Concordant minus discordant pairs, counted directly.
std::int64_t pair_balance(const std::vector<double>& x, const std::vector<double>& y) {
    std::int64_t s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = i + 1; j < x.size(); ++j) {
            const double p = (x[i] - x[j]) * (y[i] - y[j]);
            s += p > 0 ? 1 : (p < 0 ? -1 : 0);
        }
    }
    return s;
}

const std::vector<std::string> kRetrievers{"BM25@5", "BM25@10", "E5@5", "E5@10", "OpenCLIP@5", "OpenCLIP@10"};
const std::vector<std::string> kReaders{"V7", "V13", "Qwen", "Gemini", "Haiku", "Sonnet", "Opus", "GPT4"};

}  // namespace

TEST_CASE("kendall tau on clean rankings") {
    const std::vector<std::string> labels{"a", "b", "c", "d", "e"};
    const auto same = kendall_tau(list(labels, {1, 2, 3, 4, 5}), list(labels, {10, 20, 30, 40, 50}));
    CHECK(same.tau == Approx(1.0));
    CHECK(same.exact);
    CHECK(same.p == Approx(2.0 / 120.0));
    const auto reversed = kendall_tau(list(labels, {1, 2, 3, 4, 5}), list(labels, {5, 4, 3, 2, 1}));
    CHECK(reversed.tau == Approx(-1.0));
    CHECK(reversed.p == Approx(2.0 / 120.0));

    // Label order in the second list does not matter.
    const auto shuffled = kendall_tau(list(labels, {1, 2, 3, 4, 5}), list({"e", "a", "c", "b", "d"}, {50, 10, 30, 20, 40}));
    CHECK(shuffled.tau == Approx(1.0));
}

TEST_CASE("kendall tau on reference system rankings") {
    SECTION("retrievers") {
        const std::vector<double> x{42.8, 45.0, 53.5, 56.7, 40.0, 45.3};
        const std::vector<double> y{36.3, 42.1, 54.3, 60.1, 38.3, 43.7};
        const auto r = kendall_tau(list(kRetrievers, x), list(kRetrievers, y));
        CHECK(r.tau == Approx(pair_balance(x, y) / 15.0));
        CHECK(std::abs(r.tau - 0.8667) <= 5e-5);
        CHECK(r.concordant == 14);
        CHECK(r.discordant == 1);
        CHECK(r.p == Approx(oracle::kendall_exact_p(6, r.discordant)).epsilon(1e-12));
        CHECK(std::abs(r.p - 0.01667) <= 5e-6);
    }
    SECTION("readers") {
        const std::vector<double> x{68.0, 75.0, 78.5, 89.6, 75.9, 86.9, 92.9, 97.4};
        const std::vector<double> y{55.0, 61.0, 65.7, 80.7, 73.9, 87.3, 93.0, 96.4};
        const auto r = kendall_tau(list(kReaders, x), list(kReaders, y));
        CHECK(r.tau == Approx(pair_balance(x, y) / 28.0));
        CHECK(std::abs(r.tau - 0.8571) <= 5e-5);
        CHECK(r.p == Approx(oracle::kendall_exact_p(8, r.discordant)).epsilon(1e-12));
        CHECK(std::abs(r.p - 0.001736) <= 5e-7);
    }
}

TEST_CASE("kendall tau-b with ties") {
    const std::vector<std::string> labels{"a", "b", "c", "d"};
    const auto r = kendall_tau(list(labels, {1, 2, 2, 3}), list(labels, {1, 2, 3, 4}));
    // 5 concordant, 0 discordant, one tie in x: 5 / sqrt(5 * 6).
    CHECK(r.tau == Approx(5.0 / std::sqrt(30.0)));
    CHECK(r.tau < 1.0);
}

TEST_CASE("kendall tau input errors") {
    const std::vector<std::string> labels{"a", "b", "c"};
    CHECK_THROWS_AS(kendall_tau(list(labels, {1, 1, 1}), list(labels, {1, 2, 3})), ValidationError);
    CHECK_THROWS_AS(kendall_tau(list(labels, {1, 2, 3}), list({"a", "b", "z"}, {1, 2, 3})), ValidationError);
    CHECK_THROWS_AS(kendall_tau(list({"a", "a", "b"}, {1, 2, 3}), list(labels, {1, 2, 3})), ValidationError);
    CHECK_THROWS_AS(kendall_tau(list({"a"}, {1}), list({"a"}, {1})), ValidationError);
}

TEST_CASE("kendall tau large-n normal approximation") {
    std::vector<std::string> labels;
    std::vector<double> x, y;
    for (int i = 0; i < 30; ++i) {
        labels.push_back("s" + std::to_string(i));
        x.push_back(i);
        y.push_back((i * 7) % 30);
    }
    const auto r = kendall_tau(list(labels, x), list(labels, y));
    CHECK_FALSE(r.exact);
    const double s = static_cast<double>(pair_balance(x, y));
    CHECK(r.tau == Approx(s / 435.0));
    const double var = 30.0 * 29.0 * 65.0 / 18.0;
    CHECK(r.p == Approx(std::erfc(std::abs(s) / std::sqrt(var) / std::sqrt(2.0))).epsilon(1e-9));
}

TEST_CASE("mann-whitney U") {
    SECTION("identical samples") {
        const auto r = mann_whitney_u({1, 2, 3, 4}, {1, 2, 3, 4});
        CHECK(r.u == Approx(8.0));
        CHECK(r.p == Approx(1.0));
    }
    SECTION("complete separation") {
        const auto r = mann_whitney_u({1, 2, 3}, {10, 11, 12});
        CHECK(r.u == 0.0);
        CHECK(r.exact);
        CHECK(r.p == Approx(0.1));
    }
    SECTION("Likert ties match the enumeration oracle") {
        const std::vector<double> a{0, 1, 1, 2, 2, 2};
        const std::vector<double> b{0, 0, 1, 1, 2, 0};
        const auto r = mann_whitney_u(a, b);
        CHECK(r.u == Approx(oracle::doubled_u(a, b) / 2.0));
        CHECK(r.p == Approx(oracle::mwu_exact_p(a, b)).epsilon(1e-12));
    }
    SECTION("30 vs 30 uses the normal approximation") {
        std::vector<double> a, b;
        for (int i = 0; i < 30; ++i) {
            a.push_back(i);
            b.push_back(i + 15.5);
        }
        const auto r = mann_whitney_u(a, b);
        CHECK_FALSE(r.exact);
        const double u = oracle::doubled_u(a, b) / 2.0;
        CHECK(r.u == Approx(u));
        const double z = (std::abs(u - 450.0) - 0.5) / std::sqrt(900.0 * 61.0 / 12.0);
        CHECK(r.p == Approx(std::erfc(z / std::sqrt(2.0))).epsilon(1e-9));
    }
    SECTION("empty sample") { CHECK_THROWS_AS(mann_whitney_u({}, {1}), ValidationError); }
}

TEST_CASE("fisher exact test") {
    CHECK(fisher_exact({1, 9, 11, 3}) == Approx(0.002759).epsilon(1e-3));
    CHECK(fisher_exact({1, 9, 11, 3}) == Approx(oracle::fisher(1, 9, 11, 3)).epsilon(1e-12));
    CHECK(fisher_exact({5, 0, 0, 5}) == Approx(2.0 / 252.0));
    CHECK(fisher_exact({3, 3, 3, 3}) == Approx(1.0));
    CHECK_THROWS_AS(fisher_exact({0, 0, 4, 5}), ValidationError);
    CHECK(hypergeometric_pmf({5, 0, 0, 5}, 5) == Approx(1.0 / 252.0));
    CHECK_THROWS_AS(fisher_exact({-1, 2, 3, 4}), ValidationError);
}

TEST_CASE("midranks") {
    CHECK(midranks({10, 20, 20, 30}) == std::vector<double>{1, 2.5, 2.5, 4});
    CHECK(midranks({3, 1, 2}) == std::vector<double>{3, 1, 2});
    CHECK(midranks({5, 5, 5}) == std::vector<double>{2, 2, 2});
    CHECK(midranks({}).empty());
}
