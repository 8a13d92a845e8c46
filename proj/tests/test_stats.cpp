#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "inspex/errors.hpp"
#include "inspex/rng.hpp"
#include "inspex/stats.hpp"

using namespace inspex;

namespace {

// Independent oracle: enumerate all 2^n sign assignments of the ranked |d|
// and accumulate the two-sided tail probability of W = min(W+, W-).
double brute_force_wilcoxon_p(const std::vector<double>& diffs) {
    const size_t n = diffs.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return std::abs(diffs[a]) < std::abs(diffs[b]);
    });
    std::vector<double> rank(n);
    size_t i0 = 0;
    while (i0 < n) {
        size_t i1 = i0;
        while (i1 + 1 < n && std::abs(diffs[order[i1 + 1]]) == std::abs(diffs[order[i0]])) ++i1;
        const double mid = 0.5 * (static_cast<double>(i0 + 1) + static_cast<double>(i1 + 1));
        for (size_t t = i0; t <= i1; ++t) rank[order[t]] = mid;
        i0 = i1 + 1;
    }
    double w_plus = 0.0, total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        total += rank[i];
        if (diffs[i] > 0) w_plus += rank[i];
    }
    const double w_obs = std::min(w_plus, total - w_plus);

    int64_t hits = 0;
    const int64_t count = int64_t{1} << n;
    for (int64_t mask = 0; mask < count; ++mask) {
        double wp = 0.0;
        for (size_t i = 0; i < n; ++i) {
            if (mask & (int64_t{1} << i)) wp += rank[i];
        }
        if (wp <= w_obs + 1e-12 || wp >= total - w_obs - 1e-12) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(count);
}

WilcoxonResult wilcoxon_of_diffs(const std::vector<double>& diffs) {
    std::vector<double> zero(diffs.size(), 0.0);
    return wilcoxon_signed_rank(diffs, zero);
}

} // namespace

TEST_SUITE_BEGIN("stats");

TEST_CASE("wilcoxon: constant positive shift, n=20, exact tail") {
    std::vector<double> x(20), y(20);
    for (size_t i = 0; i < 20; ++i) {
        y[i] = static_cast<double>(i) * 0.37;
        x[i] = y[i] + 1.0 + 0.01 * static_cast<double>(i); // distinct magnitudes, all positive
    }
    const WilcoxonResult r = wilcoxon_signed_rank(x, y);
    CHECK(r.n_effective == 20);
    CHECK(r.w == 0.0);
    CHECK(r.exact);
    CHECK(r.p == doctest::Approx(2.0 * std::pow(2.0, -20.0)).epsilon(1e-12));
}

TEST_CASE("wilcoxon: hand-ranked fixture n=10") {
    // |d| = 1..10 with only the largest negative: W- = 10, p exact 0.083984375.
    std::vector<double> diffs = {1, 2, 3, 4, 5, 6, 7, 8, 9, -10};
    const WilcoxonResult r = wilcoxon_of_diffs(diffs);
    CHECK(r.w == 10.0);
    CHECK(r.w_plus == 45.0);
    CHECK(r.p == doctest::Approx(0.083984375).epsilon(1e-12));
}

TEST_CASE("wilcoxon exact matches brute-force enumeration for n <= 12") {
    Rng rng(2024);
    for (int trial = 0; trial < 30; ++trial) {
        const size_t n = 5 + static_cast<size_t>(rng.below(8)); // 5..12
        std::vector<double> diffs(n);
        for (auto& d : diffs) {
            // Quantized values force ties; zero is excluded.
            d = (1.0 + static_cast<double>(rng.below(6))) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        }
        const WilcoxonResult r = wilcoxon_of_diffs(diffs);
        const double p_ref = brute_force_wilcoxon_p(diffs);
        CHECK(std::abs(r.p - p_ref) < 1e-12);
    }
}

TEST_CASE("wilcoxon normal approximation matches the frozen reference") {
    // Frozen fixture, n_eff=28 with ties: W = 57.5, two-sided p with
    // continuity and tie corrections = 9.520697461061704e-4.
    std::vector<double> diffs = {0.2,  0.9, -0.1, -0.2, 2.4,  1.8, 0.5, 0.7, 1.2, 1.6,
                                 1.4,  -0.9, 0.7, 0.6,  1.8,  1.3, -1.6, 2.1, -0.1, 0.9,
                                 3.6,  -0.6, -0.2, 0.5, 0.7,  0.9, 0.4, 1.7};
    const WilcoxonResult r = wilcoxon_of_diffs(diffs);
    CHECK(r.n_effective == 28);
    CHECK_FALSE(r.exact);
    CHECK(r.w == doctest::Approx(57.5));
    CHECK(r.p == doctest::Approx(0.0009520697461061704).epsilon(1e-9));
}

TEST_CASE("wilcoxon rejects tiny samples and drops zero differences") {
    std::vector<double> x = {1, 2, 3, 4, 5, 6};
    std::vector<double> y = {1, 2, 3, 4, 0, 0}; // only two nonzero differences
    CHECK_THROWS_AS(wilcoxon_signed_rank(x, y), DataError);
    CHECK_THROWS_AS(wilcoxon_signed_rank(x, std::vector<double>(5, 0.0)), UsageError);
}

TEST_CASE("wilcoxon p-values are calibrated under the null") {
    Rng rng(77);
    int below_05 = 0;
    const int sims = 1000;
    for (int s = 0; s < sims; ++s) {
        std::vector<double> x(20), y(20);
        for (size_t i = 0; i < 20; ++i) {
            x[i] = rng.normal();
            y[i] = rng.normal();
        }
        if (wilcoxon_signed_rank(x, y).p < 0.05) ++below_05;
    }
    const double rate = static_cast<double>(below_05) / sims;
    CHECK(rate > 0.03);
    CHECK(rate < 0.07);
}

TEST_CASE("t-test matches frozen reference values at df 4, 9, 29") {
    struct Ref {
        int df;
        double t, p;
    };
    // Two-sided survival values computed independently to 12 digits.
    const Ref refs[] = {
        {4, 0.5, 6.433299631819e-01},  {4, 1.0, 3.739009663001e-01},  {4, 2.0, 1.161165235168e-01},
        {4, 2.776, 5.002277831998e-02}, {4, 3.25, 3.137573422015e-02}, {9, 0.5, 6.290712998260e-01},
        {9, 1.0, 3.434363961379e-01},  {9, 2.0, 7.655282377070e-02},  {9, 2.776, 2.154116152398e-02},
        {9, 3.25, 9.997369084022e-03}, {29, 0.5, 6.208480841938e-01}, {29, 1.0, 3.255819880162e-01},
        {29, 2.0, 5.494363718297e-02}, {29, 2.776, 9.537263521698e-03},
        {29, 3.25, 2.919558419040e-03}};
    for (const Ref& r : refs) {
        CHECK(std::abs(t_sf_two_sided(r.t, r.df) - r.p) < 1e-6);
        CHECK(std::abs(t_sf_two_sided(r.t, r.df) - r.p) / r.p < 1e-9); // continued fraction precision
    }
}

TEST_CASE("paired t-test hand-computed fixture") {
    // d = {2.1, 1.9, 2.0, 2.2, 1.8}: mean 2.0, sd 0.158114, t = 28.2842712.
    std::vector<double> x = {2.1, 1.9, 2.0, 2.2, 1.8};
    std::vector<double> y(5, 0.0);
    const TTestResult r = paired_t_test(x, y);
    CHECK(r.df == 4);
    CHECK(r.t == doctest::Approx(28.28427124746189).epsilon(1e-10));
    CHECK(r.p == doctest::Approx(9.29738463666688e-06).epsilon(1e-6));
}

TEST_CASE("paired t-test degenerate data") {
    std::vector<double> x = {1, 1, 1, 1};
    std::vector<double> y(4, 0.0);
    CHECK_THROWS_AS(paired_t_test(x, y), DataError); // constant differences, sd = 0
    CHECK_THROWS_AS(paired_t_test({1.0}, {0.0}), UsageError);
}

TEST_CASE("t-test p is invariant under a common affine transform") {
    Rng rng(5);
    std::vector<double> x(12), y(12);
    for (size_t i = 0; i < x.size(); ++i) {
        x[i] = rng.normal(1.0, 2.0);
        y[i] = rng.normal(0.5, 2.0);
    }
    const TTestResult base = paired_t_test(x, y);
    for (double scale : {0.25, 3.0}) {
        std::vector<double> xs(x.size()), ys(y.size());
        for (size_t i = 0; i < x.size(); ++i) {
            xs[i] = scale * x[i] + 17.0;
            ys[i] = scale * y[i] + 17.0;
        }
        const TTestResult r = paired_t_test(xs, ys);
        CHECK(r.t == doctest::Approx(base.t).epsilon(1e-9));
        CHECK(r.p == doctest::Approx(base.p).epsilon(1e-9));
    }
}

TEST_CASE("summarize conventions") {
    const Summary a = summarize({1, 2, 3});
    CHECK(a.median == 2.0);
    CHECK(a.min == 1.0);
    CHECK(a.max == 3.0);

    const Summary b = summarize({4, 1, 3, 2});
    CHECK(b.median == 2.5);

    const Summary c = summarize({7});
    CHECK(c.median == 7.0);
    CHECK(c.min == 7.0);
    CHECK(c.max == 7.0);

    CHECK_THROWS_AS(summarize({}), UsageError);
}

TEST_CASE("boxplot stats flag outliers beyond 1.5 IQR") {
    std::vector<double> v = {1, 2, 3, 4, 5, 6, 7, 8, 50};
    const BoxplotStats b = boxplot_stats(v);
    CHECK(b.median == 5.0);
    CHECK(b.outliers.size() == 1);
    CHECK(b.outliers[0] == 50.0);
    CHECK(b.whisker_hi == 8.0);
    CHECK(b.whisker_lo == 1.0);
}

TEST_SUITE_END();
