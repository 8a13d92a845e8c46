#include "inspex/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "inspex/errors.hpp"

namespace inspex {

double median_of(std::vector<double> values) {
    if (values.empty()) throw UsageError("median: empty sample");
    std::sort(values.begin(), values.end());
    const size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

Summary summarize(std::vector<double> values) {
    if (values.empty()) throw UsageError("summarize: empty sample");
    Summary s;
    s.n = static_cast<int>(values.size());
    s.min = *std::min_element(values.begin(), values.end());
    s.max = *std::max_element(values.begin(), values.end());
    s.median = median_of(std::move(values));
    return s;
}

BoxplotStats boxplot_stats(std::vector<double> values) {
    if (values.empty()) throw UsageError("boxplot_stats: empty sample");
    std::sort(values.begin(), values.end());
    BoxplotStats b;
    b.n = static_cast<int>(values.size());
    b.median = median_of(values);
    // Tukey hinges: medians of the lower/upper halves (middle element shared
    // for odd n).
    const size_t n = values.size();
    const size_t half = n / 2;
    std::vector<double> lower(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(half + n % 2));
    std::vector<double> upper(values.begin() + static_cast<std::ptrdiff_t>(half), values.end());
    b.q1 = median_of(lower);
    b.q3 = median_of(upper);
    const double iqr = b.q3 - b.q1;
    const double lo_fence = b.q1 - 1.5 * iqr;
    const double hi_fence = b.q3 + 1.5 * iqr;
    b.whisker_lo = b.q3;
    b.whisker_hi = b.q1;
    bool any_in = false;
    for (double v : values) {
        if (v < lo_fence || v > hi_fence) {
            b.outliers.push_back(v);
        } else {
            if (!any_in) {
                b.whisker_lo = v;
                b.whisker_hi = v;
                any_in = true;
            } else {
                b.whisker_lo = std::min(b.whisker_lo, v);
                b.whisker_hi = std::max(b.whisker_hi, v);
            }
        }
    }
    if (!any_in) {
        b.whisker_lo = b.q1;
        b.whisker_hi = b.q3;
    }
    return b;
}

namespace {

double erfc_scaled(double x) { return std::erfc(x); }

double normal_sf(double z) { return 0.5 * erfc_scaled(z / std::sqrt(2.0)); }

// Lentz continued fraction for the incomplete beta (Numerical Recipes form).
double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 1e-15;
    constexpr double kTiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

} // namespace

double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * betacf(a, b, x) / a;
    }
    return 1.0 - std::exp(std::lgamma(a + b) - std::lgamma(b) - std::lgamma(a) + b * std::log1p(-x) +
                          a * std::log(x)) *
                     betacf(b, a, 1.0 - x) / b;
}

double t_sf_two_sided(double t, int df) {
    if (df <= 0) throw UsageError("t distribution requires df >= 1");
    const double x = df / (df + t * t);
    return incomplete_beta(df / 2.0, 0.5, x);
}

TTestResult paired_t_test(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw UsageError("paired_t_test: samples differ in length");
    const size_t n = x.size();
    if (n < 2) throw UsageError("paired_t_test: need at least 2 pairs");
    std::vector<double> d(n);
    for (size_t i = 0; i < n; ++i) d[i] = x[i] - y[i];
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : d) ss += (v - mean) * (v - mean);
    const double var = ss / static_cast<double>(n - 1);
    if (var <= 0.0 || !(std::sqrt(var) > 0.0)) {
        throw DataError("paired_t_test: zero variance of differences (degenerate data)");
    }
    TTestResult r;
    r.df = static_cast<int>(n) - 1;
    r.t = mean * std::sqrt(static_cast<double>(n)) / std::sqrt(var);
    r.p = t_sf_two_sided(std::abs(r.t), r.df);
    return r;
}

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw UsageError("wilcoxon_signed_rank: samples differ in length");
    std::vector<double> diffs;
    diffs.reserve(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        if (d != 0.0) diffs.push_back(d);
    }
    const int n = static_cast<int>(diffs.size());
    if (n < 5) {
        throw DataError("wilcoxon_signed_rank: fewer than 5 nonzero differences (n=" +
                        std::to_string(n) + ")");
    }

    // Midranks of |d|.
    std::vector<int> order(diffs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return std::abs(diffs[static_cast<size_t>(a)]) < std::abs(diffs[static_cast<size_t>(b)]);
    });
    std::vector<double> rank(diffs.size());
    std::vector<int> tie_sizes;
    size_t i0 = 0;
    while (i0 < order.size()) {
        size_t i1 = i0;
        const double v = std::abs(diffs[static_cast<size_t>(order[i0])]);
        while (i1 + 1 < order.size() && std::abs(diffs[static_cast<size_t>(order[i1 + 1])]) == v) ++i1;
        const double mid = 0.5 * (static_cast<double>(i0 + 1) + static_cast<double>(i1 + 1));
        for (size_t t = i0; t <= i1; ++t) rank[static_cast<size_t>(order[t])] = mid;
        tie_sizes.push_back(static_cast<int>(i1 - i0 + 1));
        i0 = i1 + 1;
    }

    double w_plus = 0.0;
    for (size_t i = 0; i < diffs.size(); ++i) {
        if (diffs[i] > 0) w_plus += rank[i];
    }
    const double total = static_cast<double>(n) * (n + 1) / 2.0;
    const double w_minus = total - w_plus;

    WilcoxonResult res;
    res.n_effective = n;
    res.w_plus = w_plus;
    res.w = std::min(w_plus, w_minus);

    if (n <= 25) {
        // Exact null: distribution of W+ over all 2^n sign assignments, as a
        // DP over doubled ranks (midranks may be half-integers).
        std::vector<int> r2(diffs.size());
        int sum2 = 0;
        for (size_t i = 0; i < diffs.size(); ++i) {
            r2[i] = static_cast<int>(std::lround(2.0 * rank[i]));
            sum2 += r2[i];
        }
        std::vector<double> count(static_cast<size_t>(sum2 + 1), 0.0);
        count[0] = 1.0;
        for (int r : r2) {
            for (int s = sum2; s >= r; --s) {
                count[static_cast<size_t>(s)] += count[static_cast<size_t>(s - r)];
            }
        }
        const double denom = std::pow(2.0, n);
        const int w_lo2 = static_cast<int>(std::lround(2.0 * res.w));
        const int w_hi2 = sum2 - w_lo2;
        double p = 0.0;
        for (int s = 0; s <= w_lo2; ++s) p += count[static_cast<size_t>(s)];
        for (int s = w_hi2; s <= sum2; ++s) p += count[static_cast<size_t>(s)];
        res.p = std::min(1.0, p / denom);
        res.exact = true;
    } else {
        const double mu = total / 2.0;
        double var = static_cast<double>(n) * (n + 1) * (2 * n + 1) / 24.0;
        for (int t : tie_sizes) {
            var -= static_cast<double>(t) * t * t / 48.0 - static_cast<double>(t) / 48.0;
        }
        const double sd = std::sqrt(var);
        // Continuity correction pulls the statistic half a step toward the mean.
        const double z = (res.w - mu + 0.5) / sd;
        res.p = std::min(1.0, 2.0 * normal_sf(-z));
        res.exact = false;
    }
    return res;
}

} // namespace inspex
