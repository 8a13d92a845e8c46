#pragma once

#include <vector>

namespace inspex {

struct WilcoxonResult {
    double w = 0.0;        // min of positive/negative rank sums
    double w_plus = 0.0;   // sum of ranks of positive differences
    double p = 1.0;        // two-sided
    int n_effective = 0;   // pairs remaining after dropping zero differences
    bool exact = true;     // exact DP null distribution vs normal approximation
};

/// Wilcoxon signed-rank test on paired samples (two-sided). Zero differences
/// are dropped; ties among |d| get midranks. The null distribution is exact
/// (dynamic programming over achievable rank sums) for n_effective <= 25 and
/// a normal approximation with continuity and tie corrections above.
/// Fewer than 5 nonzero differences is an error.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& x, const std::vector<double>& y);

struct TTestResult {
    double t = 0.0;
    double p = 1.0; // two-sided
    int df = 0;
};

/// Paired t-test: t = mean(d) * sqrt(n) / sd(d) with df = n-1. Requires
/// length >= 2 and nonzero variance of the differences.
TTestResult paired_t_test(const std::vector<double>& x, const std::vector<double>& y);

struct Summary {
    double median = 0.0;
    double min = 0.0;
    double max = 0.0;
    int n = 0;
};

/// Median uses the mean-of-two-middles convention for even n.
Summary summarize(std::vector<double> values);

struct BoxplotStats {
    double q1 = 0.0, median = 0.0, q3 = 0.0;
    double whisker_lo = 0.0, whisker_hi = 0.0; // most extreme data within 1.5*IQR
    std::vector<double> outliers;
    int n = 0;
};

BoxplotStats boxplot_stats(std::vector<double> values);

/// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);

/// Two-sided p for a t statistic at the given degrees of freedom.
double t_sf_two_sided(double t, int df);

double median_of(std::vector<double> values);

} // namespace inspex
