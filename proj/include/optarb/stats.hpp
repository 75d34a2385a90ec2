// Paired model-comparison tests: one-sided Student t, exact Wilcoxon signed
// rank, exact binomial sign test, plus Shapiro-Wilk normality and
// Cabilio-Masaro symmetry assumption flags.
#pragma once

#include <vector>

namespace optarb::stats {

double normal_cdf(double x);
double normal_quantile(double p);

struct SignTestResult {
    int n_positive = 0;
    int n_nonzero = 0;
    double p = 1.0;   // P(K >= n_positive) under Binomial(n_nonzero, 1/2)
    bool defined = false;
};

// One-sided exact binomial sign test for H1: median > 0. Zeros are dropped.
SignTestResult sign_test(const std::vector<double>& diffs);

struct WilcoxonResult {
    double w_plus = 0.0;  // sum of midranks of the positive differences
    double p = 1.0;       // one-sided P(W+ >= observed)
    bool exact = false;   // exact sign-flip distribution vs normal approximation
    bool defined = false;
};

// One-sided Wilcoxon signed-rank test for H1: location > 0. Exact for up to
// `exact_limit` nonzero differences (DP over sign flips with midranks),
// normal approximation with tie and continuity corrections beyond.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& diffs, int exact_limit = 25);

// Brute-force enumeration of all 2^n sign assignments (test oracle).
double wilcoxon_enumerated_p(const std::vector<double>& diffs);

struct ShapiroWilkResult {
    double w = 0.0;
    double p = 0.0;
    bool defined = false;  // needs 3 <= n <= 5000 and non-constant data
};

ShapiroWilkResult shapiro_wilk(const std::vector<double>& x);

struct SymmetryResult {
    double statistic = 0.0;  // sqrt(n) (mean - median) / sd
    double p = 1.0;          // two-sided vs N(0, pi/2 - 1)
    bool defined = false;
};

// Cabilio-Masaro symmetry test about an unknown center.
SymmetryResult symmetry_test(const std::vector<double>& x);

struct PairedTestReport {
    int n = 0;
    double t_stat = 0.0;
    double t_p = 1.0;
    bool t_defined = false;
    WilcoxonResult wilcoxon;
    SignTestResult sign;
    ShapiroWilkResult shapiro;
    SymmetryResult symmetry;
    bool normality_flag = false;  // true when the normality assumption looks violated
    bool symmetry_flag = false;   // true when the symmetry assumption looks violated
};

// Applies the full battery to the differences (benchmark - reference), all
// one-sided for H1: difference > 0. Requires n >= 5.
PairedTestReport paired_tests(const std::vector<double>& diffs);

double sample_mean(const std::vector<double>& x);
double sample_std(const std::vector<double>& x);  // n-1 denominator

}  // namespace optarb::stats
