#include "optarb/stats.hpp"

#include <algorithm>
#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace optarb::stats {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) { return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p); }

double sample_mean(const std::vector<double>& x) {
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_std(const std::vector<double>& x) {
    const double m = sample_mean(x);
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

SignTestResult sign_test(const std::vector<double>& diffs) {
    SignTestResult r;
    for (double d : diffs) {
        if (d > 0.0) {
            ++r.n_positive;
            ++r.n_nonzero;
        } else if (d < 0.0) {
            ++r.n_nonzero;
        }
    }
    if (r.n_nonzero == 0) return r;  // all zeros: undefined
    r.defined = true;
    // Exact binomial tail; counts are exact in doubles through n = 50, the
    // regularized incomplete beta takes over beyond.
    const int n = r.n_nonzero, k = r.n_positive;
    if (n <= 50) {
        double coeff = 1.0, tail = 0.0;  // C(n, j) built downward from j = n
        for (int j = n; j >= 0; --j) {
            if (j <= n - 1) coeff = coeff * (j + 1) / (n - j);
            if (j >= k) tail += coeff;
        }
        r.p = tail * std::pow(0.5, n);
    } else {
        boost::math::binomial_distribution<double> bin(n, 0.5);
        r.p = k == 0 ? 1.0 : boost::math::cdf(boost::math::complement(bin, k - 1));
    }
    return r;
}

namespace {

// Midranks of |d| over the nonzero entries; returned doubled so they are
// exact integers even with ties.
std::vector<long long> doubled_midranks(const std::vector<double>& diffs, std::vector<int>& signs) {
    std::vector<double> mags;
    for (double d : diffs) {
        if (d != 0.0) {
            mags.push_back(std::abs(d));
            signs.push_back(d > 0.0 ? 1 : -1);
        }
    }
    const std::size_t m = mags.size();
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return mags[a] < mags[b]; });
    std::vector<long long> dr(m, 0);
    std::size_t i = 0;
    while (i < m) {
        std::size_t j = i;
        while (j + 1 < m && mags[idx[j + 1]] == mags[idx[i]]) ++j;
        const long long doubled = static_cast<long long>(i + 1 + j + 1);  // 2 * average rank
        for (std::size_t q = i; q <= j; ++q) dr[idx[q]] = doubled;
        i = j + 1;
    }
    return dr;
}

}  // namespace

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& diffs, int exact_limit) {
    WilcoxonResult r;
    std::vector<int> signs;
    const auto dr = doubled_midranks(diffs, signs);
    const int m = static_cast<int>(dr.size());
    if (m == 0) return r;
    r.defined = true;

    long long w2 = 0, total2 = 0;
    for (int i = 0; i < m; ++i) {
        total2 += dr[static_cast<std::size_t>(i)];
        if (signs[static_cast<std::size_t>(i)] > 0) w2 += dr[static_cast<std::size_t>(i)];
    }
    r.w_plus = static_cast<double>(w2) / 2.0;

    if (m <= exact_limit) {
        r.exact = true;
        // Subset-sum counts over the doubled ranks.
        std::vector<double> count(static_cast<std::size_t>(total2) + 1, 0.0);
        count[0] = 1.0;
        long long reach = 0;
        for (int i = 0; i < m; ++i) {
            const long long v = dr[static_cast<std::size_t>(i)];
            reach += v;
            for (long long s = reach; s >= v; --s) {
                count[static_cast<std::size_t>(s)] += count[static_cast<std::size_t>(s - v)];
            }
        }
        double ge = 0.0;
        for (long long s = w2; s <= total2; ++s) ge += count[static_cast<std::size_t>(s)];
        r.p = ge / std::pow(2.0, m);
    } else {
        // Normal approximation with tie correction and continuity correction.
        const double n = m;
        const double mean = n * (n + 1.0) / 4.0;
        double tie_term = 0.0;
        {
            std::vector<long long> sorted = dr;
            std::sort(sorted.begin(), sorted.end());
            std::size_t i = 0;
            while (i < sorted.size()) {
                std::size_t j = i;
                while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
                const double t = static_cast<double>(j - i + 1);
                tie_term += t * t * t - t;
                i = j + 1;
            }
        }
        const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
        const double z = (r.w_plus - mean - 0.5) / std::sqrt(var);
        r.p = 1.0 - normal_cdf(z);
    }
    return r;
}

double wilcoxon_enumerated_p(const std::vector<double>& diffs) {
    std::vector<int> signs;
    const auto dr = doubled_midranks(diffs, signs);
    const int m = static_cast<int>(dr.size());
    if (m == 0) throw std::invalid_argument("wilcoxon_enumerated_p: all differences are zero");
    if (m > 20) throw std::invalid_argument("wilcoxon_enumerated_p: enumeration limited to 20 values");
    long long w2 = 0;
    for (int i = 0; i < m; ++i) {
        if (signs[static_cast<std::size_t>(i)] > 0) w2 += dr[static_cast<std::size_t>(i)];
    }
    long long ge = 0;
    const long long total_masks = 1ll << m;
    for (long long mask = 0; mask < total_masks; ++mask) {
        long long s = 0;
        for (int i = 0; i < m; ++i) {
            if (mask & (1ll << i)) s += dr[static_cast<std::size_t>(i)];
        }
        if (s >= w2) ++ge;
    }
    return static_cast<double>(ge) / static_cast<double>(total_masks);
}

ShapiroWilkResult shapiro_wilk(const std::vector<double>& x) {
    ShapiroWilkResult res;
    const int n = static_cast<int>(x.size());
    if (n < 3 || n > 5000) return res;
    std::vector<double> v = x;
    std::sort(v.begin(), v.end());
    if (v.front() == v.back()) return res;

    // Royston's AS R94 approximation of the W test.
    std::vector<double> m(static_cast<std::size_t>(n));
    for (int i = 1; i <= n; ++i) {
        m[static_cast<std::size_t>(i - 1)] = normal_quantile((i - 0.375) / (n + 0.25));
    }
    double m_ss = 0.0;
    for (double mi : m) m_ss += mi * mi;

    std::vector<double> a(static_cast<std::size_t>(n));
    const double u = 1.0 / std::sqrt(static_cast<double>(n));
    const double rsn = 1.0 / std::sqrt(m_ss);
    if (n == 3) {
        a[0] = std::sqrt(0.5);
        a[2] = -a[0];
        a[1] = 0.0;
    } else {
        const double an = -2.706056 * std::pow(u, 5) + 4.434685 * std::pow(u, 4) - 2.071190 * std::pow(u, 3) -
                          0.147981 * u * u + 0.221157 * u + m[static_cast<std::size_t>(n - 1)] * rsn;
        if (n <= 5) {
            const double phi = (m_ss - 2.0 * m[static_cast<std::size_t>(n - 1)] * m[static_cast<std::size_t>(n - 1)]) /
                               (1.0 - 2.0 * an * an);
            for (int i = 1; i < n - 1; ++i) a[static_cast<std::size_t>(i)] = m[static_cast<std::size_t>(i)] / std::sqrt(phi);
            a[static_cast<std::size_t>(n - 1)] = an;
            a[0] = -an;
        } else {
            const double an1 = -3.582633 * std::pow(u, 5) + 5.682633 * std::pow(u, 4) - 1.752461 * std::pow(u, 3) -
                               0.293762 * u * u + 0.042981 * u + m[static_cast<std::size_t>(n - 2)] * rsn;
            const double phi =
                (m_ss - 2.0 * m[static_cast<std::size_t>(n - 1)] * m[static_cast<std::size_t>(n - 1)] -
                 2.0 * m[static_cast<std::size_t>(n - 2)] * m[static_cast<std::size_t>(n - 2)]) /
                (1.0 - 2.0 * an * an - 2.0 * an1 * an1);
            for (int i = 2; i < n - 2; ++i) a[static_cast<std::size_t>(i)] = m[static_cast<std::size_t>(i)] / std::sqrt(phi);
            a[static_cast<std::size_t>(n - 1)] = an;
            a[static_cast<std::size_t>(n - 2)] = an1;
            a[0] = -an;
            a[1] = -an1;
        }
    }

    const double mean = sample_mean(v);
    double num = 0.0, den = 0.0;
    for (int i = 0; i < n; ++i) {
        num += a[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)];
        den += (v[static_cast<std::size_t>(i)] - mean) * (v[static_cast<std::size_t>(i)] - mean);
    }
    const double w = num * num / den;
    res.w = std::min(w, 1.0);
    res.defined = true;

    if (n == 3) {
        const double pi6 = 6.0 / M_PI;
        const double stqr = std::asin(std::sqrt(0.75));
        res.p = std::clamp(pi6 * (std::asin(std::sqrt(res.w)) - stqr), 0.0, 1.0);
        return res;
    }
    double mu, sigma, z;
    if (n <= 11) {
        const double g = -2.273 + 0.459 * n;
        const double w1 = -std::log(g - std::log1p(-res.w));
        mu = 0.5440 - 0.39978 * n + 0.025054 * n * n - 0.0006714 * n * n * n;
        sigma = std::exp(1.3822 - 0.77857 * n + 0.062767 * n * n - 0.0020322 * n * n * n);
        z = (w1 - mu) / sigma;
    } else {
        const double ln_n = std::log(static_cast<double>(n));
        const double w1 = std::log1p(-res.w);
        mu = -1.5861 - 0.31082 * ln_n - 0.083751 * ln_n * ln_n + 0.0038915 * ln_n * ln_n * ln_n;
        sigma = std::exp(-0.4803 - 0.082676 * ln_n + 0.0030302 * ln_n * ln_n);
        z = (w1 - mu) / sigma;
    }
    res.p = 1.0 - normal_cdf(z);
    return res;
}

SymmetryResult symmetry_test(const std::vector<double>& x) {
    SymmetryResult r;
    const int n = static_cast<int>(x.size());
    if (n < 3) return r;
    const double sd = sample_std(x);
    if (sd == 0.0) return r;
    std::vector<double> v = x;
    std::sort(v.begin(), v.end());
    const double median = n % 2 == 1 ? v[static_cast<std::size_t>(n / 2)]
                                     : 0.5 * (v[static_cast<std::size_t>(n / 2 - 1)] + v[static_cast<std::size_t>(n / 2)]);
    r.statistic = std::sqrt(static_cast<double>(n)) * (sample_mean(x) - median) / sd;
    const double null_sd = std::sqrt(M_PI / 2.0 - 1.0);
    r.p = 2.0 * (1.0 - normal_cdf(std::abs(r.statistic) / null_sd));
    r.defined = true;
    return r;
}

PairedTestReport paired_tests(const std::vector<double>& diffs) {
    if (diffs.size() < 5) throw std::invalid_argument("paired_tests: need at least 5 differences");
    PairedTestReport rep;
    rep.n = static_cast<int>(diffs.size());

    const double sd = sample_std(diffs);
    if (sd > 0.0) {
        rep.t_stat = sample_mean(diffs) / (sd / std::sqrt(static_cast<double>(rep.n)));
        boost::math::students_t_distribution<double> dist(static_cast<double>(rep.n - 1));
        rep.t_p = boost::math::cdf(boost::math::complement(dist, rep.t_stat));
        rep.t_defined = true;
    }
    rep.wilcoxon = wilcoxon_signed_rank(diffs);
    rep.sign = sign_test(diffs);
    rep.shapiro = shapiro_wilk(diffs);
    rep.symmetry = symmetry_test(diffs);
    rep.normality_flag = rep.shapiro.defined && rep.shapiro.p < 0.05;
    rep.symmetry_flag = rep.symmetry.defined && rep.symmetry.p < 0.05;
    return rep;
}

}  // namespace optarb::stats
