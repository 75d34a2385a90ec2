#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "optarb/rng.hpp"
#include "optarb/stats.hpp"

using namespace optarb;
using namespace optarb::stats;

TEST_CASE("sign test exact tail values") {
    SUBCASE("ten positives out of ten") {
        const auto r = sign_test(std::vector<double>(10, 1.0));
        CHECK(r.defined);
        CHECK(r.p == 0.0009765625);  // 2^-10, exact
    }
    SUBCASE("alternating signs") {
        std::vector<double> d;
        for (int i = 0; i < 10; ++i) d.push_back(i % 2 == 0 ? 1.0 : -1.0);
        const auto r = sign_test(d);
        CHECK(r.n_positive == 5);
        CHECK(r.p == doctest::Approx(638.0 / 1024.0).epsilon(1e-15));  // 0.623046875
    }
    SUBCASE("one flip among ten") {
        std::vector<double> d(10, 1.0);
        d[3] = -1.0;
        const auto r = sign_test(d);
        CHECK(r.p == doctest::Approx(11.0 / 1024.0).epsilon(1e-15));
    }
    SUBCASE("zeros are dropped and the all-zero case is flagged") {
        CHECK(!sign_test(std::vector<double>(6, 0.0)).defined);
        std::vector<double> d{1.0, 0.0, 1.0, 0.0, 1.0};
        const auto r = sign_test(d);
        CHECK(r.n_nonzero == 3);
        CHECK(r.p == doctest::Approx(0.125));
    }
}

TEST_CASE("one-sided complementarity of the sign test") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> d;
        for (int i = 0; i < 5 + static_cast<int>(rng.below(20)); ++i) d.push_back(rng.normal());
        std::vector<double> neg(d.size());
        for (std::size_t i = 0; i < d.size(); ++i) neg[i] = -d[i];
        const auto a = sign_test(d);
        const auto b = sign_test(neg);
        CHECK(a.p + b.p >= 1.0 - 1e-12);  // the observed atom is counted on both sides
    }
}

TEST_CASE("wilcoxon exact distribution matches full enumeration") {
    Rng rng(11);
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<double> d;
        const int n = 5 + static_cast<int>(rng.below(6));
        for (int i = 0; i < n; ++i) {
            double v = rng.normal();
            if (rng.bernoulli(0.25)) v = std::round(v * 4.0) / 4.0;  // induce magnitude ties
            d.push_back(v);
        }
        bool any_nonzero = false;
        for (double v : d) any_nonzero = any_nonzero || v != 0.0;
        if (!any_nonzero) continue;
        const auto r = wilcoxon_signed_rank(d);
        REQUIRE(r.defined);
        REQUIRE(r.exact);
        CHECK(r.p == doctest::Approx(wilcoxon_enumerated_p(d)).epsilon(1e-12));
    }
}

TEST_CASE("wilcoxon strongly positive differences give a tiny p") {
    std::vector<double> d{0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0};
    const auto r = wilcoxon_signed_rank(d);
    CHECK(r.w_plus == doctest::Approx(55.0));
    CHECK(r.p == doctest::Approx(std::pow(2.0, -10)).epsilon(1e-12));
}

TEST_CASE("wilcoxon falls back to the corrected normal approximation") {
    Rng rng(13);
    std::vector<double> d;
    for (int i = 0; i < 60; ++i) d.push_back(rng.normal() + 0.6);
    const auto r = wilcoxon_signed_rank(d);
    CHECK(r.defined);
    CHECK(!r.exact);
    CHECK(r.p < 0.01);
    CHECK(r.p > 0.0);
}

TEST_CASE("shapiro-wilk separates normal from skewed samples") {
    Rng rng(17);
    std::vector<double> normal_sample, skewed;
    for (int i = 0; i < 60; ++i) {
        normal_sample.push_back(rng.normal());
        skewed.push_back(std::exp(rng.normal() * 1.2));
    }
    const auto a = shapiro_wilk(normal_sample);
    REQUIRE(a.defined);
    CHECK(a.w > 0.95);
    CHECK(a.p > 0.05);
    const auto b = shapiro_wilk(skewed);
    REQUIRE(b.defined);
    CHECK(b.p < 0.01);
    CHECK(!shapiro_wilk({1.0, 1.0, 1.0, 1.0}).defined);  // constant data
    CHECK(!shapiro_wilk({1.0, 2.0}).defined);            // too small
}

TEST_CASE("symmetry test flags skew and passes symmetric data") {
    Rng rng(19);
    std::vector<double> sym, skew;
    for (int i = 0; i < 200; ++i) {
        sym.push_back(rng.normal());
        skew.push_back(std::exp(rng.normal()));
    }
    const auto a = symmetry_test(sym);
    REQUIRE(a.defined);
    CHECK(a.p > 0.05);
    const auto b = symmetry_test(skew);
    REQUIRE(b.defined);
    CHECK(b.p < 0.05);
}

TEST_CASE("paired battery wiring") {
    std::vector<double> d{1.0, 2.0, 3.0, 4.0, 5.0};
    const auto rep = paired_tests(d);
    CHECK(rep.n == 5);
    CHECK(rep.t_defined);
    CHECK(rep.t_stat == doctest::Approx(3.0 / std::sqrt(0.5)).epsilon(1e-12));
    CHECK(rep.t_p < 0.01);
    CHECK(rep.sign.p == doctest::Approx(0.03125));
    CHECK(rep.wilcoxon.exact);
    CHECK_THROWS_AS(paired_tests({1.0, 2.0}), std::invalid_argument);

    SUBCASE("degenerate all-zero differences flag the sign test") {
        const auto z = paired_tests(std::vector<double>(8, 0.0));
        CHECK(!z.sign.defined);
        CHECK(!z.wilcoxon.defined);
        CHECK(!z.t_defined);
    }
}
