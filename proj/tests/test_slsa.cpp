#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <map>

#include "optarb/rng.hpp"
#include "optarb/slsa.hpp"

using namespace optarb;

namespace {

AssetId sl(int maturity_date, double strike) {
    return AssetId::synthetic_long(close_time(maturity_date), strike);
}

std::vector<AssetId> random_universe(Rng& rng, int max_per_maturity = 6) {
    std::vector<AssetId> u;
    const int n_mats = 1 + static_cast<int>(rng.below(3));
    for (int m = 0; m < n_mats; ++m) {
        const int group = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_per_maturity - 1)));
        for (int i = 0; i < group; ++i) {
            u.push_back(sl(30 + 21 * m, 90.0 + 2.5 * i));
        }
    }
    return u;
}

Eigen::VectorXd random_vector(Rng& rng, Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
    return v;
}

// Independent equality-constrained least squares: minimize ||w - v|| s.t.
// A w = 0, via w = v - A^T (A A^T)^+ A v.
Eigen::VectorXd constrained_lsq_oracle(const Eigen::VectorXd& v, const Eigen::MatrixXd& A) {
    const Eigen::MatrixXd gram = A * A.transpose();
    const Eigen::VectorXd rhs = A * v;
    const Eigen::VectorXd lambda = gram.completeOrthogonalDecomposition().solve(rhs);
    return v - A.transpose() * lambda;
}

}  // namespace

TEST_CASE("constraint matrix shapes and null dimensions") {
    const std::vector<AssetId> three{sl(30, 95), sl(30, 100), sl(30, 105)};
    const ConstraintMatrix cm = build_constraints(three);
    CHECK(cm.A.rows() == 2);
    CHECK(cm.A.cols() == 3);
    CHECK(cm.null_basis.cols() == 1);

    const std::vector<AssetId> two{sl(30, 95), sl(30, 100)};
    CHECK(build_constraints(two).null_basis.cols() == 0);

    CHECK_THROWS_AS(build_constraints({}), std::invalid_argument);
    CHECK_THROWS_AS(build_constraints({sl(30, 100), sl(30, 95)}), std::invalid_argument);  // unordered
}

TEST_CASE("null space of strikes {1,2,3} is spanned by (1,-2,1)/sqrt(6)") {
    const std::vector<AssetId> u{sl(30, 1.0), sl(30, 2.0), sl(30, 3.0)};
    const ConstraintMatrix cm = build_constraints(u);
    REQUIRE(cm.null_basis.cols() == 1);
    Eigen::Vector3d expected(1.0, -2.0, 1.0);
    expected /= std::sqrt(6.0);
    const Eigen::Vector3d got = cm.null_basis.col(0);
    CHECK(std::abs(std::abs(got.dot(expected)) - 1.0) < 1e-12);
    CHECK((cm.A * cm.null_basis).lpNorm<Eigen::Infinity>() < 1e-12);
    const Eigen::MatrixXd gram = cm.null_basis.transpose() * cm.null_basis;
    CHECK((gram - Eigen::MatrixXd::Identity(1, 1)).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("projection onto the null space for strikes {1,2,3}") {
    const std::vector<AssetId> u{sl(30, 1.0), sl(30, 2.0), sl(30, 3.0)};
    const ConstraintMatrix cm = build_constraints(u);
    Eigen::Vector3d v_hat(1.0, 0.0, 0.0);
    const Position p = slsa_project(v_hat, cm);
    CHECK(p.n(0) == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(p.n(1) == doctest::Approx(-2.0 / 6.0).epsilon(1e-12));
    CHECK(p.n(2) == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(p.m == 0.0);

    SUBCASE("idempotence") {
        const Position again = slsa_project(p.n, cm);
        CHECK((again.n - p.n).lpNorm<Eigen::Infinity>() < 1e-12);
    }
    SUBCASE("trivial null space projects to zero") {
        const std::vector<AssetId> pairs{sl(30, 95), sl(30, 100), sl(51, 95), sl(51, 100)};
        const ConstraintMatrix cm2 = build_constraints(pairs);
        const Position z = slsa_project(Eigen::VectorXd::Ones(4), cm2);
        CHECK(z.degenerate);
        CHECK(z.n.lpNorm<Eigen::Infinity>() == 0.0);
    }
}

TEST_CASE("random projections satisfy constraints, optimality, and sign") {
    Rng rng(123);
    for (int trial = 0; trial < 200; ++trial) {
        const std::vector<AssetId> u = random_universe(rng);
        const ConstraintMatrix cm = build_constraints(u);
        const Eigen::VectorXd v_hat = random_vector(rng, static_cast<Eigen::Index>(u.size()));
        const Position p = slsa_project(v_hat, cm);

        CHECK((cm.A * p.n).lpNorm<Eigen::Infinity>() < 1e-8);
        CHECK(v_hat.dot(p.n) >= -1e-12);
        const Position twice = slsa_project(p.n, cm);
        CHECK((twice.n - p.n).lpNorm<Eigen::Infinity>() < 1e-10);

        const Eigen::VectorXd oracle = constrained_lsq_oracle(v_hat, cm.A);
        CHECK((p.n - oracle).lpNorm<Eigen::Infinity>() < 1e-8);
    }
}

TEST_CASE("benchmark projections") {
    const std::vector<AssetId> u{sl(30, 95), sl(30, 100), sl(30, 105)};
    Eigen::Vector3d v_hat(3.0, 1.0, 2.0);
    const Position bm2 = bm_project(v_hat, u, PositionKind::BM2);
    CHECK(bm2.n(0) == doctest::Approx(1.0));
    CHECK(bm2.n(1) == doctest::Approx(-1.0));
    CHECK(bm2.n(2) == doctest::Approx(0.0));
    CHECK(bm2.m == 0.0);

    SUBCASE("BM1 mean-centers each maturity block") {
        Rng rng(5);
        const std::vector<AssetId> two{sl(30, 95), sl(30, 100), sl(30, 105), sl(51, 100), sl(51, 105)};
        const Eigen::VectorXd v = random_vector(rng, 5);
        const Position bm1 = bm_project(v, two, PositionKind::BM1);
        CHECK(bm1.n.head(3).sum() == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(bm1.n.tail(2).sum() == doctest::Approx(0.0).epsilon(1e-12));
        // Matches the block least-squares oracle (rows Sum n = 0 per maturity).
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2, 5);
        A.row(0).head(3).setOnes();
        A.row(1).tail(2).setOnes();
        CHECK((bm1.n - constrained_lsq_oracle(v, A)).lpNorm<Eigen::Infinity>() < 1e-10);
    }
    SUBCASE("BM1 satisfies the contract-sum family but not the strike-weighted one") {
        Rng rng(6);
        int violations = 0;
        for (int trial = 0; trial < 20; ++trial) {
            const std::vector<AssetId> uni = random_universe(rng);
            const Eigen::VectorXd v = random_vector(rng, static_cast<Eigen::Index>(uni.size()));
            const Position bm1 = bm_project(v, uni, PositionKind::BM1);
            double strike_weighted = 0.0;
            for (std::size_t i = 0; i < uni.size(); ++i) {
                strike_weighted += uni[i].strike * bm1.n(static_cast<Eigen::Index>(i));
            }
            if (std::abs(strike_weighted) > 1e-6) ++violations;
        }
        CHECK(violations > 15);
    }
}

TEST_CASE("one-long-one-short normalization") {
    Position p;
    p.universe = {sl(30, 1.0), sl(30, 2.0), sl(30, 3.0)};
    p.kind = PositionKind::SA;
    p.n = Eigen::Vector3d(1.0 / 6.0, -2.0 / 6.0, 1.0 / 6.0);
    const Position normed = normalize_one_long_one_short(p);
    CHECK(normed.n(0) == doctest::Approx(0.5));
    CHECK(normed.n(1) == doctest::Approx(-1.0));
    CHECK(normed.n(2) == doctest::Approx(0.5));

    SUBCASE("already normalized positions are unchanged") {
        p.n = Eigen::Vector3d(0.5, -1.0, 0.5);
        const Position same = normalize_one_long_one_short(p);
        CHECK((same.n - p.n).lpNorm<Eigen::Infinity>() == 0.0);
        CHECK(!same.degenerate);
    }
    SUBCASE("all-zero positions come back flagged") {
        p.n = Eigen::Vector3d::Zero();
        CHECK(normalize_one_long_one_short(p).degenerate);
    }
}

namespace {

// Brute-force option-leg replay: open n_a synthetic longs at the open of t
// (buy calls, sell puts), settle each leg at its expiry close.
struct Replay {
    double inception = 0.0;                 // cash at o(t)
    std::map<int, double> at_maturity;      // cash by settlement date
};

Replay replay_flows(const Position& p, const ChainTable& chain, int t) {
    Replay r;
    for (Eigen::Index i = 0; i < p.n.size(); ++i) {
        const double n = p.n(i);
        if (n == 0.0) continue;
        const AssetId& a = p.universe[static_cast<std::size_t>(i)];
        const OptionQuote* put = chain.quote(a.with_type(AssetType::PT), t);
        const OptionQuote* call = chain.quote(a.with_type(AssetType::CL), t);
        REQUIRE(put != nullptr);
        REQUIRE(call != nullptr);
        r.inception += n * (put->open - call->open);  // pay the call, receive the put
        const int m_date = a.maturity.trading_date();
        const UnderlyingBar* settle = chain.underlying(m_date);
        REQUIRE(settle != nullptr);
        const double s_m = settle->close;
        r.at_maturity[m_date] +=
            n * (std::max(s_m - a.strike, 0.0) - std::max(a.strike - s_m, 0.0));
    }
    return r;
}

SyntheticConfig noisy_config(std::uint64_t seed) {
    SyntheticConfig cfg;
    cfg.n_dates = 46;
    cfg.first_maturity = 22;
    cfg.maturity_every = 12;
    cfg.arb_noise_scale = 0.004;
    cfg.arb_ar1 = 0.6;
    cfg.seed = seed;
    return cfg;
}

std::vector<AssetId> listed_universe(const ChainTable& chain, int t, int max_assets = 12) {
    std::vector<AssetId> u;
    for (const AssetId& a : chain.sl_assets_on(t)) {
        if (a.maturity.trading_date() <= t) continue;
        if (std::abs(a.strike - chain.underlying(t)->open) > 8.0) continue;
        u.push_back(a);
        if (static_cast<int>(u.size()) >= max_assets) break;
    }
    return u;
}

}  // namespace

TEST_CASE("cash flow formulas match the option-leg replay") {
    Rng rng(2718);
    const ChainTable chain = generate_synthetic_market(noisy_config(12));
    int tested = 0;
    for (int trial = 0; trial < 60; ++trial) {
        const int t = 3 + static_cast<int>(rng.below(10));
        const std::vector<AssetId> u = listed_universe(chain, t);
        if (u.size() < 4) continue;
        const Eigen::VectorXd v_hat = random_vector(rng, static_cast<Eigen::Index>(u.size()));

        SUBCASE("") {}  // keep doctest quiet about empty subcases
        {
            const Position sa = slsa_project(v_hat, build_constraints(u));
            if (!sa.degenerate) {
                const auto flows = slsa_cashflows(sa, chain, t);
                const Replay r = replay_flows(sa, chain, t);
                REQUIRE(flows.size() == 1);
                CHECK(flows[0].amount == doctest::Approx(r.inception).epsilon(1e-9));
                for (const auto& [d, amount] : r.at_maturity) {
                    CHECK(std::abs(amount) < 1e-9);  // SA settles flat at expiry
                }
                ++tested;
            }
        }
        for (PositionKind kind : {PositionKind::BM1, PositionKind::BM2}) {
            const Position bm = bm_project(v_hat, u, kind);
            if (bm.degenerate) continue;
            const auto flows = bm_cashflows(bm, chain, t);
            const Replay r = replay_flows(bm, chain, t);
            CHECK(flows[0].amount == doctest::Approx(r.inception).epsilon(1e-9));
            std::map<int, double> formula_flows;
            for (std::size_t f = 1; f < flows.size(); ++f) {
                formula_flows[flows[f].when.trading_date()] += flows[f].amount;
            }
            for (const auto& [d, amount] : r.at_maturity) {
                CHECK(formula_flows[d] == doctest::Approx(amount).epsilon(1e-9));
            }
        }
    }
    CHECK(tested >= 20);
}

TEST_CASE("arbitrage-free market makes SA positions free") {
    SyntheticConfig cfg = noisy_config(3);
    cfg.arb_noise_scale = 0.0;
    const ChainTable chain = generate_synthetic_market(cfg);
    Rng rng(9);
    for (int t : {4, 6, 9}) {
        const std::vector<AssetId> u = listed_universe(chain, t);
        if (u.size() < 4) continue;
        const Position sa = slsa_project(random_vector(rng, static_cast<Eigen::Index>(u.size())),
                                         build_constraints(u));
        if (sa.degenerate) continue;
        const auto flows = slsa_cashflows(sa, chain, t);
        CHECK(std::abs(flows[0].amount) < 1e-10);
    }
}

TEST_CASE("LS value is a deterministic function of time under the AF market") {
    // Same market parameters, different underlying paths: the marked-to-model
    // price series of a fixed long-short must coincide.
    std::vector<std::vector<double>> series;
    for (std::uint64_t seed : {11ull, 22ull, 33ull}) {
        SyntheticConfig cfg = noisy_config(seed);
        cfg.arb_noise_scale = 0.0;
        const ChainTable chain = generate_synthetic_market(cfg);
        const std::vector<AssetId> u{sl(22, 98), sl(22, 102), sl(34, 98), sl(34, 102)};
        Eigen::VectorXd n(4);
        n << 2.0, -1.0, 0.5, -0.75;
        const double m = -n.sum();
        std::vector<double> prices;
        for (int t = 3; t <= 20; ++t) {
            const UnderlyingBar* bar = chain.underlying(t);
            double price = m * bar->close;
            bool ok = true;
            for (int i = 0; i < 4; ++i) {
                const OptionQuote* put = chain.quote(u[static_cast<std::size_t>(i)].with_type(AssetType::PT), t);
                const OptionQuote* call = chain.quote(u[static_cast<std::size_t>(i)].with_type(AssetType::CL), t);
                if (put == nullptr || call == nullptr) {
                    ok = false;
                    break;
                }
                price += n(i) * synthetic_long_price(put->close, call->close);
            }
            REQUIRE(ok);
            prices.push_back(price);
        }
        series.push_back(prices);
    }
    for (std::size_t p = 1; p < series.size(); ++p) {
        REQUIRE(series[p].size() == series[0].size());
        for (std::size_t i = 0; i < series[0].size(); ++i) {
            CHECK(series[p][i] == doctest::Approx(series[0][i]).epsilon(1e-9));
        }
    }
}
