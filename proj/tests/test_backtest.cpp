#include <doctest.h>

#include <cmath>
#include <map>
#include <stdexcept>

#include "optarb/backtest.hpp"
#include "optarb/rng.hpp"

using namespace optarb;

namespace {

SyntheticConfig small_market(double noise, std::uint64_t seed) {
    SyntheticConfig cfg;
    cfg.n_dates = 40;
    cfg.first_maturity = 18;
    cfg.maturity_every = 10;
    cfg.arb_noise_scale = noise;
    cfg.arb_ar1 = 0.7;
    cfg.seed = seed;
    return cfg;
}

// Universes and flat predictions over near-the-money listed synthetic longs.
struct Setup {
    ChainTable chain;
    std::map<int, std::vector<AssetId>> universes;
    std::map<int, std::map<AssetId, double>> predictions;
};

Setup make_setup(double noise, std::uint64_t seed, int first_t, int last_t) {
    Setup s;
    s.chain = generate_synthetic_market(small_market(noise, seed));
    Rng rng(seed ^ 0xabcdef);
    for (int t = first_t; t <= last_t; ++t) {
        std::vector<AssetId> u;
        for (const AssetId& a : s.chain.sl_assets_on(t)) {
            if (a.maturity.trading_date() <= t + 1) continue;
            if (std::abs(a.strike - s.chain.underlying(t)->open) > 6.0) continue;
            u.push_back(a);
        }
        if (u.size() < 4) continue;
        s.universes[t] = u;
        for (const AssetId& a : u) s.predictions[t][a] = 1e-4 * rng.normal();
    }
    return s;
}

}  // namespace

TEST_CASE("metrics from a hand ledger") {
    BacktestLedger ledger;
    ledger.kind = PositionKind::SA;
    for (int i = 0; i < 3; ++i) {
        LedgerRow row;
        row.date = i + 1;
        row.traded = true;
        row.contracts = 1.0;
        row.pnl = static_cast<double>(i + 1);  // returns 1, 2, 3
        row.cum_pnl = row.pnl;
        row.hhi = 0.25;
        row.effective_n = 4.0;
        ledger.rows.push_back(row);
    }
    const MetricsReport m = compute_metrics(ledger);
    CHECK(m.ir_defined);
    CHECK(m.information_ratio == doctest::Approx(2.0));  // mean 2, sample std 1
    CHECK(!m.sortino_defined);                           // no downside at all
    CHECK(m.hhi_mean == doctest::Approx(0.25));
    CHECK(m.effective_n_mean == doctest::Approx(4.0));
    CHECK(m.n_traded_days == 3);
    CHECK_THROWS_AS(compute_metrics(BacktestLedger{}), std::invalid_argument);
}

TEST_CASE("zero-variance returns leave the ratio undefined") {
    BacktestLedger ledger;
    for (int i = 0; i < 4; ++i) {
        LedgerRow row;
        row.date = i + 1;
        row.traded = true;
        row.contracts = 2.0;
        row.pnl = 3.0;
        ledger.rows.push_back(row);
    }
    const MetricsReport m = compute_metrics(ledger);
    CHECK(!m.ir_defined);
    CHECK(!m.sortino_defined);
}

TEST_CASE("cosine series flags zero vectors and rolls a trailing mean") {
    std::vector<int> dates{1, 2, 3};
    Eigen::VectorXd v(3);
    v << 1.0, 2.0, 2.0;
    Eigen::VectorXd par = 2.0 * v;
    Eigen::VectorXd perp(3);
    perp << 2.0, -1.0, 0.0;  // orthogonal to v
    Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);
    const CosineSeries cs = cosine_series(dates, {v, v, v}, {par, perp, zero}, 2);
    CHECK(cs.cosine[0] == doctest::Approx(1.0));
    CHECK(cs.cosine[1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cs.defined[2] == 0);
    CHECK(cs.rolling[0] == doctest::Approx(1.0));
    CHECK(cs.rolling[1] == doctest::Approx(0.5));
    CHECK(cs.rolling[2] == doctest::Approx(0.0).epsilon(1e-12));  // window keeps only the defined value
    CHECK_THROWS_AS(cosine_series({1}, {v}, {par}, 0), std::invalid_argument);
}

TEST_CASE("SA on an arbitrage-free market loses exactly the costs") {
    Setup s = make_setup(0.0, 5, 4, 8);
    REQUIRE(!s.universes.empty());
    const BacktestLedger ledger = run_backtest(s.chain, s.universes, s.predictions, PositionKind::SA,
                                               BacktestOptions{0.0009});
    double cost_total = 0.0;
    for (const LedgerRow& row : ledger.rows) {
        CHECK(std::abs(row.inception_flow) < 1e-10);
        CHECK(row.maturity_flow == 0.0);
        CHECK(row.cost >= 0.0);
        cost_total += row.cost;
    }
    CHECK(ledger.total_pnl() == doctest::Approx(-cost_total).epsilon(1e-12));
    CHECK(cost_total > 0.0);
}

TEST_CASE("single-date ledger equals the hand computation at zero cost") {
    Setup s = make_setup(0.004, 6, 5, 5);
    REQUIRE(s.universes.count(5) == 1);
    const BacktestLedger ledger =
        run_backtest(s.chain, s.universes, s.predictions, PositionKind::SA, BacktestOptions{0.0});
    REQUIRE(ledger.rows.size() == 1);
    REQUIRE(ledger.positions.size() == 1);
    const Position& p = ledger.positions[0].second;

    // Reproduce the projection and the inception flow sum n_a K_a y_a.
    std::vector<AssetId> u = s.universes.at(5);
    std::sort(u.begin(), u.end());
    Eigen::VectorXd v_hat(static_cast<Eigen::Index>(u.size()));
    for (std::size_t i = 0; i < u.size(); ++i) {
        v_hat(static_cast<Eigen::Index>(i)) = u[i].strike * s.predictions.at(5).at(u[i]);
    }
    const Position expect = normalize_one_long_one_short(slsa_project(v_hat, build_constraints(u)));
    CHECK((p.n - expect.n).lpNorm<Eigen::Infinity>() < 1e-12);

    const auto obs = open_observations(u, s.chain, 5);
    double flow = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        flow += expect.n(static_cast<Eigen::Index>(i)) * u[i].strike * obs.at(u[i]).y;
    }
    CHECK(ledger.rows[0].inception_flow == doctest::Approx(flow).epsilon(1e-12));
    CHECK(ledger.rows[0].cost == 0.0);
    CHECK(ledger.rows[0].contracts == doctest::Approx(p.n.cwiseAbs().sum()));
}

TEST_CASE("benchmark ledgers settle nonzero maturity flows, SA never does") {
    Setup s = make_setup(0.003, 7, 4, 20);
    REQUIRE(s.universes.size() >= 8);
    const BacktestLedger sa =
        run_backtest(s.chain, s.universes, s.predictions, PositionKind::SA, BacktestOptions{0.0});
    const BacktestLedger bm1 =
        run_backtest(s.chain, s.universes, s.predictions, PositionKind::BM1, BacktestOptions{0.0});
    const BacktestLedger bm2 =
        run_backtest(s.chain, s.universes, s.predictions, PositionKind::BM2, BacktestOptions{0.0});

    double sa_maturity = 0.0, bm1_maturity = 0.0, bm2_maturity = 0.0;
    for (const LedgerRow& r : sa.rows) sa_maturity += std::abs(r.maturity_flow);
    for (const LedgerRow& r : bm1.rows) bm1_maturity += std::abs(r.maturity_flow);
    for (const LedgerRow& r : bm2.rows) bm2_maturity += std::abs(r.maturity_flow);
    CHECK(sa_maturity == 0.0);
    CHECK(bm1_maturity > 1e-3);
    CHECK(bm2_maturity > 1e-3);

    // Ledger conservation: a second pass over flows reproduces the total.
    for (const BacktestLedger* ledger : {&sa, &bm1, &bm2}) {
        double total = 0.0;
        for (const LedgerRow& r : ledger->rows) {
            total += r.inception_flow + r.maturity_flow - r.cost;
        }
        CHECK(ledger->total_pnl() == doctest::Approx(total).epsilon(1e-12));
    }

    // Every SA position contributes exactly one nonzero flow date.
    int traded_days = 0;
    for (const LedgerRow& r : sa.rows) {
        if (r.traded) ++traded_days;
    }
    CHECK(traded_days == static_cast<int>(s.universes.size()));
}

TEST_CASE("strike-correlated benchmark positions lose money into maturities") {
    // Positions proportional to K - mean(K) per maturity: the BM1 maturity
    // flow -sum(n K) is then strictly negative.
    Setup s = make_setup(0.002, 8, 4, 16);
    std::map<int, std::map<AssetId, double>> k_preds;
    for (const auto& [t, universe] : s.universes) {
        double mean_k = 0.0;
        for (const AssetId& a : universe) mean_k += a.strike;
        mean_k /= static_cast<double>(universe.size());
        for (const AssetId& a : universe) k_preds[t][a] = (a.strike - mean_k) * 1e-5;
    }
    const BacktestLedger bm1 =
        run_backtest(s.chain, s.universes, k_preds, PositionKind::BM1, BacktestOptions{0.0});
    int negative = 0, nonzero = 0;
    for (const LedgerRow& r : bm1.rows) {
        if (r.maturity_flow != 0.0) {
            ++nonzero;
            if (r.maturity_flow < 0.0) ++negative;
        }
    }
    REQUIRE(nonzero > 0);
    CHECK(negative * 2 > nonzero);  // losses dominate the maturity settlements
}

TEST_CASE("missing predictions or universes are hard errors") {
    Setup s = make_setup(0.002, 9, 5, 6);
    REQUIRE(s.universes.count(5) == 1);
    auto preds = s.predictions;
    preds[5].erase(preds[5].begin());  // drop one asset
    CHECK_THROWS_AS(run_backtest(s.chain, s.universes, preds, PositionKind::SA, BacktestOptions{}),
                    std::runtime_error);
    std::map<int, std::vector<AssetId>> no_universe;
    CHECK_THROWS_AS(run_backtest(s.chain, no_universe, s.predictions, PositionKind::SA, BacktestOptions{}),
                    std::runtime_error);
    CHECK_THROWS_AS(run_backtest(s.chain, s.universes, s.predictions, PositionKind::LS, BacktestOptions{}),
                    std::invalid_argument);
}
