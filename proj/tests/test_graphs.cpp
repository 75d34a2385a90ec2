#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "optarb/graphs.hpp"
#include "optarb/rng.hpp"

using namespace optarb;

namespace {

AssetId sl(int maturity_date, double strike) {
    return AssetId::synthetic_long(close_time(maturity_date), strike);
}

bool has_edge(const std::vector<std::pair<int, int>>& edges, int s, int d) {
    return std::find(edges.begin(), edges.end(), std::make_pair(s, d)) != edges.end();
}

}  // namespace

TEST_CASE("neighbor count rounds to the nearest even number, floored to one") {
    CHECK(neighbor_count(1.0 / 3.0, 6) == 2);   // 2 exactly
    CHECK(neighbor_count(1.0 / 3.0, 2) == 1);   // 0.667 -> 0 -> floor to 1
    CHECK(neighbor_count(1.0 / 3.0, 3) == 2);   // 1.0 -> half-up to 2
    CHECK(neighbor_count(1.0 / 3.0, 12) == 4);
    CHECK(neighbor_count(0.5, 10) == 6);        // 5 -> half-up rounds 2.5 to 3 pairs
    CHECK(neighbor_count(0.0, 50) == 1);
    CHECK(neighbor_count(1.0, 7) == 8);         // 7 -> 2*round(3.5) = 8 (half-up)
    CHECK_THROWS_AS(neighbor_count(1.5, 4), std::invalid_argument);
}

TEST_CASE("k-prefix parity: the count is one or even") {
    for (int size = 1; size <= 40; ++size) {
        for (double p : {0.0, 0.1, 1.0 / 3.0, 0.5, 0.9, 1.0}) {
            const int k = neighbor_count(p, size);
            CHECK((k == 1 || k % 2 == 0));
            CHECK(k >= 1);
        }
    }
}

TEST_CASE("strike neighbors within rank two, ties included") {
    // Strikes {95, 100, 105, 110}, one maturity; group of 4 at p = 1/3 gives
    // 4/3 = 1.33 -> k' = 2.
    const std::vector<AssetId> nodes{sl(40, 95), sl(40, 100), sl(40, 105), sl(40, 110)};
    const auto edges = build_edges(nodes, 1.0 / 3.0);
    // Node 100 (index 1): neighbor distances 5 (95), 5 (105), 10 (110);
    // the union of ranks 1..2 covers the two ties at distance 5.
    CHECK(has_edge(edges, 0, 1));
    CHECK(has_edge(edges, 2, 1));
    CHECK(!has_edge(edges, 3, 1));
    // Node 95 (index 0): distances 5, 10, 15 -> {100, 105}.
    CHECK(has_edge(edges, 1, 0));
    CHECK(has_edge(edges, 2, 0));
    CHECK(!has_edge(edges, 3, 0));
    for (const auto& [s, d] : edges) CHECK(s != d);
}

TEST_CASE("maturity-direction edges connect same-strike nodes") {
    const std::vector<AssetId> nodes{sl(40, 100), sl(61, 100), sl(82, 100)};
    const auto edges = build_edges(nodes, 1.0 / 3.0);  // group of 3 -> k' = 2
    CHECK(has_edge(edges, 0, 1));
    CHECK(has_edge(edges, 2, 1));
    CHECK(has_edge(edges, 1, 0));
    CHECK(has_edge(edges, 1, 2));
}

TEST_CASE("uniform grids with even k-prefix give symmetric same-maturity edges") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 4 + static_cast<int>(rng.below(9));
        std::vector<AssetId> nodes;
        for (int i = 0; i < n; ++i) nodes.push_back(sl(40, 90.0 + 2.5 * i));
        const double p_dg = 1.0 / 3.0;
        if (neighbor_count(p_dg, n) % 2 != 0) continue;
        const auto edges = build_edges(nodes, p_dg);
        const int k = neighbor_count(p_dg, n);
        // The k'-nearest windows of interior nodes are symmetric; boundary
        // nodes reach farther and receive without reciprocating.
        auto interior = [&](int v) { return v >= k / 2 && v <= n - 1 - k / 2; };
        for (const auto& [s, d] : edges) {
            if (interior(s) && interior(d)) CHECK(has_edge(edges, d, s));
        }
    }
}

TEST_CASE("maturity groups of two or more stay connected through strike edges") {
    Rng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        // Contiguous uniform strike runs, as produced by universe selection.
        const int n = 2 + static_cast<int>(rng.below(10));
        std::vector<AssetId> nodes;
        for (int i = 0; i < n; ++i) nodes.push_back(sl(40, 100.0 + 2.0 * i));
        const auto edges = build_edges(nodes, 1.0 / 3.0);
        std::vector<int> comp(static_cast<std::size_t>(n), -1);
        std::vector<int> stack{0};
        comp[0] = 0;
        while (!stack.empty()) {
            const int v = stack.back();
            stack.pop_back();
            for (const auto& [s, d] : edges) {
                for (int next : {s == v ? d : -1, d == v ? s : -1}) {
                    if (next >= 0 && comp[static_cast<std::size_t>(next)] < 0) {
                        comp[static_cast<std::size_t>(next)] = 0;
                        stack.push_back(next);
                    }
                }
            }
        }
        for (int i = 0; i < n; ++i) CHECK(comp[static_cast<std::size_t>(i)] == 0);
    }
}

namespace {

// A tiny deterministic market with stable universes across three dates.
struct Fixture {
    ChainTable chain;
    std::map<int, std::vector<AssetId>> universes;
    SyntheticConfig cfg;

    explicit Fixture(double noise, std::uint64_t seed = 21) {
        cfg.n_dates = 30;
        cfg.first_maturity = 20;
        cfg.maturity_every = 8;
        cfg.arb_noise_scale = noise;
        cfg.arb_ar1 = 0.7;
        cfg.seed = seed;
        chain = generate_synthetic_market(cfg);
        for (int t = 3; t <= 10; ++t) {
            std::vector<AssetId> universe;
            for (const AssetId& a : chain.sl_assets_on(t - 1)) {
                if (std::abs(a.strike - 100.0) <= 6.0 && chain.sl_traded(a, t - 1)) {
                    universe.push_back(a);
                }
            }
            universes[t] = universe;
        }
    }
};

}  // namespace

TEST_CASE("node features have nine columns in node order") {
    Fixture fx(0.002);
    const ArbGraph g = build_graph(fx.chain, fx.universes, 6, 1.0 / 3.0);
    CHECK(g.features.cols() == 9);
    CHECK(g.features.rows() == static_cast<Eigen::Index>(g.nodes.size()));
    CHECK(std::is_sorted(g.nodes.begin(), g.nodes.end()));
    const UnderlyingBar* bar = fx.chain.underlying(5);
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        CHECK(g.features(static_cast<Eigen::Index>(i), 0) ==
              doctest::Approx(bar->close - g.nodes[i].strike));
        CHECK(g.features(static_cast<Eigen::Index>(i), 1) ==
              doctest::Approx(g.nodes[i].maturity.tau - 6.0));
        CHECK(g.features(static_cast<Eigen::Index>(i), 7) > 0.0);  // implied vols present
        CHECK(g.features(static_cast<Eigen::Index>(i), 8) > 0.0);
    }
}

TEST_CASE("high estimate uses high put with low call") {
    Fixture fx(0.004);
    const int t = 6;
    const Eigen::MatrixXd x = node_features(fx.chain, fx.universes, t);
    const auto& nodes = fx.universes.at(t);
    // Reproduce feature 4 by hand for one asset present in the prior universe.
    const auto& prev_universe = fx.universes.at(t - 1);
    const UnderlyingBar* bar = fx.chain.underlying(t - 1);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        double delta_sum = 0.0;
        int count = 0;
        double own = 0.0;
        bool own_ok = false;
        for (const AssetId& a : prev_universe) {
            if (a.maturity_key() != nodes[i].maturity_key()) continue;
            if (!fx.chain.sl_traded(a, t - 1)) continue;
            const OptionQuote* put = fx.chain.quote(a.with_type(AssetType::PT), t - 1);
            const OptionQuote* call = fx.chain.quote(a.with_type(AssetType::CL), t - 1);
            const double d = delta_from_prices(bar->low, put->high, call->low, a.strike);
            delta_sum += d;
            ++count;
            if (a == nodes[i]) {
                own = d;
                own_ok = true;
            }
        }
        if (!own_ok || count == 0) continue;
        CHECK(x(static_cast<Eigen::Index>(i), 4) == doctest::Approx(own - delta_sum / count).epsilon(1e-10));
    }
}

TEST_CASE("arbitrage-free market yields zero y features and targets") {
    Fixture fx(0.0);
    const ArbGraph g = build_graph(fx.chain, fx.universes, 6, 1.0 / 3.0);
    for (Eigen::Index i = 0; i < g.features.rows(); ++i) {
        for (int col : {2, 3, 4, 5, 6}) {
            CHECK(std::abs(g.features(i, col)) < 1e-10);
        }
    }
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        if (g.has_target[i]) CHECK(std::abs(g.targets(static_cast<Eigen::Index>(i))) < 1e-10);
    }
}

TEST_CASE("feature computation requires the two prior dates") {
    Fixture fx(0.0);
    std::map<int, std::vector<AssetId>> universe_at_two{{2, fx.universes.at(3)}};
    CHECK_THROWS_AS(node_features(fx.chain, universe_at_two, 2), std::invalid_argument);
}

TEST_CASE("graph serialization round trips") {
    Fixture fx(0.002);
    const ArbGraph g = build_graph(fx.chain, fx.universes, 6, 1.0 / 3.0);
    const ArbGraph back = graph_from_json(graph_to_json(g));
    CHECK(back.date == g.date);
    CHECK(back.nodes.size() == g.nodes.size());
    CHECK(back.edges == g.edges);
    CHECK((back.features - g.features).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK((back.targets - g.targets).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(back.has_target == g.has_target);

    const std::string path = (std::filesystem::temp_directory_path() / "optarb_graphs.jsonl").string();
    save_graphs(path, {g, g});
    const auto loaded = load_graphs(path);
    CHECK(loaded.size() == 2);
    CHECK(loaded[1].edges == g.edges);
}
