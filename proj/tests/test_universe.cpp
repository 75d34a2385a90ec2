#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "optarb/rng.hpp"
#include "optarb/universe.hpp"

using namespace optarb;

namespace {

UniverseCandidate cand(int maturity_date, double strike, double mu) {
    return {AssetId::synthetic_long(close_time(maturity_date), strike), mu};
}

// Random instance on a uniform strike grid (possibly with gaps).
UniverseProblem random_instance(Rng& rng, int max_candidates, int p_univ) {
    std::vector<UniverseCandidate> cs;
    const int n_mats = 1 + static_cast<int>(rng.below(3));
    const double spot = 100.0 + rng.uniform(-3, 3);
    int total = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_candidates - 1)));
    for (int m = 0; m < n_mats && total > 0; ++m) {
        const int maturity = 30 + 21 * m;
        std::set<int> offsets;
        const int group = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(total)));
        for (int i = 0; i < group; ++i) offsets.insert(static_cast<int>(rng.below(9)) - 4);
        for (int off : offsets) {
            if (rng.bernoulli(0.15)) continue;  // leave occasional gaps
            cs.push_back(cand(maturity, 100.0 + 2.0 * off, rng.uniform(0, 1)));
            --total;
        }
    }
    if (cs.size() < 2) cs.push_back(cand(30, 98.0, 0.5));
    return build_problem(std::move(cs), p_univ, 2.0 * 2.0, spot);
}

void check_solution_invariants(const UniverseProblem& p, const UniverseSolution& sol) {
    REQUIRE(sol.feasible);
    // Map selected assets back to candidate indices.
    std::vector<int> idx;
    for (const AssetId& a : sol.selected) {
        for (int i = 0; i < static_cast<int>(p.candidates.size()); ++i) {
            if (p.candidates[static_cast<std::size_t>(i)].asset == a) idx.push_back(i);
        }
    }
    REQUIRE(idx.size() == sol.selected.size());
    CHECK(universe_selection_feasible(p, idx, sol.achieved_p));

    // Near-ATM chain closure: walking parents from any selected asset stays selected.
    std::set<int> in(idx.begin(), idx.end());
    for (int i : idx) {
        int cur = i;
        while (p.atm_parent[static_cast<std::size_t>(cur)] >= 0) {
            cur = p.atm_parent[static_cast<std::size_t>(cur)];
            CHECK(in.count(cur) == 1);
        }
    }
    // Per-maturity counts are 0 or >= 2.
    std::map<std::int64_t, int> counts;
    for (const AssetId& a : sol.selected) counts[a.maturity_key()] += 1;
    for (const auto& [mk, c] : counts) CHECK(c >= 2);
    // Far pairs never co-selected.
    for (const auto& [i, j] : p.far_pairs) {
        CHECK(!(in.count(i) == 1 && in.count(j) == 1));
    }
}

}  // namespace

TEST_CASE("tradability model degenerate labelings") {
    Eigen::MatrixX2d x(4, 2);
    x << 1.0, 10, 1.02, 20, 0.98, 30, 1.05, 40;
    const std::vector<int> ones{1, 1, 1, 1};
    const auto model = fit_tradability(x, ones, x, ones);
    CHECK(model.predict(1.0, 15.0) == doctest::Approx(1.0));
    CHECK(model.predict(0.5, 500.0) == doctest::Approx(1.0));  // k-NN fallback, still all ones
}

TEST_CASE("empty radius ball falls back to the five nearest labels") {
    // Labels: the three nearest points to the query carry 1, the rest 0.
    Eigen::MatrixX2d x(8, 2);
    std::vector<int> y;
    for (int i = 0; i < 8; ++i) {
        x(i, 0) = 1.0 + 0.01 * i;
        x(i, 1) = 10.0 + i;
        y.push_back(i < 3 ? 1 : 0);
    }
    const std::vector<double> tiny_radius{1e-9};
    const auto model = fit_tradability(x, y, x, y, tiny_radius);
    // A query between grid points has an empty ball; the 5 nearest carry
    // labels {1, 1, 1, 0, 0}.
    CHECK(model.predict(1.005, 10.5) == doctest::Approx(3.0 / 5.0));
}

TEST_CASE("radius covering every point predicts the global label mean") {
    Eigen::MatrixX2d x(5, 2);
    x << 0.9, 5, 0.95, 10, 1.0, 15, 1.05, 20, 1.1, 25;
    const std::vector<int> y{1, 0, 1, 0, 1};
    const std::vector<double> huge{50.0};
    const auto model = fit_tradability(x, y, x, y, huge);
    for (double q : {0.92, 1.0, 1.08}) {
        CHECK(model.predict(q, 12.0) == doctest::Approx(0.6));
    }
    CHECK_THROWS_AS(fit_tradability(Eigen::MatrixX2d(0, 2), {}, x, y), std::invalid_argument);
}

TEST_CASE("near-ATM predecessors and ATM set") {
    auto p = build_problem({cand(30, 95, 0.5), cand(30, 100, 0.9), cand(30, 105, 0.8)}, 2, 10.0, 100.0);
    CHECK(p.atm_parent[1] == -1);  // the ATM asset has no predecessor constraint
    CHECK(p.atm_parent[0] == 1);
    CHECK(p.atm_parent[2] == 1);
    CHECK_THROWS_AS(build_problem({}, 2, 10.0, 100.0), std::invalid_argument);
}

TEST_CASE("spec instance selects the two best chained strikes") {
    auto p = build_problem({cand(30, 95, 0.5), cand(30, 100, 0.9), cand(30, 105, 0.8)}, 2, 10.0, 100.0);
    const UniverseSolution sol = solve_universe(p);
    REQUIRE(sol.feasible);
    CHECK(sol.achieved_p == 2);
    REQUIRE(sol.selected.size() == 2);
    CHECK(sol.selected[0].strike == doctest::Approx(100.0));
    CHECK(sol.selected[1].strike == doctest::Approx(105.0));
    CHECK(sol.objective == doctest::Approx(1.7));
}

TEST_CASE("a maturity cannot hold a single selected asset") {
    // Two maturities with two assets each; p_univ = 3 would need a lone asset.
    auto p = build_problem(
        {cand(30, 100, 0.9), cand(30, 102, 0.8), cand(51, 100, 0.7), cand(51, 102, 0.6)}, 3, 4.0, 100.0);
    const UniverseSolution sol = solve_universe(p);
    REQUIRE(sol.feasible);
    CHECK(sol.achieved_p == 2);  // fell back: 3 is infeasible
    CHECK(sol.trace == std::vector<int>{3, 2});
}

TEST_CASE("far pairs are mutually exclusive and drive the fallback trace") {
    // One maturity with a wide gap pair {90, 100} and one dense maturity.
    std::vector<UniverseCandidate> cs{cand(30, 90, 0.9),  cand(30, 100, 0.9), cand(51, 98, 0.8),
                                      cand(51, 100, 0.8), cand(51, 102, 0.8)};
    auto p = build_problem(std::move(cs), 5, 4.0, 100.0);
    REQUIRE(p.far_pairs.size() == 1);
    const UniverseSolution sol = solve_universe(p);
    REQUIRE(sol.feasible);
    CHECK(sol.achieved_p == 3);
    CHECK(sol.trace == std::vector<int>{5, 4, 3});
    for (const AssetId& a : sol.selected) CHECK(a.maturity.trading_date() == 51);
}

TEST_CASE("no feasible universe of size two is flagged") {
    // A single maturity whose only two strikes form a far pair.
    auto p = build_problem({cand(30, 90, 0.9), cand(30, 100, 0.9)}, 2, 4.0, 100.0);
    REQUIRE(p.far_pairs.size() == 1);
    const UniverseSolution sol = solve_universe(p);
    CHECK(!sol.feasible);
    CHECK(sol.selected.empty());
    CHECK(sol.trace == std::vector<int>{2});
}

TEST_CASE("solver matches exhaustive enumeration on random instances") {
    Rng rng(2024);
    int solved = 0;
    for (int trial = 0; trial < 60; ++trial) {
        const int p_univ = 2 + static_cast<int>(rng.below(6));
        const UniverseProblem p = random_instance(rng, 12, p_univ);
        const UniverseSolution sol = solve_universe(p);

        // The oracle replicates the fallback loop.
        std::optional<std::pair<std::vector<int>, double>> oracle;
        int oracle_p = p_univ;
        for (; oracle_p >= 2; --oracle_p) {
            oracle = enumerate_universe(p, oracle_p);
            if (oracle) break;
        }
        CHECK(sol.feasible == oracle.has_value());
        if (!oracle) continue;
        ++solved;
        CHECK(sol.achieved_p == oracle_p);
        CHECK(sol.objective == doctest::Approx(oracle->second).epsilon(1e-9));
        check_solution_invariants(p, sol);

        // Identical tie-break: the selected index sets agree exactly.
        std::vector<int> idx;
        for (const AssetId& a : sol.selected) {
            for (int i = 0; i < static_cast<int>(p.candidates.size()); ++i) {
                if (p.candidates[static_cast<std::size_t>(i)].asset == a) idx.push_back(i);
            }
        }
        std::sort(idx.begin(), idx.end());
        CHECK(idx == oracle->first);
    }
    CHECK(solved > 20);  // the generator must exercise real instances
}
