// Synthetic-long-short / SLSA constraint algebra, null-space projection,
// benchmark projections, and the payoff accounting for each position kind.
#pragma once

#include <Eigen/Core>
#include <map>
#include <string>
#include <vector>

#include "optarb/data_io.hpp"
#include "optarb/market_core.hpp"

namespace optarb {

enum class PositionKind { LS, SA, BM1, BM2 };

const char* to_string(PositionKind k);
PositionKind position_kind_from_string(const std::string& s);

// Contracts per universe asset. m is the underlying holding implied by the
// long-short identity m + sum(n) = 0 (zero for SA/BM2 by construction).
struct Position {
    std::vector<AssetId> universe;  // lexicographic (maturity, strike)
    Eigen::VectorXd n;
    double m = 0.0;
    PositionKind kind = PositionKind::SA;
    bool degenerate = false;  // all-zero contracts (e.g. trivial null space)
};

// Row pairs per maturity: contract-sum row and strike-weighted row, plus an
// orthonormal basis of the null space.
struct ConstraintMatrix {
    std::vector<AssetId> universe;
    Eigen::MatrixXd A;           // 2*|maturities| x |universe|
    Eigen::MatrixXd null_basis;  // |universe| x dim(Null(A)), orthonormal columns
};

ConstraintMatrix build_constraints(const std::vector<AssetId>& universe);

// n = N N^T v_hat: the orthogonal projection onto Null(A).
Position slsa_project(const Eigen::VectorXd& v_hat, const ConstraintMatrix& cm);

// BM1 projects onto {per-maturity sum(n) = 0}; BM2 onto {sum(n) = 0}.
Position bm_project(const Eigen::VectorXd& v_hat, const std::vector<AssetId>& universe, PositionKind kind);

// Scales so the long side sums to one contract (and the short side to minus
// one, since sum(n) = 0 for every kind here). All-zero input is flagged.
Position normalize_one_long_one_short(const Position& position);

struct CashFlow {
    TimePoint when{};
    double amount = 0.0;
};

// Payoff accounting for a position opened at o(t) and held to maturity.
// SA: a single inception flow sum(n_a K_a y_{a,o(t)}), nothing afterwards.
// BM1/BM2: inception flow sum(n_a K_a (y + delta_bar)); maturity flows
// -sum(n_a K_a) for BM1 and sum(n_a (S_M - K_a)) for BM2.
std::vector<CashFlow> slsa_cashflows(const Position& position, const ChainTable& market, int t);
std::vector<CashFlow> bm_cashflows(const Position& position, const ChainTable& market, int t);

// delta/delta_bar/y at the open of date t for the given universe, from market
// prices. Assets without both open legs are dropped from the group averages;
// entries for them are absent from the returned map.
std::map<AssetId, DiscountObservation> open_observations(const std::vector<AssetId>& universe,
                                                         const ChainTable& market, int t);

}  // namespace optarb
