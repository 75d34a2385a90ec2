// Daily strategy loop: project predictions into positions each morning,
// normalize to one long/one short contract, account flows and costs to the
// ledger, and derive the performance metrics.
#pragma once

#include <map>
#include <vector>

#include "optarb/slsa.hpp"
#include "optarb/universe.hpp"

namespace optarb {

struct LedgerRow {
    int date = 0;
    bool traded = false;          // a position was opened this morning
    double inception_flow = 0.0;
    double maturity_flow = 0.0;   // flows due from earlier positions
    double cost = 0.0;
    double pnl = 0.0;             // inception + maturity - cost
    double cum_pnl = 0.0;
    double contracts = 0.0;       // gross sum |n| of the new position
    double cosine = 0.0;
    double hhi = 0.0;
    double effective_n = 0.0;
    double avg_abs_moneyness = 0.0;  // sum |n_a| |S_t - K_a|
    double avg_abs_ttm = 0.0;        // sum |n_a| (M_a - t)
};

struct BacktestLedger {
    PositionKind kind = PositionKind::SA;
    double cost_rate = 0.0;
    std::vector<LedgerRow> rows;
    std::vector<std::pair<int, Position>> positions;

    double total_pnl() const { return rows.empty() ? 0.0 : rows.back().cum_pnl; }
};

struct BacktestOptions {
    double cost_rate = 0.0009;  // fraction of the traded premium value
};

// predictions: date -> (asset -> predicted y at the open). Every universe
// asset of a traded date must have a prediction and an open quote.
BacktestLedger run_backtest(const ChainTable& chain, const std::map<int, std::vector<AssetId>>& universes,
                            const std::map<int, std::map<AssetId, double>>& predictions, PositionKind kind,
                            const BacktestOptions& opts = {});

struct MetricsReport {
    double information_ratio = 0.0;
    bool ir_defined = false;
    double sortino = 0.0;
    bool sortino_defined = false;
    double hhi_mean = 0.0;
    double effective_n_mean = 0.0;
    double avg_abs_moneyness = 0.0;
    double avg_abs_ttm = 0.0;
    double total_pnl = 0.0;
    int n_traded_days = 0;
};

// P&L-per-contract returns against a zero benchmark; undefined ratios are
// flagged rather than reported as infinities.
MetricsReport compute_metrics(const BacktestLedger& ledger);

struct CosineSeries {
    std::vector<int> dates;
    std::vector<double> cosine;
    std::vector<char> defined;    // zero vectors are skipped with a flag
    std::vector<double> rolling;  // trailing mean over the window
};

CosineSeries cosine_series(const std::vector<int>& dates, const std::vector<Eigen::VectorXd>& v_hats,
                           const std::vector<Eigen::VectorXd>& positions, int window = 63);

}  // namespace optarb
