#include "optarb/backtest.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace optarb {

BacktestLedger run_backtest(const ChainTable& chain, const std::map<int, std::vector<AssetId>>& universes,
                            const std::map<int, std::map<AssetId, double>>& predictions, PositionKind kind,
                            const BacktestOptions& opts) {
    if (kind == PositionKind::LS) {
        throw std::invalid_argument("run_backtest: tradable strategies are SA, BM1, BM2");
    }
    BacktestLedger ledger;
    ledger.kind = kind;
    ledger.cost_rate = opts.cost_rate;
    if (predictions.empty()) return ledger;

    std::map<int, LedgerRow> rows;
    std::map<int, double> maturity_due;
    const int data_end = chain.last_date();

    for (const auto& [t, preds] : predictions) {
        auto u_it = universes.find(t);
        if (u_it == universes.end()) {
            throw std::runtime_error("no universe for prediction date " + std::to_string(t));
        }
        std::vector<AssetId> universe = u_it->second;
        std::sort(universe.begin(), universe.end());

        Eigen::VectorXd v_hat(static_cast<Eigen::Index>(universe.size()));
        for (std::size_t i = 0; i < universe.size(); ++i) {
            auto p_it = preds.find(universe[i]);
            if (p_it == preds.end()) {
                throw std::runtime_error("missing prediction for " + universe[i].label() + " on date " +
                                         std::to_string(t));
            }
            v_hat(static_cast<Eigen::Index>(i)) = universe[i].strike * p_it->second;
        }

        Position position;
        if (kind == PositionKind::SA) {
            position = slsa_project(v_hat, build_constraints(universe));
        } else {
            position = bm_project(v_hat, universe, kind);
        }
        position = normalize_one_long_one_short(position);

        LedgerRow& row = rows[t];
        row.date = t;
        if (position.degenerate) {
            ledger.positions.push_back({t, position});
            continue;
        }

        const std::vector<CashFlow> flows = kind == PositionKind::SA
                                                ? slsa_cashflows(position, chain, t)
                                                : bm_cashflows(position, chain, t);
        const UnderlyingBar* bar = chain.underlying(t);
        if (bar == nullptr) throw std::runtime_error("missing underlying bar on date " + std::to_string(t));

        double cost_base = 0.0;
        for (std::size_t i = 0; i < universe.size(); ++i) {
            const double n_i = position.n(static_cast<Eigen::Index>(i));
            if (n_i == 0.0) continue;
            const OptionQuote* put = chain.quote(universe[i].with_type(AssetType::PT), t);
            const OptionQuote* call = chain.quote(universe[i].with_type(AssetType::CL), t);
            if (put == nullptr || call == nullptr) {
                throw std::runtime_error("missing open quote for held asset " + universe[i].label() +
                                         " on date " + std::to_string(t));
            }
            cost_base += std::abs(n_i) * (put->open + call->open);
        }

        row.traded = true;
        row.cost = opts.cost_rate * cost_base;
        row.contracts = position.n.cwiseAbs().sum();
        const double vn = v_hat.dot(position.n);
        const double norms = v_hat.norm() * position.n.norm();
        row.cosine = norms > 0.0 ? vn / norms : 0.0;
        const double gross = row.contracts;
        double hhi = 0.0, moneyness = 0.0, ttm = 0.0;
        for (std::size_t i = 0; i < universe.size(); ++i) {
            const double w = std::abs(position.n(static_cast<Eigen::Index>(i)));
            if (w == 0.0) continue;
            hhi += (w / gross) * (w / gross);
            moneyness += w * std::abs(bar->open - universe[i].strike);
            ttm += w * (universe[i].maturity - TimePoint(static_cast<double>(t)));
        }
        row.hhi = hhi;
        row.effective_n = hhi > 0.0 ? 1.0 / hhi : 0.0;
        row.avg_abs_moneyness = moneyness;
        row.avg_abs_ttm = ttm;

        for (const CashFlow& flow : flows) {
            const int flow_date = flow.when.trading_date();
            if (flow_date == t) {
                row.inception_flow += flow.amount;
            } else {
                // Flows past the data end settle on the final date.
                maturity_due[std::min(flow_date, data_end)] += flow.amount;
            }
        }
        ledger.positions.push_back({t, position});
    }

    for (const auto& [d, amount] : maturity_due) {
        LedgerRow& row = rows[d];
        row.date = d;
        row.maturity_flow += amount;
    }

    double cum = 0.0;
    for (auto& [d, row] : rows) {
        row.pnl = row.inception_flow + row.maturity_flow - row.cost;
        cum += row.pnl;
        row.cum_pnl = cum;
        ledger.rows.push_back(row);
    }
    return ledger;
}

MetricsReport compute_metrics(const BacktestLedger& ledger) {
    MetricsReport report;
    if (ledger.rows.size() < 2) {
        throw std::invalid_argument("compute_metrics: need at least two ledger dates");
    }
    std::vector<double> returns;
    for (const LedgerRow& row : ledger.rows) {
        if (!row.traded || row.contracts <= 0.0) continue;
        returns.push_back(row.pnl / row.contracts);
        report.hhi_mean += row.hhi;
        report.effective_n_mean += row.effective_n;
        report.avg_abs_moneyness += row.avg_abs_moneyness;
        report.avg_abs_ttm += row.avg_abs_ttm;
    }
    report.n_traded_days = static_cast<int>(returns.size());
    if (report.n_traded_days > 0) {
        const double n = report.n_traded_days;
        report.hhi_mean /= n;
        report.effective_n_mean /= n;
        report.avg_abs_moneyness /= n;
        report.avg_abs_ttm /= n;
    }
    report.total_pnl = ledger.total_pnl();

    if (returns.size() >= 2) {
        double mean = 0.0;
        for (double r : returns) mean += r;
        mean /= static_cast<double>(returns.size());
        double ss = 0.0, downside = 0.0;
        for (double r : returns) {
            ss += (r - mean) * (r - mean);
            if (r < 0.0) downside += r * r;
        }
        const double sd = std::sqrt(ss / static_cast<double>(returns.size() - 1));
        if (sd > 0.0) {
            report.information_ratio = mean / sd;
            report.ir_defined = true;
        }
        const double dd = std::sqrt(downside / static_cast<double>(returns.size()));
        if (dd > 0.0) {
            report.sortino = mean / dd;
            report.sortino_defined = true;
        }
    }
    return report;
}

CosineSeries cosine_series(const std::vector<int>& dates, const std::vector<Eigen::VectorXd>& v_hats,
                           const std::vector<Eigen::VectorXd>& positions, int window) {
    if (dates.size() != v_hats.size() || dates.size() != positions.size()) {
        throw std::invalid_argument("cosine_series: input lengths differ");
    }
    if (window < 1) throw std::invalid_argument("cosine_series: window must be positive");
    CosineSeries out;
    out.dates = dates;
    std::vector<double> kept;
    for (std::size_t i = 0; i < dates.size(); ++i) {
        const double norms = v_hats[i].norm() * positions[i].norm();
        if (norms == 0.0) {
            out.cosine.push_back(0.0);
            out.defined.push_back(0);
        } else {
            out.cosine.push_back(v_hats[i].dot(positions[i]) / norms);
            out.defined.push_back(1);
        }
        // Trailing mean of the defined values within the window.
        double acc = 0.0;
        int cnt = 0;
        for (std::size_t j = i + 1; j-- > 0 && j + static_cast<std::size_t>(window) > i;) {
            if (out.defined[j]) {
                acc += out.cosine[j];
                ++cnt;
            }
        }
        out.rolling.push_back(cnt > 0 ? acc / cnt : 0.0);
    }
    return out;
}

}  // namespace optarb
