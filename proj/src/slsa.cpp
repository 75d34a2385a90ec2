#include "optarb/slsa.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <stdexcept>

namespace optarb {

const char* to_string(PositionKind k) {
    switch (k) {
        case PositionKind::LS: return "LS";
        case PositionKind::SA: return "SA";
        case PositionKind::BM1: return "BM1";
        case PositionKind::BM2: return "BM2";
    }
    return "?";
}

PositionKind position_kind_from_string(const std::string& s) {
    if (s == "LS" || s == "ls") return PositionKind::LS;
    if (s == "SA" || s == "sa") return PositionKind::SA;
    if (s == "BM1" || s == "bm1") return PositionKind::BM1;
    if (s == "BM2" || s == "bm2") return PositionKind::BM2;
    throw std::invalid_argument("unknown position kind '" + s + "'");
}

namespace {

std::vector<std::pair<std::int64_t, std::vector<int>>> maturity_groups(const std::vector<AssetId>& universe) {
    std::vector<std::pair<std::int64_t, std::vector<int>>> groups;
    for (int i = 0; i < static_cast<int>(universe.size()); ++i) {
        const std::int64_t mk = universe[static_cast<std::size_t>(i)].maturity_key();
        if (groups.empty() || groups.back().first != mk) groups.push_back({mk, {}});
        groups.back().second.push_back(i);
    }
    return groups;
}

void require_sorted(const std::vector<AssetId>& universe) {
    if (universe.empty()) throw std::invalid_argument("universe must be non-empty");
    for (std::size_t i = 1; i < universe.size(); ++i) {
        if (!(universe[i - 1] < universe[i])) {
            throw std::invalid_argument("universe must be lexicographically ordered by (maturity, strike)");
        }
    }
}

}  // namespace

ConstraintMatrix build_constraints(const std::vector<AssetId>& universe) {
    require_sorted(universe);
    const auto groups = maturity_groups(universe);
    const auto n = static_cast<Eigen::Index>(universe.size());

    ConstraintMatrix cm;
    cm.universe = universe;
    cm.A = Eigen::MatrixXd::Zero(2 * static_cast<Eigen::Index>(groups.size()), n);
    Eigen::Index row = 0;
    for (const auto& [mkey, idx] : groups) {
        for (int i : idx) {
            cm.A(row, i) = 1.0;
            cm.A(row + 1, i) = universe[static_cast<std::size_t>(i)].strike;
        }
        row += 2;
    }

    // Null space from the SVD right singular vectors with vanishing singular values.
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(cm.A, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double tol = (sv.size() > 0 ? sv(0) : 0.0) * 1e-10;
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
        if (sv(i) > tol) ++rank;
    }
    cm.null_basis = svd.matrixV().rightCols(n - rank);
    return cm;
}

Position slsa_project(const Eigen::VectorXd& v_hat, const ConstraintMatrix& cm) {
    if (v_hat.size() != static_cast<Eigen::Index>(cm.universe.size())) {
        throw std::invalid_argument("slsa_project: prediction vector size mismatch");
    }
    Position p;
    p.universe = cm.universe;
    p.kind = PositionKind::SA;
    const auto& N = cm.null_basis;
    if (N.cols() == 0) {
        p.n = Eigen::VectorXd::Zero(v_hat.size());
        p.degenerate = true;
    } else {
        p.n = N * (N.transpose() * v_hat);
        p.degenerate = p.n.lpNorm<Eigen::Infinity>() == 0.0;
    }
    p.m = 0.0;
    return p;
}

Position bm_project(const Eigen::VectorXd& v_hat, const std::vector<AssetId>& universe, PositionKind kind) {
    require_sorted(universe);
    if (v_hat.size() != static_cast<Eigen::Index>(universe.size())) {
        throw std::invalid_argument("bm_project: prediction vector size mismatch");
    }
    if (kind != PositionKind::BM1 && kind != PositionKind::BM2) {
        throw std::invalid_argument("bm_project: kind must be BM1 or BM2");
    }
    Position p;
    p.universe = universe;
    p.kind = kind;
    p.n = v_hat;
    if (kind == PositionKind::BM2) {
        p.n.array() -= v_hat.mean();
        p.m = 0.0;
    } else {
        for (const auto& [mkey, idx] : maturity_groups(universe)) {
            double mean = 0.0;
            for (int i : idx) mean += v_hat(i);
            mean /= static_cast<double>(idx.size());
            for (int i : idx) p.n(i) -= mean;
        }
        p.m = -p.n.sum();  // zero up to rounding: each block is mean-centered
    }
    p.degenerate = p.n.lpNorm<Eigen::Infinity>() == 0.0;
    return p;
}

Position normalize_one_long_one_short(const Position& position) {
    Position out = position;
    double long_sum = 0.0;
    for (Eigen::Index i = 0; i < position.n.size(); ++i) {
        if (position.n(i) > 0.0) long_sum += position.n(i);
    }
    if (long_sum <= 0.0) {
        out.degenerate = true;
        return out;
    }
    out.n /= long_sum;
    out.m /= long_sum;
    return out;
}

std::map<AssetId, DiscountObservation> open_observations(const std::vector<AssetId>& universe,
                                                         const ChainTable& market, int t) {
    const UnderlyingBar* bar = market.underlying(t);
    if (bar == nullptr) throw std::runtime_error("no underlying bar on date " + std::to_string(t));

    std::map<std::int64_t, std::vector<std::pair<AssetId, double>>> deltas;
    for (const AssetId& a : universe) {
        const OptionQuote* put = market.quote(a.with_type(AssetType::PT), t);
        const OptionQuote* call = market.quote(a.with_type(AssetType::CL), t);
        if (put == nullptr || call == nullptr) continue;
        deltas[a.maturity_key()].push_back({a, delta_from_prices(bar->open, put->open, call->open, a.strike)});
    }
    std::map<AssetId, DiscountObservation> out;
    if (deltas.empty()) return out;
    for (const DiscountObservation& obs : arbitrage_target(deltas, open_time(t))) {
        out[obs.asset] = obs;
    }
    return out;
}

std::vector<CashFlow> slsa_cashflows(const Position& position, const ChainTable& market, int t) {
    if (position.kind != PositionKind::SA) throw std::invalid_argument("slsa_cashflows: position kind must be SA");
    const auto obs = open_observations(position.universe, market, t);
    double inception = 0.0;
    for (Eigen::Index i = 0; i < position.n.size(); ++i) {
        if (position.n(i) == 0.0) continue;
        const AssetId& a = position.universe[static_cast<std::size_t>(i)];
        auto it = obs.find(a);
        if (it == obs.end()) {
            throw std::runtime_error("missing open quote for held asset " + a.label() + " on date " +
                                     std::to_string(t));
        }
        inception += position.n(i) * a.strike * it->second.y;
    }
    // The maturity legs cancel exactly under the SA constraints; no flows follow.
    return {CashFlow{open_time(t), inception}};
}

std::vector<CashFlow> bm_cashflows(const Position& position, const ChainTable& market, int t) {
    if (position.kind != PositionKind::BM1 && position.kind != PositionKind::BM2) {
        throw std::invalid_argument("bm_cashflows: position kind must be BM1 or BM2");
    }
    const auto obs = open_observations(position.universe, market, t);
    double inception = 0.0;
    std::map<std::int64_t, double> by_maturity_nk;   // sum n_a K_a
    std::map<std::int64_t, double> by_maturity_n;    // sum n_a
    std::map<std::int64_t, TimePoint> maturity_at;
    for (Eigen::Index i = 0; i < position.n.size(); ++i) {
        if (position.n(i) == 0.0) continue;
        const AssetId& a = position.universe[static_cast<std::size_t>(i)];
        auto it = obs.find(a);
        if (it == obs.end()) {
            throw std::runtime_error("missing open quote for held asset " + a.label() + " on date " +
                                     std::to_string(t));
        }
        inception += position.n(i) * a.strike * (it->second.y + it->second.delta_bar);
        by_maturity_nk[a.maturity_key()] += position.n(i) * a.strike;
        by_maturity_n[a.maturity_key()] += position.n(i);
        maturity_at[a.maturity_key()] = a.maturity;
    }
    std::vector<CashFlow> flows{CashFlow{open_time(t), inception}};
    for (const auto& [mkey, nk] : by_maturity_nk) {
        const TimePoint maturity = maturity_at[mkey];
        if (position.kind == PositionKind::BM1) {
            flows.push_back(CashFlow{maturity, -nk});
        } else {
            const int m_date = maturity.trading_date();
            const UnderlyingBar* bar = market.underlying(std::min(m_date, market.last_date()));
            if (bar == nullptr) {
                throw std::runtime_error("missing underlying bar to settle maturity at date " +
                                         std::to_string(m_date));
            }
            flows.push_back(CashFlow{maturity, by_maturity_n[mkey] * bar->close - nk});
        }
    }
    return flows;
}

}  // namespace optarb
