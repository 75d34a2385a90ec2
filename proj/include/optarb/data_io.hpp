// Option-chain storage and ingestion, the synthetic market generator,
// walk-forward splits, and the quantile feature scaler.
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "optarb/market_core.hpp"
#include "optarb/rng.hpp"

namespace optarb {

struct UnderlyingBar {
    int date = 0;
    double open = 0.0, high = 0.0, low = 0.0, close = 0.0;
};

// Daily option chain plus underlying bars, keyed by (leg asset, date).
class ChainTable {
public:
    void add_underlying(const UnderlyingBar& bar);
    void add_quote(const OptionQuote& quote);  // throws on duplicate (asset, date)

    const UnderlyingBar* underlying(int date) const;
    const OptionQuote* quote(const AssetId& leg, int date) const;  // PT or CL leg

    // Synthetic-long views: an SL is usable on a date when both legs have rows.
    bool sl_listed(const AssetId& sl, int date) const;
    bool sl_traded(const AssetId& sl, int date) const;  // both legs traded
    std::vector<AssetId> sl_assets_on(int date) const;  // sorted (maturity, strike)

    const std::vector<int>& dates() const { return dates_; }
    int first_date() const { return dates_.empty() ? 0 : dates_.front(); }
    int last_date() const { return dates_.empty() ? 0 : dates_.back(); }
    std::size_t quote_count() const { return quotes_.size(); }

    // Row iteration in deterministic (date, asset) order, for serialization.
    std::vector<const OptionQuote*> rows_sorted() const;

private:
    struct QuoteKey {
        std::int8_t type = 0;
        std::int64_t m = 0, k = 0;
        int date = 0;
        bool operator==(const QuoteKey&) const = default;
    };
    struct QuoteKeyHash {
        std::size_t operator()(const QuoteKey& q) const {
            std::uint64_t h = splitmix64(static_cast<std::uint64_t>(q.m));
            h = splitmix64(h ^ static_cast<std::uint64_t>(q.k));
            h = splitmix64(h ^ static_cast<std::uint64_t>(q.date));
            return splitmix64(h ^ static_cast<std::uint64_t>(q.type));
        }
    };
    struct LegPresence {
        bool pt = false, cl = false, pt_traded = false, cl_traded = false;
    };
    static QuoteKey key(const AssetId& a, int date);

    std::unordered_map<QuoteKey, OptionQuote, QuoteKeyHash> quotes_;
    std::map<int, UnderlyingBar> underlying_;
    // (maturity_key, strike_key) -> leg presence, per date
    std::map<int, std::map<std::pair<std::int64_t, std::int64_t>, LegPresence>> sl_by_date_;
    std::vector<int> dates_;
};

// Column-name map for chain CSV files; defaults match the canonical schema.
struct ChainSchema {
    std::string date = "date";
    std::string type = "type";
    std::string maturity = "maturity";
    std::string strike = "strike";
    std::string open = "open";
    std::string high = "high";
    std::string low = "low";
    std::string close = "close";
    std::string traded = "traded";
};

ChainTable load_chain(const std::string& path, const ChainSchema& schema = {});
void save_chain(const std::string& path, const ChainTable& table, const ChainSchema& schema = {});

// ---- Synthetic market -------------------------------------------------------

struct SyntheticConfig {
    int n_dates = 420;
    int first_maturity = 22;        // trading-date index of the first expiry
    int maturity_every = 21;        // spacing between expiries
    int listing_lead = 130;         // dates an expiry is listed before it matures
    double strike_step = 2.0;       // strike grid increment (grid-aligned across maturities)
    int strikes_half_width = 8;     // half-width of the listed strike band, in steps
    double s0 = 100.0;
    double drift = 0.0;             // annualized
    double vol = 0.18;              // annualized
    double rate = 0.03;             // annualized, continuous compounding
    double intraday_range = 0.35;   // intraday high/low extension as a fraction of daily vol
    double arb_noise_scale = 0.0;   // stationary std of the put-leg log mispricing
    double arb_ar1 = 0.0;           // AR(1) persistence of the mispricing
    double trade_m0 = 0.06;         // logistic tradability: midpoint in |S/K - 1|
    double trade_w = 0.015;         // logistic tradability: width
    std::uint64_t seed = 1;
};

// Lognormal underlying, Black-Scholes option quotes with an AR(1)
// multiplicative mispricing on the put leg, Bernoulli tradability decaying
// in moneyness. Deterministic given the seed.
ChainTable generate_synthetic_market(const SyntheticConfig& cfg);

// ---- Walk-forward splits ----------------------------------------------------

constexpr int kOpenEnd = std::numeric_limits<int>::max();  // the "infinity" fit date

struct SplitRound {
    int index = 0;             // 1-based round number
    std::vector<int> train;    // sorted training dates
    std::vector<int> val;      // sorted validation dates
    int test_begin = 0;        // test dates are [test_begin, test_end)
    int test_end = 0;          // kOpenEnd for the final round
};

struct SplitPlan {
    std::vector<int> fit_dates;  // strictly increasing, last element kOpenEnd
    double p_val = 0.2;
    std::uint64_t seed = 0;
    std::vector<SplitRound> rounds;

    // Round whose test window contains `date`, or -1 before the first window.
    int round_for_date(int date) const;
};

SplitPlan make_splits(const std::vector<int>& fit_dates, double p_val, std::uint64_t seed);

std::string split_plan_to_json(const SplitPlan& plan);
SplitPlan split_plan_from_json(const std::string& text);

// ---- Quantile scaler ---------------------------------------------------------

// Probability integral transform to a standard normal, fitted per feature on
// training rows only. Constant features pass through (flagged).
class QuantileScaler {
public:
    static QuantileScaler fit(const Eigen::MatrixXd& train_rows);

    Eigen::MatrixXd transform(const Eigen::MatrixXd& rows) const;
    Eigen::MatrixXd inverse_transform(const Eigen::MatrixXd& rows) const;
    double transform_one(int col, double x) const;
    double inverse_one(int col, double z) const;

    int n_features() const { return static_cast<int>(features_.size()); }
    bool passthrough(int col) const { return features_.at(col).passthrough; }

    std::string to_json() const;
    static QuantileScaler from_json(const std::string& text);

private:
    struct Feature {
        std::vector<double> values;     // sorted unique training values
        std::vector<double> positions;  // matching CDF positions in (0,1), strictly increasing
        bool passthrough = false;
    };
    std::vector<Feature> features_;
};

}  // namespace optarb
