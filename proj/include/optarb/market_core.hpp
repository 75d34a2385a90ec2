// Time model, asset algebra, pricing identities, and the arbitrage
// deviation target y = delta - group mean used throughout the pipeline.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace optarb {

constexpr double kTradingDaysPerYear = 252.0;

// A point on the continuous trading-time axis: integer trading date plus
// intraday fraction in [0, 1).
struct TimePoint {
    double tau = 0.0;

    TimePoint() = default;
    explicit TimePoint(double value) : tau(value) {}

    static TimePoint at(int trading_date, double intraday_fraction);

    int trading_date() const { return static_cast<int>(std::floor(tau)); }
    double intraday_fraction() const { return tau - std::floor(tau); }

    friend bool operator==(const TimePoint& a, const TimePoint& b) { return a.tau == b.tau; }
    friend auto operator<=>(const TimePoint& a, const TimePoint& b) { return a.tau <=> b.tau; }
    double operator-(const TimePoint& o) const { return tau - o.tau; }
};

// Intraday schedule (fractions of a day). The high/low anchors are the
// timepoints the intraday extremes are attributed to; only the invariants
// floor(x(t)) = t and x(t) in [t, t+1) matter downstream.
namespace schedule {
constexpr double kOpenFrac = (9.0 * 3600.0) / 86400.0;            // 09:00:00
constexpr double kHighFrac = (11.0 * 3600.0) / 86400.0;           // 11:00:00
constexpr double kLowFrac = (13.0 * 3600.0 + 30.0 * 60.0) / 86400.0;  // 13:30:00
constexpr double kCloseFrac = (15.0 * 3600.0 + 30.0 * 60.0) / 86400.0;  // 15:30:00
}  // namespace schedule

inline TimePoint open_time(int t) { return TimePoint(t + schedule::kOpenFrac); }
inline TimePoint high_time(int t) { return TimePoint(t + schedule::kHighFrac); }
inline TimePoint low_time(int t) { return TimePoint(t + schedule::kLowFrac); }
inline TimePoint close_time(int t) { return TimePoint(t + schedule::kCloseFrac); }

inline double year_fraction(TimePoint maturity, TimePoint tau) {
    return (maturity - tau) / kTradingDaysPerYear;
}

enum class AssetType { UI, PT, CL, SL, LS, SA, RF };

const char* to_string(AssetType t);
AssetType asset_type_from_string(const std::string& s);

// Instrument identity. PT/CL/SL carry (maturity, strike); UI carries neither.
struct AssetId {
    AssetType type = AssetType::UI;
    TimePoint maturity{};
    double strike = 0.0;

    static AssetId underlying() { return AssetId{}; }
    static AssetId put(TimePoint m, double k) { return AssetId{AssetType::PT, m, k}; }
    static AssetId call(TimePoint m, double k) { return AssetId{AssetType::CL, m, k}; }
    static AssetId synthetic_long(TimePoint m, double k) { return AssetId{AssetType::SL, m, k}; }

    AssetId with_type(AssetType t) const { return AssetId{t, maturity, strike}; }

    // Quantized keys so float-valued maturities/strikes compare exactly
    // (1 second and 1e-6 price resolution).
    std::int64_t maturity_key() const { return std::llround(maturity.tau * 86400.0); }
    std::int64_t strike_key() const { return std::llround(strike * 1e6); }

    friend bool operator==(const AssetId& a, const AssetId& b) {
        return a.type == b.type && a.maturity_key() == b.maturity_key() && a.strike_key() == b.strike_key();
    }
    // Lexicographic (maturity, strike) within a type; this is the node and
    // constraint-matrix ordering used by graphs and slsa.
    friend bool operator<(const AssetId& a, const AssetId& b) {
        if (a.type != b.type) return a.type < b.type;
        if (a.maturity_key() != b.maturity_key()) return a.maturity_key() < b.maturity_key();
        return a.strike_key() < b.strike_key();
    }

    std::string label() const;
};

// One daily OHLC record for a put or call leg.
struct OptionQuote {
    AssetId asset;
    int date = 0;
    double open = 0.0, high = 0.0, low = 0.0, close = 0.0;
    bool traded = false;

    bool ohlc_ordered() const {
        return low <= std::min(open, close) && std::max(open, close) <= high && low > 0.0;
    }
};

// delta / delta_bar / y observation for a synthetic long at a timepoint.
struct DiscountObservation {
    AssetId asset;
    TimePoint tau{};
    double delta = 0.0;
    double delta_bar = 0.0;
    double y = 0.0;
};

// ---- Pricing identities ----------------------------------------------------

// Present value of `face` paid at `maturity`, seen from `tau`, with a
// constant continuously compounded rate per unit of (maturity - tau).
double present_value(double face, TimePoint maturity, TimePoint tau, double rate);

inline double synthetic_long_price(double put_price, double call_price) {
    return call_price - put_price;
}

// Implied unit-bond price (S - P_SL) / K.
double discount_factor(double spot, double sl_price, double strike);

inline double delta_from_prices(double spot, double put_price, double call_price, double strike) {
    return discount_factor(spot, synthetic_long_price(put_price, call_price), strike);
}

// Per-maturity mean subtraction: y_a = delta_a - mean(delta over the group).
// Groups are keyed by quantized maturity; each group must be non-empty.
std::vector<DiscountObservation> arbitrage_target(
    const std::map<std::int64_t, std::vector<std::pair<AssetId, double>>>& deltas_by_maturity,
    TimePoint tau);

// ---- Black-Scholes forward map and implied volatility ----------------------

double norm_cdf(double x);

// European option price; T in years, rate continuously compounded per year.
double black_scholes_price(AssetType opt_type, double spot, double strike, double rate, double sigma,
                           double t_years);

struct ImpliedVolConfig {
    double sigma_lo = 1e-4;
    double sigma_hi = 5.0;
    double price_tol = 1e-8;
    int max_iter = 128;
};

// Bracketed bisection on sigma. Returns nullopt when the price violates the
// no-arbitrage bounds for the option (caller imputes).
std::optional<double> implied_volatility(double price, double spot, double strike, TimePoint tau,
                                         TimePoint maturity, double rate_annual, AssetType opt_type,
                                         const ImpliedVolConfig& cfg = {});

}  // namespace optarb
