#include "optarb/market_core.hpp"

#include <algorithm>
#include <sstream>

namespace optarb {

TimePoint TimePoint::at(int trading_date, double intraday_fraction) {
    if (trading_date < 0 || intraday_fraction < 0.0 || intraday_fraction >= 1.0) {
        throw std::domain_error("TimePoint::at: fraction must lie in [0,1)");
    }
    return TimePoint(trading_date + intraday_fraction);
}

const char* to_string(AssetType t) {
    switch (t) {
        case AssetType::UI: return "UI";
        case AssetType::PT: return "PT";
        case AssetType::CL: return "CL";
        case AssetType::SL: return "SL";
        case AssetType::LS: return "LS";
        case AssetType::SA: return "SA";
        case AssetType::RF: return "RF";
    }
    return "?";
}

AssetType asset_type_from_string(const std::string& s) {
    if (s == "UI") return AssetType::UI;
    if (s == "PT") return AssetType::PT;
    if (s == "CL") return AssetType::CL;
    if (s == "SL") return AssetType::SL;
    if (s == "LS") return AssetType::LS;
    if (s == "SA") return AssetType::SA;
    if (s == "RF") return AssetType::RF;
    throw std::invalid_argument("unknown asset type '" + s + "'");
}

std::string AssetId::label() const {
    std::ostringstream os;
    os << to_string(type);
    if (type == AssetType::PT || type == AssetType::CL || type == AssetType::SL) {
        os << "(M=" << maturity.tau << ",K=" << strike << ")";
    }
    return os.str();
}

double present_value(double face, TimePoint maturity, TimePoint tau, double rate) {
    if (maturity < tau) {
        throw std::domain_error("present_value: maturity precedes valuation time");
    }
    return face * std::exp(-rate * (maturity - tau));
}

double discount_factor(double spot, double sl_price, double strike) {
    if (strike <= 0.0) {
        throw std::domain_error("discount_factor: strike must be positive");
    }
    return (spot - sl_price) / strike;
}

std::vector<DiscountObservation> arbitrage_target(
    const std::map<std::int64_t, std::vector<std::pair<AssetId, double>>>& deltas_by_maturity,
    TimePoint tau) {
    std::vector<DiscountObservation> out;
    for (const auto& [mkey, group] : deltas_by_maturity) {
        if (group.empty()) {
            throw std::invalid_argument("arbitrage_target: empty maturity group " + std::to_string(mkey));
        }
        double mean = 0.0;
        for (const auto& [asset, delta] : group) mean += delta;
        mean /= static_cast<double>(group.size());
        for (const auto& [asset, delta] : group) {
            out.push_back(DiscountObservation{asset, tau, delta, mean, delta - mean});
        }
    }
    return out;
}

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double black_scholes_price(AssetType opt_type, double spot, double strike, double rate, double sigma,
                           double t_years) {
    if (opt_type != AssetType::PT && opt_type != AssetType::CL) {
        throw std::invalid_argument("black_scholes_price: option type must be PT or CL");
    }
    const bool call = opt_type == AssetType::CL;
    if (t_years <= 0.0) {
        return call ? std::max(spot - strike, 0.0) : std::max(strike - spot, 0.0);
    }
    const double df = std::exp(-rate * t_years);
    if (sigma <= 0.0) {
        const double fwd = spot - strike * df;
        return call ? std::max(fwd, 0.0) : std::max(-fwd, 0.0);
    }
    const double vol = sigma * std::sqrt(t_years);
    const double d1 = (std::log(spot / strike) + (rate + 0.5 * sigma * sigma) * t_years) / vol;
    const double d2 = d1 - vol;
    if (call) return spot * norm_cdf(d1) - strike * df * norm_cdf(d2);
    return strike * df * norm_cdf(-d2) - spot * norm_cdf(-d1);
}

std::optional<double> implied_volatility(double price, double spot, double strike, TimePoint tau,
                                         TimePoint maturity, double rate_annual, AssetType opt_type,
                                         const ImpliedVolConfig& cfg) {
    if (maturity <= tau) return std::nullopt;
    const double t_years = year_fraction(maturity, tau);
    const double df = std::exp(-rate_annual * t_years);
    const bool call = opt_type == AssetType::CL;
    const double lower = call ? std::max(spot - strike * df, 0.0) : std::max(strike * df - spot, 0.0);
    const double upper = call ? spot : strike * df;
    if (!(price > lower) || !(price < upper)) return std::nullopt;

    double lo = cfg.sigma_lo, hi = cfg.sigma_hi;
    double f_lo = black_scholes_price(opt_type, spot, strike, rate_annual, lo, t_years) - price;
    double f_hi = black_scholes_price(opt_type, spot, strike, rate_annual, hi, t_years) - price;
    if (f_lo > 0.0 || f_hi < 0.0) return std::nullopt;  // outside the bracket's price range
    double mid = 0.5 * (lo + hi);
    for (int it = 0; it < cfg.max_iter; ++it) {
        mid = 0.5 * (lo + hi);
        const double f_mid = black_scholes_price(opt_type, spot, strike, rate_annual, mid, t_years) - price;
        if (std::abs(f_mid) < cfg.price_tol && hi - lo < 1e-9) break;
        if (f_mid < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return mid;
}

}  // namespace optarb
