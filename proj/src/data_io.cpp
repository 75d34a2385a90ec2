#include "optarb/data_io.hpp"

#include <algorithm>
#include <boost/math/special_functions/erf.hpp>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

namespace optarb {

using json = nlohmann::ordered_json;

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double normal_quantile(double p) {
    return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p);
}

}  // namespace

// ---- ChainTable --------------------------------------------------------------

ChainTable::QuoteKey ChainTable::key(const AssetId& a, int date) {
    return QuoteKey{static_cast<std::int8_t>(a.type), a.maturity_key(), a.strike_key(), date};
}

void ChainTable::add_underlying(const UnderlyingBar& bar) {
    if (underlying_.count(bar.date)) {
        throw std::invalid_argument("duplicate underlying bar for date " + std::to_string(bar.date));
    }
    underlying_[bar.date] = bar;
    if (!std::binary_search(dates_.begin(), dates_.end(), bar.date)) {
        dates_.insert(std::upper_bound(dates_.begin(), dates_.end(), bar.date), bar.date);
    }
}

void ChainTable::add_quote(const OptionQuote& quote) {
    if (quote.asset.type != AssetType::PT && quote.asset.type != AssetType::CL) {
        throw std::invalid_argument("chain rows must be PT or CL legs");
    }
    auto [it, inserted] = quotes_.emplace(key(quote.asset, quote.date), quote);
    if (!inserted) {
        throw std::invalid_argument("duplicate quote for " + quote.asset.label() + " on date " +
                                    std::to_string(quote.date));
    }
    auto& legs = sl_by_date_[quote.date][{quote.asset.maturity_key(), quote.asset.strike_key()}];
    if (quote.asset.type == AssetType::PT) {
        legs.pt = true;
        legs.pt_traded = quote.traded;
    } else {
        legs.cl = true;
        legs.cl_traded = quote.traded;
    }
}

const UnderlyingBar* ChainTable::underlying(int date) const {
    auto it = underlying_.find(date);
    return it == underlying_.end() ? nullptr : &it->second;
}

const OptionQuote* ChainTable::quote(const AssetId& leg, int date) const {
    auto it = quotes_.find(key(leg, date));
    return it == quotes_.end() ? nullptr : &it->second;
}

bool ChainTable::sl_listed(const AssetId& sl, int date) const {
    auto d = sl_by_date_.find(date);
    if (d == sl_by_date_.end()) return false;
    auto it = d->second.find({sl.maturity_key(), sl.strike_key()});
    return it != d->second.end() && it->second.pt && it->second.cl;
}

bool ChainTable::sl_traded(const AssetId& sl, int date) const {
    auto d = sl_by_date_.find(date);
    if (d == sl_by_date_.end()) return false;
    auto it = d->second.find({sl.maturity_key(), sl.strike_key()});
    return it != d->second.end() && it->second.pt && it->second.cl && it->second.pt_traded &&
           it->second.cl_traded;
}

std::vector<AssetId> ChainTable::sl_assets_on(int date) const {
    std::vector<AssetId> out;
    auto d = sl_by_date_.find(date);
    if (d == sl_by_date_.end()) return out;
    for (const auto& [mk, legs] : d->second) {
        if (!legs.pt || !legs.cl) continue;
        out.push_back(AssetId::synthetic_long(TimePoint(static_cast<double>(mk.first) / 86400.0),
                                              static_cast<double>(mk.second) / 1e6));
    }
    return out;  // map iteration is already (maturity, strike) sorted
}

std::vector<const OptionQuote*> ChainTable::rows_sorted() const {
    std::vector<const OptionQuote*> rows;
    rows.reserve(quotes_.size());
    for (const auto& [k, q] : quotes_) rows.push_back(&q);
    std::sort(rows.begin(), rows.end(), [](const OptionQuote* a, const OptionQuote* b) {
        if (a->date != b->date) return a->date < b->date;
        return a->asset < b->asset;
    });
    return rows;
}

// ---- CSV ingestion -----------------------------------------------------------

ChainTable load_chain(const std::string& path, const ChainSchema& schema) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open chain file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty chain file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv_line(line);
    auto column = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return static_cast<int>(i);
        }
        throw std::runtime_error("chain file " + path + " is missing column '" + name + "'");
    };
    const int c_date = column(schema.date), c_type = column(schema.type);
    const int c_mat = column(schema.maturity), c_strike = column(schema.strike);
    const int c_open = column(schema.open), c_high = column(schema.high);
    const int c_low = column(schema.low), c_close = column(schema.close);
    const int c_traded = column(schema.traded);

    ChainTable table;
    std::vector<int> bad_rows;
    int row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() < header.size()) {
            throw std::runtime_error("row " + std::to_string(row_no) + ": expected " +
                                     std::to_string(header.size()) + " fields, got " +
                                     std::to_string(fields.size()));
        }
        try {
            const int date = std::stoi(fields[c_date]);
            const AssetType type = asset_type_from_string(fields[c_type]);
            const double open = std::stod(fields[c_open]);
            const double high = std::stod(fields[c_high]);
            const double low = std::stod(fields[c_low]);
            const double close = std::stod(fields[c_close]);
            if (type == AssetType::UI) {
                table.add_underlying(UnderlyingBar{date, open, high, low, close});
                continue;
            }
            if (type != AssetType::PT && type != AssetType::CL) {
                throw std::runtime_error("unsupported row type " + fields[c_type]);
            }
            OptionQuote q;
            q.asset = AssetId{type, TimePoint(std::stod(fields[c_mat])), std::stod(fields[c_strike])};
            q.date = date;
            q.open = open;
            q.high = high;
            q.low = low;
            q.close = close;
            const std::string& tr = fields[c_traded];
            q.traded = tr == "1" || tr == "true" || tr == "True";
            if (!q.ohlc_ordered()) {
                bad_rows.push_back(row_no);
                continue;
            }
            table.add_quote(q);
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error("row " + std::to_string(row_no) + ": " + e.what());
        }
    }
    if (!bad_rows.empty()) {
        std::string msg = "rows violating OHLC ordering rejected:";
        for (int r : bad_rows) msg += " " + std::to_string(r);
        throw std::runtime_error(msg);
    }
    return table;
}

void save_chain(const std::string& path, const ChainTable& table, const ChainSchema& schema) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write chain file: " + path);
    out << schema.date << ',' << schema.type << ',' << schema.maturity << ',' << schema.strike << ','
        << schema.open << ',' << schema.high << ',' << schema.low << ',' << schema.close << ','
        << schema.traded << '\n';
    for (int date : table.dates()) {
        if (const UnderlyingBar* bar = table.underlying(date)) {
            out << date << ",UI,0,0," << format_double(bar->open) << ',' << format_double(bar->high)
                << ',' << format_double(bar->low) << ',' << format_double(bar->close) << ",1\n";
        }
    }
    for (const OptionQuote* q : table.rows_sorted()) {
        out << q->date << ',' << to_string(q->asset.type) << ',' << format_double(q->asset.maturity.tau)
            << ',' << format_double(q->asset.strike) << ',' << format_double(q->open) << ','
            << format_double(q->high) << ',' << format_double(q->low) << ',' << format_double(q->close)
            << ',' << (q->traded ? 1 : 0) << '\n';
    }
}

// ---- Synthetic market ---------------------------------------------------------

ChainTable generate_synthetic_market(const SyntheticConfig& cfg) {
    if (cfg.arb_noise_scale < 0.0) throw std::invalid_argument("arb_noise_scale must be >= 0");
    if (cfg.n_dates < 3) throw std::invalid_argument("n_dates must be >= 3");

    Rng root(cfg.seed);
    Rng path_rng = root.child(1);
    Rng noise_rng = root.child(2);
    Rng trade_rng = root.child(3);

    // Underlying OHLC path (two half-day lognormal steps per date).
    const double dt = 1.0 / kTradingDaysPerYear;
    const double mu = cfg.drift - 0.5 * cfg.vol * cfg.vol;
    const double half_drift = mu * dt / 2.0;
    const double half_vol = cfg.vol * std::sqrt(dt / 2.0);
    std::vector<UnderlyingBar> bars(cfg.n_dates + 1);
    double prev_close = cfg.s0;
    for (int t = 1; t <= cfg.n_dates; ++t) {
        UnderlyingBar bar;
        bar.date = t;
        bar.open = prev_close * std::exp(half_drift + half_vol * path_rng.normal());
        bar.close = bar.open * std::exp(half_drift + half_vol * path_rng.normal());
        // The 0.3 floor keeps the intraday extremes strictly outside the
        // open/close range, so option extremes land on one snapshot.
        const double up = cfg.intraday_range * cfg.vol * std::sqrt(dt) * (0.3 + std::abs(path_rng.normal()));
        const double dn = cfg.intraday_range * cfg.vol * std::sqrt(dt) * (0.3 + std::abs(path_rng.normal()));
        bar.high = std::max(bar.open, bar.close) * std::exp(up);
        bar.low = std::min(bar.open, bar.close) * std::exp(-dn);
        bars[t] = bar;
        prev_close = bar.close;
    }

    struct Listing {
        int maturity_date = 0;
        int listing_start = 0;
        std::map<std::int64_t, int> strike_first_date;  // strike key -> first listed date
        std::map<std::int64_t, double> eps;             // put-leg log mispricing state
    };
    std::vector<Listing> listings;
    for (int m = cfg.first_maturity; m <= cfg.n_dates; m += cfg.maturity_every) {
        Listing l;
        l.maturity_date = m;
        l.listing_start = std::max(1, m - cfg.listing_lead);
        listings.push_back(l);
    }
    if (listings.empty()) throw std::invalid_argument("no maturities inside the date range");

    ChainTable table;
    for (int t = 1; t <= cfg.n_dates; ++t) table.add_underlying(bars[t]);

    const double innov_scale = cfg.arb_noise_scale * std::sqrt(std::max(0.0, 1.0 - cfg.arb_ar1 * cfg.arb_ar1));
    for (int t = 1; t <= cfg.n_dates; ++t) {
        const UnderlyingBar& bar = bars[t];
        for (auto& listing : listings) {
            if (t < listing.listing_start || t > listing.maturity_date) continue;
            // Keep the strike band centered on the open so ATM stays covered.
            const double band = cfg.strikes_half_width * cfg.strike_step;
            const std::int64_t lo = static_cast<std::int64_t>(std::ceil((bar.open - band) / cfg.strike_step));
            const std::int64_t hi = static_cast<std::int64_t>(std::floor((bar.open + band) / cfg.strike_step));
            for (std::int64_t i = lo; i <= hi; ++i) {
                const double strike = static_cast<double>(i) * cfg.strike_step;
                if (strike <= 0.0) continue;
                const std::int64_t skey = std::llround(strike * 1e6);
                listing.strike_first_date.emplace(skey, t);
            }

            const TimePoint maturity = close_time(listing.maturity_date);
            for (auto& [skey, first_date] : listing.strike_first_date) {
                if (t < first_date) continue;
                const double strike = static_cast<double>(skey) / 1e6;

                double eps = 0.0;
                if (cfg.arb_noise_scale > 0.0) {
                    auto it = listing.eps.find(skey);
                    if (it == listing.eps.end()) {
                        eps = cfg.arb_noise_scale * noise_rng.normal();
                    } else {
                        eps = cfg.arb_ar1 * it->second + innov_scale * noise_rng.normal();
                    }
                    listing.eps[skey] = eps;
                }
                const double put_mult = std::exp(eps);

                const double moneyness = std::abs(bar.close / strike - 1.0);
                const bool traded = trade_rng.bernoulli(1.0 / (1.0 + std::exp((moneyness - cfg.trade_m0) / cfg.trade_w)));

                const std::pair<TimePoint, double> snaps[4] = {
                    {open_time(t), bar.open},
                    {high_time(t), bar.high},
                    {low_time(t), bar.low},
                    {close_time(t), bar.close},
                };
                double put_px[4], call_px[4];
                for (int s = 0; s < 4; ++s) {
                    const double ty = year_fraction(maturity, snaps[s].first);
                    call_px[s] = std::max(
                        black_scholes_price(AssetType::CL, snaps[s].second, strike, cfg.rate, cfg.vol, ty), 1e-12);
                    put_px[s] = std::max(
                        black_scholes_price(AssetType::PT, snaps[s].second, strike, cfg.rate, cfg.vol, ty) * put_mult,
                        1e-12);
                }
                auto make_quote = [&](AssetType type, const double px[4]) {
                    OptionQuote q;
                    q.asset = AssetId{type, maturity, strike};
                    q.date = t;
                    q.open = px[0];
                    q.close = px[3];
                    q.high = std::max(std::max(px[0], px[1]), std::max(px[2], px[3]));
                    q.low = std::min(std::min(px[0], px[1]), std::min(px[2], px[3]));
                    q.traded = traded;
                    return q;
                };
                table.add_quote(make_quote(AssetType::PT, put_px));
                table.add_quote(make_quote(AssetType::CL, call_px));
            }
        }
    }
    return table;
}

// ---- Walk-forward splits -------------------------------------------------------

int SplitPlan::round_for_date(int date) const {
    for (const auto& r : rounds) {
        if (date >= r.test_begin && date < r.test_end) return r.index;
    }
    return -1;
}

SplitPlan make_splits(const std::vector<int>& fit_dates, double p_val, std::uint64_t seed) {
    if (!(p_val > 0.0 && p_val < 1.0)) throw std::invalid_argument("p_val must lie in (0,1)");
    if (fit_dates.size() < 2) throw std::invalid_argument("fit_dates needs at least one finite date plus the open end");
    if (fit_dates.back() != kOpenEnd) throw std::invalid_argument("fit_dates must end with the open-end sentinel");
    for (std::size_t i = 1; i < fit_dates.size(); ++i) {
        if (fit_dates[i] <= fit_dates[i - 1]) throw std::invalid_argument("fit_dates must be strictly increasing");
    }
    if (fit_dates.front() < 2) throw std::invalid_argument("first fit date must leave at least one prior date");

    SplitPlan plan;
    plan.fit_dates = fit_dates;
    plan.p_val = p_val;
    plan.seed = seed;
    Rng root(seed);
    for (std::size_t i = 0; i + 1 < fit_dates.size(); ++i) {
        SplitRound round;
        round.index = static_cast<int>(i) + 1;
        round.test_begin = fit_dates[i];
        round.test_end = fit_dates[i + 1];
        std::vector<int> prior(static_cast<std::size_t>(fit_dates[i] - 1));
        for (int d = 1; d < fit_dates[i]; ++d) prior[static_cast<std::size_t>(d - 1)] = d;
        const auto n_val = static_cast<std::size_t>(std::llround(p_val * static_cast<double>(prior.size())));
        Rng r = root.child(static_cast<std::uint64_t>(round.index));
        r.shuffle(prior);
        round.val.assign(prior.begin(), prior.begin() + static_cast<std::ptrdiff_t>(n_val));
        round.train.assign(prior.begin() + static_cast<std::ptrdiff_t>(n_val), prior.end());
        std::sort(round.val.begin(), round.val.end());
        std::sort(round.train.begin(), round.train.end());
        plan.rounds.push_back(std::move(round));
    }
    return plan;
}

std::string split_plan_to_json(const SplitPlan& plan) {
    json j;
    j["format"] = "optarb-splits-v1";
    j["fit_dates"] = plan.fit_dates;
    j["p_val"] = plan.p_val;
    j["seed"] = plan.seed;
    j["rounds"] = json::array();
    for (const auto& r : plan.rounds) {
        json jr;
        jr["index"] = r.index;
        jr["test_begin"] = r.test_begin;
        jr["test_end"] = r.test_end;
        jr["train"] = r.train;
        jr["val"] = r.val;
        j["rounds"].push_back(jr);
    }
    return j.dump(2);
}

SplitPlan split_plan_from_json(const std::string& text) {
    const json j = json::parse(text);
    if (j.at("format") != "optarb-splits-v1") throw std::runtime_error("unexpected split plan format");
    SplitPlan plan;
    plan.fit_dates = j.at("fit_dates").get<std::vector<int>>();
    plan.p_val = j.at("p_val").get<double>();
    plan.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& jr : j.at("rounds")) {
        SplitRound r;
        r.index = jr.at("index").get<int>();
        r.test_begin = jr.at("test_begin").get<int>();
        r.test_end = jr.at("test_end").get<int>();
        r.train = jr.at("train").get<std::vector<int>>();
        r.val = jr.at("val").get<std::vector<int>>();
        plan.rounds.push_back(std::move(r));
    }
    return plan;
}

// ---- Quantile scaler -----------------------------------------------------------

QuantileScaler QuantileScaler::fit(const Eigen::MatrixXd& train_rows) {
    if (train_rows.rows() < 2) throw std::invalid_argument("QuantileScaler: need at least two training rows");
    QuantileScaler scaler;
    const auto n = train_rows.rows();
    for (Eigen::Index c = 0; c < train_rows.cols(); ++c) {
        std::vector<double> v(static_cast<std::size_t>(n));
        for (Eigen::Index r = 0; r < n; ++r) v[static_cast<std::size_t>(r)] = train_rows(r, c);
        std::sort(v.begin(), v.end());

        Feature f;
        if (v.front() == v.back()) {
            f.passthrough = true;  // constant feature: identity transform
            scaler.features_.push_back(std::move(f));
            continue;
        }
        // Plotting positions i/(n+1); ties get the average position of the run.
        std::size_t i = 0;
        while (i < v.size()) {
            std::size_t j = i;
            while (j + 1 < v.size() && v[j + 1] == v[i]) ++j;
            const double pos = 0.5 * static_cast<double>(i + 1 + j + 1) / static_cast<double>(v.size() + 1);
            f.values.push_back(v[i]);
            f.positions.push_back(pos);
            i = j + 1;
        }
        scaler.features_.push_back(std::move(f));
    }
    return scaler;
}

double QuantileScaler::transform_one(int col, double x) const {
    const Feature& f = features_.at(static_cast<std::size_t>(col));
    if (f.passthrough) return x;
    const auto& xs = f.values;
    const auto& ps = f.positions;
    double p;
    if (x <= xs.front()) {
        p = ps.front();
    } else if (x >= xs.back()) {
        p = ps.back();
    } else {
        const auto it = std::upper_bound(xs.begin(), xs.end(), x);
        const std::size_t hi = static_cast<std::size_t>(it - xs.begin());
        const std::size_t lo = hi - 1;
        const double w = (x - xs[lo]) / (xs[hi] - xs[lo]);
        p = ps[lo] + w * (ps[hi] - ps[lo]);
    }
    return normal_quantile(p);
}

double QuantileScaler::inverse_one(int col, double z) const {
    const Feature& f = features_.at(static_cast<std::size_t>(col));
    if (f.passthrough) return z;
    const auto& xs = f.values;
    const auto& ps = f.positions;
    double p = norm_cdf(z);
    p = std::clamp(p, ps.front(), ps.back());
    const auto it = std::upper_bound(ps.begin(), ps.end(), p);
    if (it == ps.begin()) return xs.front();
    if (it == ps.end()) return xs.back();
    const std::size_t hi = static_cast<std::size_t>(it - ps.begin());
    const std::size_t lo = hi - 1;
    const double w = (p - ps[lo]) / (ps[hi] - ps[lo]);
    return xs[lo] + w * (xs[hi] - xs[lo]);
}

Eigen::MatrixXd QuantileScaler::transform(const Eigen::MatrixXd& rows) const {
    if (rows.cols() != n_features()) throw std::invalid_argument("QuantileScaler: feature count mismatch");
    Eigen::MatrixXd out(rows.rows(), rows.cols());
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
        for (Eigen::Index r = 0; r < rows.rows(); ++r) {
            out(r, c) = transform_one(static_cast<int>(c), rows(r, c));
        }
    }
    return out;
}

Eigen::MatrixXd QuantileScaler::inverse_transform(const Eigen::MatrixXd& rows) const {
    if (rows.cols() != n_features()) throw std::invalid_argument("QuantileScaler: feature count mismatch");
    Eigen::MatrixXd out(rows.rows(), rows.cols());
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
        for (Eigen::Index r = 0; r < rows.rows(); ++r) {
            out(r, c) = inverse_one(static_cast<int>(c), rows(r, c));
        }
    }
    return out;
}

std::string QuantileScaler::to_json() const {
    json j;
    j["format"] = "optarb-scaler-v1";
    j["features"] = json::array();
    for (const auto& f : features_) {
        json jf;
        jf["passthrough"] = f.passthrough;
        jf["values"] = f.values;
        jf["positions"] = f.positions;
        j["features"].push_back(jf);
    }
    return j.dump();
}

QuantileScaler QuantileScaler::from_json(const std::string& text) {
    const json j = json::parse(text);
    if (j.at("format") != "optarb-scaler-v1") throw std::runtime_error("unexpected scaler format");
    QuantileScaler s;
    for (const auto& jf : j.at("features")) {
        Feature f;
        f.passthrough = jf.at("passthrough").get<bool>();
        f.values = jf.at("values").get<std::vector<double>>();
        f.positions = jf.at("positions").get<std::vector<double>>();
        s.features_.push_back(std::move(f));
    }
    return s;
}

}  // namespace optarb
