#include "optarb/graphs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <optional>
#include <stdexcept>

namespace optarb {

using json = nlohmann::ordered_json;

int neighbor_count(double p_dg, int group_size) {
    if (p_dg < 0.0 || p_dg > 1.0) throw std::invalid_argument("p_dg must lie in [0,1]");
    const double x = p_dg * group_size;
    const int k = 2 * static_cast<int>(std::floor(x / 2.0 + 0.5));
    return k == 0 ? 1 : k;
}

namespace {

// Indices of group members within the k-nearest of `target` by |key| distance;
// union of rank sets 1..k counted with multiplicity, so ties at the cutoff
// are included.
std::vector<int> k_nearest(const std::vector<std::int64_t>& keys, int target, int k) {
    std::vector<std::pair<std::int64_t, int>> dist;
    for (int i = 0; i < static_cast<int>(keys.size()); ++i) {
        if (i == target) continue;
        dist.push_back({std::llabs(keys[static_cast<std::size_t>(i)] - keys[static_cast<std::size_t>(target)]), i});
    }
    std::sort(dist.begin(), dist.end());
    std::vector<int> out;
    if (dist.empty()) return out;
    const std::size_t cut = std::min<std::size_t>(static_cast<std::size_t>(k), dist.size());
    const std::int64_t threshold = dist[cut - 1].first;
    for (const auto& [d, i] : dist) {
        if (d <= threshold) out.push_back(i);
    }
    return out;
}

}  // namespace

std::vector<std::pair<int, int>> build_edges(const std::vector<AssetId>& nodes, double p_dg) {
    std::vector<std::pair<int, int>> edges;
    const int n = static_cast<int>(nodes.size());

    auto add_group_edges = [&](const std::vector<int>& group, const std::vector<std::int64_t>& keys) {
        const int k = neighbor_count(p_dg, static_cast<int>(group.size()));
        for (int g = 0; g < static_cast<int>(group.size()); ++g) {
            for (int src : k_nearest(keys, g, k)) {
                edges.push_back({group[static_cast<std::size_t>(src)], group[static_cast<std::size_t>(g)]});
            }
        }
    };

    // Same-maturity groups, strike distance.
    std::map<std::int64_t, std::vector<int>> by_maturity;
    for (int i = 0; i < n; ++i) by_maturity[nodes[static_cast<std::size_t>(i)].maturity_key()].push_back(i);
    for (const auto& [mk, group] : by_maturity) {
        std::vector<std::int64_t> keys;
        for (int i : group) keys.push_back(nodes[static_cast<std::size_t>(i)].strike_key());
        add_group_edges(group, keys);
    }

    // Same-strike groups, maturity distance.
    std::map<std::int64_t, std::vector<int>> by_strike;
    for (int i = 0; i < n; ++i) by_strike[nodes[static_cast<std::size_t>(i)].strike_key()].push_back(i);
    for (const auto& [sk, group] : by_strike) {
        std::vector<std::int64_t> keys;
        for (int i : group) keys.push_back(nodes[static_cast<std::size_t>(i)].maturity_key());
        add_group_edges(group, keys);
    }

    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    return edges;
}

namespace {

enum class Snap { Open, Close, HighY, LowY };

// delta at a snapshot of date d, when the asset was traded there. The high
// (low) y estimate uses the high (low) put with the low (high) call; puts
// peak and calls bottom when the underlying is at its low, so the matching
// underlying level is the day's low (high).
std::optional<double> delta_at(const ChainTable& chain, const AssetId& a, int d, Snap snap) {
    if (!chain.sl_traded(a, d)) return std::nullopt;
    const UnderlyingBar* bar = chain.underlying(d);
    const OptionQuote* put = chain.quote(a.with_type(AssetType::PT), d);
    const OptionQuote* call = chain.quote(a.with_type(AssetType::CL), d);
    if (bar == nullptr || put == nullptr || call == nullptr) return std::nullopt;
    switch (snap) {
        case Snap::Open: return delta_from_prices(bar->open, put->open, call->open, a.strike);
        case Snap::Close: return delta_from_prices(bar->close, put->close, call->close, a.strike);
        case Snap::HighY: return delta_from_prices(bar->low, put->high, call->low, a.strike);
        case Snap::LowY: return delta_from_prices(bar->high, put->low, call->high, a.strike);
    }
    return std::nullopt;
}

// y = delta - group mean, with the group drawn from the universe of date d.
class SnapshotY {
public:
    SnapshotY(const ChainTable& chain, const std::vector<AssetId>& universe_d, int d, Snap snap)
        : chain_(chain), d_(d), snap_(snap) {
        for (const AssetId& a : universe_d) {
            if (auto delta = delta_at(chain, a, d, snap)) {
                group_sum_[a.maturity_key()] += *delta;
                group_n_[a.maturity_key()] += 1;
            }
        }
    }

    std::optional<double> y(const AssetId& a) const {
        const auto delta = delta_at(chain_, a, d_, snap_);
        if (!delta) return std::nullopt;
        auto it = group_n_.find(a.maturity_key());
        if (it == group_n_.end() || it->second == 0) return std::nullopt;
        return *delta - group_sum_.at(a.maturity_key()) / it->second;
    }

private:
    const ChainTable& chain_;
    int d_;
    Snap snap_;
    std::map<std::int64_t, double> group_sum_;
    std::map<std::int64_t, int> group_n_;
};

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

Eigen::MatrixXd node_features(const ChainTable& chain,
                              const std::map<int, std::vector<AssetId>>& universes, int t,
                              const FeatureConfig& cfg) {
    auto u_it = universes.find(t);
    if (u_it == universes.end()) throw std::invalid_argument("no universe for date " + std::to_string(t));
    const std::vector<AssetId>& nodes = u_it->second;
    const UnderlyingBar* bar1 = chain.underlying(t - 1);
    if (bar1 == nullptr || chain.underlying(t - 2) == nullptr) {
        throw std::invalid_argument("node_features: the two prior trading dates must exist in the chain");
    }
    auto universe_or_empty = [&](int d) -> const std::vector<AssetId>& {
        static const std::vector<AssetId> empty;
        auto it = universes.find(d);
        return it == universes.end() ? empty : it->second;
    };

    const SnapshotY y_close1(chain, universe_or_empty(t - 1), t - 1, Snap::Close);
    const SnapshotY y_open1(chain, universe_or_empty(t - 1), t - 1, Snap::Open);
    const SnapshotY y_high1(chain, universe_or_empty(t - 1), t - 1, Snap::HighY);
    const SnapshotY y_low1(chain, universe_or_empty(t - 1), t - 1, Snap::LowY);
    const SnapshotY y_close2(chain, universe_or_empty(t - 2), t - 2, Snap::Close);

    const auto n = static_cast<Eigen::Index>(nodes.size());
    Eigen::MatrixXd x(n, kNodeFeatureCount);

    // Implied vols from the prior close; failures flagged for imputation.
    std::vector<std::optional<double>> iv_put(nodes.size()), iv_call(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const AssetId& a = nodes[i];
        if (!chain.sl_traded(a, t - 1)) continue;
        const OptionQuote* put = chain.quote(a.with_type(AssetType::PT), t - 1);
        const OptionQuote* call = chain.quote(a.with_type(AssetType::CL), t - 1);
        if (put == nullptr || call == nullptr) continue;
        iv_put[i] = implied_volatility(put->close, bar1->close, a.strike, close_time(t - 1), a.maturity,
                                       cfg.rate, AssetType::PT);
        iv_call[i] = implied_volatility(call->close, bar1->close, a.strike, close_time(t - 1), a.maturity,
                                        cfg.rate, AssetType::CL);
    }
    auto impute_iv = [&](std::vector<std::optional<double>>& iv) {
        std::map<std::int64_t, std::vector<double>> by_mat;
        std::vector<double> all;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (iv[i]) {
                by_mat[nodes[i].maturity_key()].push_back(*iv[i]);
                all.push_back(*iv[i]);
            }
        }
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (iv[i]) continue;
            auto it = by_mat.find(nodes[i].maturity_key());
            if (it != by_mat.end() && !it->second.empty()) {
                iv[i] = median_of(it->second);
            } else if (!all.empty()) {
                iv[i] = median_of(all);
            } else {
                iv[i] = cfg.default_sigma;
            }
        }
    };
    impute_iv(iv_put);
    impute_iv(iv_call);

    for (Eigen::Index i = 0; i < n; ++i) {
        const AssetId& a = nodes[static_cast<std::size_t>(i)];
        const double yc1 = y_close1.y(a).value_or(0.0);
        const double yc2 = y_close2.y(a).value_or(0.0);
        x(i, 0) = bar1->close - a.strike;
        x(i, 1) = a.maturity - TimePoint(static_cast<double>(t));
        x(i, 2) = yc1;
        x(i, 3) = y_open1.y(a).value_or(0.0);
        x(i, 4) = y_high1.y(a).value_or(0.0);
        x(i, 5) = y_low1.y(a).value_or(0.0);
        x(i, 6) = yc1 - yc2;
        x(i, 7) = *iv_put[static_cast<std::size_t>(i)];
        x(i, 8) = *iv_call[static_cast<std::size_t>(i)];
    }
    return x;
}

void fill_targets(ArbGraph& graph, const ChainTable& chain) {
    const auto n = static_cast<Eigen::Index>(graph.nodes.size());
    graph.targets = Eigen::VectorXd::Zero(n);
    graph.has_target.assign(graph.nodes.size(), 0);
    const SnapshotY y_open(chain, graph.nodes, graph.date, Snap::Open);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (auto y = y_open.y(graph.nodes[static_cast<std::size_t>(i)])) {
            graph.targets(i) = *y;
            graph.has_target[static_cast<std::size_t>(i)] = 1;
        }
    }
}

ArbGraph build_graph(const ChainTable& chain, const std::map<int, std::vector<AssetId>>& universes,
                     int t, double p_dg, const FeatureConfig& cfg) {
    ArbGraph g;
    g.date = t;
    auto it = universes.find(t);
    if (it == universes.end()) throw std::invalid_argument("no universe for date " + std::to_string(t));
    g.nodes = it->second;
    std::sort(g.nodes.begin(), g.nodes.end());
    g.edges = build_edges(g.nodes, p_dg);
    g.features = node_features(chain, universes, t, cfg);
    fill_targets(g, chain);
    return g;
}

// ---- Serialization -------------------------------------------------------------

std::string graph_to_json(const ArbGraph& graph) {
    json j;
    j["date"] = graph.date;
    json nodes = json::array();
    for (const AssetId& a : graph.nodes) nodes.push_back({a.maturity.tau, a.strike});
    j["nodes"] = std::move(nodes);
    json edges = json::array();
    for (const auto& [s, d] : graph.edges) edges.push_back({s, d});
    j["edges"] = std::move(edges);
    json feats = json::array();
    for (Eigen::Index r = 0; r < graph.features.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < graph.features.cols(); ++c) row.push_back(graph.features(r, c));
        feats.push_back(std::move(row));
    }
    j["features"] = std::move(feats);
    json targets = json::array();
    for (Eigen::Index i = 0; i < graph.targets.size(); ++i) targets.push_back(graph.targets(i));
    j["targets"] = std::move(targets);
    json mask = json::array();
    for (char m : graph.has_target) mask.push_back(static_cast<int>(m));
    j["mask"] = std::move(mask);
    return j.dump();
}

ArbGraph graph_from_json(const std::string& line) {
    const json j = json::parse(line);
    ArbGraph g;
    g.date = j.at("date").get<int>();
    for (const auto& jn : j.at("nodes")) {
        g.nodes.push_back(AssetId::synthetic_long(TimePoint(jn.at(0).get<double>()), jn.at(1).get<double>()));
    }
    for (const auto& je : j.at("edges")) {
        g.edges.push_back({je.at(0).get<int>(), je.at(1).get<int>()});
    }
    const auto& jf = j.at("features");
    const auto rows = static_cast<Eigen::Index>(jf.size());
    g.features.resize(rows, kNodeFeatureCount);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < kNodeFeatureCount; ++c) {
            g.features(r, c) = jf.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
        }
    }
    const auto& jt = j.at("targets");
    g.targets.resize(static_cast<Eigen::Index>(jt.size()));
    for (Eigen::Index i = 0; i < g.targets.size(); ++i) g.targets(i) = jt.at(static_cast<std::size_t>(i)).get<double>();
    for (const auto& jm : j.at("mask")) g.has_target.push_back(static_cast<char>(jm.get<int>()));
    return g;
}

void save_graphs(const std::string& path, const std::vector<ArbGraph>& graphs) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write graphs file: " + path);
    for (const ArbGraph& g : graphs) out << graph_to_json(g) << '\n';
}

std::vector<ArbGraph> load_graphs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open graphs file: " + path);
    std::vector<ArbGraph> graphs;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) graphs.push_back(graph_from_json(line));
    }
    return graphs;
}

}  // namespace optarb
