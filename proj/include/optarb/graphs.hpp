// Per-date graph construction over the trading universe: directed k'-nearest
// strike/maturity edges and the 9-dimensional node feature vectors.
#pragma once

#include <Eigen/Core>
#include <map>
#include <string>
#include <vector>

#include "optarb/data_io.hpp"
#include "optarb/market_core.hpp"

namespace optarb {

constexpr int kNodeFeatureCount = 9;

struct ArbGraph {
    int date = 0;                                // prediction date t (features are from t-1, t-2)
    std::vector<AssetId> nodes;                  // universe, lexicographic (maturity, strike)
    std::vector<std::pair<int, int>> edges;      // directed (src, dst) node indices
    Eigen::MatrixXd features;                    // n x 9
    Eigen::VectorXd targets;                     // y_{a,o(t)} where available, else 0
    std::vector<char> has_target;                // availability mask
};

// Nearest multiple of two with half-up rounding, floored to 1 when zero.
int neighbor_count(double p_dg, int group_size);

// Directed edge list: (a, a') is an edge when a is within the k'-nearest
// same-maturity strike neighbors of a', or the k'-nearest same-strike
// maturity neighbors of a' (union of rank sets 1..k', ties included, the
// node itself excluded).
std::vector<std::pair<int, int>> build_edges(const std::vector<AssetId>& nodes, double p_dg);

struct FeatureConfig {
    double rate = 0.03;            // annualized risk-free rate for implied vols
    double default_sigma = 0.2;    // last-resort implied-vol imputation
};

// Node features for predicting y at the open of date t:
// [S_c(t-1) - K, M - t, y_c(t-1), y_o(t-1), y_high(t-1), y_low(t-1),
//  y_c(t-1) - y_c(t-2), put implied vol, call implied vol].
// The high (low) estimate uses the high (low) put and low (high) call prices.
// Missing y values impute 0; missing implied vols impute the same-maturity
// median of that date.
Eigen::MatrixXd node_features(const ChainTable& chain,
                              const std::map<int, std::vector<AssetId>>& universes, int t,
                              const FeatureConfig& cfg = {});

// Targets y_{a,o(t)} for the universe of date t (mask marks availability:
// the asset must be traded on t with both open legs quoted).
void fill_targets(ArbGraph& graph, const ChainTable& chain);

ArbGraph build_graph(const ChainTable& chain, const std::map<int, std::vector<AssetId>>& universes,
                     int t, double p_dg, const FeatureConfig& cfg = {});

// JSONL persistence (one graph per line).
std::string graph_to_json(const ArbGraph& graph);
ArbGraph graph_from_json(const std::string& line);
void save_graphs(const std::string& path, const std::vector<ArbGraph>& graphs);
std::vector<ArbGraph> load_graphs(const std::string& path);

}  // namespace optarb
