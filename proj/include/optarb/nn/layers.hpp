// Differentiable layers: low-rank cross network (plain and batch-normalized),
// MLP, oblivious decision trees (hard ODT and soft DDT/NODE), RNODE and
// RNConv, and the GCN/SAGE benchmark convolutions.
#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "optarb/nn/autodiff.hpp"

namespace optarb::nn {

using StateDict = std::map<std::string, Mat>;

std::string state_dict_to_json(const StateDict& sd);
StateDict state_dict_from_json(const std::string& text);

struct Linear {
    Param weight;  // in x out
    Param bias;    // 1 x out when has_bias
    bool has_bias = true;

    Linear() = default;
    Linear(Eigen::Index in, Eigen::Index out, bool with_bias, Rng& rng, bool zero_init = false);

    Var forward(Tape& t, Var x);
    void collect(std::vector<Param*>& out);
    void save(StateDict& sd, const std::string& prefix) const;
    void load(const StateDict& sd, const std::string& prefix);
};

// LeakyReLU hidden layers; the final layer is linear and bias-free.
struct Mlp {
    std::vector<Linear> layers;
    double slope = 0.01;

    Mlp() = default;
    Mlp(Eigen::Index in, Eigen::Index hidden, Eigen::Index out, Rng& rng);

    Var forward(Tape& t, Var x);
    void collect(std::vector<Param*>& out);
    void save(StateDict& sd, const std::string& prefix) const;
    void load(const StateDict& sd, const std::string& prefix);
};

enum class CrossVariant { Plain, BatchNormalized };

// x_{l+1} = x (.) (U phi(C phi(V^T z_l)) + b) + z_l with z_l the (optionally
// batch-normalized) state.
struct LowRankCross {
    CrossVariant variant = CrossVariant::BatchNormalized;
    int n_layers = 2;
    Eigen::Index width = 0, rank = 0;
    double slope = 0.01;

    struct CrossLayer {
        Param v;  // width x rank
        Param c;  // rank x rank
        Param u;  // rank x width
        Param b;  // 1 x width
    };
    std::vector<CrossLayer> layers;
    std::vector<Param> bn_gamma, bn_beta;        // n_layers + 1 instances when normalized
    std::vector<BatchNormBuffers> bn_buffers;

    LowRankCross() = default;
    LowRankCross(Eigen::Index width, Eigen::Index rank, int n_layers, CrossVariant variant, Rng& rng);

    Var forward(Tape& t, Var x, Mode mode);
    void collect(std::vector<Param*>& out);
    void save(StateDict& sd, const std::string& prefix) const;
    void load(const StateDict& sd, const std::string& prefix);
};

// Cross-network rank round(p/4), floored to 1.
Eigen::Index cross_rank_for(Eigen::Index width);
// MLP hidden width ceil(p/4), floored to 1.
Eigen::Index mlp_hidden_for(Eigen::Index width);

// ---- NODE baseline (soft oblivious trees with feature-score entmax) ---------

// Hard oblivious tree: response indexed by the d threshold outcomes.
double odt_forward(const Eigen::VectorXd& x, const Eigen::MatrixXd& onehot_scores,
                   const Eigen::VectorXd& thresholds, const Eigen::VectorXd& response);

struct Ddt {
    Eigen::Index input_width = 0;
    int depth = 0;
    double alpha = 1.5;
    Param scores;      // input_width x depth
    Param thresholds;  // 1 x depth
    Param scales;      // 1 x depth (kappa; must stay nonzero)
    Param response;    // 1 x 2^depth

    Ddt() = default;
    Ddt(Eigen::Index input_width, int depth, double alpha, Rng& rng);

    Var forward(Tape& t, Var x);  // n x 1
    void collect(std::vector<Param*>& out);
    void save(StateDict& sd, const std::string& prefix) const;
    void load(const StateDict& sd, const std::string& prefix);
};

struct NodeLayer {
    std::vector<Ddt> trees;

    NodeLayer() = default;
    NodeLayer(Eigen::Index input_width, int n_trees, int depth, double alpha, Rng& rng);

    Var forward(Tape& t, Var x);  // n x n_trees
    void collect(std::vector<Param*>& out);
};

// DenseNet-style stack: layer l consumes [x, g_1, ..., g_{l-1}]; the output
// sums every tree of every layer.
struct NodeEnsemble {
    Eigen::Index input_width = 0;
    int n_trees = 0, depth = 0;
    double alpha = 1.5;
    std::vector<NodeLayer> layers;

    NodeEnsemble() = default;
    NodeEnsemble(Eigen::Index input_width, int n_layers, int n_trees, int depth, double alpha, Rng& rng);

    Var forward(Tape& t, Var x);  // n x 1
    void collect(std::vector<Param*>& out);
};

// ---- RNODE / RNConv -----------------------------------------------------------

struct RnodeLayer {
    Eigen::Index input_width = 0;
    int n_trees = 0, depth = 0;
    double gamma = 5.0, alpha = 1.5;
    LowRankCross cross;
    Mlp mlp;
    BatchNormBuffers vbn;  // affine-free normalization of the split scores
    Param response;        // n_trees x 2^depth, zero-init

    RnodeLayer() = default;
    RnodeLayer(Eigen::Index input_width, int n_trees, int depth, Rng& rng, double gamma = 5.0,
               double alpha = 1.5);

    Var forward(Tape& t, Var x, Mode mode);  // n x n_trees
    void collect(std::vector<Param*>& out);
    void save(StateDict& sd, const std::string& prefix) const;
    void load(const StateDict& sd, const std::string& prefix);
};

// Precomputed aggregation operators for one (possibly merged) graph.
struct GraphContext {
    Mat neighbor_mean;  // row v averages the in-neighbors of v (zero row when none)
    Mat gcn_norm;       // D^{-1/2} (A + I) D^{-1/2} on in-degrees
};

GraphContext build_graph_context(int n_nodes, const std::vector<std::pair<int, int>>& edges);

struct RnconvLayer {
    RnodeLayer rnl1, rnl2;
    double q1 = 0.5;

    RnconvLayer() = default;
    RnconvLayer(Eigen::Index input_width, int n_trees, int depth, Rng& rng, double q1, double gamma,
                double alpha);

    Var forward(Tape& t, Var x, const GraphContext& g, Mode mode, Rng& rng);
    void collect(std::vector<Param*>& out);
    void save(StateDict& sd, const std::string& prefix) const;
    void load(const StateDict& sd, const std::string& prefix);
};

// Shared interface for the trainable node regressors.
struct GraphRegressor {
    virtual ~GraphRegressor() = default;
    virtual Var forward(Tape& t, Var x, const GraphContext& g, Mode mode, Rng& rng) = 0;
    virtual void collect(std::vector<Param*>& out) = 0;
    virtual void save(StateDict& sd) const = 0;
    virtual void load(const StateDict& sd) = 0;

    long param_count();
};

struct RnconvConfig {
    Eigen::Index input_width = 9;
    int n_layers = 3;
    int n_trees = 8;   // the parameter-count knob
    int depth = 4;
    double q1 = 0.5, q2 = 0.2;
    double gamma = 5.0, alpha = 1.5;
};

struct RnconvModel final : GraphRegressor {
    RnconvConfig cfg;
    std::vector<RnconvLayer> layers;

    RnconvModel(const RnconvConfig& cfg, Rng& rng);

    Var forward(Tape& t, Var x, const GraphContext& g, Mode mode, Rng& rng) override;
    void collect(std::vector<Param*>& out) override;
    void save(StateDict& sd) const override;
    void load(const StateDict& sd) override;
};

enum class ConvKind { GCN, SAGE };

struct BenchmarkConfig {
    ConvKind kind = ConvKind::GCN;
    Eigen::Index input_width = 9;
    int n_layers = 3;
    int hidden = 16;  // the parameter-count knob
};

struct BenchmarkModel final : GraphRegressor {
    BenchmarkConfig cfg;
    struct Conv {
        Linear lin;        // GCN transform / SAGE neighbor transform
        Linear self_lin;   // SAGE root transform (unused for GCN)
    };
    std::vector<Conv> convs;
    Linear head;
    double slope = 0.01;

    BenchmarkModel(const BenchmarkConfig& cfg, Rng& rng);

    Var forward(Tape& t, Var x, const GraphContext& g, Mode mode, Rng& rng) override;
    void collect(std::vector<Param*>& out) override;
    void save(StateDict& sd) const override;
    void load(const StateDict& sd) override;
};

// Smallest |count(p_ctr) - target| over a monotone builder; ties break to the
// smaller p_ctr.
int match_param_count(const std::function<long(int)>& count_for, long target, int p_ctr_max = 1 << 16);

}  // namespace optarb::nn
