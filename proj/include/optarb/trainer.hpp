// Walk-forward training rounds: grid search with parameter-count matching,
// early stopping on validation MSE, raw-unit test scoring, and prediction
// export for the backtest.
#pragma once

#include <memory>
#include <vector>

#include "optarb/data_io.hpp"
#include "optarb/graphs.hpp"
#include "optarb/nn/layers.hpp"

namespace optarb {

enum class ModelArch { RNConv, GCN, SAGE };

const char* to_string(ModelArch a);
ModelArch model_arch_from_string(const std::string& s);

struct TrainConfig {
    std::vector<int> layer_grid{3, 4, 5};
    std::vector<double> param_targets{1e5, 5e5, 1e6};
    int tree_depth = 4;
    double learning_rate = 1e-3;
    int max_epochs = 200;
    int patience = 10;
    int batch_graphs = 16;
    std::uint64_t seed = 1;
    bool scale_features = true;
    bool scale_targets = true;
};

double mse(const std::vector<double>& pred, const std::vector<double>& target);

struct PredRow {
    int date = 0;
    AssetId asset;
    double y_hat = 0.0;  // raw target units
};

struct CellResult {
    int n_layers = 0;
    double param_target = 0.0;
    int p_ctr = 0;
    long n_params = 0;
    double val_mse = 0.0;  // scaled units
    int epochs_run = 0;
};

struct RoundResult {
    int round = 0;
    ModelArch arch = ModelArch::RNConv;
    std::vector<CellResult> cells;
    int selected_cell = -1;
    double val_mse = 0.0;       // selected cell, scaled units
    double test_mse = 0.0;      // raw units
    double baseline_mse = 0.0;  // zero predictor on the raw test targets
    std::size_t n_test_nodes = 0;
    std::vector<PredRow> predictions;
    nn::StateDict checkpoint;  // selected model parameters and buffers
    std::string feature_scaler_json;
    std::string target_scaler_json;
    bool test_accessed_early = false;
};

// Access-counted view of the test split; selection must not touch it.
class TracedGraphs {
public:
    explicit TracedGraphs(std::vector<const ArbGraph*> graphs) : graphs_(std::move(graphs)) {}
    const std::vector<const ArbGraph*>& get() const {
        ++accesses_;
        return graphs_;
    }
    int access_count() const { return accesses_; }

private:
    std::vector<const ArbGraph*> graphs_;
    mutable int accesses_ = 0;
};

std::unique_ptr<nn::GraphRegressor> build_model(ModelArch arch, int n_layers, int p_ctr, int tree_depth,
                                                Eigen::Index input_width, std::uint64_t init_seed);

// Parameter-count matched knob for one grid cell.
int matched_p_ctr(ModelArch arch, int n_layers, int tree_depth, Eigen::Index input_width, long target);

RoundResult train_round(const std::vector<const ArbGraph*>& train, const std::vector<const ArbGraph*>& val,
                        const TracedGraphs& test, ModelArch arch, const TrainConfig& cfg,
                        int round_index = 1);

// Eval-mode predictions in raw target units for every node of every graph.
std::vector<PredRow> predict_graphs(nn::GraphRegressor& model, const std::vector<const ArbGraph*>& graphs,
                                    const QuantileScaler* feature_scaler,
                                    const QuantileScaler* target_scaler);

}  // namespace optarb
