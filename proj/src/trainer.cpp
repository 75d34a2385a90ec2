#include "optarb/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace optarb {

const char* to_string(ModelArch a) {
    switch (a) {
        case ModelArch::RNConv: return "rnconv";
        case ModelArch::GCN: return "gcn";
        case ModelArch::SAGE: return "sage";
    }
    return "?";
}

ModelArch model_arch_from_string(const std::string& s) {
    if (s == "rnconv" || s == "rnc" || s == "RNConv") return ModelArch::RNConv;
    if (s == "gcn" || s == "GCN") return ModelArch::GCN;
    if (s == "sage" || s == "SAGE") return ModelArch::SAGE;
    throw std::invalid_argument("unknown model architecture '" + s + "'");
}

double mse(const std::vector<double>& pred, const std::vector<double>& target) {
    if (pred.size() != target.size()) throw std::invalid_argument("mse: length mismatch");
    if (pred.empty()) throw std::invalid_argument("mse: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double r = pred[i] - target[i];
        acc += r * r;
    }
    return acc / static_cast<double>(pred.size());
}

std::unique_ptr<nn::GraphRegressor> build_model(ModelArch arch, int n_layers, int p_ctr, int tree_depth,
                                                Eigen::Index input_width, std::uint64_t init_seed) {
    Rng rng(init_seed);
    if (arch == ModelArch::RNConv) {
        nn::RnconvConfig cfg;
        cfg.input_width = input_width;
        cfg.n_layers = n_layers;
        cfg.n_trees = p_ctr;
        cfg.depth = tree_depth;
        return std::make_unique<nn::RnconvModel>(cfg, rng);
    }
    nn::BenchmarkConfig cfg;
    cfg.kind = arch == ModelArch::GCN ? nn::ConvKind::GCN : nn::ConvKind::SAGE;
    cfg.input_width = input_width;
    cfg.n_layers = n_layers;
    cfg.hidden = p_ctr;
    return std::make_unique<nn::BenchmarkModel>(cfg, rng);
}

int matched_p_ctr(ModelArch arch, int n_layers, int tree_depth, Eigen::Index input_width, long target) {
    auto count_for = [&](int p_ctr) {
        return build_model(arch, n_layers, p_ctr, tree_depth, input_width, 0)->param_count();
    };
    return nn::match_param_count(count_for, target);
}

namespace {

struct Batch {
    nn::Mat features;  // scaled
    nn::Mat targets;   // scaled, column
    nn::Mat mask;
    nn::GraphContext ctx;
};

nn::Mat scale_features(const QuantileScaler* scaler, const Eigen::MatrixXd& raw) {
    return scaler != nullptr ? scaler->transform(raw) : raw;
}

Batch merge_graphs(const std::vector<const ArbGraph*>& graphs, const std::vector<std::size_t>& which,
                   const QuantileScaler* feature_scaler, const QuantileScaler* target_scaler) {
    Eigen::Index total = 0;
    for (std::size_t g : which) total += static_cast<Eigen::Index>(graphs[g]->nodes.size());
    Batch batch;
    batch.features.resize(total, kNodeFeatureCount);
    batch.targets.resize(total, 1);
    batch.mask.resize(total, 1);
    std::vector<std::pair<int, int>> edges;
    Eigen::Index at = 0;
    for (std::size_t g : which) {
        const ArbGraph& graph = *graphs[g];
        const auto n = static_cast<Eigen::Index>(graph.nodes.size());
        batch.features.middleRows(at, n) = scale_features(feature_scaler, graph.features);
        for (Eigen::Index i = 0; i < n; ++i) {
            const bool has = graph.has_target[static_cast<std::size_t>(i)] != 0;
            batch.mask(at + i, 0) = has ? 1.0 : 0.0;
            double y = graph.targets(i);
            if (has && target_scaler != nullptr) y = target_scaler->transform_one(0, y);
            batch.targets(at + i, 0) = has ? y : 0.0;
        }
        for (const auto& [s, d] : graph.edges) {
            edges.push_back({s + static_cast<int>(at), d + static_cast<int>(at)});
        }
        at += n;
    }
    batch.ctx = nn::build_graph_context(static_cast<int>(total), edges);
    return batch;
}

// Scaled-unit validation MSE in eval mode.
double eval_mse_scaled(nn::GraphRegressor& model, const std::vector<const ArbGraph*>& graphs,
                       const QuantileScaler* feature_scaler, const QuantileScaler* target_scaler) {
    double acc = 0.0;
    std::size_t count = 0;
    Rng dummy(0);
    for (const ArbGraph* graph : graphs) {
        const auto n = static_cast<Eigen::Index>(graph->nodes.size());
        nn::Tape tape;
        nn::Var x = tape.constant(scale_features(feature_scaler, graph->features));
        nn::GraphContext ctx = nn::build_graph_context(static_cast<int>(n), graph->edges);
        nn::Var out = model.forward(tape, x, ctx, nn::Mode::Eval, dummy);
        const nn::Mat& pred = tape.value(out);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!graph->has_target[static_cast<std::size_t>(i)]) continue;
            double y = graph->targets(i);
            if (target_scaler != nullptr) y = target_scaler->transform_one(0, y);
            const double r = pred(i, 0) - y;
            acc += r * r;
            ++count;
        }
    }
    if (count == 0) throw std::invalid_argument("validation split has no usable targets");
    return acc / static_cast<double>(count);
}

}  // namespace

std::vector<PredRow> predict_graphs(nn::GraphRegressor& model, const std::vector<const ArbGraph*>& graphs,
                                    const QuantileScaler* feature_scaler,
                                    const QuantileScaler* target_scaler) {
    std::vector<PredRow> rows;
    Rng dummy(0);
    for (const ArbGraph* graph : graphs) {
        const auto n = static_cast<Eigen::Index>(graph->nodes.size());
        nn::Tape tape;
        nn::Var x = tape.constant(scale_features(feature_scaler, graph->features));
        nn::GraphContext ctx = nn::build_graph_context(static_cast<int>(n), graph->edges);
        nn::Var out = model.forward(tape, x, ctx, nn::Mode::Eval, dummy);
        const nn::Mat& pred = tape.value(out);
        for (Eigen::Index i = 0; i < n; ++i) {
            double y_hat = pred(i, 0);
            if (target_scaler != nullptr) y_hat = target_scaler->inverse_one(0, y_hat);
            rows.push_back({graph->date, graph->nodes[static_cast<std::size_t>(i)], y_hat});
        }
    }
    return rows;
}

RoundResult train_round(const std::vector<const ArbGraph*>& train, const std::vector<const ArbGraph*>& val,
                        const TracedGraphs& test, ModelArch arch, const TrainConfig& cfg,
                        int round_index) {
    if (train.empty() || val.empty()) throw std::invalid_argument("train_round: empty split");

    RoundResult result;
    result.round = round_index;
    result.arch = arch;

    // Scalers are fitted on the training split only.
    Eigen::Index n_train_nodes = 0;
    for (const ArbGraph* g : train) n_train_nodes += static_cast<Eigen::Index>(g->nodes.size());
    Eigen::MatrixXd train_features(n_train_nodes, kNodeFeatureCount);
    std::vector<double> train_targets_raw;
    Eigen::Index at = 0;
    for (const ArbGraph* g : train) {
        train_features.middleRows(at, static_cast<Eigen::Index>(g->nodes.size())) = g->features;
        at += static_cast<Eigen::Index>(g->nodes.size());
        for (std::size_t i = 0; i < g->nodes.size(); ++i) {
            if (g->has_target[i]) train_targets_raw.push_back(g->targets(static_cast<Eigen::Index>(i)));
        }
    }
    if (train_targets_raw.size() < 2) throw std::invalid_argument("train_round: too few training targets");

    QuantileScaler feature_scaler = QuantileScaler::fit(train_features);
    Eigen::MatrixXd ty(static_cast<Eigen::Index>(train_targets_raw.size()), 1);
    for (Eigen::Index i = 0; i < ty.rows(); ++i) ty(i, 0) = train_targets_raw[static_cast<std::size_t>(i)];
    QuantileScaler target_scaler = QuantileScaler::fit(ty);
    const QuantileScaler* fs = cfg.scale_features ? &feature_scaler : nullptr;
    const QuantileScaler* ts = cfg.scale_targets ? &target_scaler : nullptr;
    result.feature_scaler_json = feature_scaler.to_json();
    result.target_scaler_json = target_scaler.to_json();

    Rng round_rng = Rng(cfg.seed).child(0x7261696eull).child(static_cast<std::uint64_t>(round_index));

    struct TrainedCell {
        CellResult info;
        nn::StateDict state;
        int n_layers;
        int p_ctr;
        std::uint64_t init_seed;
    };
    std::vector<TrainedCell> trained;

    int cell_index = 0;
    for (int n_layers : cfg.layer_grid) {
        for (double target : cfg.param_targets) {
            Rng cell_rng = round_rng.child(static_cast<std::uint64_t>(cell_index) ^
                                           (static_cast<std::uint64_t>(arch) << 32));
            const std::uint64_t init_seed = cell_rng.raw();
            const int p_ctr =
                matched_p_ctr(arch, n_layers, cfg.tree_depth, kNodeFeatureCount, static_cast<long>(target));
            auto model = build_model(arch, n_layers, p_ctr, cfg.tree_depth, kNodeFeatureCount, init_seed);

            std::vector<nn::Param*> params;
            model->collect(params);
            nn::Adam opt(params, cfg.learning_rate);

            TrainedCell cell;
            cell.info.n_layers = n_layers;
            cell.info.param_target = target;
            cell.info.p_ctr = p_ctr;
            cell.info.n_params = model->param_count();
            cell.n_layers = n_layers;
            cell.p_ctr = p_ctr;
            cell.init_seed = init_seed;

            double best_val = std::numeric_limits<double>::infinity();
            nn::StateDict best_state;
            model->save(best_state);
            int since_best = 0;
            Rng epoch_rng = cell_rng.child(0x65706f63ull);

            std::vector<std::size_t> order(train.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            int epoch = 0;
            for (; epoch < cfg.max_epochs; ++epoch) {
                epoch_rng.shuffle(order);
                for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_graphs)) {
                    std::vector<std::size_t> which(
                        order.begin() + static_cast<std::ptrdiff_t>(b),
                        order.begin() + static_cast<std::ptrdiff_t>(
                                            std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_graphs))));
                    Batch batch = merge_graphs(train, which, fs, ts);
                    if (batch.mask.sum() <= 0.0) continue;
                    nn::Tape tape;
                    nn::Var x = tape.constant(batch.features);
                    nn::Var out = model->forward(tape, x, batch.ctx, nn::Mode::Train, epoch_rng);
                    nn::Var loss = tape.mse_masked(out, batch.targets, batch.mask);
                    opt.zero_grad();
                    tape.backward(loss);
                    opt.step();
                }
                const double val_mse = eval_mse_scaled(*model, val, fs, ts);
                if (val_mse < best_val - 1e-15) {
                    best_val = val_mse;
                    best_state.clear();
                    model->save(best_state);
                    since_best = 0;
                } else {
                    ++since_best;
                    if (since_best > cfg.patience) {
                        ++epoch;
                        break;
                    }
                }
            }
            cell.info.epochs_run = epoch;
            cell.info.val_mse = best_val;
            cell.state = std::move(best_state);
            result.cells.push_back(cell.info);
            trained.push_back(std::move(cell));
            ++cell_index;
        }
    }

    // Model selection from validation MSE only; the test split is untouched
    // up to this point.
    int best_cell = 0;
    for (int i = 1; i < static_cast<int>(trained.size()); ++i) {
        if (trained[static_cast<std::size_t>(i)].info.val_mse <
            trained[static_cast<std::size_t>(best_cell)].info.val_mse) {
            best_cell = i;
        }
    }
    result.selected_cell = best_cell;
    result.val_mse = trained[static_cast<std::size_t>(best_cell)].info.val_mse;
    result.test_accessed_early = test.access_count() > 0;

    const TrainedCell& chosen = trained[static_cast<std::size_t>(best_cell)];
    auto model = build_model(arch, chosen.n_layers, chosen.p_ctr, cfg.tree_depth, kNodeFeatureCount,
                             chosen.init_seed);
    model->load(chosen.state);
    result.checkpoint = chosen.state;

    const std::vector<const ArbGraph*>& test_graphs = test.get();
    result.predictions = predict_graphs(*model, test_graphs, fs, ts);

    // Raw-unit scoring over the nodes with realized targets.
    std::vector<double> pred, truth;
    std::size_t row = 0;
    for (const ArbGraph* g : test_graphs) {
        for (std::size_t i = 0; i < g->nodes.size(); ++i, ++row) {
            if (!g->has_target[i]) continue;
            pred.push_back(result.predictions[row].y_hat);
            truth.push_back(g->targets(static_cast<Eigen::Index>(i)));
        }
    }
    result.n_test_nodes = truth.size();
    if (!truth.empty()) {
        result.test_mse = mse(pred, truth);
        result.baseline_mse = mse(std::vector<double>(truth.size(), 0.0), truth);
    }
    return result;
}

}  // namespace optarb
