// End-to-end orchestration behind the CLI subcommands: config, artifact
// file formats, and the in-memory step implementations.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "optarb/backtest.hpp"
#include "optarb/data_io.hpp"
#include "optarb/graphs.hpp"
#include "optarb/trainer.hpp"
#include "optarb/universe.hpp"

namespace optarb {

struct PipelineConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    std::string chain_path;  // defaults to <out_dir>/chain.csv

    SyntheticConfig synthetic;

    std::vector<int> fit_dates{170, 300};  // finite entries; the open end is implied
    double p_val = 0.2;

    int p_univ = 14;
    double dk_max = 0.0;  // 0: use 2 x the synthetic strike step

    double p_dg = 1.0 / 3.0;
    FeatureConfig features;

    TrainConfig train;
    std::vector<ModelArch> archs{ModelArch::RNConv};

    BacktestOptions backtest;
    std::vector<PositionKind> strategies{PositionKind::SA, PositionKind::BM1, PositionKind::BM2};
};

PipelineConfig load_pipeline_config(const std::string& path);
std::string pipeline_config_to_json(const PipelineConfig& cfg);

// Bundled desk-scale demonstration config (seeded synthetic market).
PipelineConfig default_desk_config();

// Artifact paths under cfg.out_dir.
struct ArtifactPaths {
    std::string chain, splits, universes, graphs, predictions, rounds_csv;
    std::string metrics;

    static ArtifactPaths in(const std::string& out_dir, const std::string& chain_override = "");
    std::string ledger(PositionKind kind) const;
    std::string positions(PositionKind kind) const;
    std::string checkpoint(ModelArch arch, int round) const;
    std::string series(const std::string& name) const;

    std::string dir;
};

// ---- In-memory steps ------------------------------------------------------------

struct UniverseRecord {
    int date = 0;
    UniverseSolution solution;
};

SplitPlan pipeline_splits(const PipelineConfig& cfg);

std::map<int, std::vector<AssetId>> select_universes(const ChainTable& chain, const SplitPlan& plan,
                                                     const PipelineConfig& cfg,
                                                     std::vector<UniverseRecord>* records = nullptr);

std::vector<ArbGraph> build_all_graphs(const ChainTable& chain,
                                       const std::map<int, std::vector<AssetId>>& universes,
                                       const PipelineConfig& cfg);

struct TrainOutput {
    ModelArch arch = ModelArch::RNConv;
    std::vector<RoundResult> rounds;

    // Pooled raw-unit MSE over every test node of every round.
    double pooled_test_mse() const;
    double pooled_baseline_mse() const;
};

std::vector<TrainOutput> train_all_rounds(const std::vector<ArbGraph>& graphs, const SplitPlan& plan,
                                          const PipelineConfig& cfg);

std::map<int, std::map<AssetId, double>> predictions_by_date(const std::vector<RoundResult>& rounds);

// ---- Artifact files ---------------------------------------------------------------

void save_universes(const std::string& path, const std::vector<UniverseRecord>& records);
std::map<int, std::vector<AssetId>> load_universes(const std::string& path);

void save_predictions(const std::string& path, const std::map<int, std::map<AssetId, double>>& preds);
std::map<int, std::map<AssetId, double>> load_predictions(const std::string& path);

void save_round_results(const std::string& path, const std::vector<TrainOutput>& outputs, int p_univ);
void save_checkpoint(const std::string& path, const RoundResult& round, const TrainConfig& cfg);
RoundResult load_checkpoint(const std::string& path, TrainConfig& cfg_out);

void save_ledger(const std::string& path, const BacktestLedger& ledger);
BacktestLedger load_ledger(const std::string& path);
void save_positions(const std::string& path, const BacktestLedger& ledger);

// ---- CLI step functions (file to file) ----------------------------------------------

void step_simulate(const PipelineConfig& cfg);
void step_select_universe(const PipelineConfig& cfg);
void step_build_graphs(const PipelineConfig& cfg);
void step_train(const PipelineConfig& cfg);
void step_predict(const PipelineConfig& cfg);
void step_backtest(const PipelineConfig& cfg);
void step_report(const PipelineConfig& cfg);

}  // namespace optarb
