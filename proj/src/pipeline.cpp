#include "optarb/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace optarb {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

}  // namespace

// ---- Config --------------------------------------------------------------------------

PipelineConfig default_desk_config() {
    PipelineConfig cfg;
    cfg.synthetic.n_dates = 440;
    cfg.synthetic.arb_noise_scale = 0.002;
    cfg.synthetic.arb_ar1 = 0.9;
    cfg.synthetic.seed = 7;
    cfg.fit_dates = {170, 300};
    cfg.p_univ = 14;
    cfg.train.layer_grid = {3, 4};
    cfg.train.param_targets = {1e3, 5e3};
    cfg.train.tree_depth = 3;
    cfg.train.max_epochs = 60;
    cfg.train.patience = 8;
    cfg.train.batch_graphs = 16;
    return cfg;
}

std::string pipeline_config_to_json(const PipelineConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["out_dir"] = cfg.out_dir;
    if (!cfg.chain_path.empty()) j["chain_path"] = cfg.chain_path;
    json s;
    s["n_dates"] = cfg.synthetic.n_dates;
    s["first_maturity"] = cfg.synthetic.first_maturity;
    s["maturity_every"] = cfg.synthetic.maturity_every;
    s["listing_lead"] = cfg.synthetic.listing_lead;
    s["strike_step"] = cfg.synthetic.strike_step;
    s["strikes_half_width"] = cfg.synthetic.strikes_half_width;
    s["s0"] = cfg.synthetic.s0;
    s["drift"] = cfg.synthetic.drift;
    s["vol"] = cfg.synthetic.vol;
    s["rate"] = cfg.synthetic.rate;
    s["intraday_range"] = cfg.synthetic.intraday_range;
    s["arb_noise_scale"] = cfg.synthetic.arb_noise_scale;
    s["arb_ar1"] = cfg.synthetic.arb_ar1;
    s["trade_m0"] = cfg.synthetic.trade_m0;
    s["trade_w"] = cfg.synthetic.trade_w;
    s["seed"] = cfg.synthetic.seed;
    j["synthetic"] = s;
    j["splits"] = {{"fit_dates", cfg.fit_dates}, {"p_val", cfg.p_val}};
    j["universe"] = {{"p_univ", cfg.p_univ}, {"dk_max", cfg.dk_max}};
    j["graph"] = {{"p_dg", cfg.p_dg}};
    j["features"] = {{"rate", cfg.features.rate}, {"default_sigma", cfg.features.default_sigma}};
    json t;
    t["layer_grid"] = cfg.train.layer_grid;
    t["param_targets"] = cfg.train.param_targets;
    t["tree_depth"] = cfg.train.tree_depth;
    t["learning_rate"] = cfg.train.learning_rate;
    t["max_epochs"] = cfg.train.max_epochs;
    t["patience"] = cfg.train.patience;
    t["batch_graphs"] = cfg.train.batch_graphs;
    t["scale_features"] = cfg.train.scale_features;
    t["scale_targets"] = cfg.train.scale_targets;
    json archs = json::array();
    for (ModelArch a : cfg.archs) archs.push_back(to_string(a));
    t["archs"] = archs;
    j["train"] = t;
    json strategies = json::array();
    for (PositionKind k : cfg.strategies) strategies.push_back(to_string(k));
    j["backtest"] = {{"cost_rate", cfg.backtest.cost_rate}, {"strategies", strategies}};
    return j.dump(2);
}

PipelineConfig load_pipeline_config(const std::string& path) {
    const json j = json::parse(read_file(path));
    PipelineConfig cfg = default_desk_config();
    cfg.seed = j.value("seed", cfg.seed);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    cfg.chain_path = j.value("chain_path", cfg.chain_path);
    if (j.contains("synthetic")) {
        const json& s = j.at("synthetic");
        cfg.synthetic.n_dates = s.value("n_dates", cfg.synthetic.n_dates);
        cfg.synthetic.first_maturity = s.value("first_maturity", cfg.synthetic.first_maturity);
        cfg.synthetic.maturity_every = s.value("maturity_every", cfg.synthetic.maturity_every);
        cfg.synthetic.listing_lead = s.value("listing_lead", cfg.synthetic.listing_lead);
        cfg.synthetic.strike_step = s.value("strike_step", cfg.synthetic.strike_step);
        cfg.synthetic.strikes_half_width = s.value("strikes_half_width", cfg.synthetic.strikes_half_width);
        cfg.synthetic.s0 = s.value("s0", cfg.synthetic.s0);
        cfg.synthetic.drift = s.value("drift", cfg.synthetic.drift);
        cfg.synthetic.vol = s.value("vol", cfg.synthetic.vol);
        cfg.synthetic.rate = s.value("rate", cfg.synthetic.rate);
        cfg.synthetic.intraday_range = s.value("intraday_range", cfg.synthetic.intraday_range);
        cfg.synthetic.arb_noise_scale = s.value("arb_noise_scale", cfg.synthetic.arb_noise_scale);
        cfg.synthetic.arb_ar1 = s.value("arb_ar1", cfg.synthetic.arb_ar1);
        cfg.synthetic.trade_m0 = s.value("trade_m0", cfg.synthetic.trade_m0);
        cfg.synthetic.trade_w = s.value("trade_w", cfg.synthetic.trade_w);
        cfg.synthetic.seed = s.value("seed", cfg.synthetic.seed);
    }
    if (j.contains("splits")) {
        cfg.fit_dates = j.at("splits").value("fit_dates", cfg.fit_dates);
        cfg.p_val = j.at("splits").value("p_val", cfg.p_val);
    }
    if (j.contains("universe")) {
        cfg.p_univ = j.at("universe").value("p_univ", cfg.p_univ);
        cfg.dk_max = j.at("universe").value("dk_max", cfg.dk_max);
    }
    if (j.contains("graph")) cfg.p_dg = j.at("graph").value("p_dg", cfg.p_dg);
    if (j.contains("features")) {
        cfg.features.rate = j.at("features").value("rate", cfg.features.rate);
        cfg.features.default_sigma = j.at("features").value("default_sigma", cfg.features.default_sigma);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        cfg.train.layer_grid = t.value("layer_grid", cfg.train.layer_grid);
        cfg.train.param_targets = t.value("param_targets", cfg.train.param_targets);
        cfg.train.tree_depth = t.value("tree_depth", cfg.train.tree_depth);
        cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
        cfg.train.max_epochs = t.value("max_epochs", cfg.train.max_epochs);
        cfg.train.patience = t.value("patience", cfg.train.patience);
        cfg.train.batch_graphs = t.value("batch_graphs", cfg.train.batch_graphs);
        cfg.train.scale_features = t.value("scale_features", cfg.train.scale_features);
        cfg.train.scale_targets = t.value("scale_targets", cfg.train.scale_targets);
        if (t.contains("archs")) {
            cfg.archs.clear();
            for (const auto& a : t.at("archs")) cfg.archs.push_back(model_arch_from_string(a.get<std::string>()));
        }
    }
    if (j.contains("backtest")) {
        cfg.backtest.cost_rate = j.at("backtest").value("cost_rate", cfg.backtest.cost_rate);
        if (j.at("backtest").contains("strategies")) {
            cfg.strategies.clear();
            for (const auto& s : j.at("backtest").at("strategies")) {
                cfg.strategies.push_back(position_kind_from_string(s.get<std::string>()));
            }
        }
    }
    cfg.train.seed = cfg.seed;
    return cfg;
}

ArtifactPaths ArtifactPaths::in(const std::string& out_dir, const std::string& chain_override) {
    ArtifactPaths p;
    p.dir = out_dir;
    p.chain = chain_override.empty() ? out_dir + "/chain.csv" : chain_override;
    p.splits = out_dir + "/splits.json";
    p.universes = out_dir + "/universes.jsonl";
    p.graphs = out_dir + "/graphs.jsonl";
    p.predictions = out_dir + "/predictions.csv";
    p.rounds_csv = out_dir + "/round_results.csv";
    p.metrics = out_dir + "/metrics.json";
    return p;
}

std::string ArtifactPaths::ledger(PositionKind kind) const {
    return dir + "/ledger_" + std::string(to_string(kind)) + ".csv";
}
std::string ArtifactPaths::positions(PositionKind kind) const {
    return dir + "/positions_" + std::string(to_string(kind)) + ".csv";
}
std::string ArtifactPaths::checkpoint(ModelArch arch, int round) const {
    return dir + "/checkpoint_" + std::string(to_string(arch)) + "_round" + std::to_string(round) + ".json";
}
std::string ArtifactPaths::series(const std::string& name) const { return dir + "/" + name + ".csv"; }

// ---- Universe selection -----------------------------------------------------------------

SplitPlan pipeline_splits(const PipelineConfig& cfg) {
    std::vector<int> fit = cfg.fit_dates;
    fit.push_back(kOpenEnd);
    return make_splits(fit, cfg.p_val, cfg.seed);
}

namespace {

// Listed-and-traded synthetic longs of date d that survive past the close of
// d + 1 (candidates for trading on d + 1).
std::vector<AssetId> sl_candidates(const ChainTable& chain, int d) {
    std::vector<AssetId> out;
    for (const AssetId& a : chain.sl_assets_on(d)) {
        if (!chain.sl_traded(a, d)) continue;
        if (a.maturity < close_time(d + 1)) continue;
        out.push_back(a);
    }
    return out;
}

struct TradabilityData {
    // Per prediction date t: features from t-1 and the realized labels on t.
    std::map<int, Eigen::MatrixX2d> features;
    std::map<int, std::vector<int>> labels;
};

TradabilityData build_tradability_data(const ChainTable& chain) {
    TradabilityData data;
    for (int t : chain.dates()) {
        const UnderlyingBar* prev = chain.underlying(t - 1);
        if (prev == nullptr) continue;
        const auto candidates = sl_candidates(chain, t - 1);
        if (candidates.empty()) continue;
        Eigen::MatrixX2d x(static_cast<Eigen::Index>(candidates.size()), 2);
        std::vector<int> y;
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            x(static_cast<Eigen::Index>(i), 0) = prev->close / candidates[i].strike;
            x(static_cast<Eigen::Index>(i), 1) = candidates[i].maturity - TimePoint(static_cast<double>(t));
            y.push_back(chain.sl_traded(candidates[i], t) ? 1 : 0);
        }
        data.features[t] = std::move(x);
        data.labels[t] = std::move(y);
    }
    return data;
}

Eigen::MatrixX2d stack_rows(const TradabilityData& data, const std::vector<int>& dates,
                            std::vector<int>& labels_out) {
    Eigen::Index total = 0;
    for (int d : dates) {
        auto it = data.features.find(d);
        if (it != data.features.end()) total += it->second.rows();
    }
    Eigen::MatrixX2d x(total, 2);
    Eigen::Index at = 0;
    for (int d : dates) {
        auto it = data.features.find(d);
        if (it == data.features.end()) continue;
        x.middleRows(at, it->second.rows()) = it->second;
        at += it->second.rows();
        for (int l : data.labels.at(d)) labels_out.push_back(l);
    }
    return x;
}

}  // namespace

std::map<int, std::vector<AssetId>> select_universes(const ChainTable& chain, const SplitPlan& plan,
                                                     const PipelineConfig& cfg,
                                                     std::vector<UniverseRecord>* records) {
    const TradabilityData data = build_tradability_data(chain);
    const double dk_max = cfg.dk_max > 0.0 ? cfg.dk_max : 2.0 * cfg.synthetic.strike_step;

    // One tradability model per round, trained on that round's prior dates.
    std::vector<TradabilityModel> models;
    for (const SplitRound& round : plan.rounds) {
        std::vector<int> train_labels, val_labels;
        const Eigen::MatrixX2d train_x = stack_rows(data, round.train, train_labels);
        const Eigen::MatrixX2d val_x = stack_rows(data, round.val, val_labels);
        models.push_back(fit_tradability(train_x, train_labels, val_x, val_labels));
    }

    std::map<int, std::vector<AssetId>> universes;
    for (int t : chain.dates()) {
        const UnderlyingBar* prev = chain.underlying(t - 1);
        if (prev == nullptr) continue;
        const auto candidates = sl_candidates(chain, t - 1);
        if (candidates.size() < 2) continue;
        int round = plan.round_for_date(t);
        if (round < 0) round = 1;  // training-period dates use the first round's model
        const TradabilityModel& model = models[static_cast<std::size_t>(round - 1)];

        std::vector<UniverseCandidate> ucs;
        for (const AssetId& a : candidates) {
            const double mu =
                model.predict(prev->close / a.strike, a.maturity - TimePoint(static_cast<double>(t)));
            ucs.push_back({a, mu});
        }
        UniverseProblem problem = build_problem(std::move(ucs), cfg.p_univ, dk_max, prev->close);
        UniverseSolution solution = solve_universe(problem);
        if (records != nullptr) records->push_back({t, solution});
        if (solution.feasible) universes[t] = solution.selected;
    }
    return universes;
}

std::vector<ArbGraph> build_all_graphs(const ChainTable& chain,
                                       const std::map<int, std::vector<AssetId>>& universes,
                                       const PipelineConfig& cfg) {
    std::vector<ArbGraph> graphs;
    for (const auto& [t, universe] : universes) {
        if (chain.underlying(t - 1) == nullptr || chain.underlying(t - 2) == nullptr) continue;
        graphs.push_back(build_graph(chain, universes, t, cfg.p_dg, cfg.features));
    }
    return graphs;
}

// ---- Training ------------------------------------------------------------------------------

double TrainOutput::pooled_test_mse() const {
    double acc = 0.0;
    std::size_t n = 0;
    for (const RoundResult& r : rounds) {
        acc += r.test_mse * static_cast<double>(r.n_test_nodes);
        n += r.n_test_nodes;
    }
    return n == 0 ? 0.0 : acc / static_cast<double>(n);
}

double TrainOutput::pooled_baseline_mse() const {
    double acc = 0.0;
    std::size_t n = 0;
    for (const RoundResult& r : rounds) {
        acc += r.baseline_mse * static_cast<double>(r.n_test_nodes);
        n += r.n_test_nodes;
    }
    return n == 0 ? 0.0 : acc / static_cast<double>(n);
}

std::vector<TrainOutput> train_all_rounds(const std::vector<ArbGraph>& graphs, const SplitPlan& plan,
                                          const PipelineConfig& cfg) {
    std::map<int, const ArbGraph*> by_date;
    for (const ArbGraph& g : graphs) by_date[g.date] = &g;

    std::vector<TrainOutput> outputs;
    for (ModelArch arch : cfg.archs) {
        TrainOutput out;
        out.arch = arch;
        for (const SplitRound& round : plan.rounds) {
            std::vector<const ArbGraph*> train, val, test;
            for (int d : round.train) {
                if (auto it = by_date.find(d); it != by_date.end()) train.push_back(it->second);
            }
            for (int d : round.val) {
                if (auto it = by_date.find(d); it != by_date.end()) val.push_back(it->second);
            }
            for (const auto& [d, g] : by_date) {
                if (d >= round.test_begin && d < round.test_end) test.push_back(g);
            }
            if (train.empty() || val.empty() || test.empty()) continue;
            TracedGraphs traced(test);
            out.rounds.push_back(train_round(train, val, traced, arch, cfg.train, round.index));
        }
        outputs.push_back(std::move(out));
    }
    return outputs;
}

std::map<int, std::map<AssetId, double>> predictions_by_date(const std::vector<RoundResult>& rounds) {
    std::map<int, std::map<AssetId, double>> preds;
    for (const RoundResult& r : rounds) {
        for (const PredRow& row : r.predictions) preds[row.date][row.asset] = row.y_hat;
    }
    return preds;
}

// ---- Artifact files --------------------------------------------------------------------------

void save_universes(const std::string& path, const std::vector<UniverseRecord>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const UniverseRecord& r : records) {
        json j;
        j["date"] = r.date;
        j["feasible"] = r.solution.feasible;
        j["achieved_p"] = r.solution.achieved_p;
        j["objective"] = r.solution.objective;
        j["trace"] = r.solution.trace;
        json assets = json::array();
        for (const AssetId& a : r.solution.selected) assets.push_back({a.maturity.tau, a.strike});
        j["assets"] = std::move(assets);
        out << j.dump() << '\n';
    }
}

std::map<int, std::vector<AssetId>> load_universes(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::map<int, std::vector<AssetId>> universes;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        if (!j.at("feasible").get<bool>()) continue;
        std::vector<AssetId> assets;
        for (const auto& ja : j.at("assets")) {
            assets.push_back(AssetId::synthetic_long(TimePoint(ja.at(0).get<double>()), ja.at(1).get<double>()));
        }
        universes[j.at("date").get<int>()] = std::move(assets);
    }
    return universes;
}

void save_predictions(const std::string& path, const std::map<int, std::map<AssetId, double>>& preds) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "date,maturity,strike,y_hat\n";
    for (const auto& [date, by_asset] : preds) {
        for (const auto& [asset, y_hat] : by_asset) {
            out << date << ',' << fmt(asset.maturity.tau) << ',' << fmt(asset.strike) << ',' << fmt(y_hat)
                << '\n';
        }
    }
}

std::map<int, std::map<AssetId, double>> load_predictions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::map<int, std::map<AssetId, double>> preds;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string f0, f1, f2, f3;
        std::getline(ss, f0, ',');
        std::getline(ss, f1, ',');
        std::getline(ss, f2, ',');
        std::getline(ss, f3, ',');
        const AssetId a = AssetId::synthetic_long(TimePoint(std::stod(f1)), std::stod(f2));
        preds[std::stoi(f0)][a] = std::stod(f3);
    }
    return preds;
}

void save_round_results(const std::string& path, const std::vector<TrainOutput>& outputs, int p_univ) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "arch,round,p_univ,n_layers,param_target,p_ctr,n_params,val_mse,test_mse,baseline_mse,"
           "n_test_nodes\n";
    for (const TrainOutput& to : outputs) {
        for (const RoundResult& r : to.rounds) {
            for (std::size_t c = 0; c < r.cells.size(); ++c) {
                const CellResult& cell = r.cells[c];
                const bool selected = static_cast<int>(c) == r.selected_cell;
                out << to_string(to.arch) << ',' << r.round << ',' << p_univ << ',' << cell.n_layers << ','
                    << fmt(cell.param_target) << ',' << cell.p_ctr << ',' << cell.n_params << ','
                    << fmt(cell.val_mse) << ',' << (selected ? fmt(r.test_mse) : "") << ','
                    << (selected ? fmt(r.baseline_mse) : "") << ',' << (selected ? std::to_string(r.n_test_nodes) : "")
                    << '\n';
            }
        }
    }
}

void save_checkpoint(const std::string& path, const RoundResult& round, const TrainConfig& cfg) {
    json j;
    j["format"] = "optarb-checkpoint-v1";
    j["arch"] = to_string(round.arch);
    j["round"] = round.round;
    const CellResult& cell = round.cells.at(static_cast<std::size_t>(round.selected_cell));
    j["n_layers"] = cell.n_layers;
    j["p_ctr"] = cell.p_ctr;
    j["tree_depth"] = cfg.tree_depth;
    j["input_width"] = kNodeFeatureCount;
    j["scale_features"] = cfg.scale_features;
    j["scale_targets"] = cfg.scale_targets;
    j["feature_scaler"] = json::parse(round.feature_scaler_json);
    j["target_scaler"] = json::parse(round.target_scaler_json);
    j["state"] = json::parse(nn::state_dict_to_json(round.checkpoint));
    write_file(path, j.dump());
}

RoundResult load_checkpoint(const std::string& path, TrainConfig& cfg_out) {
    const json j = json::parse(read_file(path));
    if (j.at("format") != "optarb-checkpoint-v1") throw std::runtime_error("unexpected checkpoint format");
    RoundResult r;
    r.arch = model_arch_from_string(j.at("arch").get<std::string>());
    r.round = j.at("round").get<int>();
    CellResult cell;
    cell.n_layers = j.at("n_layers").get<int>();
    cell.p_ctr = j.at("p_ctr").get<int>();
    r.cells.push_back(cell);
    r.selected_cell = 0;
    cfg_out.tree_depth = j.at("tree_depth").get<int>();
    cfg_out.scale_features = j.at("scale_features").get<bool>();
    cfg_out.scale_targets = j.at("scale_targets").get<bool>();
    r.feature_scaler_json = j.at("feature_scaler").dump();
    r.target_scaler_json = j.at("target_scaler").dump();
    r.checkpoint = nn::state_dict_from_json(j.at("state").dump());
    return r;
}

void save_ledger(const std::string& path, const BacktestLedger& ledger) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "date,traded,inception_flow,maturity_flow,cost,pnl,cum_pnl,contracts,cosine,hhi,effective_n,"
           "avg_abs_moneyness,avg_abs_ttm\n";
    for (const LedgerRow& r : ledger.rows) {
        out << r.date << ',' << (r.traded ? 1 : 0) << ',' << fmt(r.inception_flow) << ','
            << fmt(r.maturity_flow) << ',' << fmt(r.cost) << ',' << fmt(r.pnl) << ',' << fmt(r.cum_pnl)
            << ',' << fmt(r.contracts) << ',' << fmt(r.cosine) << ',' << fmt(r.hhi) << ','
            << fmt(r.effective_n) << ',' << fmt(r.avg_abs_moneyness) << ',' << fmt(r.avg_abs_ttm) << '\n';
    }
}

BacktestLedger load_ledger(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    BacktestLedger ledger;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::vector<std::string> f;
        std::string field;
        while (std::getline(ss, field, ',')) f.push_back(field);
        LedgerRow r;
        r.date = std::stoi(f.at(0));
        r.traded = f.at(1) == "1";
        r.inception_flow = std::stod(f.at(2));
        r.maturity_flow = std::stod(f.at(3));
        r.cost = std::stod(f.at(4));
        r.pnl = std::stod(f.at(5));
        r.cum_pnl = std::stod(f.at(6));
        r.contracts = std::stod(f.at(7));
        r.cosine = std::stod(f.at(8));
        r.hhi = std::stod(f.at(9));
        r.effective_n = std::stod(f.at(10));
        r.avg_abs_moneyness = std::stod(f.at(11));
        r.avg_abs_ttm = std::stod(f.at(12));
        ledger.rows.push_back(r);
    }
    return ledger;
}

void save_positions(const std::string& path, const BacktestLedger& ledger) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "date,maturity,strike,contracts,kind\n";
    for (const auto& [date, position] : ledger.positions) {
        for (std::size_t i = 0; i < position.universe.size(); ++i) {
            out << date << ',' << fmt(position.universe[i].maturity.tau) << ','
                << fmt(position.universe[i].strike) << ',' << fmt(position.n(static_cast<Eigen::Index>(i)))
                << ',' << to_string(position.kind) << '\n';
        }
    }
}

// ---- CLI steps -----------------------------------------------------------------------------------

void step_simulate(const PipelineConfig& cfg) {
    const ArtifactPaths paths = ArtifactPaths::in(cfg.out_dir, cfg.chain_path);
    fs::create_directories(cfg.out_dir);
    const ChainTable chain = generate_synthetic_market(cfg.synthetic);
    save_chain(paths.chain, chain);
}

void step_select_universe(const PipelineConfig& cfg) {
    const ArtifactPaths paths = ArtifactPaths::in(cfg.out_dir, cfg.chain_path);
    fs::create_directories(cfg.out_dir);
    const ChainTable chain = load_chain(paths.chain);
    const SplitPlan plan = pipeline_splits(cfg);
    write_file(paths.splits, split_plan_to_json(plan));
    std::vector<UniverseRecord> records;
    select_universes(chain, plan, cfg, &records);
    save_universes(paths.universes, records);
}

void step_build_graphs(const PipelineConfig& cfg) {
    const ArtifactPaths paths = ArtifactPaths::in(cfg.out_dir, cfg.chain_path);
    const ChainTable chain = load_chain(paths.chain);
    const auto universes = load_universes(paths.universes);
    save_graphs(paths.graphs, build_all_graphs(chain, universes, cfg));
}

void step_train(const PipelineConfig& cfg) {
    const ArtifactPaths paths = ArtifactPaths::in(cfg.out_dir, cfg.chain_path);
    const std::vector<ArbGraph> graphs = load_graphs(paths.graphs);
    const SplitPlan plan = split_plan_from_json(read_file(paths.splits));
    const std::vector<TrainOutput> outputs = train_all_rounds(graphs, plan, cfg);
    save_round_results(paths.rounds_csv, outputs, cfg.p_univ);
    for (const TrainOutput& out : outputs) {
        for (const RoundResult& r : out.rounds) {
            save_checkpoint(paths.checkpoint(out.arch, r.round), r, cfg.train);
        }
        if (out.arch == cfg.archs.front()) {
            save_predictions(paths.predictions, predictions_by_date(out.rounds));
        }
    }
}

void step_predict(const PipelineConfig& cfg) {
    const ArtifactPaths paths = ArtifactPaths::in(cfg.out_dir, cfg.chain_path);
    const std::vector<ArbGraph> graphs = load_graphs(paths.graphs);
    const SplitPlan plan = split_plan_from_json(read_file(paths.splits));
    const ModelArch arch = cfg.archs.front();

    std::map<int, std::map<AssetId, double>> preds;
    for (const SplitRound& round : plan.rounds) {
        const std::string ckpt_path = paths.checkpoint(arch, round.index);
        if (!fs::exists(ckpt_path)) continue;
        TrainConfig ckpt_cfg = cfg.train;
        const RoundResult r = load_checkpoint(ckpt_path, ckpt_cfg);
        auto model = build_model(r.arch, r.cells[0].n_layers, r.cells[0].p_ctr, ckpt_cfg.tree_depth,
                                 kNodeFeatureCount, 0);
        model->load(r.checkpoint);
        const QuantileScaler fs_obj = QuantileScaler::from_json(r.feature_scaler_json);
        const QuantileScaler ts_obj = QuantileScaler::from_json(r.target_scaler_json);
        std::vector<const ArbGraph*> test;
        for (const ArbGraph& g : graphs) {
            if (g.date >= round.test_begin && g.date < round.test_end) test.push_back(&g);
        }
        const auto rows = predict_graphs(*model, test, ckpt_cfg.scale_features ? &fs_obj : nullptr,
                                         ckpt_cfg.scale_targets ? &ts_obj : nullptr);
        for (const PredRow& row : rows) preds[row.date][row.asset] = row.y_hat;
    }
    save_predictions(paths.predictions, preds);
}

void step_backtest(const PipelineConfig& cfg) {
    const ArtifactPaths paths = ArtifactPaths::in(cfg.out_dir, cfg.chain_path);
    const ChainTable chain = load_chain(paths.chain);
    const auto universes = load_universes(paths.universes);
    const auto preds = load_predictions(paths.predictions);
    for (PositionKind kind : cfg.strategies) {
        const BacktestLedger ledger = run_backtest(chain, universes, preds, kind, cfg.backtest);
        save_ledger(paths.ledger(kind), ledger);
        save_positions(paths.positions(kind), ledger);
    }
}

void step_report(const PipelineConfig& cfg) {
    const ArtifactPaths paths = ArtifactPaths::in(cfg.out_dir, cfg.chain_path);
    json metrics;
    for (PositionKind kind : cfg.strategies) {
        if (!fs::exists(paths.ledger(kind))) continue;
        const BacktestLedger ledger = load_ledger(paths.ledger(kind));
        const MetricsReport m = compute_metrics(ledger);
        json jm;
        jm["total_pnl"] = m.total_pnl;
        jm["information_ratio"] = m.ir_defined ? json(m.information_ratio) : json();
        jm["sortino"] = m.sortino_defined ? json(m.sortino) : json();
        jm["hhi_mean"] = m.hhi_mean;
        jm["effective_n_mean"] = m.effective_n_mean;
        jm["avg_abs_moneyness"] = m.avg_abs_moneyness;
        jm["avg_abs_ttm"] = m.avg_abs_ttm;
        jm["n_traded_days"] = m.n_traded_days;
        metrics[to_string(kind)] = jm;

        std::ofstream series(paths.series(std::string("cum_pnl_") + to_string(kind)));
        series << "date,cum_pnl\n";
        for (const LedgerRow& r : ledger.rows) series << r.date << ',' << fmt(r.cum_pnl) << '\n';
    }
    write_file(paths.metrics, metrics.dump(2));

    // Universe cardinality series.
    if (fs::exists(paths.universes)) {
        std::ifstream in(paths.universes);
        std::ofstream series(paths.series("universe_cardinality"));
        series << "date,cardinality\n";
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const json j = json::parse(line);
            series << j.at("date").get<int>() << ',' << j.at("assets").size() << '\n';
        }
    }

    // Per-date prediction MSE with a trailing 21-day rolling mean.
    if (fs::exists(paths.predictions) && fs::exists(paths.graphs)) {
        const auto preds = load_predictions(paths.predictions);
        const std::vector<ArbGraph> graphs = load_graphs(paths.graphs);
        std::ofstream series(paths.series("rolling_mse"));
        series << "date,mse,rolling_mse\n";
        std::vector<double> history;
        for (const ArbGraph& g : graphs) {
            auto it = preds.find(g.date);
            if (it == preds.end()) continue;
            double acc = 0.0;
            int n = 0;
            for (std::size_t i = 0; i < g.nodes.size(); ++i) {
                if (!g.has_target[i]) continue;
                auto p = it->second.find(g.nodes[i]);
                if (p == it->second.end()) continue;
                const double r = p->second - g.targets(static_cast<Eigen::Index>(i));
                acc += r * r;
                ++n;
            }
            if (n == 0) continue;
            history.push_back(acc / n);
            double roll = 0.0;
            const std::size_t w = std::min<std::size_t>(21, history.size());
            for (std::size_t i = history.size() - w; i < history.size(); ++i) roll += history[i];
            series << g.date << ',' << fmt(history.back()) << ',' << fmt(roll / static_cast<double>(w)) << '\n';
        }
    }
}

}  // namespace optarb
