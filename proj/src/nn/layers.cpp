#include "optarb/nn/layers.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace optarb::nn {

using json = nlohmann::ordered_json;

namespace {

Mat uniform_init(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
    }
    return m;
}

void save_param(StateDict& sd, const std::string& name, const Mat& value) {
    if (sd.count(name)) throw std::logic_error("duplicate state entry " + name);
    sd[name] = value;
}

Mat load_entry(const StateDict& sd, const std::string& name) {
    auto it = sd.find(name);
    if (it == sd.end()) throw std::runtime_error("checkpoint is missing tensor " + name);
    return it->second;
}

void save_buffers(StateDict& sd, const std::string& prefix, const BatchNormBuffers& b) {
    save_param(sd, prefix + ".running_mean", b.running_mean);
    save_param(sd, prefix + ".running_var", b.running_var);
}

void load_buffers(const StateDict& sd, const std::string& prefix, BatchNormBuffers& b) {
    b.running_mean = load_entry(sd, prefix + ".running_mean").row(0);
    b.running_var = load_entry(sd, prefix + ".running_var").row(0);
}

}  // namespace

std::string state_dict_to_json(const StateDict& sd) {
    json j;
    for (const auto& [name, value] : sd) {
        json entry;
        entry["rows"] = value.rows();
        entry["cols"] = value.cols();
        std::vector<double> data(value.data(), value.data() + value.size());
        entry["data"] = data;  // column-major
        j[name] = std::move(entry);
    }
    return j.dump();
}

StateDict state_dict_from_json(const std::string& text) {
    const json j = json::parse(text);
    StateDict sd;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto rows = it.value().at("rows").get<Eigen::Index>();
        const auto cols = it.value().at("cols").get<Eigen::Index>();
        const auto data = it.value().at("data").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
            throw std::runtime_error("bad tensor payload for " + it.key());
        }
        Mat m(rows, cols);
        std::copy(data.begin(), data.end(), m.data());
        sd[it.key()] = std::move(m);
    }
    return sd;
}

// ---- Linear / MLP ---------------------------------------------------------------

Linear::Linear(Eigen::Index in, Eigen::Index out, bool with_bias, Rng& rng, bool zero_init)
    : has_bias(with_bias) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = Param("weight", zero_init ? Mat::Zero(in, out) : uniform_init(in, out, bound, rng));
    if (has_bias) {
        bias = Param("bias", zero_init ? Mat::Zero(1, out) : uniform_init(1, out, bound, rng));
    }
}

Var Linear::forward(Tape& t, Var x) {
    Var h = t.matmul(x, t.param(weight));
    if (has_bias) h = t.add_rowvec(h, t.param(bias));
    return h;
}

void Linear::collect(std::vector<Param*>& out) {
    out.push_back(&weight);
    if (has_bias) out.push_back(&bias);
}

void Linear::save(StateDict& sd, const std::string& prefix) const {
    save_param(sd, prefix + ".weight", weight.value);
    if (has_bias) save_param(sd, prefix + ".bias", bias.value);
}

void Linear::load(const StateDict& sd, const std::string& prefix) {
    weight.value = load_entry(sd, prefix + ".weight");
    if (has_bias) bias.value = load_entry(sd, prefix + ".bias");
}

Mlp::Mlp(Eigen::Index in, Eigen::Index hidden, Eigen::Index out, Rng& rng) {
    layers.emplace_back(in, hidden, true, rng);
    layers.emplace_back(hidden, hidden, true, rng);
    layers.emplace_back(hidden, out, false, rng);  // bias-free, activation-free
}

Var Mlp::forward(Tape& t, Var x) {
    Var h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = layers[i].forward(t, h);
        if (i + 1 < layers.size()) h = t.leaky_relu(h, slope);
    }
    return h;
}

void Mlp::collect(std::vector<Param*>& out) {
    for (auto& l : layers) l.collect(out);
}

void Mlp::save(StateDict& sd, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].save(sd, prefix + ".l" + std::to_string(i));
}

void Mlp::load(const StateDict& sd, const std::string& prefix) {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].load(sd, prefix + ".l" + std::to_string(i));
}

// ---- Low-rank cross network -------------------------------------------------------

Eigen::Index cross_rank_for(Eigen::Index width) {
    return std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::llround(static_cast<double>(width) / 4.0)));
}

Eigen::Index mlp_hidden_for(Eigen::Index width) {
    return std::max<Eigen::Index>(1, (width + 3) / 4);
}

LowRankCross::LowRankCross(Eigen::Index width_, Eigen::Index rank_, int n_layers_, CrossVariant variant_,
                           Rng& rng)
    : variant(variant_), n_layers(n_layers_), width(width_), rank(rank_) {
    if (rank < 1) throw std::invalid_argument("cross network rank must be >= 1");
    const double bw = 1.0 / std::sqrt(static_cast<double>(width));
    const double br = 1.0 / std::sqrt(static_cast<double>(rank));
    for (int l = 0; l < n_layers; ++l) {
        CrossLayer cl;
        cl.v = Param("v", uniform_init(width, rank, bw, rng));
        cl.c = Param("c", uniform_init(rank, rank, br, rng));
        cl.u = Param("u", uniform_init(rank, width, br, rng));
        cl.b = Param("b", Mat::Zero(1, width));
        layers.push_back(std::move(cl));
    }
    if (variant == CrossVariant::BatchNormalized) {
        for (int l = 0; l <= n_layers; ++l) {
            bn_gamma.emplace_back("gamma", Mat::Ones(1, width));
            bn_beta.emplace_back("beta", Mat::Zero(1, width));
            bn_buffers.emplace_back();
            bn_buffers.back().init(width);
        }
    }
}

Var LowRankCross::forward(Tape& t, Var x, Mode mode) {
    if (x.cols() != width) throw std::invalid_argument("cross network input width mismatch");
    const bool bn = variant == CrossVariant::BatchNormalized;
    Var state = x;                 // x_l
    Var z = bn ? t.batch_norm(x, bn_buffers[0], mode, &bn_gamma[0], &bn_beta[0]) : x;  // z_0
    for (int l = 0; l < n_layers; ++l) {
        CrossLayer& cl = layers[static_cast<std::size_t>(l)];
        Var inner = t.leaky_relu(t.matmul(z, t.param(cl.v)), slope);
        inner = t.leaky_relu(t.matmul(inner, t.param(cl.c)), slope);
        Var gate = t.add_rowvec(t.matmul(inner, t.param(cl.u)), t.param(cl.b));
        state = t.add(t.mul(x, gate), z);  // x_{l+1}
        z = bn ? t.batch_norm(state, bn_buffers[static_cast<std::size_t>(l + 1)], mode,
                              &bn_gamma[static_cast<std::size_t>(l + 1)], &bn_beta[static_cast<std::size_t>(l + 1)])
               : state;
    }
    return z;
}

void LowRankCross::collect(std::vector<Param*>& out) {
    for (auto& cl : layers) {
        out.push_back(&cl.v);
        out.push_back(&cl.c);
        out.push_back(&cl.u);
        out.push_back(&cl.b);
    }
    for (auto& g : bn_gamma) out.push_back(&g);
    for (auto& b : bn_beta) out.push_back(&b);
}

void LowRankCross::save(StateDict& sd, const std::string& prefix) const {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string p = prefix + ".x" + std::to_string(l);
        save_param(sd, p + ".v", layers[l].v.value);
        save_param(sd, p + ".c", layers[l].c.value);
        save_param(sd, p + ".u", layers[l].u.value);
        save_param(sd, p + ".b", layers[l].b.value);
    }
    for (std::size_t l = 0; l < bn_gamma.size(); ++l) {
        const std::string p = prefix + ".bn" + std::to_string(l);
        save_param(sd, p + ".gamma", bn_gamma[l].value);
        save_param(sd, p + ".beta", bn_beta[l].value);
        save_buffers(sd, p, bn_buffers[l]);
    }
}

void LowRankCross::load(const StateDict& sd, const std::string& prefix) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string p = prefix + ".x" + std::to_string(l);
        layers[l].v.value = load_entry(sd, p + ".v");
        layers[l].c.value = load_entry(sd, p + ".c");
        layers[l].u.value = load_entry(sd, p + ".u");
        layers[l].b.value = load_entry(sd, p + ".b");
    }
    for (std::size_t l = 0; l < bn_gamma.size(); ++l) {
        const std::string p = prefix + ".bn" + std::to_string(l);
        bn_gamma[l].value = load_entry(sd, p + ".gamma");
        bn_beta[l].value = load_entry(sd, p + ".beta");
        load_buffers(sd, p, bn_buffers[l]);
    }
}

// ---- Oblivious trees ------------------------------------------------------------

double odt_forward(const Eigen::VectorXd& x, const Eigen::MatrixXd& onehot_scores,
                   const Eigen::VectorXd& thresholds, const Eigen::VectorXd& response) {
    const int depth = static_cast<int>(onehot_scores.cols());
    if (thresholds.size() != depth || response.size() != (Eigen::Index{1} << depth)) {
        throw std::invalid_argument("odt_forward: inconsistent shapes");
    }
    Eigen::Index leaf = 0;
    for (int k = 0; k < depth; ++k) {
        for (Eigen::Index r = 0; r < onehot_scores.rows(); ++r) {
            const double s = onehot_scores(r, k);
            if (s != 0.0 && s != 1.0) throw std::invalid_argument("odt_forward: scores must be one-hot");
        }
        const double split = onehot_scores.col(k).dot(x) - thresholds(k);
        const bool positive = split > 0.0;  // index 1 when the split fires
        leaf = (leaf << 1) | (positive ? 0 : 1);
    }
    return response(leaf);
}

Ddt::Ddt(Eigen::Index input_width_, int depth_, double alpha_, Rng& rng)
    : input_width(input_width_), depth(depth_), alpha(alpha_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(input_width));
    scores = Param("scores", uniform_init(input_width, depth, bound, rng));
    thresholds = Param("thresholds", uniform_init(1, depth, bound, rng));
    scales = Param("scales", Mat::Ones(1, depth));
    response = Param("response", Mat::Zero(1, Eigen::Index{1} << depth));
}

Var Ddt::forward(Tape& t, Var x) {
    if (x.cols() != input_width) throw std::invalid_argument("ddt input width mismatch");
    for (int k = 0; k < depth; ++k) {
        if (scales.value(0, k) == 0.0) throw std::domain_error("ddt scale kappa must be nonzero");
    }
    Var s_var = t.param(scores);
    Var b_var = t.param(thresholds);
    Var k_var = t.param(scales);
    std::vector<Var> gates;
    for (int k = 0; k < depth; ++k) {
        Var w = t.entmax(t.slice_cols(s_var, k, 1), alpha);        // input_width x 1
        Var proj = t.matmul(x, w);                                  // n x 1
        Var shifted = t.sub_rowvec(proj, t.slice_cols(b_var, k, 1));
        Var scaled = t.div_rowvec(shifted, t.slice_cols(k_var, k, 1));
        gates.push_back(t.two_class_entmax(scaled, alpha));
    }
    Var gate_mat = t.concat_cols(gates);  // n x depth
    return t.oblivious_mixture(gate_mat, t.param(response), depth);
}

void Ddt::collect(std::vector<Param*>& out) {
    out.push_back(&scores);
    out.push_back(&thresholds);
    out.push_back(&scales);
    out.push_back(&response);
}

void Ddt::save(StateDict& sd, const std::string& prefix) const {
    save_param(sd, prefix + ".scores", scores.value);
    save_param(sd, prefix + ".thresholds", thresholds.value);
    save_param(sd, prefix + ".scales", scales.value);
    save_param(sd, prefix + ".response", response.value);
}

void Ddt::load(const StateDict& sd, const std::string& prefix) {
    scores.value = load_entry(sd, prefix + ".scores");
    thresholds.value = load_entry(sd, prefix + ".thresholds");
    scales.value = load_entry(sd, prefix + ".scales");
    response.value = load_entry(sd, prefix + ".response");
}

NodeLayer::NodeLayer(Eigen::Index input_width, int n_trees, int depth, double alpha, Rng& rng) {
    for (int j = 0; j < n_trees; ++j) trees.emplace_back(input_width, depth, alpha, rng);
}

Var NodeLayer::forward(Tape& t, Var x) {
    std::vector<Var> outs;
    outs.reserve(trees.size());
    for (auto& tree : trees) outs.push_back(tree.forward(t, x));
    return t.concat_cols(outs);
}

void NodeLayer::collect(std::vector<Param*>& out) {
    for (auto& tree : trees) tree.collect(out);
}

NodeEnsemble::NodeEnsemble(Eigen::Index input_width_, int n_layers, int n_trees_, int depth_, double alpha_,
                           Rng& rng)
    : input_width(input_width_), n_trees(n_trees_), depth(depth_), alpha(alpha_) {
    for (int l = 0; l < n_layers; ++l) {
        layers.emplace_back(input_width + static_cast<Eigen::Index>(l) * n_trees, n_trees, depth, alpha, rng);
    }
}

Var NodeEnsemble::forward(Tape& t, Var x) {
    if (x.cols() != input_width) throw std::invalid_argument("node ensemble input width mismatch");
    std::vector<Var> history{x};
    Var total{};
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Var z = history.size() == 1 ? x : t.concat_cols(history);
        Var g = layers[l].forward(t, z);
        history.push_back(g);
        Var s = t.rowwise_sum(g);
        total = l == 0 ? s : t.add(total, s);
    }
    return total;
}

void NodeEnsemble::collect(std::vector<Param*>& out) {
    for (auto& l : layers) l.collect(out);
}

// ---- RNODE / RNConv ---------------------------------------------------------------

RnodeLayer::RnodeLayer(Eigen::Index input_width_, int n_trees_, int depth_, Rng& rng, double gamma_,
                       double alpha_)
    : input_width(input_width_), n_trees(n_trees_), depth(depth_), gamma(gamma_), alpha(alpha_) {
    cross = LowRankCross(input_width, cross_rank_for(input_width), 2, CrossVariant::BatchNormalized, rng);
    mlp = Mlp(input_width, mlp_hidden_for(input_width), static_cast<Eigen::Index>(n_trees) * depth, rng);
    vbn.init(static_cast<Eigen::Index>(n_trees) * depth);
    response = Param("response", Mat::Zero(n_trees, Eigen::Index{1} << depth));
}

Var RnodeLayer::forward(Tape& t, Var x, Mode mode) {
    Var crossed = cross.forward(t, x, mode);
    Var score = mlp.forward(t, crossed);
    Var normed = t.batch_norm(score, vbn, mode, nullptr, nullptr);
    Var gates = t.two_class_entmax(t.scale(normed, gamma), alpha);
    return t.oblivious_mixture(gates, t.param(response), depth);
}

void RnodeLayer::collect(std::vector<Param*>& out) {
    cross.collect(out);
    mlp.collect(out);
    out.push_back(&response);
}

void RnodeLayer::save(StateDict& sd, const std::string& prefix) const {
    cross.save(sd, prefix + ".cross");
    mlp.save(sd, prefix + ".mlp");
    save_buffers(sd, prefix + ".vbn", vbn);
    save_param(sd, prefix + ".response", response.value);
}

void RnodeLayer::load(const StateDict& sd, const std::string& prefix) {
    cross.load(sd, prefix + ".cross");
    mlp.load(sd, prefix + ".mlp");
    load_buffers(sd, prefix + ".vbn", vbn);
    response.value = load_entry(sd, prefix + ".response");
}

GraphContext build_graph_context(int n_nodes, const std::vector<std::pair<int, int>>& edges) {
    GraphContext ctx;
    const auto n = static_cast<Eigen::Index>(n_nodes);
    ctx.neighbor_mean = Mat::Zero(n, n);
    Mat adj = Mat::Zero(n, n);  // adj(v, u) = 1 for an edge u -> v
    for (const auto& [src, dst] : edges) {
        if (src == dst) continue;  // no self loops in these graphs
        adj(dst, src) = 1.0;
    }
    for (Eigen::Index v = 0; v < n; ++v) {
        const double deg = adj.row(v).sum();
        if (deg > 0.0) ctx.neighbor_mean.row(v) = adj.row(v) / deg;
    }
    Mat with_self = adj + Mat::Identity(n, n);
    Eigen::VectorXd din = with_self.rowwise().sum();  // in-degree + 1
    Eigen::VectorXd dis = din.array().inverse().sqrt();
    ctx.gcn_norm = dis.asDiagonal() * with_self * dis.asDiagonal();
    return ctx;
}

RnconvLayer::RnconvLayer(Eigen::Index input_width, int n_trees, int depth, Rng& rng, double q1_,
                         double gamma, double alpha)
    : q1(q1_) {
    rnl1 = RnodeLayer(input_width, n_trees, depth, rng, gamma, alpha);
    rnl2 = RnodeLayer(input_width + n_trees, n_trees, depth, rng, gamma, alpha);
}

Var RnconvLayer::forward(Tape& t, Var x, const GraphContext& g, Mode mode, Rng& rng) {
    Var z1 = t.dropout(rnl1.forward(t, x, mode), q1, mode, rng);
    Var h1 = t.matmul_const(g.neighbor_mean, z1);
    Var h2 = t.dropout(rnl2.forward(t, t.concat_cols({x, h1}), mode), q1, mode, rng);
    return t.scale(t.add(h1, h2), 0.5);
}

void RnconvLayer::collect(std::vector<Param*>& out) {
    rnl1.collect(out);
    rnl2.collect(out);
}

void RnconvLayer::save(StateDict& sd, const std::string& prefix) const {
    rnl1.save(sd, prefix + ".rnl1");
    rnl2.save(sd, prefix + ".rnl2");
}

void RnconvLayer::load(const StateDict& sd, const std::string& prefix) {
    rnl1.load(sd, prefix + ".rnl1");
    rnl2.load(sd, prefix + ".rnl2");
}

long GraphRegressor::param_count() {
    std::vector<Param*> ps;
    collect(ps);
    long total = 0;
    for (const Param* p : ps) total += static_cast<long>(p->size());
    return total;
}

RnconvModel::RnconvModel(const RnconvConfig& cfg_, Rng& rng) : cfg(cfg_) {
    if (cfg.n_layers < 1) throw std::invalid_argument("RNConv needs at least one layer");
    for (int l = 0; l < cfg.n_layers; ++l) {
        const Eigen::Index width = l == 0 ? cfg.input_width : cfg.input_width + cfg.n_trees;
        layers.emplace_back(width, cfg.n_trees, cfg.depth, rng, cfg.q1, cfg.gamma, cfg.alpha);
    }
}

Var RnconvModel::forward(Tape& t, Var x, const GraphContext& g, Mode mode, Rng& rng) {
    std::vector<Var> outs;
    Var total{};
    for (int l = 0; l < cfg.n_layers; ++l) {
        Var xd = t.dropout(x, cfg.q2, mode, rng);
        Var e;
        if (l == 0) {
            e = xd;
        } else {
            Var mean_prev = outs[0];
            for (int i = 1; i < l; ++i) mean_prev = t.add(mean_prev, outs[static_cast<std::size_t>(i)]);
            mean_prev = t.scale(mean_prev, 1.0 / static_cast<double>(l));
            e = t.concat_cols({xd, mean_prev});
        }
        Var out = layers[static_cast<std::size_t>(l)].forward(t, e, g, mode, rng);
        outs.push_back(out);
        Var s = t.rowwise_sum(out);
        total = l == 0 ? s : t.add(total, s);
    }
    return t.scale(total, 1.0 / (static_cast<double>(cfg.n_trees) * cfg.n_layers));
}

void RnconvModel::collect(std::vector<Param*>& out) {
    for (auto& l : layers) l.collect(out);
}

void RnconvModel::save(StateDict& sd) const {
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].save(sd, "layers." + std::to_string(l));
}

void RnconvModel::load(const StateDict& sd) {
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].load(sd, "layers." + std::to_string(l));
}

// ---- Benchmarks ----------------------------------------------------------------------

BenchmarkModel::BenchmarkModel(const BenchmarkConfig& cfg_, Rng& rng) : cfg(cfg_) {
    if (cfg.n_layers < 1) throw std::invalid_argument("benchmark needs at least one conv layer");
    for (int l = 0; l < cfg.n_layers; ++l) {
        const Eigen::Index in = l == 0 ? cfg.input_width : cfg.hidden;
        Conv conv;
        if (cfg.kind == ConvKind::GCN) {
            conv.lin = Linear(in, cfg.hidden, true, rng);
        } else {
            conv.lin = Linear(in, cfg.hidden, false, rng);      // neighbor transform
            conv.self_lin = Linear(in, cfg.hidden, true, rng);  // root transform carries the bias
        }
        convs.push_back(std::move(conv));
    }
    head = Linear(cfg.hidden, 1, true, rng, /*zero_init=*/true);
}

Var BenchmarkModel::forward(Tape& t, Var x, const GraphContext& g, Mode mode, Rng& rng) {
    (void)mode;
    (void)rng;
    Var z = x;
    for (auto& conv : convs) {
        Var h;
        if (cfg.kind == ConvKind::GCN) {
            h = conv.lin.forward(t, t.matmul_const(g.gcn_norm, z));
        } else {
            Var neigh = conv.lin.forward(t, t.matmul_const(g.neighbor_mean, z));
            h = t.add(conv.self_lin.forward(t, z), neigh);
        }
        z = t.leaky_relu(h, slope);
    }
    return head.forward(t, z);
}

void BenchmarkModel::collect(std::vector<Param*>& out) {
    for (auto& conv : convs) {
        conv.lin.collect(out);
        if (cfg.kind == ConvKind::SAGE) conv.self_lin.collect(out);
    }
    head.collect(out);
}

void BenchmarkModel::save(StateDict& sd) const {
    for (std::size_t l = 0; l < convs.size(); ++l) {
        convs[l].lin.save(sd, "convs." + std::to_string(l) + ".lin");
        if (cfg.kind == ConvKind::SAGE) convs[l].self_lin.save(sd, "convs." + std::to_string(l) + ".self");
    }
    head.save(sd, "head");
}

void BenchmarkModel::load(const StateDict& sd) {
    for (std::size_t l = 0; l < convs.size(); ++l) {
        convs[l].lin.load(sd, "convs." + std::to_string(l) + ".lin");
        if (cfg.kind == ConvKind::SAGE) convs[l].self_lin.load(sd, "convs." + std::to_string(l) + ".self");
    }
    head.load(sd, "head");
}

int match_param_count(const std::function<long(int)>& count_for, long target, int p_ctr_max) {
    int hi = 1;
    long hi_count = count_for(hi);
    while (hi_count < target && hi < p_ctr_max) {
        hi = std::min(hi * 2, p_ctr_max);
        hi_count = count_for(hi);
    }
    // Binary search for the smallest p with count(p) >= target.
    int lo = 1;
    while (lo < hi) {
        const int mid = lo + (hi - lo) / 2;
        if (count_for(mid) >= target) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    if (lo == 1) return 1;
    const long above = count_for(lo);
    const long below = count_for(lo - 1);
    const long d_above = std::labs(above - target);
    const long d_below = std::labs(below - target);
    return d_below <= d_above ? lo - 1 : lo;  // ties break to the smaller knob
}

}  // namespace optarb::nn
