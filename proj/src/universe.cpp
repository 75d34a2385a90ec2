#include "optarb/universe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace optarb {

std::vector<double> default_radius_grid() {
    std::vector<double> radii(50);
    for (int i = 0; i < 50; ++i) radii[static_cast<std::size_t>(i)] = 0.1 * (i + 1) / 50.0;
    return radii;
}

namespace {

// Radius-ball mean with k-NN fallback on squared distances.
double neighbor_mean(const Eigen::MatrixX2d& pts, const Eigen::VectorXd& labels, double qx, double qy,
                     double r2, int fallback_k) {
    const Eigen::ArrayXd d2 =
        (pts.col(0).array() - qx).square() + (pts.col(1).array() - qy).square();
    double sum = 0.0;
    int count = 0;
    for (Eigen::Index i = 0; i < d2.size(); ++i) {
        if (d2(i) <= r2) {
            sum += labels(i);
            ++count;
        }
    }
    if (count > 0) return sum / count;

    // Empty ball: average the labels of the nearest fallback_k points.
    const int k = std::min<int>(fallback_k, static_cast<int>(d2.size()));
    std::vector<int> idx(static_cast<std::size_t>(d2.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
        if (d2(a) != d2(b)) return d2(a) < d2(b);
        return a < b;
    });
    double s = 0.0;
    for (int i = 0; i < k; ++i) s += labels(idx[static_cast<std::size_t>(i)]);
    return s / k;
}

}  // namespace

double TradabilityModel::predict(double moneyness, double days_to_maturity) const {
    const double qx = scaler_.transform_one(0, moneyness);
    const double qy = scaler_.transform_one(1, days_to_maturity);
    return neighbor_mean(points_, labels_, qx, qy, radius_ * radius_, kFallbackK);
}

TradabilityModel fit_tradability(const Eigen::MatrixX2d& train_x, const std::vector<int>& train_y,
                                 const Eigen::MatrixX2d& val_x, const std::vector<int>& val_y,
                                 const std::vector<double>& radii) {
    if (train_x.rows() == 0) throw std::invalid_argument("fit_tradability: empty training set");
    if (train_x.rows() != static_cast<Eigen::Index>(train_y.size()) ||
        val_x.rows() != static_cast<Eigen::Index>(val_y.size())) {
        throw std::invalid_argument("fit_tradability: feature/label size mismatch");
    }
    if (radii.empty()) throw std::invalid_argument("fit_tradability: empty radius grid");

    TradabilityModel model;
    model.scaler_ = QuantileScaler::fit(train_x);
    model.points_.resize(train_x.rows(), 2);
    model.labels_.resize(train_x.rows());
    for (Eigen::Index i = 0; i < train_x.rows(); ++i) {
        model.points_(i, 0) = model.scaler_.transform_one(0, train_x(i, 0));
        model.points_(i, 1) = model.scaler_.transform_one(1, train_x(i, 1));
        model.labels_(i) = train_y[static_cast<std::size_t>(i)];
    }

    if (val_x.rows() == 0) {
        model.radius_ = radii.front();
        return model;
    }

    // One distance pass per validation point; per-radius ball statistics come
    // from cumulative bins over the sorted radius grid.
    std::vector<double> sorted_radii = radii;
    std::sort(sorted_radii.begin(), sorted_radii.end());
    const std::size_t nr = sorted_radii.size();
    std::vector<double> errors(nr, 0.0);
    for (Eigen::Index q = 0; q < val_x.rows(); ++q) {
        const double qx = model.scaler_.transform_one(0, val_x(q, 0));
        const double qy = model.scaler_.transform_one(1, val_x(q, 1));
        const Eigen::ArrayXd d2 = (model.points_.col(0).array() - qx).square() +
                                  (model.points_.col(1).array() - qy).square();
        std::vector<double> bin_sum(nr + 1, 0.0);
        std::vector<int> bin_cnt(nr + 1, 0);
        // Track the 5 nearest for the empty-ball fallback.
        std::vector<std::pair<double, Eigen::Index>> nearest;
        for (Eigen::Index i = 0; i < d2.size(); ++i) {
            const double d = std::sqrt(d2(i));
            const std::size_t bin =
                static_cast<std::size_t>(std::lower_bound(sorted_radii.begin(), sorted_radii.end(), d) -
                                         sorted_radii.begin());
            bin_sum[bin] += model.labels_(i);
            bin_cnt[bin] += 1;
            nearest.push_back({d2(i), i});
        }
        const int k = std::min<std::size_t>(TradabilityModel::kFallbackK, nearest.size());
        std::partial_sort(nearest.begin(), nearest.begin() + k, nearest.end());
        double knn_sum = 0.0;
        for (int i = 0; i < k; ++i) knn_sum += model.labels_(nearest[static_cast<std::size_t>(i)].second);
        const double knn_mean = knn_sum / k;

        double cum_sum = 0.0;
        int cum_cnt = 0;
        for (std::size_t b = 0; b < nr; ++b) {
            cum_sum += bin_sum[b];
            cum_cnt += bin_cnt[b];
            const double pred = cum_cnt > 0 ? cum_sum / cum_cnt : knn_mean;
            const int cls = pred >= 0.5 ? 1 : 0;
            if (cls != val_y[static_cast<std::size_t>(q)]) errors[b] += 1.0;
        }
    }
    std::size_t best = 0;
    for (std::size_t b = 1; b < nr; ++b) {
        if (errors[b] < errors[best]) best = b;
    }
    model.radius_ = sorted_radii[best];
    return model;
}

// ---- Selection problem ---------------------------------------------------------

UniverseProblem build_problem(std::vector<UniverseCandidate> candidates, int p_univ, double dk_max,
                              double spot) {
    if (candidates.empty()) throw std::invalid_argument("build_problem: no candidates");
    std::sort(candidates.begin(), candidates.end(), [](const UniverseCandidate& a, const UniverseCandidate& b) {
        return a.asset < b.asset;
    });
    UniverseProblem p;
    p.candidates = std::move(candidates);
    p.p_univ = p_univ;
    p.dk_max = dk_max;
    p.spot = spot;

    const int n = static_cast<int>(p.candidates.size());
    p.atm_parent.assign(static_cast<std::size_t>(n), -1);

    int g_begin = 0;
    while (g_begin < n) {
        int g_end = g_begin;
        const std::int64_t mkey = p.candidates[static_cast<std::size_t>(g_begin)].asset.maturity_key();
        while (g_end < n && p.candidates[static_cast<std::size_t>(g_end)].asset.maturity_key() == mkey) ++g_end;

        auto dist_to_spot = [&](int i) {
            return std::abs(spot - p.candidates[static_cast<std::size_t>(i)].asset.strike);
        };
        // Near-ATM predecessor: nearest strike strictly closer to the spot;
        // equidistant candidates break toward the lower strike.
        for (int i = g_begin; i < g_end; ++i) {
            int parent = -1;
            double best_gap = std::numeric_limits<double>::infinity();
            for (int j = g_begin; j < g_end; ++j) {
                if (j == i || !(dist_to_spot(j) < dist_to_spot(i))) continue;
                const double gap = std::abs(p.candidates[static_cast<std::size_t>(i)].asset.strike -
                                            p.candidates[static_cast<std::size_t>(j)].asset.strike);
                if (gap < best_gap ||
                    (gap == best_gap && parent >= 0 &&
                     p.candidates[static_cast<std::size_t>(j)].asset.strike_key() <
                         p.candidates[static_cast<std::size_t>(parent)].asset.strike_key())) {
                    best_gap = gap;
                    parent = j;
                }
            }
            p.atm_parent[static_cast<std::size_t>(i)] = parent;  // -1 marks the ATM set
        }

        // Far pairs: the strike gap equals the larger of the two nearest-neighbor
        // distances and exceeds dk_max.
        if (g_end - g_begin >= 2) {
            std::vector<std::int64_t> nn_gap(static_cast<std::size_t>(g_end - g_begin));
            for (int i = g_begin; i < g_end; ++i) {
                std::int64_t best = std::numeric_limits<std::int64_t>::max();
                for (int j = g_begin; j < g_end; ++j) {
                    if (j == i) continue;
                    best = std::min(best,
                                    std::abs(p.candidates[static_cast<std::size_t>(i)].asset.strike_key() -
                                             p.candidates[static_cast<std::size_t>(j)].asset.strike_key()));
                }
                nn_gap[static_cast<std::size_t>(i - g_begin)] = best;
            }
            const std::int64_t dk_key = std::llround(dk_max * 1e6);
            for (int i = g_begin; i < g_end; ++i) {
                for (int j = i + 1; j < g_end; ++j) {
                    const std::int64_t gap =
                        std::abs(p.candidates[static_cast<std::size_t>(i)].asset.strike_key() -
                                 p.candidates[static_cast<std::size_t>(j)].asset.strike_key());
                    if (gap > dk_key &&
                        gap == std::max(nn_gap[static_cast<std::size_t>(i - g_begin)],
                                        nn_gap[static_cast<std::size_t>(j - g_begin)])) {
                        p.far_pairs.push_back({i, j});
                    }
                }
            }
        }
        g_begin = g_end;
    }
    return p;
}

bool universe_selection_feasible(const UniverseProblem& problem, const std::vector<int>& selected_idx,
                                 int p_univ) {
    if (static_cast<int>(selected_idx.size()) != p_univ) return false;
    std::vector<char> in(problem.candidates.size(), 0);
    for (int i : selected_idx) in[static_cast<std::size_t>(i)] = 1;
    std::map<std::int64_t, int> mat_count;
    for (int i : selected_idx) {
        const int parent = problem.atm_parent[static_cast<std::size_t>(i)];
        if (parent >= 0 && !in[static_cast<std::size_t>(parent)]) return false;
        mat_count[problem.candidates[static_cast<std::size_t>(i)].asset.maturity_key()] += 1;
    }
    for (const auto& [mkey, cnt] : mat_count) {
        if (cnt == 1) return false;
    }
    for (const auto& [i, j] : problem.far_pairs) {
        if (in[static_cast<std::size_t>(i)] && in[static_cast<std::size_t>(j)]) return false;
    }
    return true;
}

namespace {

// Depth-first branch and bound for one fixed cardinality.
class UniverseSearch {
public:
    UniverseSearch(const UniverseProblem& problem, int p) : P_(problem), p_(p) {
        n_ = static_cast<int>(P_.candidates.size());
        // Decision order: maturity, then chain depth from the ATM set, then strike.
        std::vector<int> depth(static_cast<std::size_t>(n_), 0);
        for (int i = 0; i < n_; ++i) depth[static_cast<std::size_t>(i)] = chain_depth(i);
        order_.resize(static_cast<std::size_t>(n_));
        std::iota(order_.begin(), order_.end(), 0);
        std::sort(order_.begin(), order_.end(), [&](int a, int b) {
            const auto& ca = P_.candidates[static_cast<std::size_t>(a)].asset;
            const auto& cb = P_.candidates[static_cast<std::size_t>(b)].asset;
            if (ca.maturity_key() != cb.maturity_key()) return ca.maturity_key() < cb.maturity_key();
            if (depth[static_cast<std::size_t>(a)] != depth[static_cast<std::size_t>(b)])
                return depth[static_cast<std::size_t>(a)] < depth[static_cast<std::size_t>(b)];
            return ca.strike_key() < cb.strike_key();
        });

        // Suffix top-k prefix sums for the upper bound.
        suffix_top_.assign(static_cast<std::size_t>(n_) + 1, {});
        for (int i = n_; i >= 0; --i) {
            std::vector<double>& s = suffix_top_[static_cast<std::size_t>(i)];
            std::vector<double> mus;
            for (int j = i; j < n_; ++j) {
                mus.push_back(P_.candidates[static_cast<std::size_t>(order_[static_cast<std::size_t>(j)])].mu_hat);
            }
            std::sort(mus.begin(), mus.end(), std::greater<double>());
            s.resize(mus.size() + 1, 0.0);
            for (std::size_t k = 0; k < mus.size(); ++k) s[k + 1] = s[k] + mus[k];
        }

        far_adj_.assign(static_cast<std::size_t>(n_), {});
        for (const auto& [i, j] : P_.far_pairs) {
            far_adj_[static_cast<std::size_t>(i)].push_back(j);
            far_adj_[static_cast<std::size_t>(j)].push_back(i);
        }

        group_of_.assign(static_cast<std::size_t>(n_), 0);
        std::int64_t last = std::numeric_limits<std::int64_t>::min();
        int g = -1;
        for (int i = 0; i < n_; ++i) {
            const std::int64_t mk = P_.candidates[static_cast<std::size_t>(i)].asset.maturity_key();
            if (mk != last) {
                ++g;
                last = mk;
                group_total_.push_back(0);
            }
            group_of_[static_cast<std::size_t>(i)] = g;
            group_total_.back() += 1;
        }
        group_cnt_.assign(group_total_.size(), 0);
        group_rem_ = group_total_;
        state_.assign(static_cast<std::size_t>(n_), 0);
    }

    bool run(std::vector<int>& best_selection, double& best_objective) {
        found_ = false;
        dfs(0, 0, 0.0);
        if (!found_) return false;
        best_selection = best_sel_;
        best_objective = best_obj_;
        return true;
    }

private:
    int chain_depth(int i) const {
        int d = 0;
        int cur = i;
        while (P_.atm_parent[static_cast<std::size_t>(cur)] >= 0) {
            cur = P_.atm_parent[static_cast<std::size_t>(cur)];
            ++d;
            if (d > n_) throw std::logic_error("near-ATM chain contains a cycle");
        }
        return d;
    }

    void record_if_better(double obj) {
        std::vector<int> sel;
        for (int i = 0; i < n_; ++i) {
            if (state_[static_cast<std::size_t>(i)] == 1) sel.push_back(i);
        }
        if (!found_ || obj > best_obj_ + kEps || (std::abs(obj - best_obj_) <= kEps && sel < best_sel_)) {
            found_ = true;
            best_obj_ = obj;
            best_sel_ = std::move(sel);
        }
    }

    void dfs(int pos, int cnt, double obj) {
        if (cnt == p_) {
            // Everything else is excluded; partially selected maturities must
            // already be complete.
            for (std::size_t g = 0; g < group_cnt_.size(); ++g) {
                if (group_cnt_[g] == 1) return;
            }
            record_if_better(obj);
            return;
        }
        if (pos == n_) return;
        const int need = p_ - cnt;
        const auto& top = suffix_top_[static_cast<std::size_t>(pos)];
        if (static_cast<int>(top.size()) - 1 < need) return;  // not enough candidates left
        const double bound = obj + top[static_cast<std::size_t>(need)];
        if (found_ && bound < best_obj_ - kEps) return;

        const int cand = order_[static_cast<std::size_t>(pos)];
        const std::size_t g = static_cast<std::size_t>(group_of_[static_cast<std::size_t>(cand)]);

        // Branch 1: include, when the chain parent is in and no far partner is.
        bool can_include = true;
        const int parent = P_.atm_parent[static_cast<std::size_t>(cand)];
        if (parent >= 0 && state_[static_cast<std::size_t>(parent)] != 1) can_include = false;
        if (can_include) {
            for (int other : far_adj_[static_cast<std::size_t>(cand)]) {
                if (state_[static_cast<std::size_t>(other)] == 1) {
                    can_include = false;
                    break;
                }
            }
        }
        if (can_include) {
            state_[static_cast<std::size_t>(cand)] = 1;
            group_cnt_[g] += 1;
            group_rem_[g] -= 1;
            dfs(pos + 1, cnt + 1, obj + P_.candidates[static_cast<std::size_t>(cand)].mu_hat);
            state_[static_cast<std::size_t>(cand)] = 0;
            group_cnt_[g] -= 1;
            group_rem_[g] += 1;
        }

        // Branch 2: exclude, unless that strands a single selected asset in the group.
        state_[static_cast<std::size_t>(cand)] = 2;
        group_rem_[g] -= 1;
        if (!(group_cnt_[g] == 1 && group_rem_[g] == 0)) {
            dfs(pos + 1, cnt, obj);
        }
        state_[static_cast<std::size_t>(cand)] = 0;
        group_rem_[g] += 1;
    }

    static constexpr double kEps = 1e-12;
    const UniverseProblem& P_;
    int p_ = 0;
    int n_ = 0;
    std::vector<int> order_;
    std::vector<std::vector<double>> suffix_top_;
    std::vector<std::vector<int>> far_adj_;
    std::vector<int> group_of_;
    std::vector<int> group_total_, group_cnt_, group_rem_;
    std::vector<std::int8_t> state_;  // 0 undecided, 1 in, 2 out
    bool found_ = false;
    double best_obj_ = 0.0;
    std::vector<int> best_sel_;
};

}  // namespace

UniverseSolution solve_universe(const UniverseProblem& problem) {
    UniverseSolution sol;
    for (int p = problem.p_univ; p >= 2; --p) {
        sol.trace.push_back(p);
        UniverseSearch search(problem, p);
        std::vector<int> sel;
        double obj = 0.0;
        if (search.run(sel, obj)) {
            sol.feasible = true;
            sol.achieved_p = p;
            sol.objective = obj;
            for (int i : sel) sol.selected.push_back(problem.candidates[static_cast<std::size_t>(i)].asset);
            return sol;
        }
    }
    return sol;  // flagged infeasible: no universe of size >= 2
}

std::optional<std::pair<std::vector<int>, double>> enumerate_universe(const UniverseProblem& problem,
                                                                      int p_univ) {
    const int n = static_cast<int>(problem.candidates.size());
    if (p_univ > n || p_univ < 0) return std::nullopt;
    std::vector<int> pick(static_cast<std::size_t>(p_univ));
    std::iota(pick.begin(), pick.end(), 0);
    bool found = false;
    double best_obj = 0.0;
    std::vector<int> best;
    auto consider = [&]() {
        if (!universe_selection_feasible(problem, pick, p_univ)) return;
        double obj = 0.0;
        for (int i : pick) obj += problem.candidates[static_cast<std::size_t>(i)].mu_hat;
        if (!found || obj > best_obj + 1e-12 || (std::abs(obj - best_obj) <= 1e-12 && pick < best)) {
            found = true;
            best_obj = obj;
            best = pick;
        }
    };
    if (p_univ == 0) return std::nullopt;
    while (true) {
        consider();
        int i = p_univ - 1;
        while (i >= 0 && pick[static_cast<std::size_t>(i)] == n - p_univ + i) --i;
        if (i < 0) break;
        pick[static_cast<std::size_t>(i)] += 1;
        for (int j = i + 1; j < p_univ; ++j) {
            pick[static_cast<std::size_t>(j)] = pick[static_cast<std::size_t>(j - 1)] + 1;
        }
    }
    if (!found) return std::nullopt;
    return std::make_pair(best, best_obj);
}

}  // namespace optarb
