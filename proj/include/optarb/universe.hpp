// Tradability prediction (radius neighbor classifier) and the per-date
// universe selection binary program with its exact branch-and-bound solver.
#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

#include "optarb/data_io.hpp"
#include "optarb/market_core.hpp"

namespace optarb {

// Radius neighbor classifier on quantile-scaled (moneyness, time-to-maturity)
// features; falls back to the 5 nearest points when the radius ball is empty.
class TradabilityModel {
public:
    static constexpr int kFallbackK = 5;

    // Prediction in [0,1] from raw (unscaled) features.
    double predict(double moneyness, double days_to_maturity) const;

    double radius() const { return radius_; }
    std::size_t n_points() const { return static_cast<std::size_t>(points_.rows()); }

    friend TradabilityModel fit_tradability(const Eigen::MatrixX2d&, const std::vector<int>&,
                                            const Eigen::MatrixX2d&, const std::vector<int>&,
                                            const std::vector<double>&);

private:
    double radius_ = 0.0;
    Eigen::MatrixX2d points_;  // scaled training features
    Eigen::VectorXd labels_;
    QuantileScaler scaler_;
};

// 50 radii linearly spaced in (0, 0.1] by default.
std::vector<double> default_radius_grid();

// Fits the scaler on the training rows, evaluates every radius on the
// validation set (0.5 threshold misclassification), returns the best model.
TradabilityModel fit_tradability(const Eigen::MatrixX2d& train_x, const std::vector<int>& train_y,
                                 const Eigen::MatrixX2d& val_x, const std::vector<int>& val_y,
                                 const std::vector<double>& radii = default_radius_grid());

// One candidate synthetic long for the selection program.
struct UniverseCandidate {
    AssetId asset;      // SL
    double mu_hat = 0.0;  // predicted tradability
};

// Binary program over candidates: maximize sum(mu_hat u) s.t.
//   sum(u) = p_univ,
//   u_a <= u_parent(a) for non-ATM a (near-ATM chain),
//   u_a <= v_M and 2 v_M <= sum over maturity M of u (pairing),
//   u_a + u_a' <= 1 for far pairs.
struct UniverseProblem {
    std::vector<UniverseCandidate> candidates;  // sorted (maturity, strike)
    int p_univ = 0;
    double dk_max = 0.0;
    double spot = 0.0;
    std::vector<int> atm_parent;                // index of the near-ATM predecessor, -1 for ATM assets
    std::vector<std::pair<int, int>> far_pairs; // i < j index pairs
};

UniverseProblem build_problem(std::vector<UniverseCandidate> candidates, int p_univ, double dk_max,
                              double spot);

struct UniverseSolution {
    std::vector<AssetId> selected;  // sorted (maturity, strike)
    double objective = 0.0;
    int achieved_p = 0;
    std::vector<int> trace;  // p_univ values attempted, in order
    bool feasible = false;
};

// Exact depth-first branch and bound; on infeasibility decrements p_univ
// down to 2, recording the trace. Deterministic lexicographic tie-break.
UniverseSolution solve_universe(const UniverseProblem& problem);

// Exhaustive oracle for small instances (tests and cross-checks).
std::optional<std::pair<std::vector<int>, double>> enumerate_universe(const UniverseProblem& problem,
                                                                      int p_univ);

bool universe_selection_feasible(const UniverseProblem& problem, const std::vector<int>& selected_idx,
                                 int p_univ);

}  // namespace optarb
