#include "optarb/nn/entmax.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace optarb::nn {

namespace {

// p_i = [(alpha-1) z_i - tau]_+^(1/(alpha-1)), computed in logs for stability
// when alpha approaches 1.
double entmax_power(double u, double inv_exponent) {
    if (u <= 0.0) return 0.0;
    return std::exp(std::log(u) * inv_exponent);
}

Eigen::VectorXd entmax_bisect(const Eigen::VectorXd& z, double alpha) {
    const double am1 = alpha - 1.0;
    const double inv = 1.0 / am1;
    const Eigen::VectorXd zs = am1 * z;
    double hi = zs.maxCoeff();
    double lo = hi - 1.0;  // p_max = 1 at lo, so f(lo) >= 0; f(hi) = -1
    for (int it = 0; it < 200; ++it) {
        const double tau = 0.5 * (lo + hi);
        double sum = 0.0;
        for (Eigen::Index i = 0; i < zs.size(); ++i) sum += entmax_power(zs(i) - tau, inv);
        if (sum >= 1.0) {
            lo = tau;
        } else {
            hi = tau;
        }
    }
    const double tau = 0.5 * (lo + hi);
    Eigen::VectorXd p(zs.size());
    for (Eigen::Index i = 0; i < zs.size(); ++i) p(i) = entmax_power(zs(i) - tau, inv);
    const double sum = p.sum();
    if (sum > 0.0) p /= sum;
    return p;
}

// Exact threshold for alpha = 1.5: with s = z/2 sorted descending, the
// support size k satisfies s_k > tau(k) >= s_{k+1}, where
// tau(k) = mean_k - sqrt((1 - ssdev_k) / k).
Eigen::VectorXd entmax_half(const Eigen::VectorXd& z) {
    const Eigen::VectorXd s = z / 2.0;
    std::vector<double> sorted(s.data(), s.data() + s.size());
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());

    double tau = sorted[0] - 1.0;  // the k = 1 candidate
    double cum = 0.0, cum_sq = 0.0;
    for (std::size_t k = 1; k <= sorted.size(); ++k) {
        cum += sorted[k - 1];
        cum_sq += sorted[k - 1] * sorted[k - 1];
        const double mean = cum / static_cast<double>(k);
        const double ssdev = cum_sq - cum * mean;
        const double disc = (1.0 - ssdev) / static_cast<double>(k);
        if (disc < 0.0) continue;
        const double cand = mean - std::sqrt(disc);
        const double next = k < sorted.size() ? sorted[k] : -std::numeric_limits<double>::infinity();
        if (cand >= next) {  // first support size whose threshold clears the next entry
            tau = cand;
            break;
        }
    }
    Eigen::VectorXd p(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        const double u = s(i) - tau;
        p(i) = u > 0.0 ? u * u : 0.0;
    }
    const double sum = p.sum();
    if (sum > 0.0) p /= sum;
    return p;
}

}  // namespace

Eigen::VectorXd entmax_vector(const Eigen::VectorXd& z, double alpha) {
    if (!(alpha > 1.0)) throw std::invalid_argument("entmax requires alpha > 1");
    if (z.size() == 0) throw std::invalid_argument("entmax of an empty vector");
    if (alpha == 1.5) return entmax_half(z);
    return entmax_bisect(z, alpha);
}

double two_class_entmax_scalar(double t, double alpha) {
    if (t == 0.0) return 0.5;  // exact symmetry point
    if (alpha == 1.5) {
        if (t >= 2.0) return 1.0;
        if (t <= -2.0) return 0.0;
        const double u = t / 2.0;
        const double s1 = 0.5 * (u + std::sqrt(2.0 - u * u));
        return s1 * s1;
    }
    Eigen::VectorXd z(2);
    z << t, 0.0;
    return entmax_vector(z, alpha)(0);
}

double two_class_entmax_derivative(double p, double alpha) {
    if (p <= 0.0 || p >= 1.0) return 0.0;
    const double q1 = std::pow(p, 2.0 - alpha);
    const double q2 = std::pow(1.0 - p, 2.0 - alpha);
    return q1 * q2 / (q1 + q2);
}

}  // namespace optarb::nn
