// Exact alpha-entmax: sorted-threshold solution for alpha = 1.5, bisection on
// the normalizing threshold otherwise. Scalar two-class variants included.
#pragma once

#include <Eigen/Core>

namespace optarb::nn {

// Probability vector of the alpha-entmax transform, alpha > 1.
Eigen::VectorXd entmax_vector(const Eigen::VectorXd& z, double alpha);

// sigma_alpha(t) = first coordinate of entmax_alpha([t, 0]).
double two_class_entmax_scalar(double t, double alpha);

// d sigma_alpha / dt expressed through the output probability p.
double two_class_entmax_derivative(double p, double alpha);

}  // namespace optarb::nn
