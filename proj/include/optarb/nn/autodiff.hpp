// Tape-based reverse-mode differentiation over dense matrices. The op set is
// exactly what the tree/cross/graph layers need; gradients are checked
// against central finite differences in the test suite.
#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>
#include <vector>

#include "optarb/rng.hpp"

namespace optarb::nn {

using Mat = Eigen::MatrixXd;

enum class Mode { Train, Eval };

// A learnable tensor with its accumulated gradient.
struct Param {
    std::string name;
    Mat value;
    Mat grad;

    Param() = default;
    Param(std::string n, Mat v)
        : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(); }
    Eigen::Index size() const { return value.size(); }
};

// Persistent batch-normalization buffers (running statistics are state, not
// parameters).
struct BatchNormBuffers {
    Eigen::RowVectorXd running_mean;
    Eigen::RowVectorXd running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    void init(Eigen::Index width) {
        running_mean = Eigen::RowVectorXd::Zero(width);
        running_var = Eigen::RowVectorXd::Ones(width);
    }
};

class Tape;

struct Var {
    Tape* tape = nullptr;
    int idx = -1;

    const Mat& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
};

class Tape {
public:
    Var constant(Mat v);     // no gradient tracking
    Var input(Mat v);        // gradient tracked (for Jacobian probes)
    Var param(Param& p);     // bound leaf; backward accumulates into p.grad

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);  // elementwise
    Var scale(Var a, double c);
    Var matmul(Var a, Var b);
    Var matmul_const(const Mat& a, Var b);  // constant left factor (graph aggregation)
    Var add_rowvec(Var x, Var b);           // broadcast a 1 x m row over n rows
    Var sub_rowvec(Var x, Var b);
    Var div_rowvec(Var x, Var r);           // divide columns by a 1 x m row (r nonzero)
    Var colwise_mul(Var x, Var c);          // scale each row of x by c (n x 1)
    Var colwise_rowvec_mul(Var x, Var g);   // scale each column of x by g (1 x m)
    Var concat_cols(const std::vector<Var>& xs);
    Var slice_cols(Var x, Eigen::Index start, Eigen::Index len);
    Var leaky_relu(Var x, double slope = 0.01);
    Var rowwise_sum(Var x);  // n x 1
    Var mean_all(Var x);     // 1 x 1

    // Mean squared error over the masked entries of a column vector.
    Var mse_masked(Var pred, const Mat& target, const Mat& mask);

    // Inverted-scaling dropout; identity in eval mode or at q = 0.
    Var dropout(Var x, double q, Mode mode, Rng& rng);

    // Batch normalization over rows. gamma/beta may be null (affine-free).
    // Train mode uses batch statistics and updates the buffers; eval mode
    // applies the running statistics. Throws on train batches of size 1.
    Var batch_norm(Var x, BatchNormBuffers& buffers, Mode mode, Param* gamma, Param* beta);

    // Elementwise two-class alpha-entmax of [x, 0].
    Var two_class_entmax(Var x, double alpha);

    // Exact alpha-entmax of a column vector.
    Var entmax(Var v, double alpha);

    // Oblivious-tree leaf mixture. gates: n x (n_trees * depth) in [0,1],
    // response: n_trees x 2^depth. Output n x n_trees, where each entry mixes
    // the responses with the outer-product leaf weights of its gate block.
    Var oblivious_mixture(Var gates, Var response, int depth);

    void backward(Var loss);

    const Mat& value(Var v) const { return nodes_[static_cast<std::size_t>(v.idx)].value; }
    const Mat& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.idx)].grad; }
    std::size_t size() const { return nodes_.size(); }

private:
    friend struct Var;
    struct Node {
        Mat value;
        Mat grad;
        bool tracked = false;
        Param* bound = nullptr;
        std::function<void(Tape&, int)> back;  // accumulates into parent grads
    };

    Var make(Mat v, bool tracked, std::function<void(Tape&, int)> back);
    Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.idx)]; }
    Node& node(int i) { return nodes_[static_cast<std::size_t>(i)]; }
    bool tracked(Var v) const { return nodes_[static_cast<std::size_t>(v.idx)].tracked; }

    std::vector<Node> nodes_;
};

// Adam with the standard bias correction.
class Adam {
public:
    explicit Adam(std::vector<Param*> params, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);

    void zero_grad();
    void step();
    const std::vector<Param*>& params() const { return params_; }

private:
    std::vector<Param*> params_;
    std::vector<Mat> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    long step_count_ = 0;
};

}  // namespace optarb::nn
