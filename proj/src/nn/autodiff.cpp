#include "optarb/nn/autodiff.hpp"

#include <cmath>
#include <stdexcept>

#include "optarb/nn/entmax.hpp"

namespace optarb::nn {

const Mat& Var::value() const { return tape->value(*this); }

Var Tape::make(Mat v, bool tracked, std::function<void(Tape&, int)> back) {
    Node n;
    n.value = std::move(v);
    n.tracked = tracked;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Mat v) { return make(std::move(v), false, nullptr); }

Var Tape::input(Mat v) { return make(std::move(v), true, nullptr); }

Var Tape::param(Param& p) {
    Var v = make(p.value, true, nullptr);
    node(v).bound = &p;
    return v;
}

namespace {
void check(bool ok, const char* what) {
    if (!ok) throw std::logic_error(std::string("tape shape error: ") + what);
}
}  // namespace

Var Tape::add(Var a, Var b) {
    check(a.rows() == b.rows() && a.cols() == b.cols(), "add operands");
    return make(value(a) + value(b), tracked(a) || tracked(b), [a, b](Tape& t, int self) {
        const Mat& g = t.node(self).grad;
        if (t.tracked(a)) t.node(a).grad += g;
        if (t.tracked(b)) t.node(b).grad += g;
    });
}

Var Tape::sub(Var a, Var b) {
    check(a.rows() == b.rows() && a.cols() == b.cols(), "sub operands");
    return make(value(a) - value(b), tracked(a) || tracked(b), [a, b](Tape& t, int self) {
        const Mat& g = t.node(self).grad;
        if (t.tracked(a)) t.node(a).grad += g;
        if (t.tracked(b)) t.node(b).grad -= g;
    });
}

Var Tape::mul(Var a, Var b) {
    check(a.rows() == b.rows() && a.cols() == b.cols(), "mul operands");
    return make(value(a).cwiseProduct(value(b)), tracked(a) || tracked(b), [a, b](Tape& t, int self) {
        const Mat& g = t.node(self).grad;
        if (t.tracked(a)) t.node(a).grad += g.cwiseProduct(t.value(b));
        if (t.tracked(b)) t.node(b).grad += g.cwiseProduct(t.value(a));
    });
}

Var Tape::scale(Var a, double c) {
    return make(value(a) * c, tracked(a), [a, c](Tape& t, int self) {
        if (t.tracked(a)) t.node(a).grad += c * t.node(self).grad;
    });
}

Var Tape::matmul(Var a, Var b) {
    check(a.cols() == b.rows(), "matmul inner dimension");
    return make(value(a) * value(b), tracked(a) || tracked(b), [a, b](Tape& t, int self) {
        const Mat& g = t.node(self).grad;
        if (t.tracked(a)) t.node(a).grad += g * t.value(b).transpose();
        if (t.tracked(b)) t.node(b).grad += t.value(a).transpose() * g;
    });
}

Var Tape::matmul_const(const Mat& a, Var b) {
    check(a.cols() == b.rows(), "matmul_const inner dimension");
    Mat at = a.transpose();
    return make(a * value(b), tracked(b), [b, at = std::move(at)](Tape& t, int self) {
        if (t.tracked(b)) t.node(b).grad += at * t.node(self).grad;
    });
}

Var Tape::add_rowvec(Var x, Var b) {
    check(b.rows() == 1 && b.cols() == x.cols(), "add_rowvec operands");
    Mat out = value(x);
    out.rowwise() += value(b).row(0);
    return make(std::move(out), tracked(x) || tracked(b), [x, b](Tape& t, int self) {
        const Mat& g = t.node(self).grad;
        if (t.tracked(x)) t.node(x).grad += g;
        if (t.tracked(b)) t.node(b).grad += g.colwise().sum();
    });
}

Var Tape::sub_rowvec(Var x, Var b) {
    check(b.rows() == 1 && b.cols() == x.cols(), "sub_rowvec operands");
    Mat out = value(x);
    out.rowwise() -= value(b).row(0);
    return make(std::move(out), tracked(x) || tracked(b), [x, b](Tape& t, int self) {
        const Mat& g = t.node(self).grad;
        if (t.tracked(x)) t.node(x).grad += g;
        if (t.tracked(b)) t.node(b).grad -= g.colwise().sum();
    });
}

Var Tape::div_rowvec(Var x, Var r) {
    check(r.rows() == 1 && r.cols() == x.cols(), "div_rowvec operands");
    Mat out = (value(x).array().rowwise() / value(r).row(0).array()).matrix();
    Mat out_copy = out;
    return make(std::move(out), tracked(x) || tracked(r),
                [x, r, out_copy = std::move(out_copy)](Tape& t, int self) {
                    const Mat& g = t.node(self).grad;
                    if (t.tracked(x)) {
                        t.node(x).grad += (g.array().rowwise() / t.value(r).row(0).array()).matrix();
                    }
                    if (t.tracked(r)) {
                        const Eigen::RowVectorXd num = g.cwiseProduct(out_copy).colwise().sum();
                        t.node(r).grad -= (num.array() / t.value(r).row(0).array()).matrix();
                    }
                });
}

Var Tape::colwise_mul(Var x, Var c) {
    check(c.cols() == 1 && c.rows() == x.rows(), "colwise_mul operands");
    Mat out = (value(x).array().colwise() * value(c).col(0).array()).matrix();
    return make(std::move(out), tracked(x) || tracked(c), [x, c](Tape& t, int self) {
        const Mat& g = t.node(self).grad;
        if (t.tracked(x)) t.node(x).grad += (g.array().colwise() * t.value(c).col(0).array()).matrix();
        if (t.tracked(c)) t.node(c).grad += g.cwiseProduct(t.value(x)).rowwise().sum();
    });
}

Var Tape::concat_cols(const std::vector<Var>& xs) {
    check(!xs.empty(), "concat_cols needs operands");
    const Eigen::Index rows = xs.front().rows();
    Eigen::Index cols = 0;
    bool req = false;
    for (const Var& v : xs) {
        check(v.rows() == rows, "concat_cols row mismatch");
        cols += v.cols();
        req = req || tracked(v);
    }
    Mat out(rows, cols);
    Eigen::Index at = 0;
    for (const Var& v : xs) {
        out.middleCols(at, v.cols()) = value(v);
        at += v.cols();
    }
    return make(std::move(out), req, [xs](Tape& t, int self) {
        const Mat& g = t.node(self).grad;
        Eigen::Index at = 0;
        for (const Var& v : xs) {
            if (t.tracked(v)) t.node(v).grad += g.middleCols(at, v.cols());
            at += v.cols();
        }
    });
}

Var Tape::slice_cols(Var x, Eigen::Index start, Eigen::Index len) {
    check(start >= 0 && start + len <= x.cols(), "slice_cols bounds");
    return make(value(x).middleCols(start, len), tracked(x), [x, start, len](Tape& t, int self) {
        if (t.tracked(x)) t.node(x).grad.middleCols(start, len) += t.node(self).grad;
    });
}

Var Tape::leaky_relu(Var x, double slope) {
    const Mat& v = value(x);
    Mat out = v.unaryExpr([slope](double u) { return u > 0.0 ? u : slope * u; });
    return make(std::move(out), tracked(x), [x, slope](Tape& t, int self) {
        if (!t.tracked(x)) return;
        const Mat& g = t.node(self).grad;
        const Mat& v = t.value(x);
        t.node(x).grad.array() += g.array() * (v.array() > 0.0).cast<double>().max(slope);
    });
}

Var Tape::rowwise_sum(Var x) {
    Mat out = value(x).rowwise().sum();
    return make(std::move(out), tracked(x), [x](Tape& t, int self) {
        if (!t.tracked(x)) return;
        const Mat& g = t.node(self).grad;
        t.node(x).grad.colwise() += g.col(0);
    });
}

Var Tape::mean_all(Var x) {
    Mat out(1, 1);
    out(0, 0) = value(x).mean();
    const double inv = 1.0 / static_cast<double>(value(x).size());
    return make(std::move(out), tracked(x), [x, inv](Tape& t, int self) {
        if (t.tracked(x)) t.node(x).grad.array() += t.node(self).grad(0, 0) * inv;
    });
}

Var Tape::mse_masked(Var pred, const Mat& target, const Mat& mask) {
    check(pred.cols() == 1 && target.cols() == 1 && mask.cols() == 1, "mse_masked expects column vectors");
    check(pred.rows() == target.rows() && pred.rows() == mask.rows(), "mse_masked sizes");
    const double count = mask.sum();
    if (count <= 0.0) throw std::invalid_argument("mse_masked: no valid targets in batch");
    const Mat resid = (value(pred) - target).cwiseProduct(mask);
    Mat out(1, 1);
    out(0, 0) = resid.squaredNorm() / count;
    return make(std::move(out), tracked(pred), [pred, resid, count](Tape& t, int self) {
        if (t.tracked(pred)) t.node(pred).grad += (2.0 / count) * t.node(self).grad(0, 0) * resid;
    });
}

Var Tape::dropout(Var x, double q, Mode mode, Rng& rng) {
    if (mode == Mode::Eval || q == 0.0) return x;
    if (!(q >= 0.0 && q < 1.0)) throw std::invalid_argument("dropout rate must lie in [0,1)");
    Mat mask(x.rows(), x.cols());
    const double keep_scale = 1.0 / (1.0 - q);
    for (Eigen::Index r = 0; r < mask.rows(); ++r) {
        for (Eigen::Index c = 0; c < mask.cols(); ++c) {
            mask(r, c) = rng.bernoulli(q) ? 0.0 : keep_scale;
        }
    }
    return mul(x, constant(std::move(mask)));
}

Var Tape::batch_norm(Var x, BatchNormBuffers& buffers, Mode mode, Param* gamma, Param* beta) {
    const Eigen::Index n = x.rows(), w = x.cols();
    if (buffers.running_mean.size() == 0) buffers.init(w);
    check(buffers.running_mean.size() == w, "batch_norm width");
    Var g_var{}, b_var{};
    const bool affine = gamma != nullptr;
    if (affine) {
        g_var = param(*gamma);
        b_var = param(*beta);
    }

    if (mode == Mode::Eval) {
        Eigen::RowVectorXd inv_std = (buffers.running_var.array() + buffers.eps).sqrt().inverse();
        Eigen::RowVectorXd mean = buffers.running_mean;
        Mat xhat = ((value(x).rowwise() - mean).array().rowwise() * inv_std.array()).matrix();
        Var h = make(std::move(xhat), tracked(x), [x, inv_std](Tape& t, int self) {
            if (t.tracked(x)) t.node(x).grad += (t.node(self).grad.array().rowwise() * inv_std.array()).matrix();
        });
        if (!affine) return h;
        return add_rowvec(colwise_rowvec_mul(h, g_var), b_var);
    }

    if (n < 2) throw std::invalid_argument("batch_norm: training batches need at least 2 rows");
    const Eigen::RowVectorXd mean = value(x).colwise().mean();
    Mat centered = value(x).rowwise() - mean;
    const Eigen::RowVectorXd var = centered.array().square().colwise().sum() / static_cast<double>(n);
    const Eigen::RowVectorXd inv_std = (var.array() + buffers.eps).sqrt().inverse();
    Mat xhat = (centered.array().rowwise() * inv_std.array()).matrix();

    // Running statistics track the unbiased batch variance.
    const double m = buffers.momentum;
    buffers.running_mean = (1.0 - m) * buffers.running_mean + m * mean;
    buffers.running_var =
        (1.0 - m) * buffers.running_var + m * (var * static_cast<double>(n) / static_cast<double>(n - 1));

    Mat xhat_copy = xhat;
    Var h = make(std::move(xhat), tracked(x),
                 [x, inv_std, xhat_copy = std::move(xhat_copy), n](Tape& t, int self) {
                     if (!t.tracked(x)) return;
                     const Mat& g = t.node(self).grad;
                     const Eigen::RowVectorXd g_mean = g.colwise().mean();
                     const Eigen::RowVectorXd gx_mean =
                         g.cwiseProduct(xhat_copy).colwise().sum() / static_cast<double>(n);
                     Mat dx = g.rowwise() - g_mean;
                     dx -= (xhat_copy.array().rowwise() * gx_mean.array()).matrix();
                     t.node(x).grad += (dx.array().rowwise() * inv_std.array()).matrix();
                 });
    if (!affine) return h;
    return add_rowvec(colwise_rowvec_mul(h, g_var), b_var);
}

Var Tape::two_class_entmax(Var x, double alpha) {
    const Mat& v = value(x);
    Mat out(v.rows(), v.cols());
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
        for (Eigen::Index c = 0; c < v.cols(); ++c) out(r, c) = two_class_entmax_scalar(v(r, c), alpha);
    }
    Mat out_copy = out;
    return make(std::move(out), tracked(x), [x, alpha, out_copy = std::move(out_copy)](Tape& t, int self) {
        if (!t.tracked(x)) return;
        const Mat& g = t.node(self).grad;
        Mat& gx = t.node(x).grad;
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
            for (Eigen::Index c = 0; c < g.cols(); ++c) {
                gx(r, c) += g(r, c) * two_class_entmax_derivative(out_copy(r, c), alpha);
            }
        }
    });
}

Var Tape::entmax(Var v, double alpha) {
    check(v.cols() == 1, "entmax expects a column vector");
    Eigen::VectorXd p = entmax_vector(value(v).col(0), alpha);
    Mat out = p;
    return make(std::move(out), tracked(v), [v, alpha, p](Tape& t, int self) {
        if (!t.tracked(v)) return;
        // J = diag(q) - q q^T / (1^T q) with q_i = p_i^(2 - alpha) on the support.
        Eigen::VectorXd q(p.size());
        for (Eigen::Index i = 0; i < p.size(); ++i) q(i) = p(i) > 0.0 ? std::pow(p(i), 2.0 - alpha) : 0.0;
        const Eigen::VectorXd g = t.node(self).grad.col(0);
        const double qsum = q.sum();
        const double scale = qsum > 0.0 ? q.dot(g) / qsum : 0.0;
        t.node(v).grad.col(0) += q.cwiseProduct(g - Eigen::VectorXd::Constant(g.size(), scale));
    });
}

Var Tape::oblivious_mixture(Var gates, Var response, int depth) {
    const Eigen::Index n = gates.rows();
    const Eigen::Index n_trees = response.rows();
    const Eigen::Index n_leaves = response.cols();
    check(depth >= 1 && n_leaves == (Eigen::Index{1} << depth), "oblivious_mixture response width");
    check(gates.cols() == n_trees * depth, "oblivious_mixture gate width");

    const Mat& c = value(gates);
    const Mat& r = value(response);
    Mat out = Mat::Zero(n, n_trees);
    for (Eigen::Index b = 0; b < n; ++b) {
        for (Eigen::Index j = 0; j < n_trees; ++j) {
            const Eigen::Index base = j * depth;
            double acc = 0.0;
            for (Eigen::Index leaf = 0; leaf < n_leaves; ++leaf) {
                double wgt = 1.0;
                for (int k = 0; k < depth; ++k) {
                    const bool hi = (leaf >> (depth - 1 - k)) & 1;  // bit 0: gate side c, bit 1: 1-c
                    const double ck = c(b, base + k);
                    wgt *= hi ? 1.0 - ck : ck;
                }
                acc += wgt * r(j, leaf);
            }
            out(b, j) = acc;
        }
    }
    return make(std::move(out), tracked(gates) || tracked(response),
                [gates, response, depth](Tape& t, int self) {
                    const Mat& g = t.node(self).grad;
                    const Mat& c = t.value(gates);
                    const Mat& r = t.value(response);
                    const Eigen::Index n = c.rows();
                    const Eigen::Index n_trees = r.rows();
                    const Eigen::Index n_leaves = r.cols();
                    const bool need_gates = t.tracked(gates);
                    const bool need_resp = t.tracked(response);
                    for (Eigen::Index b = 0; b < n; ++b) {
                        for (Eigen::Index j = 0; j < n_trees; ++j) {
                            const double go = g(b, j);
                            if (go == 0.0) continue;
                            const Eigen::Index base = j * depth;
                            for (Eigen::Index leaf = 0; leaf < n_leaves; ++leaf) {
                                double wgt = 1.0;
                                for (int k = 0; k < depth; ++k) {
                                    const bool hi = (leaf >> (depth - 1 - k)) & 1;
                                    const double ck = c(b, base + k);
                                    wgt *= hi ? 1.0 - ck : ck;
                                }
                                if (need_resp) t.node(response).grad(j, leaf) += go * wgt;
                                if (need_gates) {
                                    for (int k = 0; k < depth; ++k) {
                                        const bool hi = (leaf >> (depth - 1 - k)) & 1;
                                        double partial = 1.0;
                                        for (int k2 = 0; k2 < depth; ++k2) {
                                            if (k2 == k) continue;
                                            const bool hi2 = (leaf >> (depth - 1 - k2)) & 1;
                                            const double ck2 = c(b, base + k2);
                                            partial *= hi2 ? 1.0 - ck2 : ck2;
                                        }
                                        const double sign = hi ? -1.0 : 1.0;
                                        t.node(gates).grad(b, base + k) += go * r(j, leaf) * sign * partial;
                                    }
                                }
                            }
                        }
                    }
                });
}

void Tape::backward(Var loss) {
    check(loss.rows() == 1 && loss.cols() == 1, "backward expects a scalar loss");
    for (auto& n : nodes_) {
        n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    }
    node(loss).grad(0, 0) = 1.0;
    for (int i = loss.idx; i >= 0; --i) {
        Node& n = node(i);
        if (!n.tracked) continue;
        if (n.back) n.back(*this, i);
        if (n.bound != nullptr) n.bound->grad += n.grad;
    }
}

// Scale each column c of x by g(0, c): helper used by the affine batch norm.
Var Tape::colwise_rowvec_mul(Var x, Var g) {
    check(g.rows() == 1 && g.cols() == x.cols(), "colwise_rowvec_mul operands");
    Mat out = (value(x).array().rowwise() * value(g).row(0).array()).matrix();
    return make(std::move(out), tracked(x) || tracked(g), [x, g](Tape& t, int self) {
        const Mat& grad = t.node(self).grad;
        if (t.tracked(x)) t.node(x).grad += (grad.array().rowwise() * t.value(g).row(0).array()).matrix();
        if (t.tracked(g)) t.node(g).grad += grad.cwiseProduct(t.value(x)).colwise().sum();
    });
}

Adam::Adam(std::vector<Param*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (Param* p : params_) {
        m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
}

void Adam::zero_grad() {
    for (Param* p : params_) p->zero_grad();
}

void Adam::step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, step_count_);
    const double bc2 = 1.0 - std::pow(beta2_, step_count_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Param& p = *params_[i];
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
        const Mat m_hat = m_[i] / bc1;
        const Mat v_hat = v_[i] / bc2;
        p.value.array() -= lr_ * m_hat.array() / (v_hat.array().sqrt() + eps_);
    }
}

}  // namespace optarb::nn
