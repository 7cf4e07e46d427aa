#include "screloc/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace screloc::ad {
namespace {

std::uint64_t g_dot_count = 0;

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void reset_dot_count() { g_dot_count = 0; }
std::uint64_t dot_count() { return g_dot_count; }

WindowMap make_window_map(int n, int k) {
    if (n < 1) throw std::invalid_argument("window map needs at least one token");
    if (k < 0) throw std::invalid_argument("window half-width must be >= 0");
    WindowMap wm;
    wm.start.resize(n);
    wm.len.resize(n);
    wm.offset.resize(n);
    for (int i = 0; i < n; ++i) {
        wm.start[i] = std::max(0, i - k);
        const int end = std::min(n - 1, i + k);
        wm.len[i] = end - wm.start[i] + 1;
        wm.offset[i] = wm.total;
        wm.total += wm.len[i];
    }
    return wm;
}

Mat activation_forward(const Mat& x, Activation kind) {
    switch (kind) {
        case Activation::Gelu:
            return x.unaryExpr([](double v) { return gelu(v); });
        case Activation::Softplus:
            return x.unaryExpr([](double v) { return softplus(v); });
        case Activation::Relu:
            return x.cwiseMax(0.0);
    }
    throw std::invalid_argument("unknown activation");
}

Mat activation_derivative(const Mat& x, Activation kind) {
    switch (kind) {
        case Activation::Gelu:
            return x.unaryExpr([](double v) { return gelu_grad(v); });
        case Activation::Softplus:
            return x.unaryExpr([](double v) { return sigmoid(v); });
        case Activation::Relu:
            return x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
    }
    throw std::invalid_argument("unknown activation");
}

Graph::Node& Graph::node(NodeId id) { return nodes_.at(static_cast<std::size_t>(id)); }
const Graph::Node& Graph::node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }

NodeId Graph::push(Mat value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

void Graph::accum(NodeId id, const Mat& g) {
    Node& n = node(id);
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.grad += g;
}

NodeId Graph::input(Mat value) { return push(std::move(value), false); }

NodeId Graph::param(const std::string& name, Mat value) {
    NodeId id = push(std::move(value), true);
    node(id).name = name;
    return id;
}

const Mat& Graph::value(NodeId id) const { return node(id).value; }

const Mat& Graph::grad(NodeId id) const {
    const Node& n = node(id);
    if (n.grad.size() == 0) throw std::logic_error("gradient not populated; run backward() first");
    return n.grad;
}

bool Graph::has_grad(NodeId id) const { return node(id).grad.size() != 0; }

bool Graph::requires_grad(NodeId id) const { return node(id).requires_grad; }

NodeId Graph::matmul(NodeId a, NodeId b) {
    const Mat& A = value(a);
    const Mat& B = value(b);
    if (A.cols() != B.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
    NodeId out = push(A * B, requires_grad(a) || requires_grad(b));
    node(out).back = [this, a, b, out] {
        const Mat& g = node(out).grad;
        if (requires_grad(a)) accum(a, g * value(b).transpose());
        if (requires_grad(b)) accum(b, value(a).transpose() * g);
    };
    return out;
}

NodeId Graph::add(NodeId a, NodeId b) {
    const Mat& A = value(a);
    const Mat& B = value(b);
    if (A.rows() != B.rows() || A.cols() != B.cols()) throw std::invalid_argument("add: shapes differ");
    NodeId out = push(A + B, requires_grad(a) || requires_grad(b));
    node(out).back = [this, a, b, out] {
        const Mat& g = node(out).grad;
        if (requires_grad(a)) accum(a, g);
        if (requires_grad(b)) accum(b, g);
    };
    return out;
}

NodeId Graph::add_row(NodeId a, NodeId row) {
    const Mat& A = value(a);
    const Mat& R = value(row);
    if (R.rows() != 1 || R.cols() != A.cols()) throw std::invalid_argument("add_row: bias must be 1 x cols(a)");
    NodeId out = push(A.rowwise() + R.row(0), requires_grad(a) || requires_grad(row));
    node(out).back = [this, a, row, out] {
        const Mat& g = node(out).grad;
        if (requires_grad(a)) accum(a, g);
        if (requires_grad(row)) accum(row, g.colwise().sum());
    };
    return out;
}

NodeId Graph::scale(NodeId a, double factor) {
    if (!std::isfinite(factor)) throw std::invalid_argument("scale: factor must be finite");
    NodeId out = push(value(a) * factor, requires_grad(a));
    node(out).back = [this, a, out, factor] {
        if (requires_grad(a)) accum(a, node(out).grad * factor);
    };
    return out;
}

NodeId Graph::activation(NodeId a, Activation kind) {
    NodeId out = push(activation_forward(value(a), kind), requires_grad(a));
    node(out).back = [this, a, out, kind] {
        if (requires_grad(a)) accum(a, activation_derivative(value(a), kind).cwiseProduct(node(out).grad));
    };
    return out;
}

NodeId Graph::gather_rows(NodeId a, std::vector<int> rows) {
    const Mat& A = value(a);
    Mat out_val(static_cast<Eigen::Index>(rows.size()), A.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] < 0 || rows[r] >= A.rows()) throw std::invalid_argument("gather_rows: index out of range");
        out_val.row(static_cast<Eigen::Index>(r)) = A.row(rows[r]);
    }
    NodeId out = push(std::move(out_val), requires_grad(a));
    node(out).back = [this, a, out, rows = std::move(rows)] {
        if (!requires_grad(a)) return;
        const Mat& g = node(out).grad;
        Mat da = Mat::Zero(value(a).rows(), value(a).cols());
        for (std::size_t r = 0; r < rows.size(); ++r) da.row(rows[r]) += g.row(static_cast<Eigen::Index>(r));
        accum(a, da);
    };
    return out;
}

NodeId Graph::group_max(NodeId a, std::vector<std::vector<std::uint32_t>> groups) {
    const Mat& A = value(a);
    const Eigen::Index cols = A.cols();
    Mat out_val(static_cast<Eigen::Index>(groups.size()), cols);
    // arg(g, d) = input row that supplied the max; first member wins ties.
    Eigen::Matrix<std::uint32_t, Eigen::Dynamic, Eigen::Dynamic> arg(groups.size(), cols);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (groups[g].empty()) throw std::invalid_argument("group_max: empty group");
        for (std::uint32_t m : groups[g])
            if (m >= A.rows()) throw std::invalid_argument("group_max: row index out of range");
        for (Eigen::Index d = 0; d < cols; ++d) {
            std::uint32_t best = groups[g][0];
            for (std::size_t m = 1; m < groups[g].size(); ++m)
                if (A(groups[g][m], d) > A(best, d)) best = groups[g][m];
            arg(static_cast<Eigen::Index>(g), d) = best;
            out_val(static_cast<Eigen::Index>(g), d) = A(best, d);
        }
    }
    NodeId out = push(std::move(out_val), requires_grad(a));
    node(out).back = [this, a, out, arg = std::move(arg)] {
        if (!requires_grad(a)) return;
        const Mat& g = node(out).grad;
        Mat da = Mat::Zero(value(a).rows(), value(a).cols());
        for (Eigen::Index r = 0; r < g.rows(); ++r)
            for (Eigen::Index d = 0; d < g.cols(); ++d) da(arg(r, d), d) += g(r, d);
        accum(a, da);
    };
    return out;
}

NodeId Graph::sliding_window_attention(NodeId q, NodeId k, NodeId v, NodeId q2, NodeId k2, const WindowMap& wm,
                                       int heads, int bias_dim, bool softmax) {
    const Mat& Q = value(q);
    const Mat& K = value(k);
    const Mat& V = value(v);
    const Eigen::Index n = Q.rows();
    const Eigen::Index dim = Q.cols();
    if (heads < 1 || dim % heads != 0) throw std::invalid_argument("attention: dim must divide into heads");
    if (K.rows() != n || V.rows() != n || K.cols() != dim || V.cols() != dim)
        throw std::invalid_argument("attention: q/k/v shapes differ");
    if (wm.size() != n) throw std::invalid_argument("attention: window map token count mismatch");

    const bool biased = q2 != kNoNode;
    if (biased != (k2 != kNoNode)) throw std::invalid_argument("attention: bias queries and keys go together");
    if (biased) {
        if (bias_dim < 1) throw std::invalid_argument("attention: bias_dim must be >= 1");
        if (value(q2).rows() != n || value(q2).cols() != static_cast<Eigen::Index>(heads) * bias_dim)
            throw std::invalid_argument("attention: bias query shape mismatch");
        if (value(k2).rows() != wm.total || value(k2).cols() != static_cast<Eigen::Index>(heads) * bias_dim)
            throw std::invalid_argument("attention: bias key shape mismatch");
    }

    const Eigen::Index dh = dim / heads;
    const double content_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const double bias_scale = biased ? 1.0 / std::sqrt(static_cast<double>(bias_dim)) : 0.0;

    Mat weights(wm.total, heads);
    Mat out_val = Mat::Zero(n, dim);
    for (Eigen::Index i = 0; i < n; ++i) {
        const int start = wm.start[i];
        const int len = wm.len[i];
        const int off = wm.offset[i];
        for (int h = 0; h < heads; ++h) {
            const auto qi = Q.row(i).segment(h * dh, dh);
            for (int jj = 0; jj < len; ++jj) {
                double logit = qi.dot(K.row(start + jj).segment(h * dh, dh)) * content_scale;
                if (biased)
                    logit += value(q2).row(i).segment(h * bias_dim, bias_dim).dot(
                                 value(k2).row(off + jj).segment(h * bias_dim, bias_dim)) *
                             bias_scale;
                weights(off + jj, h) = logit;
            }
            g_dot_count += static_cast<std::uint64_t>(len);
            if (softmax) {
                double mx = weights(off, h);
                for (int jj = 1; jj < len; ++jj) mx = std::max(mx, weights(off + jj, h));
                double sum = 0.0;
                for (int jj = 0; jj < len; ++jj) {
                    weights(off + jj, h) = std::exp(weights(off + jj, h) - mx);
                    sum += weights(off + jj, h);
                }
                for (int jj = 0; jj < len; ++jj) weights(off + jj, h) /= sum;
            }
            auto oi = out_val.row(i).segment(h * dh, dh);
            for (int jj = 0; jj < len; ++jj) oi += weights(off + jj, h) * V.row(start + jj).segment(h * dh, dh);
        }
    }

    bool any_grad = requires_grad(q) || requires_grad(k) || requires_grad(v);
    if (biased) any_grad = any_grad || requires_grad(q2) || requires_grad(k2);
    NodeId out = push(std::move(out_val), any_grad);
    node(out).back = [this, q, k, v, q2, k2, wm, heads, bias_dim, softmax, biased, content_scale, bias_scale,
                      weights = std::move(weights), out] {
        const Mat& g = node(out).grad;
        const Mat& Q = value(q);
        const Mat& K = value(k);
        const Mat& V = value(v);
        const Eigen::Index dh = Q.cols() / heads;
        Mat dQ = Mat::Zero(Q.rows(), Q.cols());
        Mat dK = Mat::Zero(K.rows(), K.cols());
        Mat dV = Mat::Zero(V.rows(), V.cols());
        Mat dQ2, dK2;
        if (biased) {
            dQ2 = Mat::Zero(value(q2).rows(), value(q2).cols());
            dK2 = Mat::Zero(value(k2).rows(), value(k2).cols());
        }
        Eigen::VectorXd dw;
        for (Eigen::Index i = 0; i < Q.rows(); ++i) {
            const int start = wm.start[i];
            const int len = wm.len[i];
            const int off = wm.offset[i];
            for (int h = 0; h < heads; ++h) {
                const auto gi = g.row(i).segment(h * dh, dh);
                dw.resize(len);
                for (int jj = 0; jj < len; ++jj) {
                    dw[jj] = gi.dot(V.row(start + jj).segment(h * dh, dh));
                    dV.row(start + jj).segment(h * dh, dh) += weights(off + jj, h) * gi;
                }
                if (softmax) {
                    double mix = 0.0;
                    for (int jj = 0; jj < len; ++jj) mix += weights(off + jj, h) * dw[jj];
                    for (int jj = 0; jj < len; ++jj) dw[jj] = weights(off + jj, h) * (dw[jj] - mix);
                }
                const auto qi = Q.row(i).segment(h * dh, dh);
                for (int jj = 0; jj < len; ++jj) {
                    dQ.row(i).segment(h * dh, dh) += dw[jj] * content_scale * K.row(start + jj).segment(h * dh, dh);
                    dK.row(start + jj).segment(h * dh, dh) += dw[jj] * content_scale * qi;
                    if (biased) {
                        dQ2.row(i).segment(h * bias_dim, bias_dim) +=
                            dw[jj] * bias_scale * value(k2).row(off + jj).segment(h * bias_dim, bias_dim);
                        dK2.row(off + jj).segment(h * bias_dim, bias_dim) +=
                            dw[jj] * bias_scale * value(q2).row(i).segment(h * bias_dim, bias_dim);
                    }
                }
            }
        }
        if (requires_grad(q)) accum(q, dQ);
        if (requires_grad(k)) accum(k, dK);
        if (requires_grad(v)) accum(v, dV);
        if (biased && requires_grad(q2)) accum(q2, dQ2);
        if (biased && requires_grad(k2)) accum(k2, dK2);
    };
    return out;
}

NodeId Graph::l1_loss(NodeId pred, Mat target) {
    const Mat& P = value(pred);
    if (P.rows() != target.rows() || P.cols() != target.cols())
        throw std::invalid_argument("l1_loss: prediction and target shapes differ");
    if (P.size() == 0) throw std::invalid_argument("l1_loss: empty prediction");
    // Mean over rows of the per-row 1-norm, not over individual elements.
    const double inv_n = 1.0 / static_cast<double>(P.rows());
    Mat loss(1, 1);
    loss(0, 0) = (P - target).cwiseAbs().sum() * inv_n;
    NodeId out = push(std::move(loss), requires_grad(pred));
    node(out).back = [this, pred, out, target = std::move(target), inv_n] {
        if (!requires_grad(pred)) return;
        const double g = node(out).grad(0, 0);
        // subgradient 0 exactly at the kink
        Mat da = (value(pred) - target).unaryExpr([](double r) { return r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0); });
        accum(pred, da * (g * inv_n));
    };
    return out;
}

void Graph::backward(NodeId loss) {
    Node& ln = node(loss);
    if (ln.value.rows() != 1 || ln.value.cols() != 1) throw std::invalid_argument("backward: loss must be scalar");
    for (Node& n : nodes_) n.grad.resize(0, 0);
    ln.grad = Mat::Ones(1, 1);
    for (NodeId id = loss; id >= 0; --id) {
        Node& n = node(id);
        if (n.back && n.grad.size() != 0 && n.requires_grad) n.back();
    }
}

}  // namespace screloc::ad
