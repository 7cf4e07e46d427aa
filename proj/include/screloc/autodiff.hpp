#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace screloc::ad {

using Mat = Eigen::MatrixXd;

enum class Activation { Gelu, Softplus, Relu };

inline constexpr int kNoNode = -1;
using NodeId = int;

/// Clamped neighbourhoods [max(0,i-k), min(n-1,i+k)] for each of n tokens,
/// flattened back to back. offset[i] is the first flat slot of window i.
struct WindowMap {
    std::vector<int> start;
    std::vector<int> len;
    std::vector<int> offset;
    int total = 0;

    int size() const { return static_cast<int>(start.size()); }
};

WindowMap make_window_map(int n, int k);

/// Counts query-key content dot products performed by
/// sliding_window_attention forward passes since the last reset.
void reset_dot_count();
std::uint64_t dot_count();

/// Reverse-mode tape over dense matrices. Nodes are appended in creation
/// order, which is already a topological order, so backward() is a single
/// reverse sweep. One graph per forward pass; not thread-safe.
class Graph {
public:
    Graph() = default;
    // Backward closures capture the graph address, so it must stay put.
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = delete;
    Graph& operator=(Graph&&) = delete;

    NodeId input(Mat value);
    NodeId param(const std::string& name, Mat value);

    const Mat& value(NodeId id) const;
    const Mat& grad(NodeId id) const;
    /// False until backward() has routed something into the node.
    bool has_grad(NodeId id) const;
    bool requires_grad(NodeId id) const;
    std::size_t size() const { return nodes_.size(); }

    NodeId matmul(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    /// Adds a 1 x D bias row to every row of a V x D node.
    NodeId add_row(NodeId a, NodeId row);
    NodeId scale(NodeId a, double factor);
    NodeId activation(NodeId a, Activation kind);
    NodeId gather_rows(NodeId a, std::vector<int> rows);
    /// Componentwise max over row groups; ties resolve to the first member.
    NodeId group_max(NodeId a, std::vector<std::vector<std::uint32_t>> groups);

    /// Windowed attention with a per-pair additive bias channel.
    ///   logits(i,j,h) = q_h(i).k_h(j) / sqrt(D/H) + q2_h(i).k2_h(i,j) / sqrt(D2)
    ///   out(i,h)      = sum_j w(i,j,h) v_h(j)
    /// where w is softmax(logits) over window j when `softmax`, else the raw
    /// logits. q,k,v are V x D split into H heads; q2 is V x (H*D2); k2 holds
    /// one row per flattened window slot, wm.total x (H*D2). Pass kNoNode for
    /// q2/k2 to drop the bias channel.
    NodeId sliding_window_attention(NodeId q, NodeId k, NodeId v, NodeId q2, NodeId k2, const WindowMap& wm,
                                    int heads, int bias_dim, bool softmax);

    /// Mean over rows of the 1-norm of the row residual, as a 1x1 node.
    NodeId l1_loss(NodeId pred, Mat target);

    /// Seeds d(loss) = 1 and accumulates gradients through the tape.
    void backward(NodeId loss);

private:
    struct Node {
        Mat value;
        Mat grad;
        bool requires_grad = false;
        std::function<void()> back;
        std::string name;
    };

    NodeId push(Mat value, bool requires_grad);
    void accum(NodeId id, const Mat& g);
    Node& node(NodeId id);
    const Node& node(NodeId id) const;

    std::vector<Node> nodes_;
};

Mat activation_forward(const Mat& x, Activation kind);
Mat activation_derivative(const Mat& x, Activation kind);

}  // namespace screloc::ad
