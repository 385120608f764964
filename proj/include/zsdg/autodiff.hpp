#pragma once

// Tape-based reverse-mode differentiation over dense double tensors.
//
// A Graph owns every node created while evaluating an objective. Nodes are
// appended in evaluation order, so a node's inputs always precede it and the
// reverse sweep in backward() is a plain reverse iteration. Graphs are
// single-use: build, backward once, read gradients, discard.

#include "zsdg/tensor.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace zsdg::ad {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Tensor& grad() const;
    const Shape& shape() const { return value().shape(); }
    double item() const { return value().item(); }

    Graph& graph() const { return *graph_; }
    std::size_t id() const { return id_; }
    bool valid() const { return graph_ != nullptr; }

private:
    friend class Graph;
    Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

class Graph {
public:
    using Backprop = std::function<void(Graph&, std::size_t self)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Leaf that never receives a gradient (inputs, targets).
    Var constant(Tensor value);
    /// Leaf whose gradient is populated by backward().
    Var parameter(Tensor value);

    /// Reverse sweep from a 1x1 root. A second call without zero_grad() is
    /// rejected rather than accumulating.
    void backward(Var root);
    void zero_grad();
    bool backward_done() const { return backward_done_; }

    std::size_t size() const { return nodes_.size(); }
    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    const Tensor& grad(std::size_t id) const;
    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

    // Used by operation implementations.
    Var emit(Tensor value, std::vector<std::size_t> inputs, Backprop backprop);
    Tensor& grad_ref(std::size_t id) { return grads_[id]; }

private:
    struct Node {
        Tensor value;
        std::vector<std::size_t> inputs;
        Backprop backprop;
        bool needs_grad = false;
    };

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    bool backward_done_ = false;
};

// Elementwise and structural operations. All reject non-conformable shapes
// with a ShapeError naming both shapes before touching any values.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double factor);
Var mul(Var a, Var b);
Var matmul(Var a, Var b);
/// a (m x n) plus a broadcast row (1 x n); the bias step of a dense layer.
Var add_row(Var a, Var row);
Var relu(Var a);
Var softplus(Var a);
Var tanh(Var a);
/// Clip to [0, 1]; gradient is passed through inside the interval, zero outside.
Var clamp01(Var a);
Var reshape(Var a, Shape shape);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
/// Column means, (m x n) -> (1 x n).
Var mean_rows(Var a);
Var mean(Var a);
Var sum(Var a);

/// Mean over all elements of squared differences.
Var mse_loss(Var pred, Var target);
/// Batch mean of -log softmax(logits)[label], max-subtracted.
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels);

/// Plain (graph-free) forward evaluation of the cross-entropy used by the
/// operation above; shared by callers that only need the value.
double cross_entropy_value(const Tensor& logits, std::span<const std::size_t> labels);

}  // namespace zsdg::ad
