#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "kdcode/tensor.hpp"

namespace kdc::diff {

enum class OpKind : std::uint8_t {
    // leaves
    Parameter,
    Input,
    IndexInput,
    Constant,
    // differentiable operators
    MatMul,
    Add,
    Subtract,
    Multiply,
    Scale,
    RowGather,
    Softmax,
    StraightThrough,
    Sigmoid,
    Tanh,
    Relu,
    Sum,
    Mean,
    SquaredError,
    SoftmaxCrossEntropy,
    Concat,
    StopGradient,
    // shape plumbing and the entropy penalty
    Reshape,
    SliceCols,
    Entropy,
};

const char* op_name(OpKind kind) noexcept;

struct Node {
    std::uint32_t id = UINT32_MAX;
    bool valid() const noexcept { return id != UINT32_MAX; }
    friend bool operator==(Node, Node) = default;
};

/// Named trainable tensors. Ordered so that iteration is deterministic.
using ParamStore = std::map<std::string, Tensor>;

/// Values bound to placeholders for one evaluation.
struct Feed {
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::vector<std::size_t>> indices;

    Feed& set(const std::string& name, Tensor t) {
        tensors[name] = std::move(t);
        return *this;
    }
    Feed& set_index(const std::string& name, std::vector<std::size_t> idx) {
        indices[name] = std::move(idx);
        return *this;
    }
};

class Graph;

/// Forward values of one evaluation. Holds no reference to the parameter
/// store, only to the graph structure.
class Evaluation {
public:
    const Tensor& operator[](Node n) const;
    bool computed(Node n) const { return n.id < computed_.size() && computed_[n.id]; }
    double scalar(Node n) const { return (*this)[n][0]; }
    /// Value of a node that was given a name with Graph::name().
    const Tensor& output(const std::string& name) const;

private:
    friend class Graph;
    const Graph* graph_ = nullptr;
    std::vector<Tensor> values_;
    std::vector<bool> computed_;
    std::vector<const std::vector<std::size_t>*> index_;
};

struct Gradients {
    std::map<std::string, Tensor> dense;
    /// For parameters consumed only through row gathers: the sorted set of
    /// first-axis rows that received gradient. Rows not listed are exactly 0.
    std::map<std::string, std::vector<std::size_t>> touched_rows;

    const Tensor& operator[](const std::string& name) const;
};

/// Define-then-run computation graph over dense double tensors.
///
/// Nodes are appended in topological order. Placeholder extents of 0 match
/// any extent, so batch sizes can vary between evaluations. Parameter values
/// live in a ParamStore; the graph keeps a default store that training
/// updates in place, but evaluation may be pointed at any compatible store.
///
/// A built graph is never mutated by evaluate() or gradient(), so a frozen
/// graph can be evaluated from several threads at once.
class Graph {
public:
    Node parameter(const std::string& name, Tensor init);
    Node input(const std::string& name, Shape shape);
    Node index_input(const std::string& name);
    Node constant(Tensor value);

    Node matmul(Node a, Node b);
    /// b may match a's shape, be a row vector of a's last extent, or a scalar.
    Node add(Node a, Node b);
    Node subtract(Node a, Node b);
    /// b may match a's shape or be a scalar.
    Node multiply(Node a, Node b);
    Node scale(Node a, double s);
    /// Rows (first-axis slices) of `source` selected by an index input.
    Node gather(Node source, Node index);
    /// Rowwise softmax(x / tau) on the last axis; tau is a [1] node and
    /// receives no gradient.
    Node softmax(Node x, Node tau);
    Node softmax(Node x, double tau);
    /// Forward one_hot(argmax x) on the last axis; backward passes the
    /// upstream gradient through unchanged.
    Node straight_through(Node x);
    Node sigmoid(Node x);
    Node tanh(Node x);
    Node relu(Node x);
    Node sum(Node x);
    Node mean(Node x);
    /// sum((a - b)^2) as a [1] scalar.
    Node squared_error(Node a, Node b);
    /// Mean over rows of -log softmax(logits)[label].
    Node softmax_cross_entropy(Node logits, Node labels);
    /// Concatenation along the last axis.
    Node concat(Node a, Node b);
    Node stop_gradient(Node x);
    /// A leading 0 in `shape` is inferred from the element count.
    Node reshape(Node x, Shape shape);
    Node slice_cols(Node x, std::size_t begin, std::size_t count);
    /// -sum p log p over every entry, with a 1e-12 floor inside the log.
    Node entropy(Node p);

    void name(Node n, const std::string& label);
    Node named(const std::string& label) const;
    Node parameter_node(const std::string& name) const;
    bool has_parameter(const std::string& name) const;

    ParamStore& params() noexcept { return params_; }
    const ParamStore& params() const noexcept { return params_; }

    std::size_t size() const noexcept { return nodes_.size(); }
    OpKind kind(Node n) const { return nodes_.at(n.id).kind; }
    std::string describe(Node n) const;
    std::vector<Node> inputs(Node n) const;

    /// Evaluates the ancestors of `targets` (every node when empty).
    Evaluation evaluate(const Feed& feed, std::span<const Node> targets = {}) const;
    Evaluation evaluate(const ParamStore& params, const Feed& feed, std::span<const Node> targets = {}) const;
    Evaluation evaluate(const Feed& feed, Node target) const { return evaluate(feed, std::span<const Node>(&target, 1)); }

    /// Reverse accumulation of d loss / d parameter for each name in `wrt`.
    Gradients gradient(const Evaluation& eval, Node loss, std::span<const std::string> wrt) const;
    Gradients gradient(const Evaluation& eval, Node loss, std::initializer_list<std::string> wrt) const {
        return gradient(eval, loss, std::span<const std::string>(wrt.begin(), wrt.size()));
    }

    /// Max relative error |a - c| / max(|a| + |c|, 1e-6 (1 + |f|)) between the
    /// analytic gradient a and the five-point central difference c with step
    /// epsilon, over every entry of `param`; f is the loss value. Fails when a
    /// straight-through or stop-gradient node lies between the parameter and
    /// the loss.
    double finite_difference_check(const Feed& feed, Node loss, const std::string& param, double epsilon) const;

private:
    struct NodeData {
        OpKind kind;
        std::vector<std::uint32_t> in;
        std::string label;
        Shape shape;       // declared shape for leaves, target shape for Reshape
        Tensor value;      // constants
        double scalar = 0; // Scale factor
        std::size_t begin = 0, count = 0;
    };

    Node push(NodeData data);
    void check_node(Node n) const;
    void forward(const NodeData& nd, std::uint32_t id, const ParamStore& params, const Feed& feed,
                 Evaluation& ev) const;
    std::vector<bool> on_path(std::span<const std::uint32_t> sources, std::uint32_t sink) const;

    std::vector<NodeData> nodes_;
    ParamStore params_;
    std::map<std::string, std::uint32_t> param_nodes_;
    std::map<std::string, std::uint32_t> labels_;
};

}  // namespace kdc::diff
