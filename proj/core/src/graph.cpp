#include "kdcode/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace kdc::diff {

namespace {

constexpr double kEntropyFloor = 1e-12;

bool same_shape_or_wildcard(const Shape& declared, const Shape& actual) {
    if (declared.size() != actual.size()) return false;
    for (std::size_t i = 0; i < declared.size(); ++i) {
        if (declared[i] != 0 && declared[i] != actual[i]) return false;
    }
    return true;
}

enum class Broadcast { Same, Row, Scalar };

Broadcast classify(const Tensor& a, const Tensor& b, bool allow_row) {
    if (a.shape() == b.shape()) return Broadcast::Same;
    if (b.size() == 1) return Broadcast::Scalar;
    if (allow_row && b.size() == a.cols() && (b.rank() == 1 || b.rows() == 1)) return Broadcast::Row;
    throw Error("operand shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                " are not compatible");
}

// Reduces an upstream gradient of a's shape to b's shape under `mode`.
Tensor reduce_to(const Tensor& g, const Shape& b_shape, Broadcast mode) {
    if (mode == Broadcast::Same) return g;
    Tensor out(b_shape);
    if (mode == Broadcast::Scalar) {
        double s = 0;
        for (double v : g.values()) s += v;
        out[0] = s;
        return out;
    }
    const std::size_t n = g.cols();
    for (std::size_t r = 0; r < g.rows(); ++r) {
        auto row = g.row(r);
        for (std::size_t j = 0; j < n; ++j) out[j] += row[j];
    }
    return out;
}

double b_at(const Tensor& b, Broadcast mode, std::size_t i, std::size_t cols) {
    switch (mode) {
        case Broadcast::Same: return b[i];
        case Broadcast::Row: return b[i % cols];
        case Broadcast::Scalar: return b[0];
    }
    return 0;
}

void accumulate(Tensor& slot, const Tensor& g) {
    if (slot.empty() && slot.shape().empty()) {
        slot = g;
        return;
    }
    kernels::add_inplace(slot, g);
}

}  // namespace

const char* op_name(OpKind kind) noexcept {
    switch (kind) {
        case OpKind::Parameter: return "parameter";
        case OpKind::Input: return "input";
        case OpKind::IndexInput: return "index-input";
        case OpKind::Constant: return "constant";
        case OpKind::MatMul: return "matmul";
        case OpKind::Add: return "add";
        case OpKind::Subtract: return "subtract";
        case OpKind::Multiply: return "multiply";
        case OpKind::Scale: return "scale";
        case OpKind::RowGather: return "row-gather";
        case OpKind::Softmax: return "softmax";
        case OpKind::StraightThrough: return "straight-through";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::Tanh: return "tanh";
        case OpKind::Relu: return "relu";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::SquaredError: return "squared-error";
        case OpKind::SoftmaxCrossEntropy: return "softmax-cross-entropy";
        case OpKind::Concat: return "concat";
        case OpKind::StopGradient: return "stop-gradient";
        case OpKind::Reshape: return "reshape";
        case OpKind::SliceCols: return "slice-cols";
        case OpKind::Entropy: return "entropy";
    }
    return "?";
}

const Tensor& Evaluation::operator[](Node n) const {
    if (!computed(n)) throw Error("evaluation: node #" + std::to_string(n.id) + " was not evaluated");
    return values_[n.id];
}

const Tensor& Evaluation::output(const std::string& name) const { return (*this)[graph_->named(name)]; }

const Tensor& Gradients::operator[](const std::string& name) const {
    auto it = dense.find(name);
    if (it == dense.end()) throw Error("gradients: no gradient for '" + name + "'");
    return it->second;
}

// ---------------------------------------------------------------------------
// construction

Node Graph::push(NodeData data) {
    for (auto in : data.in) {
        if (in >= nodes_.size()) throw Error("graph: operand #" + std::to_string(in) + " does not exist");
    }
    nodes_.push_back(std::move(data));
    return Node{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Graph::check_node(Node n) const {
    if (n.id >= nodes_.size()) throw Error("graph: node #" + std::to_string(n.id) + " does not exist");
}

Node Graph::parameter(const std::string& name, Tensor init) {
    if (param_nodes_.count(name)) throw Error("graph: duplicate parameter '" + name + "'");
    NodeData nd{OpKind::Parameter, {}, name, init.shape(), {}, 0, 0, 0};
    params_[name] = std::move(init);
    Node n = push(std::move(nd));
    param_nodes_[name] = n.id;
    return n;
}

Node Graph::input(const std::string& name, Shape shape) {
    return push({OpKind::Input, {}, name, std::move(shape), {}, 0, 0, 0});
}

Node Graph::index_input(const std::string& name) { return push({OpKind::IndexInput, {}, name, {}, {}, 0, 0, 0}); }

Node Graph::constant(Tensor value) {
    Shape s = value.shape();
    return push({OpKind::Constant, {}, {}, std::move(s), std::move(value), 0, 0, 0});
}

Node Graph::matmul(Node a, Node b) { return push({OpKind::MatMul, {a.id, b.id}, {}, {}, {}, 0, 0, 0}); }
Node Graph::add(Node a, Node b) { return push({OpKind::Add, {a.id, b.id}, {}, {}, {}, 0, 0, 0}); }
Node Graph::subtract(Node a, Node b) { return push({OpKind::Subtract, {a.id, b.id}, {}, {}, {}, 0, 0, 0}); }
Node Graph::multiply(Node a, Node b) { return push({OpKind::Multiply, {a.id, b.id}, {}, {}, {}, 0, 0, 0}); }
Node Graph::scale(Node a, double s) { return push({OpKind::Scale, {a.id}, {}, {}, {}, s, 0, 0}); }

Node Graph::gather(Node source, Node index) {
    check_node(index);
    if (kind(index) != OpKind::IndexInput) throw Error("graph: gather index must be an index input");
    return push({OpKind::RowGather, {source.id, index.id}, {}, {}, {}, 0, 0, 0});
}

Node Graph::softmax(Node x, Node tau) { return push({OpKind::Softmax, {x.id, tau.id}, {}, {}, {}, 0, 0, 0}); }

Node Graph::softmax(Node x, double tau) {
    if (!(tau > 0)) throw Error("graph: softmax temperature must be positive");
    return softmax(x, constant(Tensor::scalar(tau)));
}

Node Graph::straight_through(Node x) { return push({OpKind::StraightThrough, {x.id}, {}, {}, {}, 0, 0, 0}); }
Node Graph::sigmoid(Node x) { return push({OpKind::Sigmoid, {x.id}, {}, {}, {}, 0, 0, 0}); }
Node Graph::tanh(Node x) { return push({OpKind::Tanh, {x.id}, {}, {}, {}, 0, 0, 0}); }
Node Graph::relu(Node x) { return push({OpKind::Relu, {x.id}, {}, {}, {}, 0, 0, 0}); }
Node Graph::sum(Node x) { return push({OpKind::Sum, {x.id}, {}, {}, {}, 0, 0, 0}); }
Node Graph::mean(Node x) { return push({OpKind::Mean, {x.id}, {}, {}, {}, 0, 0, 0}); }
Node Graph::squared_error(Node a, Node b) { return push({OpKind::SquaredError, {a.id, b.id}, {}, {}, {}, 0, 0, 0}); }

Node Graph::softmax_cross_entropy(Node logits, Node labels) {
    check_node(labels);
    if (kind(labels) != OpKind::IndexInput) throw Error("graph: cross-entropy labels must be an index input");
    return push({OpKind::SoftmaxCrossEntropy, {logits.id, labels.id}, {}, {}, {}, 0, 0, 0});
}

Node Graph::concat(Node a, Node b) { return push({OpKind::Concat, {a.id, b.id}, {}, {}, {}, 0, 0, 0}); }
Node Graph::stop_gradient(Node x) { return push({OpKind::StopGradient, {x.id}, {}, {}, {}, 0, 0, 0}); }
Node Graph::reshape(Node x, Shape shape) {
    return push({OpKind::Reshape, {x.id}, {}, std::move(shape), {}, 0, 0, 0});
}
Node Graph::slice_cols(Node x, std::size_t begin, std::size_t count) {
    return push({OpKind::SliceCols, {x.id}, {}, {}, {}, 0, begin, count});
}
Node Graph::entropy(Node p) { return push({OpKind::Entropy, {p.id}, {}, {}, {}, 0, 0, 0}); }

void Graph::name(Node n, const std::string& label) {
    check_node(n);
    labels_[label] = n.id;
    if (nodes_[n.id].label.empty()) nodes_[n.id].label = label;
}

Node Graph::named(const std::string& label) const {
    auto it = labels_.find(label);
    if (it == labels_.end()) throw Error("graph: no node named '" + label + "'");
    return Node{it->second};
}

Node Graph::parameter_node(const std::string& name) const {
    auto it = param_nodes_.find(name);
    if (it == param_nodes_.end()) throw Error("graph: parameter '" + name + "' is not in the graph");
    return Node{it->second};
}

bool Graph::has_parameter(const std::string& name) const { return param_nodes_.count(name) != 0; }

std::string Graph::describe(Node n) const {
    const auto& nd = nodes_.at(n.id);
    std::string s = "#" + std::to_string(n.id) + " " + op_name(nd.kind);
    if (!nd.label.empty()) s += " '" + nd.label + "'";
    return s;
}

std::vector<Node> Graph::inputs(Node n) const {
    std::vector<Node> out;
    for (auto id : nodes_.at(n.id).in) out.push_back(Node{id});
    return out;
}

// ---------------------------------------------------------------------------
// forward

Evaluation Graph::evaluate(const Feed& feed, std::span<const Node> targets) const {
    return evaluate(params_, feed, targets);
}

Evaluation Graph::evaluate(const ParamStore& params, const Feed& feed, std::span<const Node> targets) const {
    Evaluation ev;
    ev.graph_ = this;
    ev.values_.resize(nodes_.size());
    ev.computed_.assign(nodes_.size(), false);
    ev.index_.assign(nodes_.size(), nullptr);

    std::vector<bool> needed(nodes_.size(), targets.empty());
    for (Node t : targets) {
        check_node(t);
        needed[t.id] = true;
    }
    if (!targets.empty()) {
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            if (!needed[i]) continue;
            for (auto in : nodes_[i].in) needed[in] = true;
        }
    }
    for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
        if (!needed[i]) continue;
        try {
            forward(nodes_[i], i, params, feed, ev);
        } catch (const Error& e) {
            throw Error("evaluate: node " + describe(Node{i}) + ": " + e.what());
        }
        if (nodes_[i].kind != OpKind::IndexInput && !ev.values_[i].all_finite()) {
            throw Error("evaluate: node " + describe(Node{i}) + " produced a non-finite value");
        }
        ev.computed_[i] = true;
    }
    return ev;
}

void Graph::forward(const NodeData& nd, std::uint32_t id, const ParamStore& params, const Feed& feed,
                    Evaluation& ev) const {
    auto in = [&](std::size_t k) -> const Tensor& { return ev.values_[nd.in[k]]; };
    Tensor& out = ev.values_[id];

    switch (nd.kind) {
        case OpKind::Parameter: {
            auto it = params.find(nd.label);
            if (it == params.end()) throw Error("parameter store has no '" + nd.label + "'");
            if (it->second.shape() != nd.shape) {
                throw Error("parameter shape " + shape_string(it->second.shape()) + " differs from declared " +
                            shape_string(nd.shape));
            }
            out = it->second;
            return;
        }
        case OpKind::Input: {
            auto it = feed.tensors.find(nd.label);
            if (it == feed.tensors.end()) throw Error("no value fed for input '" + nd.label + "'");
            if (!same_shape_or_wildcard(nd.shape, it->second.shape())) {
                throw Error("fed shape " + shape_string(it->second.shape()) + " does not match placeholder " +
                            shape_string(nd.shape));
            }
            out = it->second;
            return;
        }
        case OpKind::IndexInput: {
            auto it = feed.indices.find(nd.label);
            if (it == feed.indices.end()) throw Error("no indices fed for '" + nd.label + "'");
            ev.index_[id] = &it->second;
            out = Tensor({1}, {static_cast<double>(it->second.size())});
            return;
        }
        case OpKind::Constant: out = nd.value; return;
        case OpKind::MatMul: {
            if (in(0).rank() != 2 || in(1).rank() != 2) throw Error("matmul operands must be rank 2");
            out = kernels::matmul(in(0), in(1));
            return;
        }
        case OpKind::Add:
        case OpKind::Subtract: {
            const auto mode = classify(in(0), in(1), true);
            out = in(0);
            const double sign = nd.kind == OpKind::Add ? 1.0 : -1.0;
            const std::size_t cols = out.cols();
            for (std::size_t i = 0; i < out.size(); ++i) {
                if (sign > 0)
                    out[i] += b_at(in(1), mode, i, cols);
                else
                    out[i] -= b_at(in(1), mode, i, cols);
            }
            return;
        }
        case OpKind::Multiply: {
            const auto mode = classify(in(0), in(1), false);
            out = in(0);
            const std::size_t cols = out.cols();
            for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b_at(in(1), mode, i, cols);
            return;
        }
        case OpKind::Scale: {
            out = in(0);
            for (double& v : out.values()) v *= nd.scalar;
            return;
        }
        case OpKind::RowGather: out = kernels::gather_rows(in(0), *ev.index_[nd.in[1]]); return;
        case OpKind::Softmax: {
            if (in(1).size() != 1) throw Error("temperature must be a scalar");
            const double tau = in(1)[0];
            if (!(tau > 0)) throw Error("temperature must be positive");
            out = kernels::softmax(in(0), tau);
            return;
        }
        case OpKind::StraightThrough: out = kernels::argmax_one_hot(in(0)); return;
        case OpKind::Sigmoid:
            out = in(0);
            for (double& v : out.values()) v = kernels::sigmoid(v);
            return;
        case OpKind::Tanh:
            out = in(0);
            for (double& v : out.values()) v = std::tanh(v);
            return;
        case OpKind::Relu:
            out = in(0);
            for (double& v : out.values()) v = v > 0 ? v : 0.0;
            return;
        case OpKind::Sum:
        case OpKind::Mean: {
            double s = 0;
            for (double v : in(0).values()) s += v;
            if (nd.kind == OpKind::Mean) {
                if (in(0).size() == 0) throw Error("mean of an empty tensor");
                s /= static_cast<double>(in(0).size());
            }
            out = Tensor::scalar(s);
            return;
        }
        case OpKind::SquaredError: {
            if (in(0).shape() != in(1).shape()) {
                throw Error("squared-error operands differ: " + shape_string(in(0).shape()) + " vs " +
                            shape_string(in(1).shape()));
            }
            double s = 0;
            for (std::size_t i = 0; i < in(0).size(); ++i) {
                const double d = in(0)[i] - in(1)[i];
                s += d * d;
            }
            out = Tensor::scalar(s);
            return;
        }
        case OpKind::SoftmaxCrossEntropy: {
            const auto& labels = *ev.index_[nd.in[1]];
            const Tensor& logits = in(0);
            if (logits.rank() != 2 || labels.size() != logits.rows()) {
                throw Error("cross-entropy expects [B, F] logits and B labels");
            }
            if (logits.rows() == 0) throw Error("cross-entropy over an empty batch");
            const Tensor p = kernels::softmax(logits, 1.0);
            double s = 0;
            for (std::size_t r = 0; r < logits.rows(); ++r) {
                if (labels[r] >= logits.cols()) throw Error("label out of range");
                s -= std::log(std::max(p.at(r, labels[r]), 1e-300));
            }
            out = Tensor::scalar(s / static_cast<double>(logits.rows()));
            return;
        }
        case OpKind::Concat: {
            const Tensor &a = in(0), &b = in(1);
            if (a.rows() != b.rows() || a.rank() != b.rank()) throw Error("concat operands have different rows");
            Shape s = a.shape();
            s.back() = a.cols() + b.cols();
            out = Tensor(s);
            for (std::size_t r = 0; r < a.rows(); ++r) {
                std::copy(a.row(r).begin(), a.row(r).end(), out.row(r).begin());
                std::copy(b.row(r).begin(), b.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(a.cols()));
            }
            return;
        }
        case OpKind::StopGradient: out = in(0); return;
        case OpKind::Reshape: {
            Shape s = nd.shape;
            if (!s.empty() && s[0] == 0) {
                std::size_t rest = 1;
                for (std::size_t i = 1; i < s.size(); ++i) rest *= s[i];
                if (rest == 0 || in(0).size() % rest) throw Error("cannot infer reshape extent");
                s[0] = in(0).size() / rest;
            }
            out = in(0).reshaped(std::move(s));
            return;
        }
        case OpKind::SliceCols: {
            const Tensor& a = in(0);
            if (nd.begin + nd.count > a.cols()) throw Error("column slice out of range");
            Shape s = a.shape();
            s.back() = nd.count;
            out = Tensor(s);
            for (std::size_t r = 0; r < a.rows(); ++r) {
                auto src = a.row(r);
                std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(nd.begin), nd.count, out.row(r).begin());
            }
            return;
        }
        case OpKind::Entropy: {
            double h = 0;
            for (double p : in(0).values()) {
                if (p < 0) throw Error("entropy of a negative probability");
                if (p > 0) h -= p * std::log(std::max(p, kEntropyFloor));
            }
            out = Tensor::scalar(h);
            return;
        }
    }
}

// ---------------------------------------------------------------------------
// backward

std::vector<bool> Graph::on_path(std::span<const std::uint32_t> sources, std::uint32_t sink) const {
    std::vector<bool> down(nodes_.size(), false);
    for (auto s : sources) down[s] = true;
    for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
        if (down[i]) continue;
        const auto& nd = nodes_[i];
        if (nd.kind == OpKind::IndexInput) continue;
        for (std::size_t k = 0; k < nd.in.size(); ++k) {
            // temperature operand of softmax is not differentiated
            if (nd.kind == OpKind::Softmax && k == 1) continue;
            if (down[nd.in[k]]) {
                down[i] = true;
                break;
            }
        }
    }
    std::vector<bool> up(nodes_.size(), false);
    up[sink] = true;
    for (std::size_t i = sink + 1; i-- > 0;) {
        if (!up[i]) continue;
        for (auto in : nodes_[i].in) up[in] = true;
    }
    std::vector<bool> path(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) path[i] = down[i] && up[i];
    return path;
}

Gradients Graph::gradient(const Evaluation& eval, Node loss, std::span<const std::string> wrt) const {
    check_node(loss);
    if (eval.graph_ != this) throw Error("gradient: evaluation belongs to a different graph");
    const Tensor& lv = eval[loss];
    if (lv.size() != 1) throw Error("gradient: loss node " + describe(loss) + " is not scalar");

    std::vector<std::uint32_t> sources;
    for (const auto& name : wrt) sources.push_back(parameter_node(name).id);
    const auto path = on_path(sources, loss.id);

    std::vector<Tensor> adj(nodes_.size());
    adj[loss.id] = Tensor(lv.shape(), 1.0);

    for (std::size_t i = loss.id + 1; i-- > 0;) {
        if (!path[i] || adj[i].size() == 0) continue;
        const auto& nd = nodes_[i];
        const Tensor& g = adj[i];
        const Tensor& y = eval.values_[i];
        auto x = [&](std::size_t k) -> const Tensor& { return eval.values_[nd.in[k]]; };
        auto wants = [&](std::size_t k) { return path[nd.in[k]]; };
        auto push_grad = [&](std::size_t k, const Tensor& t) { accumulate(adj[nd.in[k]], t); };

        switch (nd.kind) {
            case OpKind::Parameter:
            case OpKind::Input:
            case OpKind::IndexInput:
            case OpKind::Constant:
            case OpKind::StopGradient: break;
            case OpKind::MatMul:
                if (wants(0)) push_grad(0, kernels::matmul_nt(g, x(1)));
                if (wants(1)) push_grad(1, kernels::matmul_tn(x(0), g));
                break;
            case OpKind::Add:
            case OpKind::Subtract: {
                if (wants(0)) push_grad(0, g);
                if (wants(1)) {
                    const auto mode = classify(x(0), x(1), true);
                    Tensor gb = reduce_to(g, x(1).shape(), mode);
                    if (nd.kind == OpKind::Subtract) {
                        for (double& v : gb.values()) v = -v;
                    }
                    push_grad(1, gb);
                }
                break;
            }
            case OpKind::Multiply: {
                const auto mode = classify(x(0), x(1), false);
                const std::size_t cols = g.cols();
                if (wants(0)) {
                    Tensor ga = g;
                    for (std::size_t j = 0; j < ga.size(); ++j) ga[j] *= b_at(x(1), mode, j, cols);
                    push_grad(0, ga);
                }
                if (wants(1)) {
                    Tensor gb = g;
                    for (std::size_t j = 0; j < gb.size(); ++j) gb[j] *= x(0)[j];
                    push_grad(1, reduce_to(gb, x(1).shape(), mode));
                }
                break;
            }
            case OpKind::Scale: {
                Tensor ga = g;
                for (double& v : ga.values()) v *= nd.scalar;
                push_grad(0, ga);
                break;
            }
            case OpKind::RowGather: {
                if (!wants(0)) break;
                const auto& index = *eval.index_[nd.in[1]];
                Tensor gs(x(0).shape());
                const std::size_t stride = x(0).size() / x(0).shape()[0];
                for (std::size_t r = 0; r < index.size(); ++r) {
                    for (std::size_t c = 0; c < stride; ++c) gs[index[r] * stride + c] += g[r * stride + c];
                }
                push_grad(0, gs);
                break;
            }
            case OpKind::Softmax: {
                const double tau = x(1)[0];
                Tensor gx(y.shape());
                for (std::size_t r = 0; r < y.rows(); ++r) {
                    auto yr = y.row(r);
                    auto gr = g.row(r);
                    double dot = 0;
                    for (std::size_t k = 0; k < yr.size(); ++k) dot += gr[k] * yr[k];
                    auto out = gx.row(r);
                    for (std::size_t k = 0; k < yr.size(); ++k) out[k] = yr[k] * (gr[k] - dot) / tau;
                }
                push_grad(0, gx);
                break;
            }
            case OpKind::StraightThrough:
            case OpKind::Reshape: push_grad(0, g.reshaped(x(0).shape())); break;
            case OpKind::Sigmoid: {
                Tensor gx = g;
                for (std::size_t j = 0; j < gx.size(); ++j) gx[j] *= y[j] * (1.0 - y[j]);
                push_grad(0, gx);
                break;
            }
            case OpKind::Tanh: {
                Tensor gx = g;
                for (std::size_t j = 0; j < gx.size(); ++j) gx[j] *= 1.0 - y[j] * y[j];
                push_grad(0, gx);
                break;
            }
            case OpKind::Relu: {
                Tensor gx = g;
                for (std::size_t j = 0; j < gx.size(); ++j) gx[j] = x(0)[j] > 0 ? gx[j] : 0.0;
                push_grad(0, gx);
                break;
            }
            case OpKind::Sum:
            case OpKind::Mean: {
                double s = g[0];
                if (nd.kind == OpKind::Mean) s /= static_cast<double>(x(0).size());
                push_grad(0, Tensor(x(0).shape(), s));
                break;
            }
            case OpKind::SquaredError: {
                Tensor ga(x(0).shape());
                for (std::size_t j = 0; j < ga.size(); ++j) ga[j] = 2.0 * (x(0)[j] - x(1)[j]) * g[0];
                if (wants(1)) {
                    Tensor gb = ga;
                    for (double& v : gb.values()) v = -v;
                    push_grad(1, gb);
                }
                if (wants(0)) push_grad(0, ga);
                break;
            }
            case OpKind::SoftmaxCrossEntropy: {
                const auto& labels = *eval.index_[nd.in[1]];
                Tensor p = kernels::softmax(x(0), 1.0);
                const double w = g[0] / static_cast<double>(p.rows());
                for (std::size_t r = 0; r < p.rows(); ++r) {
                    p.at(r, labels[r]) -= 1.0;
                    for (double& v : p.row(r)) v *= w;
                }
                push_grad(0, p);
                break;
            }
            case OpKind::Concat: {
                const std::size_t ca = x(0).cols(), cb = x(1).cols();
                Tensor ga(x(0).shape()), gb(x(1).shape());
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    auto gr = g.row(r);
                    std::copy_n(gr.begin(), ca, ga.row(r).begin());
                    std::copy_n(gr.begin() + static_cast<std::ptrdiff_t>(ca), cb, gb.row(r).begin());
                }
                if (wants(0)) push_grad(0, ga);
                if (wants(1)) push_grad(1, gb);
                break;
            }
            case OpKind::SliceCols: {
                Tensor ga(x(0).shape());
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    std::copy_n(g.row(r).begin(), nd.count,
                                ga.row(r).begin() + static_cast<std::ptrdiff_t>(nd.begin));
                }
                push_grad(0, ga);
                break;
            }
            case OpKind::Entropy: {
                Tensor ga(x(0).shape());
                for (std::size_t j = 0; j < ga.size(); ++j) {
                    const double p = x(0)[j];
                    ga[j] = (p > kEntropyFloor ? -(std::log(p) + 1.0) : -std::log(kEntropyFloor)) * g[0];
                }
                push_grad(0, ga);
                break;
            }
        }
    }

    Gradients out;
    for (const auto& name : wrt) {
        const auto pid = parameter_node(name).id;
        Tensor grad = adj[pid].size() ? std::move(adj[pid]) : Tensor(params_.at(name).shape());
        // parameters reached only through row gathers get a touched-row list
        bool gather_only = true;
        std::set<std::size_t> rows;
        for (std::uint32_t i = pid + 1; i <= loss.id; ++i) {
            if (!path[i]) continue;
            const auto& nd = nodes_[i];
            if (std::find(nd.in.begin(), nd.in.end(), pid) == nd.in.end()) continue;
            if (nd.kind != OpKind::RowGather || nd.in[0] != pid) {
                gather_only = false;
                break;
            }
            const auto& index = *eval.index_[nd.in[1]];
            rows.insert(index.begin(), index.end());
        }
        if (gather_only) out.touched_rows[name] = std::vector<std::size_t>(rows.begin(), rows.end());
        out.dense[name] = std::move(grad);
    }
    return out;
}

double Graph::finite_difference_check(const Feed& feed, Node loss, const std::string& param, double epsilon) const {
    if (!(epsilon > 0 && epsilon <= 1e-2)) throw Error("finite_difference_check: epsilon must be in (0, 1e-2]");
    const auto pid = parameter_node(param).id;
    const std::uint32_t sources[] = {pid};
    const auto path = on_path(sources, loss.id);
    for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
        if (!path[i]) continue;
        if (nodes_[i].kind == OpKind::StraightThrough || nodes_[i].kind == OpKind::StopGradient) {
            throw Error("finite_difference_check: path from '" + param + "' crosses " + describe(Node{i}));
        }
    }
    const Node targets[] = {loss};
    const auto ev = evaluate(params_, feed, targets);
    const std::string names[] = {param};
    const Tensor analytic = gradient(ev, loss, names)[param];
    const double floor = 1e-6 * (1 + std::abs(ev.scalar(loss)));

    ParamStore work = params_;
    Tensor& p = work.at(param);
    double worst = 0;
    for (std::size_t j = 0; j < p.size(); ++j) {
        const double saved = p[j];
        auto at = [&](double offset) {
            p[j] = saved + offset;
            return evaluate(work, feed, targets).scalar(loss);
        };
        const double near = at(epsilon) - at(-epsilon);
        const double far = at(2 * epsilon) - at(-2 * epsilon);
        const double central = (8 * near - far) / (12 * epsilon);
        p[j] = saved;
        const double err =
            std::abs(analytic[j] - central) / std::max(std::abs(analytic[j]) + std::abs(central), floor);
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace kdc::diff
