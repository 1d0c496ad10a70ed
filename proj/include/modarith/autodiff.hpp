#pragma once

// Tape-style reverse-mode differentiation over row-major matrices.
//
// A ComputeGraph is declared once (inputs, parameters, primitive ops) and then
// evaluated many times: bind inputs, call forward(), call backward(). Rows are
// the batch dimension and are only fixed when inputs are bound, so a single
// graph serves every minibatch size.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "modarith/tensor.hpp"

namespace modarith {

struct NodeId {
    std::size_t index = std::numeric_limits<std::size_t>::max();
    friend bool operator==(NodeId, NodeId) = default;
};

struct IndexSlot {
    std::size_t index = std::numeric_limits<std::size_t>::max();
};

class ComputeGraph {
public:
    enum class Op {
        Input,
        Parameter,
        MatMul,
        Add,
        Scale,
        Relu,
        Softmax,
        CrossEntropy,
        Concat,
        MeanPositions,
        Gather,
        // Needed for learned query-key attention.
        RowDot,
        Column,
        ScaleRows,
    };

    ComputeGraph() = default;
    ComputeGraph(const ComputeGraph&) = delete;
    ComputeGraph& operator=(const ComputeGraph&) = delete;
    ComputeGraph(ComputeGraph&&) = default;
    ComputeGraph& operator=(ComputeGraph&&) = default;

    // Placeholder with a fixed column count; row count comes from the binding.
    NodeId input(std::string_view name, std::size_t cols) {
        Node n = make(Op::Input, name);
        n.declared_cols = cols;
        return push(std::move(n));
    }

    IndexSlot indices(std::string_view name) {
        index_slots_.push_back({std::string(name), {}, false});
        return {index_slots_.size() - 1};
    }

    // The graph keeps a pointer; the tensor must outlive the graph.
    NodeId parameter(std::string_view name, Tensor* value) {
        if (value == nullptr || value->rank() != 2) throw ShapeError("parameter '" + std::string(name) + "' must be a rank-2 tensor");
        Node n = make(Op::Parameter, name);
        n.param = value;
        n.needs_grad = true;
        return push(std::move(n));
    }

    NodeId matmul(NodeId a, NodeId b, std::string_view name = {}) { return binary(Op::MatMul, a, b, name); }
    NodeId add(NodeId a, NodeId b, std::string_view name = {}) { return binary(Op::Add, a, b, name); }
    NodeId row_dot(NodeId a, NodeId b, std::string_view name = {}) { return binary(Op::RowDot, a, b, name); }
    NodeId scale_rows(NodeId a, NodeId column, std::string_view name = {}) {
        return binary(Op::ScaleRows, a, column, name);
    }

    NodeId scale(NodeId a, double factor, std::string_view name = {}) {
        Node n = make(Op::Scale, name, {a});
        n.scalar = factor;
        return push(std::move(n));
    }
    NodeId relu(NodeId a, std::string_view name = {}) { return push(make(Op::Relu, name, {a})); }
    NodeId softmax(NodeId a, std::string_view name = {}) { return push(make(Op::Softmax, name, {a})); }

    NodeId column(NodeId a, std::size_t col, std::string_view name = {}) {
        Node n = make(Op::Column, name, {a});
        n.aux = col;
        return push(std::move(n));
    }

    // Mean softmax cross-entropy over rows; yields a 1x1 tensor.
    NodeId cross_entropy(NodeId logits, IndexSlot labels, std::string_view name = {}) {
        Node n = make(Op::CrossEntropy, name, {logits});
        n.slot = checked_slot(labels);
        return push(std::move(n));
    }

    NodeId concat(std::vector<NodeId> parts, std::string_view name = {}) {
        if (parts.empty()) throw ShapeError("concat of zero nodes");
        return push(make(Op::Concat, name, std::move(parts)));
    }

    NodeId mean_positions(std::vector<NodeId> parts, std::string_view name = {}) {
        if (parts.empty()) throw ShapeError("mean over zero positions");
        return push(make(Op::MeanPositions, name, std::move(parts)));
    }

    NodeId gather(NodeId table, IndexSlot rows, std::string_view name = {}) {
        Node n = make(Op::Gather, name, {table});
        n.slot = checked_slot(rows);
        return push(std::move(n));
    }

    void bind(NodeId input, Tensor value) {
        Node& n = node(input);
        if (n.op != Op::Input) throw std::invalid_argument("bind target " + label(input.index) + " is not an input");
        n.value = std::move(value);
        forwarded_ = false;
    }

    void bind(IndexSlot slot, std::vector<int> values) {
        auto& s = index_slots_.at(checked_slot(slot));
        s.values = std::move(values);
        s.bound = true;
        forwarded_ = false;
    }

    // Evaluates every node up to and including `output`.
    const Tensor& forward(NodeId output) {
        const std::size_t last = checked(output);
        for (std::size_t i = 0; i <= last; ++i) evaluate(i);
        forwarded_ = true;
        forwarded_upto_ = last;
        return value_of(last);
    }

    void backward(NodeId loss) {
        node(loss);
        if (forwarded_ && value_of(loss.index).size() != 1) {
            throw ShapeError("backward from " + label(loss.index) + " requires a scalar, got " +
                             shape_string(value_of(loss.index).shape()));
        }
        Tensor seed = Tensor::matrix(1, 1, 1.0);
        backward(loss, seed);
    }

    // Vector-Jacobian product seeded with an arbitrary cotangent on `output`.
    // With parameter_grads = false the parameter gradients are left stale,
    // which halves the cost when only activation gradients are wanted.
    void backward(NodeId output, const Tensor& seed, bool parameter_grads = true) {
        const std::size_t last = checked(output);
        if (!forwarded_ || last > forwarded_upto_) throw std::logic_error("backward called before forward on " + label(last));
        if (seed.shape() != value_of(last).shape()) {
            throw ShapeError("seed shape " + shape_string(seed.shape()) + " does not match " + label(last) + " value " +
                             shape_string(value_of(last).shape()));
        }
        skip_parameter_grads_ = !parameter_grads;
        for (std::size_t i = 0; i <= last; ++i) {
            Node& n = nodes_[i];
            if (!n.needs_grad || (skip_parameter_grads_ && n.op == Op::Parameter)) continue;
            const Tensor& v = value_of(i);
            n.grad.reshape_uninitialized(v.rows(), v.cols());
            n.grad.fill(0.0);
        }
        if (!nodes_[last].needs_grad) return;
        nodes_[last].grad = seed;
        for (std::size_t i = last + 1; i-- > 0;) propagate(i);
        backwarded_ = true;
    }

    const Tensor& value(NodeId id) const { return value_of(checked(id)); }

    const Tensor& grad(NodeId id) const {
        const Node& n = node(id);
        if (!backwarded_) throw std::logic_error("no gradients available; call backward first");
        if (!n.needs_grad) throw std::logic_error(label(id.index) + " does not depend on any parameter");
        return n.grad;
    }

    std::size_t size() const noexcept { return nodes_.size(); }
    Op op(NodeId id) const { return node(id).op; }
    const std::string& name(NodeId id) const { return node(id).name; }
    const std::vector<NodeId>& inputs(NodeId id) const { return node(id).inputs; }

    // Parameter nodes in declaration order.
    std::vector<NodeId> parameters() const {
        std::vector<NodeId> out;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (nodes_[i].op == Op::Parameter) out.push_back({i});
        }
        return out;
    }

    Tensor* parameter_tensor(NodeId id) const {
        const Node& n = node(id);
        if (n.op != Op::Parameter) throw std::invalid_argument(label(id.index) + " is not a parameter");
        return n.param;
    }

private:
    struct Node {
        Op op;
        std::string name;
        std::vector<NodeId> inputs;
        Tensor value;
        Tensor grad;
        Tensor cache;  // softmax probabilities for CrossEntropy
        Tensor* param = nullptr;
        double scalar = 1.0;
        std::size_t aux = 0;
        std::size_t slot = 0;
        std::size_t declared_cols = 0;
        bool needs_grad = false;
    };

    struct Slot {
        std::string name;
        std::vector<int> values;
        bool bound;
    };

    static const char* op_name(Op op) {
        switch (op) {
            case Op::Input: return "input";
            case Op::Parameter: return "parameter";
            case Op::MatMul: return "matmul";
            case Op::Add: return "add";
            case Op::Scale: return "scale";
            case Op::Relu: return "relu";
            case Op::Softmax: return "softmax";
            case Op::CrossEntropy: return "cross_entropy";
            case Op::Concat: return "concat";
            case Op::MeanPositions: return "mean_positions";
            case Op::Gather: return "gather";
            case Op::RowDot: return "row_dot";
            case Op::Column: return "column";
            case Op::ScaleRows: return "scale_rows";
        }
        return "?";
    }

    Node make(Op op, std::string_view name, std::vector<NodeId> inputs = {}) {
        for (NodeId in : inputs) checked(in);
        Node n{};
        n.op = op;
        n.name = name.empty() ? std::string(op_name(op)) : std::string(name);
        n.inputs = std::move(inputs);
        for (NodeId in : n.inputs) n.needs_grad = n.needs_grad || nodes_[in.index].needs_grad;
        return n;
    }

    NodeId binary(Op op, NodeId a, NodeId b, std::string_view name) { return push(make(op, name, {a, b})); }

    NodeId push(Node n) {
        nodes_.push_back(std::move(n));
        return {nodes_.size() - 1};
    }

    std::size_t checked(NodeId id) const {
        if (id.index >= nodes_.size()) throw std::out_of_range("unknown graph node");
        return id.index;
    }
    std::size_t checked_slot(IndexSlot s) const {
        if (s.index >= index_slots_.size()) throw std::out_of_range("unknown index slot");
        return s.index;
    }

    Node& node(NodeId id) { return nodes_[checked(id)]; }
    const Node& node(NodeId id) const { return nodes_[checked(id)]; }

    std::string label(std::size_t i) const {
        return "node #" + std::to_string(i) + " '" + nodes_[i].name + "' (" + op_name(nodes_[i].op) + ")";
    }

    [[noreturn]] void fail(std::size_t i, const std::string& what) const { throw ShapeError(label(i) + ": " + what); }

    const std::vector<int>& slot_values(std::size_t i, std::size_t slot) const {
        const Slot& s = index_slots_[slot];
        if (!s.bound) fail(i, "index slot '" + s.name + "' is unbound");
        return s.values;
    }

    const Tensor& value_of(std::size_t i) const {
        return nodes_[i].op == Op::Parameter ? *nodes_[i].param : nodes_[i].value;
    }
    const Tensor& in(const Node& n, std::size_t k) const { return value_of(n.inputs[k].index); }

    void evaluate(std::size_t i) {
        Node& n = nodes_[i];
        switch (n.op) {
            case Op::Input:
                if (n.value.rank() != 2 || n.value.cols() != n.declared_cols) {
                    fail(i, "expected [rows x " + std::to_string(n.declared_cols) + "] binding, got " + shape_string(n.value.shape()));
                }
                break;
            case Op::Parameter:
                break;
            case Op::MatMul: {
                const Tensor& a = in(n, 0);
                const Tensor& b = in(n, 1);
                if (a.cols() != b.rows()) fail(i, "inner dimensions " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
                n.value.reshape_uninitialized(a.rows(), b.cols());
                n.value.mat().noalias() = a.mat() * b.mat();
                break;
            }
            case Op::Add: {
                const Tensor& a = in(n, 0);
                const Tensor& b = in(n, 1);
                if (a.shape() != b.shape()) fail(i, "operands " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
                n.value.reshape_uninitialized(a.rows(), a.cols());
                n.value.mat() = a.mat() + b.mat();
                break;
            }
            case Op::Scale: {
                const Tensor& a = in(n, 0);
                n.value.reshape_uninitialized(a.rows(), a.cols());
                n.value.mat() = a.mat() * n.scalar;
                break;
            }
            case Op::Relu: {
                const Tensor& a = in(n, 0);
                n.value.reshape_uninitialized(a.rows(), a.cols());
                n.value.mat() = a.mat().cwiseMax(0.0);
                break;
            }
            case Op::Softmax: {
                const Tensor& a = in(n, 0);
                n.value.reshape_uninitialized(a.rows(), a.cols());
                softmax_rows(a, n.value);
                break;
            }
            case Op::CrossEntropy: {
                const Tensor& logits = in(n, 0);
                const auto& labels = slot_values(i, n.slot);
                if (labels.size() != logits.rows()) {
                    fail(i, std::to_string(labels.size()) + " labels for " + std::to_string(logits.rows()) + " rows");
                }
                n.cache.reshape_uninitialized(logits.rows(), logits.cols());
                softmax_rows(logits, n.cache);
                double total = 0.0;
                for (std::size_t r = 0; r < logits.rows(); ++r) {
                    const int y = labels[r];
                    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols()) fail(i, "label out of range");
                    total -= std::log(std::max(n.cache(r, y), std::numeric_limits<double>::min()));
                }
                n.value.reshape_uninitialized(1, 1);
                n.value[0] = logits.rows() ? total / static_cast<double>(logits.rows()) : 0.0;
                break;
            }
            case Op::Concat: {
                const std::size_t rows = in(n, 0).rows();
                std::size_t cols = 0;
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                    if (in(n, k).rows() != rows) fail(i, "row counts differ across concatenated parts");
                    cols += in(n, k).cols();
                }
                n.value.reshape_uninitialized(rows, cols);
                std::size_t offset = 0;
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                    const Tensor& part = in(n, k);
                    n.value.mat().middleCols(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(part.cols())) = part.mat();
                    offset += part.cols();
                }
                break;
            }
            case Op::MeanPositions: {
                const Tensor& first = in(n, 0);
                n.value.reshape_uninitialized(first.rows(), first.cols());
                n.value.fill(0.0);
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                    if (in(n, k).shape() != first.shape()) fail(i, "positions have different shapes");
                    n.value.mat() += in(n, k).mat();
                }
                n.value.mat() *= 1.0 / static_cast<double>(n.inputs.size());
                break;
            }
            case Op::Gather: {
                const Tensor& table = in(n, 0);
                const auto& idx = slot_values(i, n.slot);
                n.value.reshape_uninitialized(idx.size(), table.cols());
                for (std::size_t r = 0; r < idx.size(); ++r) {
                    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= table.rows()) fail(i, "gather index out of range");
                    const auto src = table.row(static_cast<std::size_t>(idx[r]));
                    std::copy(src.begin(), src.end(), n.value.row(r).begin());
                }
                break;
            }
            case Op::RowDot: {
                const Tensor& a = in(n, 0);
                const Tensor& b = in(n, 1);
                if (a.shape() != b.shape()) fail(i, "operands " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
                n.value.reshape_uninitialized(a.rows(), 1);
                n.value.mat() = a.mat().cwiseProduct(b.mat()).rowwise().sum();
                break;
            }
            case Op::Column: {
                const Tensor& a = in(n, 0);
                if (n.aux >= a.cols()) fail(i, "column " + std::to_string(n.aux) + " of " + shape_string(a.shape()));
                n.value.reshape_uninitialized(a.rows(), 1);
                n.value.mat() = a.mat().col(static_cast<Eigen::Index>(n.aux));
                break;
            }
            case Op::ScaleRows: {
                const Tensor& a = in(n, 0);
                const Tensor& c = in(n, 1);
                if (c.cols() != 1 || c.rows() != a.rows()) fail(i, "row scale " + shape_string(c.shape()) + " for " + shape_string(a.shape()));
                n.value.reshape_uninitialized(a.rows(), a.cols());
                n.value.mat() = a.mat().array().colwise() * c.mat().col(0).array();
                break;
            }
        }
    }

    Tensor& gin(const Node& n, std::size_t k) { return nodes_[n.inputs[k].index].grad; }
    bool wants(const Node& n, std::size_t k) const {
        const Node& src = nodes_[n.inputs[k].index];
        return src.needs_grad && !(skip_parameter_grads_ && src.op == Op::Parameter);
    }

    void propagate(std::size_t i) {
        Node& n = nodes_[i];
        if (!n.needs_grad) return;
        const Tensor& dy = n.grad;
        switch (n.op) {
            case Op::Input:
            case Op::Parameter:
                break;
            case Op::MatMul:
                if (wants(n, 0)) gin(n, 0).mat().noalias() += dy.mat() * in(n, 1).mat().transpose();
                if (wants(n, 1)) gin(n, 1).mat().noalias() += in(n, 0).mat().transpose() * dy.mat();
                break;
            case Op::Add:
                if (wants(n, 0)) gin(n, 0).mat() += dy.mat();
                if (wants(n, 1)) gin(n, 1).mat() += dy.mat();
                break;
            case Op::Scale:
                if (wants(n, 0)) gin(n, 0).mat() += dy.mat() * n.scalar;
                break;
            case Op::Relu:
                if (wants(n, 0)) {
                    gin(n, 0).mat().array() += (in(n, 0).mat().array() > 0.0).select(dy.mat().array(), 0.0);
                }
                break;
            case Op::Softmax:
                if (wants(n, 0)) {
                    const auto y = n.value.mat().array();
                    Eigen::VectorXd inner = (dy.mat().array() * y).rowwise().sum();
                    gin(n, 0).mat().array() += y * (dy.mat().array().colwise() - inner.array());
                }
                break;
            case Op::CrossEntropy:
                if (wants(n, 0)) {
                    const auto& labels = index_slots_[n.slot].values;
                    const std::size_t rows = n.cache.rows();
                    if (rows == 0) break;
                    const double w = dy[0] / static_cast<double>(rows);
                    Tensor& g = gin(n, 0);
                    g.mat() += n.cache.mat() * w;
                    for (std::size_t r = 0; r < rows; ++r) g(r, static_cast<std::size_t>(labels[r])) -= w;
                }
                break;
            case Op::Concat: {
                std::size_t offset = 0;
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                    const std::size_t cols = in(n, k).cols();
                    if (wants(n, k)) {
                        gin(n, k).mat() += dy.mat().middleCols(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(cols));
                    }
                    offset += cols;
                }
                break;
            }
            case Op::MeanPositions: {
                const double w = 1.0 / static_cast<double>(n.inputs.size());
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                    if (wants(n, k)) gin(n, k).mat() += dy.mat() * w;
                }
                break;
            }
            case Op::Gather:
                if (wants(n, 0)) {
                    const auto& idx = index_slots_[n.slot].values;
                    Tensor& g = gin(n, 0);
                    for (std::size_t r = 0; r < idx.size(); ++r) {
                        auto dst = g.row(static_cast<std::size_t>(idx[r]));
                        const auto src = dy.row(r);
                        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
                    }
                }
                break;
            case Op::RowDot:
                if (wants(n, 0)) gin(n, 0).mat().array() += in(n, 1).mat().array().colwise() * dy.mat().col(0).array();
                if (wants(n, 1)) gin(n, 1).mat().array() += in(n, 0).mat().array().colwise() * dy.mat().col(0).array();
                break;
            case Op::Column:
                if (wants(n, 0)) gin(n, 0).mat().col(static_cast<Eigen::Index>(n.aux)) += dy.mat().col(0);
                break;
            case Op::ScaleRows:
                if (wants(n, 0)) gin(n, 0).mat().array() += dy.mat().array().colwise() * in(n, 1).mat().col(0).array();
                if (wants(n, 1)) gin(n, 1).mat().col(0) += dy.mat().cwiseProduct(in(n, 0).mat()).rowwise().sum();
                break;
        }
    }

    static void softmax_rows(const Tensor& x, Tensor& y) {
        for (std::size_t r = 0; r < x.rows(); ++r) {
            const auto src = x.row(r);
            auto dst = y.row(r);
            const double mx = *std::max_element(src.begin(), src.end());
            double z = 0.0;
            for (std::size_t c = 0; c < src.size(); ++c) {
                dst[c] = std::exp(src[c] - mx);
                z += dst[c];
            }
            for (double& v : dst) v /= z;
        }
    }

    std::vector<Node> nodes_;
    std::vector<Slot> index_slots_;
    bool forwarded_ = false;
    bool backwarded_ = false;
    bool skip_parameter_grads_ = false;
    std::size_t forwarded_upto_ = 0;
};

}  // namespace modarith
