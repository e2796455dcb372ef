#pragma once

// Tape-based reverse-mode differentiation. Nodes are appended in forward
// order, so walking the tape backwards is a valid reverse topological order
// and the accumulation order into every gradient buffer is fixed.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sfa/tensor.hpp"

namespace sfa {

template <class T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
template <class T>
class Var {
public:
    Var() = default;
    Var(Tape<T>* tape, std::uint32_t id) : tape_(tape), id_(id) {}

    const BasicTensor<T>& value() const { return tape_->value(*this); }
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const { return tape_->requires_grad(*this); }
    Tape<T>& tape() const { return *tape_; }
    std::uint32_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape<T>* tape_ = nullptr;
    std::uint32_t id_ = 0;
};

class GradientError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <class T>
class Tape {
public:
    using TensorT = BasicTensor<T>;
    using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

    Tape() { nodes_.reserve(256); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Input that never receives a gradient.
    Var<T> constant(TensorT value) {
        Node node;
        node.owned = std::move(value);
        nodes_.push_back(std::move(node));
        return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
    }

    /// Leaf that owns its value; gradient is readable through grad().
    Var<T> variable(TensorT value, bool requires_grad = true) {
        Node node;
        node.owned = std::move(value);
        node.requires_grad = requires_grad;
        nodes_.push_back(std::move(node));
        return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
    }

    /// Leaf referencing external storage (a parameter). The referenced tensor
    /// must outlive the tape and stay unmodified until backward() returns.
    Var<T> parameter(const TensorT& value, bool requires_grad, std::int64_t slot) {
        Node node;
        node.external = &value;
        node.requires_grad = requires_grad;
        node.slot = slot;
        nodes_.push_back(std::move(node));
        const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
        if (slot >= 0) {
            param_nodes_.push_back(id);
        }
        return Var<T>(this, id);
    }

    /// Records an op result. requires_grad is inherited from the parents.
    Var<T> record(TensorT value, std::initializer_list<Var<T>> parents, BackwardFn fn) {
        Node node;
        node.owned = std::move(value);
        for (const auto& p : parents) {
            node.requires_grad = node.requires_grad || nodes_[p.id()].requires_grad;
        }
        if (node.requires_grad) {
            node.backward = std::move(fn);
        }
        nodes_.push_back(std::move(node));
        return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
    }

    const TensorT& value(Var<T> v) const { return value(v.id()); }
    const TensorT& value(std::uint32_t id) const {
        const Node& n = nodes_[id];
        return n.external ? *n.external : n.owned;
    }
    bool requires_grad(Var<T> v) const { return nodes_[v.id()].requires_grad; }
    bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

    /// Gradient buffer of a node, allocated (zero) on first use.
    std::span<T> grad_buffer(std::uint32_t id) {
        Node& n = nodes_[id];
        if (n.grad.empty()) {
            n.grad.assign(value(id).size(), T{0});
        }
        return n.grad;
    }

    /// Gradient of a node after backward(); all zeros if the node was not reached.
    TensorT grad(Var<T> v) const {
        const Node& n = nodes_[v.id()];
        if (n.grad.empty()) {
            return TensorT(value(v.id()).shape());
        }
        return TensorT(value(v.id()).shape(), n.grad);
    }

    /// Moves the gradient out of a node (zero tensor if unreached).
    TensorT take_grad(std::uint32_t id) {
        Node& n = nodes_[id];
        const Shape& shape = value(id).shape();
        if (n.grad.empty()) {
            return TensorT(shape);
        }
        return TensorT(shape, std::move(n.grad));
    }

    std::int64_t slot(std::uint32_t id) const { return nodes_[id].slot; }
    const std::vector<std::uint32_t>& parameter_nodes() const { return param_nodes_; }
    std::size_t num_nodes() const { return nodes_.size(); }

    void backward(Var<T> loss) {
        const TensorT& lv = value(loss.id());
        if (lv.size() != 1) {
            throw GradientError("backward: loss must be scalar, got shape " + shape_to_string(lv.shape()));
        }
        if (!std::isfinite(static_cast<double>(lv[0]))) {
            throw GradientError("backward: loss is not finite");
        }
        if (!nodes_[loss.id()].requires_grad) {
            return;
        }
        grad_buffer(loss.id())[0] = T{1};
        for (std::int64_t id = loss.id(); id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (!n.requires_grad || n.grad.empty() || !n.backward) {
                continue;
            }
            n.backward(*this, static_cast<std::uint32_t>(id));
        }
    }

private:
    struct Node {
        TensorT owned;
        const TensorT* external = nullptr;
        AlignedVector<T> grad;
        bool requires_grad = false;
        std::int64_t slot = -1;
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
    std::vector<std::uint32_t> param_nodes_;
};

}  // namespace sfa
