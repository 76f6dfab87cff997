#pragma once

// Reverse-mode differentiation on an explicit tape. Nodes are appended in
// creation order, which is already a topological order, so backward is a
// single reverse sweep.

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ttsr/tensor.hpp"

namespace ttsr {

/// Trainable tensor with a gradient accumulator and a stable name.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
class Tape;

/// Lightweight handle to a tape node.
template <typename T>
class Var {
  public:
    Var() = default;
    Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Tensor<T>& value() const { return tape_->value(id_); }
    const Shape& shape() const { return value().shape(); }
    std::size_t dim(std::size_t i) const { return value().dim(i); }
    Tape<T>& tape() const { return *tape_; }
    std::size_t id() const { return id_; }
    bool requires_grad() const { return tape_->requires_grad(id_); }
    /// Gradient after Tape::backward (zeros if the node was unreachable).
    Tensor<T> grad() const { return tape_->grad(id_); }
    bool valid() const { return tape_ != nullptr; }

  private:
    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
};

template <typename T>
class Tape {
  public:
    /// Receives the output gradient and one (possibly null) input-gradient
    /// accumulator per recorded input.
    using BackwardFn = std::function<void(const Tensor<T>& gout, std::vector<Tensor<T>*>& gin)>;

    Tape() {
#ifndef NDEBUG
        check_finite_ = true;
#endif
    }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> constant(Tensor<T> v) { return push("constant", std::move(v), {}, nullptr, false, nullptr); }
    Var<T> leaf(Tensor<T> v) { return push("leaf", std::move(v), {}, nullptr, true, nullptr); }

    /// Bind a parameter. Frozen parameters enter as constants.
    Var<T> param(Parameter<T>& p) {
        const bool trainable = !freeze_all_ && !frozen_.contains(&p);
        return push(p.name, p.value, {}, nullptr, trainable, trainable ? &p : nullptr);
    }

    void freeze(Parameter<T>& p) { frozen_.insert(&p); }
    void freeze_all(bool on) { freeze_all_ = on; }
    void set_check_finite(bool on) { check_finite_ = on; }

    Var<T> record(std::string op, Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn fn) {
        bool rg = false;
        std::vector<std::size_t> ids;
        ids.reserve(inputs.size());
        for (const auto& in : inputs) {
            if (&in.tape() != this) throw std::logic_error("tape: input '" + op + "' recorded on a different tape");
            ids.push_back(in.id());
            rg = rg || nodes_[in.id()]->requires_grad;
        }
        return push(std::move(op), std::move(value), std::move(ids), rg ? std::move(fn) : nullptr, rg, nullptr);
    }

    const Tensor<T>& value(std::size_t id) const { return nodes_.at(id)->value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id)->requires_grad; }
    Tensor<T> grad(std::size_t id) const {
        const Node& n = *nodes_.at(id);
        return n.grad.empty() && !n.value.empty() ? Tensor<T>(n.value.shape()) : n.grad;
    }
    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    /// Propagates d(loss)/d(node) to every reachable node and accumulates into
    /// bound parameters. The tape must be reset before it is reused.
    void backward(const Var<T>& loss) {
        if (consumed_) throw std::logic_error("tape: backward called twice without reset()");
        if (&loss.tape() != this) throw std::logic_error("tape: loss belongs to a different tape");
        Node& root = *nodes_[loss.id()];
        if (root.value.numel() != 1)
            throw ShapeError("backward: loss must be scalar, got shape " + shape_str(root.value.shape()));
        consumed_ = true;
        if (!root.requires_grad) return;
        root.grad = Tensor<T>(root.value.shape(), T(1));
        for (std::size_t id = loss.id() + 1; id-- > 0;) {
            Node& n = *nodes_[id];
            if (!n.requires_grad || n.grad.empty()) continue;
            if (n.param) {
                for (std::size_t i = 0; i < n.grad.numel(); ++i) n.param->grad[i] += n.grad[i];
                continue;
            }
            if (!n.backward) continue;
            std::vector<Tensor<T>*> gin(n.inputs.size(), nullptr);
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                Node& in = *nodes_[n.inputs[k]];
                if (!in.requires_grad) continue;
                if (in.grad.empty()) in.grad = Tensor<T>(in.value.shape());
                gin[k] = &in.grad;
            }
            n.backward(n.grad, gin);
        }
    }

    void reset() {
        nodes_.clear();
        consumed_ = false;
    }

  private:
    struct Node {
        std::string op;
        Tensor<T> value;
        Tensor<T> grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        Parameter<T>* param = nullptr;
    };

    Var<T> push(std::string op, Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn fn, bool rg,
                Parameter<T>* param) {
        if (consumed_) throw std::logic_error("tape: recording '" + op + "' on a consumed tape; call reset()");
        if (check_finite_ && !value.all_finite()) throw NumericError("non-finite value produced by '" + op + "'");
        auto node = std::make_unique<Node>();
        node->op = std::move(op);
        node->value = std::move(value);
        node->inputs = std::move(inputs);
        node->backward = std::move(fn);
        node->requires_grad = rg;
        node->param = param;
        nodes_.push_back(std::move(node));
        return Var<T>(this, nodes_.size() - 1);
    }

    std::vector<std::unique_ptr<Node>> nodes_;
    std::unordered_set<const Parameter<T>*> frozen_;
    bool freeze_all_ = false;
    bool consumed_ = false;
    bool check_finite_ = false;
};

}  // namespace ttsr
