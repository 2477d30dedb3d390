#include "camenn/tape.hpp"

#include "camenn/errors.hpp"

namespace camenn {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
    Node n;
    n.op = "constant";
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::leaf(Tensor& tensor) {
    Node n;
    n.op = "leaf";
    n.external = &tensor;
    if (grad_enabled_ && tensor.requires_grad()) {
        n.param = &tensor;
        n.needs_grad = true;
    }
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::leaf(const Tensor& tensor) {
    Node n;
    n.op = "frozen";
    n.external = &tensor;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::record(const char* op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
    Node n;
    n.op = op;
    n.owned = std::move(value);
    if (grad_enabled_) {
        for (auto in : inputs) {
            if (in >= nodes_.size()) throw ContractError(std::string("op ") + op + " references a future node");
            n.needs_grad = n.needs_grad || nodes_[in].needs_grad;
        }
        if (n.needs_grad) {
            n.backward = std::move(backward);
            n.inputs = std::move(inputs);
        }
    }
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

const Tensor& Tape::value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.owned;
}

std::span<double> Tape::grad_sink(std::size_t id) {
    Node& n = nodes_[id];
    if (n.param) {
        n.param->mark_grad_touched();
        return n.param->grad();
    }
    if (n.grad.empty()) n.grad.assign(value(id).size(), 0.0);
    return n.grad;
}

void Tape::backward(Var loss, double seed) {
    if (loss.tape != this) throw ContractError("loss belongs to a different tape");
    if (!grad_enabled_) throw ContractError("backward on a tape recorded without grad");
    if (differentiated_) throw ContractError("tape has already been differentiated");
    if (value(loss.id).size() != 1)
        throw ContractError("backward needs a scalar loss, got shape " + shape_string(value(loss.id).shape()));
    differentiated_ = true;
    backward_visits_ = 0;
    if (!nodes_[loss.id].needs_grad) return;

    grad_sink(loss.id)[0] += seed;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.backward || n.grad.empty()) continue;
        n.backward(*this, n.grad);
        ++backward_visits_;
        // Saved activations and gradients are no longer needed.
        n.backward = nullptr;
        std::vector<double>().swap(n.grad);
    }
}

}  // namespace camenn
