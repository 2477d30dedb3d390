#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "camenn/tensor.hpp"

namespace camenn {

class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid while the tape lives.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode recorder.
///
/// Nodes are appended in execution order, so every input id precedes the id
/// of the node it feeds. `backward` walks the list once in reverse. Leaves
/// created with `leaf()` alias an external tensor: no copy is made and
/// gradients accumulate straight into that tensor's grad buffer. A tape is
/// single-threaded and must not outlive the tensors it aliases.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::span<const double> out_grad)>;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const noexcept { return grad_enabled_; }

    /// Owned value that never receives gradient.
    Var constant(Tensor value);
    /// Alias of an external tensor; differentiable iff it requires grad.
    Var leaf(Tensor& tensor);
    /// Read-only alias, never differentiated (frozen tables).
    Var leaf(const Tensor& tensor);

    /// Appends an op result. `backward` runs only when some input needs grad.
    Var record(const char* op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

    const Tensor& value(std::size_t id) const;
    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
    bool needs_grad(Var v) const { return needs_grad(v.id); }
    const char* op_name(std::size_t id) const { return nodes_[id].op; }
    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Gradient accumulator of node `id`, allocated on first use. For aliased
    /// parameter leaves this is the parameter's own grad buffer.
    std::span<double> grad_sink(std::size_t id);

    /// Seeds d(loss)/d(loss) = seed and propagates to every differentiable node.
    /// The loss must hold exactly one value; a tape can be differentiated once.
    void backward(Var loss, double seed = 1.0);

    /// Number of backward closures invoked by the last `backward` call.
    std::size_t backward_visits() const noexcept { return backward_visits_; }

private:
    struct Node {
        const char* op = "";
        Tensor owned;
        const Tensor* external = nullptr;
        Tensor* param = nullptr;
        std::vector<double> grad;
        bool needs_grad = false;
        BackwardFn backward;
        std::vector<std::size_t> inputs;
    };

    bool grad_enabled_;
    bool differentiated_ = false;
    std::size_t backward_visits_ = 0;
    std::deque<Node> nodes_;  // stable addresses for value() references
};

}  // namespace camenn
