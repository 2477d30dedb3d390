#pragma once

#include <cstdint>
#include <vector>

#include "camenn/checkpoint.hpp"
#include "camenn/params.hpp"

namespace camenn {

struct AdamConfig {
    double lr = 4e-4;
    double beta1 = 0.95;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    bool decoupled = true;  // false adds weight_decay * p to the gradient instead
};

/// Adam over every tensor of a ParamStore. Parameters whose gradient was not
/// touched since the last zero_grad are skipped entirely (no decay, no
/// moment update), and each parameter keeps its own step count for bias
/// correction.
class Adam {
public:
    Adam(ParamStore& params, const AdamConfig& config);

    /// Applies one update from the accumulated gradients. Throws NumericError
    /// naming the parameter if a touched gradient holds NaN or infinity; in
    /// that case nothing is modified.
    void step();

    const AdamConfig& config() const noexcept { return config_; }
    std::uint64_t steps() const noexcept { return steps_; }
    std::uint64_t param_steps(std::size_t i) const { return state_.at(i).t; }
    const Tensor& first_moment(std::size_t i) const { return state_.at(i).m; }
    const Tensor& second_moment(std::size_t i) const { return state_.at(i).v; }

    /// adam.m.<name>, adam.v.<name>, adam.t.<name> and adam.steps.
    std::vector<NamedTensor> export_state() const;
    /// Restores state written by export_state; shapes must match.
    void import_state(const std::vector<NamedTensor>& tensors);

private:
    struct Slot {
        Tensor m, v;
        std::uint64_t t = 0;
    };
    ParamStore& params_;
    AdamConfig config_;
    std::vector<Slot> state_;
    std::uint64_t steps_ = 0;
};

}  // namespace camenn
