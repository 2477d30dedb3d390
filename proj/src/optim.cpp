#include "camenn/optim.hpp"

#include <cmath>

#include "camenn/errors.hpp"

namespace camenn {

Adam::Adam(ParamStore& params, const AdamConfig& config) : params_(params), config_(config) {
    if (!(config.lr >= 0.0) || !(config.beta1 >= 0.0 && config.beta1 < 1.0) ||
        !(config.beta2 >= 0.0 && config.beta2 < 1.0) || !(config.eps > 0.0) || !(config.weight_decay >= 0.0))
        throw ConfigError("invalid Adam hyperparameters");
    state_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Shape& s = params.entry(i).tensor.shape();
        state_.push_back(Slot{Tensor(s, 0.0), Tensor(s, 0.0), 0});
    }
}

void Adam::step() {
    if (state_.size() != params_.size()) throw ContractError("parameters were added after the optimizer was built");
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& e = params_.entry(i);
        if (!e.tensor.grad_touched()) continue;
        for (double g : e.tensor.grad())
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + e.name);
    }
    const AdamConfig& c = config_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_.entry(i).tensor;
        if (!p.grad_touched()) continue;
        Slot& s = state_[i];
        s.t += 1;
        const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.t));
        const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.t));
        auto pv = p.data();
        auto gv = p.grad();
        auto mv = s.m.data();
        auto vv = s.v.data();
        for (std::size_t k = 0; k < pv.size(); ++k) {
            double g = gv[k];
            if (c.decoupled)
                pv[k] -= c.lr * c.weight_decay * pv[k];
            else
                g += c.weight_decay * pv[k];
            mv[k] = c.beta1 * mv[k] + (1.0 - c.beta1) * g;
            vv[k] = c.beta2 * vv[k] + (1.0 - c.beta2) * g * g;
            pv[k] -= c.lr * (mv[k] / bc1) / (std::sqrt(vv[k] / bc2) + c.eps);
        }
    }
    ++steps_;
}

std::vector<NamedTensor> Adam::export_state() const {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < state_.size(); ++i) {
        const std::string& name = params_.entry(i).name;
        out.push_back({"adam.m." + name, state_[i].m, DType::F64});
        out.push_back({"adam.v." + name, state_[i].v, DType::F64});
        out.push_back({"adam.t." + name, Tensor::scalar(static_cast<double>(state_[i].t)), DType::F64});
    }
    out.push_back({"adam.steps", Tensor::scalar(static_cast<double>(steps_)), DType::F64});
    return out;
}

void Adam::import_state(const std::vector<NamedTensor>& tensors) {
    for (std::size_t i = 0; i < state_.size(); ++i) {
        const std::string& name = params_.entry(i).name;
        const Tensor& m = find_tensor(tensors, "adam.m." + name).tensor;
        const Tensor& v = find_tensor(tensors, "adam.v." + name).tensor;
        if (m.shape() != state_[i].m.shape() || v.shape() != state_[i].v.shape())
            throw ContractError("optimizer state for " + name + " has the wrong shape");
        state_[i].m = m;
        state_[i].v = v;
        state_[i].t = static_cast<std::uint64_t>(find_tensor(tensors, "adam.t." + name).tensor.item());
    }
    steps_ = static_cast<std::uint64_t>(find_tensor(tensors, "adam.steps").tensor.item());
}

}  // namespace camenn
