#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "camenn/encoder.hpp"

namespace camenn {

enum class TaskKind : std::uint8_t { ITA = 0, TIA = 1, CVR = 2 };
inline constexpr std::array<TaskKind, 3> kAllTasks = {TaskKind::ITA, TaskKind::TIA, TaskKind::CVR};
inline constexpr std::size_t task_index(TaskKind k) { return static_cast<std::size_t>(k); }
std::string_view task_name(TaskKind k);  // "ita", "tia", "cvr"

enum class ExpertKind { Transformer, MlpRelu, Recurrent };
enum class GatingMode { Conventional, Literal };

std::string_view expert_kind_name(ExpertKind k);
ExpertKind parse_expert_kind(std::string_view s);
std::string_view gating_mode_name(GatingMode m);
GatingMode parse_gating_mode(std::string_view s);

struct MoeConfig {
    std::size_t num_experts = 4;
    std::size_t top_k = 2;
    ExpertKind expert_kind = ExpertKind::Transformer;
    GatingMode gating_mode = GatingMode::Conventional;

    void validate() const;
};

/// Maps [L x d] to [L x d].
class Expert {
public:
    virtual ~Expert() = default;
    virtual Var forward(Var x, std::optional<std::uint64_t> dropout_seed) const = 0;
};

/// Transformer encoder expert (the default frame).
class TransformerExpert final : public Expert {
public:
    TransformerExpert(ParamStore& params, const std::string& scope, const EncoderConfig& config, std::uint64_t seed);
    Var forward(Var x, std::optional<std::uint64_t> dropout_seed) const override;

private:
    EncoderParams params_;
};

/// Position-wise relu(x W1 + b1) W2 + b2 (MMoE-style frame).
class MlpReluExpert final : public Expert {
public:
    MlpReluExpert(ParamStore& params, const std::string& scope, std::size_t d, std::size_t hidden, std::uint64_t seed);
    Var forward(Var x, std::optional<std::uint64_t> dropout_seed) const override;

private:
    Tensor *w1_, *b1_, *w2_, *b2_;
};

/// Single-layer gated recurrence over positions (MoSE-style frame):
///   z_t = sigmoid(x_t Wz + h_{t-1} Uz + bz)
///   c_t = tanh(x_t Wc + h_{t-1} Uc + bc)
///   h_t = c_t + z_t * (h_{t-1} - c_t),   h_0 = 0
class RecurrentExpert final : public Expert {
public:
    RecurrentExpert(ParamStore& params, const std::string& scope, std::size_t d, std::uint64_t seed);
    Var forward(Var x, std::optional<std::uint64_t> dropout_seed) const override;

private:
    std::size_t d_;
    Tensor *wz_, *uz_, *bz_, *wc_, *uc_, *bc_;
};

struct MoeOutput {
    Var mixed;                                // X^k
    Var gate;                                 // [1 x M] weights after top-k
    std::vector<std::size_t> evaluated;       // experts actually run, ascending
};

/// Shared-bottom encoder, per-task gates over M experts and per-task towers.
class MoeFrame {
public:
    MoeFrame(ParamStore& params, const EncoderConfig& encoder, const MoeConfig& moe, std::uint64_t seed);

    const MoeConfig& config() const noexcept { return moe_; }
    const EncoderConfig& encoder_config() const noexcept { return encoder_; }

    /// X = f_TSR(E_Input).
    Var shared_bottom(Var e_input, std::optional<std::uint64_t> dropout_seed = std::nullopt) const;

    /// softmax(mean_pool(E_Input) W_g^k), then top-k renormalisation.
    Var gate_forward(TaskKind task, Var e_input) const;

    /// Conventional: sum_j g_j * Expert_j(X). Literal: sum_j Expert_j(g_j * X).
    /// Experts with zero gate weight are skipped unless `dense` is set.
    MoeOutput moe_forward(TaskKind task, Var e_input, Var x, std::optional<std::uint64_t> dropout_seed = std::nullopt,
                          bool dense = false) const;

    /// y^k = f_TSR^k(X^k).
    Var tower_forward(TaskKind task, Var mixed, std::optional<std::uint64_t> dropout_seed = std::nullopt) const;

    const Expert& expert(std::size_t j) const { return *experts_.at(j); }
    const EncoderParams& shared_params() const noexcept { return shared_; }
    const EncoderParams& tower_params(TaskKind task) const { return towers_[task_index(task)]; }

    static std::string gate_name(TaskKind task);

private:
    EncoderConfig encoder_;
    MoeConfig moe_;
    EncoderParams shared_;
    std::vector<std::unique_ptr<Expert>> experts_;
    std::array<Tensor*, 3> gates_{};
    std::vector<EncoderParams> towers_;
};

}  // namespace camenn
