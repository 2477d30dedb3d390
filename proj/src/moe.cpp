#include "camenn/moe.hpp"

#include <cmath>

#include "camenn/errors.hpp"
#include "camenn/rng.hpp"

namespace camenn {

std::string_view task_name(TaskKind k) {
    switch (k) {
        case TaskKind::ITA: return "ita";
        case TaskKind::TIA: return "tia";
        case TaskKind::CVR: return "cvr";
    }
    throw ContractError("unknown task kind");
}

std::string_view expert_kind_name(ExpertKind k) {
    switch (k) {
        case ExpertKind::Transformer: return "transformer";
        case ExpertKind::MlpRelu: return "mlp_relu";
        case ExpertKind::Recurrent: return "recurrent";
    }
    throw ContractError("unknown expert kind");
}

ExpertKind parse_expert_kind(std::string_view s) {
    if (s == "transformer") return ExpertKind::Transformer;
    if (s == "mlp_relu") return ExpertKind::MlpRelu;
    if (s == "recurrent") return ExpertKind::Recurrent;
    throw ConfigError("unknown expert kind '" + std::string(s) + "' (expected transformer, mlp_relu or recurrent)");
}

std::string_view gating_mode_name(GatingMode m) {
    return m == GatingMode::Conventional ? "conventional" : "literal";
}

GatingMode parse_gating_mode(std::string_view s) {
    if (s == "conventional") return GatingMode::Conventional;
    if (s == "literal") return GatingMode::Literal;
    throw ConfigError("unknown gating mode '" + std::string(s) + "' (expected conventional or literal)");
}

void MoeConfig::validate() const {
    if (num_experts == 0) throw ConfigError("num_experts must be at least 1");
    if (top_k == 0 || top_k > num_experts)
        throw ConfigError("top_k " + std::to_string(top_k) + " must lie in [1, " + std::to_string(num_experts) + "]");
}

namespace {

Tensor* add_weight(ParamStore& params, const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed) {
    Tensor& t = params.add(name, {in, out});
    init_uniform(t, 1.0 / std::sqrt(static_cast<double>(in)), seed, name);
    return &t;
}

Tensor* add_bias(ParamStore& params, const std::string& name, std::size_t n) {
    Tensor& t = params.add(name, {n});
    init_constant(t, 0.0);
    return &t;
}

}  // namespace

TransformerExpert::TransformerExpert(ParamStore& params, const std::string& scope, const EncoderConfig& config,
                                     std::uint64_t seed)
    : params_(EncoderParams::create(params, scope, config, seed)) {}

Var TransformerExpert::forward(Var x, std::optional<std::uint64_t> dropout_seed) const {
    return encoder_forward(x, params_, std::nullopt, dropout_seed);
}

MlpReluExpert::MlpReluExpert(ParamStore& params, const std::string& scope, std::size_t d, std::size_t hidden,
                             std::uint64_t seed) {
    const std::string p = "expert." + scope + ".";
    w1_ = add_weight(params, p + "w1", d, hidden, seed);
    b1_ = add_bias(params, p + "b1", hidden);
    w2_ = add_weight(params, p + "w2", hidden, d, seed);
    b2_ = add_bias(params, p + "b2", d);
}

Var MlpReluExpert::forward(Var x, std::optional<std::uint64_t>) const {
    Tape& t = *x.tape;
    Var h = relu(add_row(matmul(x, t.leaf(*w1_)), t.leaf(*b1_)));
    return add_row(matmul(h, t.leaf(*w2_)), t.leaf(*b2_));
}

RecurrentExpert::RecurrentExpert(ParamStore& params, const std::string& scope, std::size_t d, std::uint64_t seed)
    : d_(d) {
    const std::string p = "expert." + scope + ".";
    wz_ = add_weight(params, p + "wz", d, d, seed);
    uz_ = add_weight(params, p + "uz", d, d, seed);
    bz_ = add_bias(params, p + "bz", d);
    wc_ = add_weight(params, p + "wc", d, d, seed);
    uc_ = add_weight(params, p + "uc", d, d, seed);
    bc_ = add_bias(params, p + "bc", d);
}

Var RecurrentExpert::forward(Var x, std::optional<std::uint64_t>) const {
    Tape& t = *x.tape;
    const std::size_t rows = x.shape()[0];
    Var xz = add_row(matmul(x, t.leaf(*wz_)), t.leaf(*bz_));
    Var xc = add_row(matmul(x, t.leaf(*wc_)), t.leaf(*bc_));
    Var uz = t.leaf(*uz_), uc = t.leaf(*uc_);
    Var h = t.constant(Tensor({1, d_}, 0.0));
    std::vector<Var> out;
    out.reserve(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        Var z = sigmoid(add(slice_rows(xz, r, r + 1), matmul(h, uz)));
        Var c = tanh(add(slice_rows(xc, r, r + 1), matmul(h, uc)));
        h = add(c, mul(z, sub(h, c)));
        out.push_back(h);
    }
    return concat(out, 0);
}

MoeFrame::MoeFrame(ParamStore& params, const EncoderConfig& encoder, const MoeConfig& moe, std::uint64_t seed)
    : encoder_(encoder), moe_(moe) {
    encoder_.validate();
    moe_.validate();
    shared_ = EncoderParams::create(params, "shared", encoder_, seed);
    for (std::size_t j = 0; j < moe_.num_experts; ++j) {
        const std::string scope = "expert" + std::to_string(j);
        switch (moe_.expert_kind) {
            case ExpertKind::Transformer:
                experts_.push_back(std::make_unique<TransformerExpert>(params, scope, encoder_, seed));
                break;
            case ExpertKind::MlpRelu:
                experts_.push_back(
                    std::make_unique<MlpReluExpert>(params, scope, encoder_.d_model, encoder_.hidden(), seed));
                break;
            case ExpertKind::Recurrent:
                experts_.push_back(std::make_unique<RecurrentExpert>(params, scope, encoder_.d_model, seed));
                break;
        }
    }
    for (TaskKind k : kAllTasks) {
        gates_[task_index(k)] = add_weight(params, gate_name(k), encoder_.d_model, moe_.num_experts, seed);
        towers_.push_back(EncoderParams::create(params, "tower_" + std::string(task_name(k)), encoder_, seed));
    }
}

std::string MoeFrame::gate_name(TaskKind task) { return "gate." + std::string(task_name(task)) + ".w"; }

Var MoeFrame::shared_bottom(Var e_input, std::optional<std::uint64_t> dropout_seed) const {
    return encoder_forward(e_input, shared_, std::nullopt, dropout_seed);
}

Var MoeFrame::gate_forward(TaskKind task, Var e_input) const {
    Tape& t = *e_input.tape;
    Var logits = matmul(mean_pool(e_input, 0), t.leaf(*gates_[task_index(task)]));
    return topk_renormalize(softmax(logits, 1), moe_.top_k);
}

MoeOutput MoeFrame::moe_forward(TaskKind task, Var e_input, Var x, std::optional<std::uint64_t> dropout_seed,
                                bool dense) const {
    MoeOutput out{{}, gate_forward(task, e_input), {}};
    const Tensor& g = out.gate.value();
    std::optional<Var> acc;
    for (std::size_t j = 0; j < experts_.size(); ++j) {
        if (!dense && g[j] == 0.0) continue;
        std::optional<std::uint64_t> seed;
        if (dropout_seed) seed = hash_combine(*dropout_seed, hash_combine(task_index(task), j));
        Var gj = element(out.gate, j);
        Var term = moe_.gating_mode == GatingMode::Conventional ? scale_by(gj, experts_[j]->forward(x, seed))
                                                                : experts_[j]->forward(scale_by(gj, x), seed);
        acc = acc ? add(*acc, term) : term;
        out.evaluated.push_back(j);
    }
    if (!acc) throw NumericError("gate for task " + std::string(task_name(task)) + " selected no expert");
    out.mixed = *acc;
    return out;
}

Var MoeFrame::tower_forward(TaskKind task, Var mixed, std::optional<std::uint64_t> dropout_seed) const {
    std::optional<std::uint64_t> seed;
    if (dropout_seed) seed = hash_combine(*dropout_seed, 0x7077e5 + task_index(task));
    return encoder_forward(mixed, towers_[task_index(task)], std::nullopt, seed);
}

}  // namespace camenn
