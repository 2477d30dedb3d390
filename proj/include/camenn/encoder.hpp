#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "camenn/ops.hpp"
#include "camenn/params.hpp"

namespace camenn {

struct EncoderConfig {
    std::size_t d_model = 16;
    std::size_t num_heads = 8;
    std::size_t num_blocks = 1;
    std::size_t ffn_hidden = 0;  // 0 means 4 * d_model
    double dropout = 0.0;
    double ln_eps = 1e-6;

    std::size_t hidden() const { return ffn_hidden ? ffn_hidden : 4 * d_model; }
    void validate() const;
};

/// One post-norm encoder block. Pointers refer into a ParamStore.
struct EncoderBlockParams {
    Tensor *wq, *wk, *wv, *wo;
    Tensor *ffn_w1, *ffn_b1, *ffn_w2, *ffn_b2;
    Tensor *ln1_gain, *ln1_bias, *ln2_gain, *ln2_bias;
};

struct EncoderParams {
    std::string scope;
    EncoderConfig config;
    std::vector<EncoderBlockParams> blocks;

    /// Registers encoder.<scope>.<block>.<name> tensors: weights uniform in
    /// +-1/sqrt(fan_in), biases 0, layer-norm gains 1.
    static EncoderParams create(ParamStore& params, const std::string& scope, const EncoderConfig& config,
                                std::uint64_t seed);
};

/// Multi-head self-attention including the output projection.
Var mha(Var x, const EncoderBlockParams& block, std::size_t heads, const std::optional<PositionMask>& mask);

/// Per-head attention weights of `block` for input `x`.
std::vector<Tensor> mha_weights(const Tensor& x, const EncoderBlockParams& block, std::size_t heads,
                                const std::optional<PositionMask>& mask);

/// h = LN(x + MHA(x)); out = LN(h + FFN(h)) for each block in turn.
/// Dropout is active only when a seed is given (training).
Var encoder_forward(Var x, const EncoderParams& params, const std::optional<PositionMask>& mask = std::nullopt,
                    std::optional<std::uint64_t> dropout_seed = std::nullopt);

}  // namespace camenn
