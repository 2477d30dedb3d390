#include "camenn/encoder.hpp"

#include <cmath>
#include <utility>

#include "camenn/errors.hpp"
#include "camenn/rng.hpp"

namespace camenn {

void EncoderConfig::validate() const {
    if (d_model == 0 || num_heads == 0 || num_blocks == 0)
        throw ConfigError("encoder dimensions, heads and blocks must be positive");
    if (d_model % num_heads != 0)
        throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by " + std::to_string(num_heads) +
                          " heads");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0,1)");
    if (!(ln_eps > 0.0)) throw ConfigError("layer-norm eps must be positive");
}

EncoderParams EncoderParams::create(ParamStore& params, const std::string& scope, const EncoderConfig& config,
                                    std::uint64_t seed) {
    config.validate();
    EncoderParams ep{scope, config, {}};
    const std::size_t d = config.d_model, h = config.hidden();
    for (std::size_t b = 0; b < config.num_blocks; ++b) {
        const std::string prefix = "encoder." + scope + "." + std::to_string(b) + ".";
        auto weight = [&](const char* name, std::size_t in, std::size_t out) {
            Tensor& t = params.add(prefix + name, {in, out});
            init_uniform(t, 1.0 / std::sqrt(static_cast<double>(in)), seed, prefix + name);
            return &t;
        };
        auto vec = [&](const char* name, std::size_t n, double value) {
            Tensor& t = params.add(prefix + name, {n});
            init_constant(t, value);
            return &t;
        };
        EncoderBlockParams bp{};
        bp.wq = weight("wq", d, d);
        bp.wk = weight("wk", d, d);
        bp.wv = weight("wv", d, d);
        bp.wo = weight("wo", d, d);
        bp.ffn_w1 = weight("ffn_w1", d, h);
        bp.ffn_b1 = vec("ffn_b1", h, 0.0);
        bp.ffn_w2 = weight("ffn_w2", h, d);
        bp.ffn_b2 = vec("ffn_b2", d, 0.0);
        bp.ln1_gain = vec("ln1_gain", d, 1.0);
        bp.ln1_bias = vec("ln1_bias", d, 0.0);
        bp.ln2_gain = vec("ln2_gain", d, 1.0);
        bp.ln2_bias = vec("ln2_bias", d, 0.0);
        ep.blocks.push_back(bp);
    }
    return ep;
}

Var mha(Var x, const EncoderBlockParams& block, std::size_t heads, const std::optional<PositionMask>& mask) {
    Tape& t = *x.tape;
    Var q = matmul(x, t.leaf(*block.wq));
    Var k = matmul(x, t.leaf(*block.wk));
    Var v = matmul(x, t.leaf(*block.wv));
    return matmul(attention(q, k, v, heads, mask), t.leaf(*block.wo));
}

std::vector<Tensor> mha_weights(const Tensor& x, const EncoderBlockParams& block, std::size_t heads,
                                const std::optional<PositionMask>& mask) {
    Tape t(false);
    Var xv = t.constant(x);
    Var q = matmul(xv, t.leaf(std::as_const(*block.wq)));
    Var k = matmul(xv, t.leaf(std::as_const(*block.wk)));
    return attention_probabilities(q.value(), k.value(), heads, mask);
}

Var encoder_forward(Var x, const EncoderParams& params, const std::optional<PositionMask>& mask,
                    std::optional<std::uint64_t> dropout_seed) {
    Tape& t = *x.tape;
    const EncoderConfig& cfg = params.config;
    if (x.shape().size() != 2 || x.shape()[1] != cfg.d_model)
        throw DimensionError("encoder input " + shape_string(x.shape()) + " does not have width " +
                             std::to_string(cfg.d_model));
    Var h = x;
    for (std::size_t b = 0; b < params.blocks.size(); ++b) {
        const EncoderBlockParams& bp = params.blocks[b];
        const double rate = dropout_seed ? cfg.dropout : 0.0;
        const std::uint64_t seed = hash_combine(dropout_seed.value_or(0), b);
        Var attn = dropout(mha(h, bp, cfg.num_heads, mask), rate, hash_combine(seed, 1));
        Var mid = layer_norm(add(h, attn), t.leaf(*bp.ln1_gain), t.leaf(*bp.ln1_bias), cfg.ln_eps);
        Var ffn = add_row(matmul(gelu(add_row(matmul(mid, t.leaf(*bp.ffn_w1)), t.leaf(*bp.ffn_b1))), t.leaf(*bp.ffn_w2)),
                          t.leaf(*bp.ffn_b2));
        ffn = dropout(ffn, rate, hash_combine(seed, 2));
        h = layer_norm(add(mid, ffn), t.leaf(*bp.ln2_gain), t.leaf(*bp.ln2_bias), cfg.ln_eps);
    }
    return h;
}

}  // namespace camenn
