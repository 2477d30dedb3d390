#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "camenn/tape.hpp"

namespace camenn {

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before the log in bce_loss.
inline constexpr double kProbClamp = 1e-7;

/// Key mask for attention and pooling: true marks a position that may be used.
using PositionMask = std::vector<bool>;

// All ops record onto the tape of their first operand. Rank-2 tensors are
// [rows x cols]; "row-vector" means shape [d] or [1 x d].

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
/// One-element `s` times every entry of `x`.
Var scale_by(Var s, Var x);
/// Adds a row-vector bias to every row of `x`.
Var add_row(Var x, Var bias);

Var relu(Var x);
/// tanh approximation.
Var gelu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);

/// Normalized exponentials along `axis` (max-shifted).
Var softmax(Var x, std::size_t axis);
/// Per-row normalization over the last axis, then gain and bias.
Var layer_norm(Var x, Var gain, Var bias, double eps);

Var concat(std::span<const Var> parts, std::size_t axis);
Var slice_rows(Var x, std::size_t begin, std::size_t end);
/// Flat entry `index` as a one-element tensor.
Var element(Var x, std::size_t index);

/// Mean along `axis`; the reduced axis becomes size 1.
Var mean_pool(Var x, std::size_t axis);
/// Mean over the rows whose mask entry is true, as a [1 x cols] tensor.
Var mean_rows(Var x, const PositionMask& mask);

/// Gathers rows of `table` ([V x d]) into an [n x d] tensor.
Var embedding_lookup(Var table, std::span<const std::size_t> ids);

/// Mean binary cross-entropy of probabilities `p` against 0/1 `labels`.
Var bce_loss(Var p, std::span<const double> labels);

/// Keeps the `k` largest entries of the probability vector `p` (ties go to the
/// lower index), zeroes the rest and renormalizes. With k equal to the length
/// of `p` the input is returned unchanged.
Var topk_renormalize(Var p, std::size_t k);

/// Inverted dropout driven by `seed`; rate 0 returns `x` itself.
Var dropout(Var x, double rate, std::uint64_t seed);

/// Scaled dot-product attention over `heads` equal column groups of q/k/v
/// (each [L x d]). Masked key positions get zero weight.
Var attention(Var q, Var k, Var v, std::size_t heads, const std::optional<PositionMask>& mask);

/// Per-head [L x L] attention weights, exactly as used inside `attention`.
std::vector<Tensor> attention_probabilities(const Tensor& q, const Tensor& k, std::size_t heads,
                                            const std::optional<PositionMask>& mask);

}  // namespace camenn
