#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "camenn/tape.hpp"

namespace camenn {

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    /// Denominator floor of the relative error, so entries whose true
    /// gradient is ~0 are judged on absolute error instead.
    double scale_floor = 1e-6;
    /// 0 checks every entry; otherwise a seeded sample per tensor.
    std::size_t max_entries_per_tensor = 0;
    std::uint64_t sample_seed = 0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t failures = 0;
    std::string worst;  // "<tensor index>[<entry>] analytic=... numeric=..."

    bool passed() const noexcept { return failures == 0 && checked > 0; }
};

/// Builds a scalar loss on the given tape; must be a pure function of the
/// tensors it reads.
using LossBuilder = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients of `loss` with respect to `wrt` against
/// central differences (f(x+h) - f(x-h)) / 2h. Each tensor in `wrt` must
/// require grad. Tensors are restored exactly after perturbation.
GradCheckReport check_gradients(const LossBuilder& loss, std::span<Tensor* const> wrt, const GradCheckOptions& options = {});

}  // namespace camenn
