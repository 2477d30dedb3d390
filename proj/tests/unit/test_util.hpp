#pragma once

#include <gtest/gtest.h>

#include <vector>

#include "camenn/gradcheck.hpp"
#include "camenn/ops.hpp"
#include "camenn/params.hpp"
#include "camenn/rng.hpp"

namespace camenn::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    t.set_requires_grad(grad);
    return t;
}

// Weighted mean with fixed random weights, so every output entry matters.
inline Var probe_loss(Var out, std::uint64_t seed) {
    Rng rng(seed);
    Tensor w(out.shape());
    for (auto& v : w.data()) v = rng.uniform(-1.0, 1.0);
    Var wv = out.tape->constant(std::move(w));
    Var weighted = mul(out, wv);
    return weighted.value().rank() == 1 ? mean_pool(weighted, 0) : mean_pool(mean_pool(weighted, 0), 1);
}

inline void expect_gradcheck(const LossBuilder& fn, std::vector<Tensor*> wrt, const GradCheckOptions& options = {}) {
    auto report = check_gradients(fn, wrt, options);
    EXPECT_TRUE(report.passed()) << "max rel error " << report.max_rel_error << " at " << report.worst;
}

inline std::vector<Tensor*> all_params(ParamStore& store) {
    std::vector<Tensor*> out;
    for (std::size_t i = 0; i < store.size(); ++i) out.push_back(&store.entry(i).tensor);
    return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    EXPECT_EQ(a.shape(), b.shape());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace camenn::testing
