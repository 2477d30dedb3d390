#include "camenn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "camenn/errors.hpp"
#include "camenn/rng.hpp"

namespace camenn {

namespace {

double evaluate(const LossBuilder& loss) {
    Tape tape(false);
    return loss(tape).value().item();
}

}  // namespace

GradCheckReport check_gradients(const LossBuilder& loss, std::span<Tensor* const> wrt, const GradCheckOptions& options) {
    for (Tensor* t : wrt) {
        if (!t->requires_grad()) throw ContractError("check_gradients: tensor does not require grad");
        t->zero_grad();
    }
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        Var l = loss(tape);
        tape.backward(l);
        for (Tensor* t : wrt) analytic.emplace_back(t->grad().begin(), t->grad().end());
    }

    GradCheckReport report;
    Rng sampler(options.sample_seed);
    for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
        Tensor& t = *wrt[ti];
        std::vector<std::size_t> entries(t.size());
        std::iota(entries.begin(), entries.end(), std::size_t{0});
        if (options.max_entries_per_tensor != 0 && entries.size() > options.max_entries_per_tensor) {
            sampler.shuffle(std::span<std::size_t>(entries));
            entries.resize(options.max_entries_per_tensor);
            std::sort(entries.begin(), entries.end());
        }
        for (std::size_t i : entries) {
            const double original = t[i];
            t[i] = original + options.step;
            const double up = evaluate(loss);
            t[i] = original - options.step;
            const double down = evaluate(loss);
            t[i] = original;
            const double numeric = (up - down) / (2.0 * options.step);
            const double a = analytic[ti][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), options.scale_floor});
            const double rel = std::abs(a - numeric) / denom;
            ++report.checked;
            if (!(rel <= options.tolerance)) ++report.failures;
            if (!(rel <= report.max_rel_error)) {
                report.max_rel_error = rel;
                std::ostringstream os;
                os.precision(10);
                os << ti << '[' << i << "] analytic=" << a << " numeric=" << numeric;
                report.worst = os.str();
            }
        }
    }
    for (Tensor* t : wrt) t->zero_grad();
    return report;
}

}  // namespace camenn
