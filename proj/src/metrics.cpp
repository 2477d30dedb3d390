#include "camenn/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "camenn/errors.hpp"

namespace camenn {

double auc(std::span<const double> scores, std::span<const double> labels) {
    if (scores.size() != labels.size())
        throw ContractError("auc: " + std::to_string(scores.size()) + " scores but " + std::to_string(labels.size()) +
                            " labels");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Ranks are 1-based; tied groups share their mean rank. Doubling keeps
    // everything integral, so the result has a single rounding.
    double pos = 0, twice_rank_sum = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double twice_mean_rank = static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] > 0.5) {
                pos += 1;
                twice_rank_sum += twice_mean_rank;
            }
        i = j;
    }
    const double neg = static_cast<double>(n) - pos;
    if (pos == 0 || neg == 0) throw ContractError("auc needs at least one positive and one negative label");
    const double twice_u = twice_rank_sum - pos * (pos + 1);
    return twice_u / (2.0 * pos * neg);
}

double accuracy(std::span<const double> scores, std::span<const double> labels, double threshold) {
    if (scores.size() != labels.size()) throw ContractError("accuracy: size mismatch");
    if (scores.empty()) throw ContractError("accuracy of an empty set");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) hit += (scores[i] >= threshold) == (labels[i] > 0.5);
    return static_cast<double>(hit) / static_cast<double>(scores.size());
}

}  // namespace camenn
