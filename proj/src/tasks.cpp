#include "camenn/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "camenn/errors.hpp"
#include "camenn/rng.hpp"

namespace camenn {

TaskBatch build_alignment_batch(TaskKind task, std::span<const ItemId> items, std::size_t negative_ratio,
                                std::uint64_t seed) {
    if (task == TaskKind::CVR) throw ContractError("build_alignment_batch: CVR is not an alignment task");
    if (items.empty()) throw ContractError("build_alignment_batch: no items");
    if (items.size() < 2 && negative_ratio > 0)
        throw ContractError("build_alignment_batch: a single item admits no negative");
    Rng rng(seed);
    TaskBatch batch{task, {}};
    batch.rows.reserve(items.size() * (1 + negative_ratio));
    for (std::size_t i = 0; i < items.size(); ++i) {
        const ItemId item = items[i];
        batch.rows.push_back(TaskRow{1.0, item, item, item, 0, 0, {}, {}});
        for (std::size_t n = 0; n < negative_ratio; ++n) {
            std::size_t r = rng.below(items.size() - 1);
            if (r >= i) ++r;
            TaskRow row{0.0, item, item, item, 0, 0, {}, {}};
            (task == TaskKind::ITA ? row.text_item : row.image_item) = items[r];
            batch.rows.push_back(std::move(row));
        }
    }
    rng.shuffle(std::span<TaskRow>(batch.rows));
    return batch;
}

TaskBatch build_cvr_batch(std::span<const InteractionRecord> interactions, std::size_t max_behavior,
                          std::uint64_t seed) {
    std::unordered_map<UserId, std::vector<std::size_t>> by_user;
    for (std::size_t i = 0; i < interactions.size(); ++i) by_user[interactions[i].user].push_back(i);
    TaskBatch batch{TaskKind::CVR, std::vector<TaskRow>(interactions.size())};
    for (auto& [user, idx] : by_user) {
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return interactions[a].timestamp < interactions[b].timestamp;
        });
        std::vector<std::size_t> bought;  // indices into `interactions`, chronological
        std::size_t k = 0;
        for (std::size_t j = 0; j < idx.size(); ++j) {
            const InteractionRecord& rec = interactions[idx[j]];
            // Admit purchases strictly earlier than this record.
            for (; k < j && interactions[idx[k]].timestamp < rec.timestamp; ++k)
                if (interactions[idx[k]].bought) bought.push_back(idx[k]);
            TaskRow& row = batch.rows[idx[j]];
            row.label = rec.bought ? 1.0 : 0.0;
            row.target = row.text_item = row.image_item = rec.item;
            row.user = rec.user;
            row.timestamp = rec.timestamp;
            const std::size_t take = std::min(max_behavior, bought.size());
            for (std::size_t h = bought.size() - take; h < bought.size(); ++h) {
                row.history.push_back(interactions[bought[h]].item);
                row.history_timestamps.push_back(interactions[bought[h]].timestamp);
            }
        }
    }
    Rng rng(seed);
    rng.shuffle(std::span<TaskRow>(batch.rows));
    return batch;
}

void TaskWeights::validate() const {
    bool any = false;
    for (double l : lambda) {
        if (!(l >= 0.0) || !std::isfinite(l)) throw ContractError("task weights must be finite and non-negative");
        any = any || l > 0.0;
    }
    if (!any) throw ContractError("at least one task weight must be positive");
}

HeadParams HeadParams::create(ParamStore& params, TaskKind task, std::size_t d, std::uint64_t seed) {
    const std::string prefix = "head." + std::string(task_name(task)) + ".";
    HeadParams h;
    h.w = &params.add(prefix + "w", {d, 1});
    init_uniform(*h.w, 1.0 / std::sqrt(static_cast<double>(d)), seed, prefix + "w");
    h.b = &params.add(prefix + "b", {1});
    init_constant(*h.b, 0.0);
    return h;
}

Var head_forward(Var tower_output, const HeadParams& head, HeadPooling pooling, std::size_t cls_index) {
    Tape& t = *tower_output.tape;
    const std::size_t rows = tower_output.shape()[0];
    if (pooling == HeadPooling::Cls && cls_index >= rows)
        throw ContractError("cls_index " + std::to_string(cls_index) + " outside a sequence of " +
                            std::to_string(rows));
    Var pooled = pooling == HeadPooling::Cls ? slice_rows(tower_output, cls_index, cls_index + 1)
                                             : mean_pool(tower_output, 0);
    return sigmoid(add_row(matmul(pooled, t.leaf(*head.w)), t.leaf(*head.b)));
}

Var combine_losses(std::span<const std::optional<Var>> task_losses, const TaskWeights& weights) {
    weights.validate();
    if (task_losses.size() != 3) throw ContractError("combine_losses expects one slot per task");
    std::optional<Var> total;
    for (TaskKind k : kAllTasks) {
        if (!weights.active(k)) continue;
        const auto& loss = task_losses[task_index(k)];
        if (!loss) throw ContractError("missing loss for active task " + std::string(task_name(k)));
        Var term = weights[k] == 1.0 ? *loss : scale(*loss, weights[k]);
        total = total ? add(*total, term) : term;
    }
    return *total;
}

}  // namespace camenn
