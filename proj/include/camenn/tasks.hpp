#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "camenn/dataset.hpp"
#include "camenn/moe.hpp"

namespace camenn {

struct TaskRow {
    double label = 0.0;
    ItemId target = 0;      // CVR target; for alignment the item whose other modality is kept
    ItemId text_item = 0;   // item that supplies the text part
    ItemId image_item = 0;  // item that supplies the image part
    UserId user = 0;
    std::uint64_t timestamp = 0;
    std::vector<ItemId> history;                    // bought before `timestamp`, oldest first
    std::vector<std::uint64_t> history_timestamps;  // parallel to `history`
};

struct TaskBatch {
    TaskKind task = TaskKind::CVR;
    std::vector<TaskRow> rows;
};

/// One positive per item (own text and image) plus `negative_ratio`
/// negatives: ITA swaps in another item's text, TIA another item's image.
/// The substitute is uniform over the other entries of `items`. Rows are
/// shuffled with `seed`.
TaskBatch build_alignment_batch(TaskKind task, std::span<const ItemId> items, std::size_t negative_ratio,
                                std::uint64_t seed);

/// One row per interaction. History holds the user's purchases strictly
/// before the interaction, the most recent `max_behavior` of them. Rows are
/// shuffled with `seed`.
TaskBatch build_cvr_batch(std::span<const InteractionRecord> interactions, std::size_t max_behavior,
                          std::uint64_t seed);

struct TaskWeights {
    std::array<double, 3> lambda{1.0, 1.0, 1.0};  // ITA, TIA, CVR

    double operator[](TaskKind k) const { return lambda[task_index(k)]; }
    bool active(TaskKind k) const { return lambda[task_index(k)] > 0.0; }
    /// Throws ContractError on negative or all-zero weights.
    void validate() const;
};

enum class HeadPooling { Cls, MeanPool };

struct HeadParams {
    Tensor* w = nullptr;  // [d x 1]
    Tensor* b = nullptr;  // [1]

    /// head.<task>.w and head.<task>.b
    static HeadParams create(ParamStore& params, TaskKind task, std::size_t d, std::uint64_t seed);
};

/// sigmoid(w . pooled + b) as a [1 x 1] value. Cls reads row `cls_index`;
/// MeanPool averages all rows.
Var head_forward(Var tower_output, const HeadParams& head, HeadPooling pooling, std::size_t cls_index);

/// sum_k lambda_k * loss_k over the tasks with non-zero weight.
Var combine_losses(std::span<const std::optional<Var>> task_losses, const TaskWeights& weights);

}  // namespace camenn
