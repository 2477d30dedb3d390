#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "camenn/embedding.hpp"
#include "camenn/moe.hpp"
#include "camenn/tasks.hpp"

namespace camenn {

/// Frozen provider outputs for every catalog item, computed once.
class FeatureBank {
public:
    struct Entry {
        std::optional<Tensor> text;  // [n_T x d], absent for empty text
        Tensor patches;              // [n_P x d]
    };

    FeatureBank(std::span<const ItemRecord> items, const Vocabulary& vocab, const TextProvider& text,
                const ImageProvider& image, std::size_t grid = 3, std::size_t max_text_len = kMaxTextLen);

    const Entry& at(ItemId id) const;
    std::size_t size() const noexcept { return entries_.size(); }

private:
    std::vector<Entry> entries_;
};

struct ModelConfig {
    EncoderConfig encoder;
    MoeConfig moe;
    std::size_t num_users = 1;
    std::size_t num_contexts = 4;
    std::size_t max_behavior = 3;
    std::size_t max_text_len = kMaxTextLen;
    std::size_t max_patch_len = kMaxPatchLen;
    HeadPooling cvr_head = HeadPooling::MeanPool;

    void validate() const;
};

std::size_t context_of(std::uint64_t timestamp, std::size_t num_contexts);

class CameNN {
public:
    CameNN(const ModelConfig& config, std::uint64_t seed);
    CameNN(const CameNN&) = delete;
    CameNN& operator=(const CameNN&) = delete;

    const ModelConfig& config() const noexcept { return config_; }
    ParamStore& params() noexcept { return params_; }
    const ParamStore& params() const noexcept { return params_; }
    const MoeFrame& frame() const noexcept { return *frame_; }
    const HeadParams& head(TaskKind k) const { return heads_[task_index(k)]; }

    /// Alignment rows: E_Target only, text from text_item and image from
    /// image_item. CVR rows: E_Other (user, context), history blocks, target.
    InputSequence build_input(Tape& tape, TaskKind task, const TaskRow& row, const FeatureBank& bank);

    struct Trace {
        InputSequence input;
        Var shared;
        MoeOutput moe;
        Var tower;
        Var probability;  // [1 x 1]
    };

    Trace forward(Tape& tape, TaskKind task, const TaskRow& row, const FeatureBank& bank,
                  std::optional<std::uint64_t> dropout_seed = std::nullopt);

    /// Probabilities of all rows stacked as [n x 1].
    Var batch_probabilities(Tape& tape, TaskKind task, std::span<const TaskRow> rows, const FeatureBank& bank,
                            std::optional<std::uint64_t> dropout_seed = std::nullopt);

    /// Mean BCE of one task batch.
    Var task_loss(Tape& tape, TaskKind task, std::span<const TaskRow> rows, const FeatureBank& bank,
                  std::optional<std::uint64_t> dropout_seed = std::nullopt);

private:
    ModelConfig config_;
    ParamStore params_;
    std::unique_ptr<MoeFrame> frame_;
    std::array<HeadParams, 3> heads_{};
};

struct JointLoss {
    Var total;
    std::array<std::optional<double>, 3> task_loss;  // per task, absent when skipped
};

/// lambda-weighted sum of per-task BCE. Tasks with zero weight are not
/// evaluated at all.
JointLoss joint_loss(Tape& tape, CameNN& model, const std::array<std::span<const TaskRow>, 3>& batches,
                     const TaskWeights& weights, const FeatureBank& bank,
                     std::optional<std::uint64_t> dropout_seed = std::nullopt);

}  // namespace camenn
