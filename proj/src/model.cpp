#include "camenn/model.hpp"

#include "camenn/errors.hpp"
#include "camenn/rng.hpp"

namespace camenn {

FeatureBank::FeatureBank(std::span<const ItemRecord> items, const Vocabulary& vocab, const TextProvider& text,
                         const ImageProvider& image, std::size_t grid, std::size_t max_text_len) {
    if (text.dim() != image.dim()) throw DimensionError("text and image providers disagree on dimension");
    entries_.reserve(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        const ItemRecord& it = items[i];
        if (it.id != i) throw ContractError("FeatureBank: item ids must be 0..n-1 in order");
        Entry e;
        const TextTokenSequence tokens = tokenize(it.text, vocab, max_text_len);
        if (!tokens.ids.empty()) e.text = text.embed(tokens.ids);
        e.patches = image.embed(split_patches(it.image, grid, grid));
        entries_.push_back(std::move(e));
    }
}

const FeatureBank::Entry& FeatureBank::at(ItemId id) const {
    if (id >= entries_.size())
        throw ContractError("item " + std::to_string(id) + " not in feature bank of " +
                            std::to_string(entries_.size()));
    return entries_[id];
}

void ModelConfig::validate() const {
    encoder.validate();
    moe.validate();
    if (num_users == 0 || num_contexts == 0) throw ConfigError("model needs at least one user and one context");
    if (max_text_len == 0 || max_patch_len == 0) throw ConfigError("maximum text and patch lengths must be positive");
}

std::size_t context_of(std::uint64_t timestamp, std::size_t num_contexts) { return timestamp % num_contexts; }

CameNN::CameNN(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    const std::size_t d = config_.encoder.d_model;
    register_embedding_params(params_,
                              EmbeddingShape{d, config_.max_text_len, config_.max_patch_len, config_.num_users,
                                             config_.num_contexts},
                              seed);
    frame_ = std::make_unique<MoeFrame>(params_, config_.encoder, config_.moe, seed);
    for (TaskKind k : kAllTasks) heads_[task_index(k)] = HeadParams::create(params_, k, d, seed);
}

InputSequence CameNN::build_input(Tape& tape, TaskKind task, const TaskRow& row, const FeatureBank& bank) {
    const EmbeddingTables tables = EmbeddingTables::bind(tape, params_);
    auto block = [&](ItemId text_item, ItemId image_item) {
        ItemBlock b{tables.cls, std::nullopt, tables.sep, std::nullopt};
        const auto& te = bank.at(text_item);
        if (te.text)
            b.text = add_position_and_segment(tape, *te.text, tables.text_position, tables.segment, kTextSegmentRow);
        b.image = add_position_and_segment(tape, bank.at(image_item).patches, tables.patch_position, tables.segment,
                                           kImageSegmentRow);
        return b;
    };
    if (task != TaskKind::CVR) return assemble_input(std::nullopt, {}, block(row.text_item, row.image_item));

    if (row.user >= config_.num_users)
        throw ContractError("user " + std::to_string(row.user) + " outside the " + std::to_string(config_.num_users) +
                            " embedded users");
    const std::size_t user = row.user, ctx = context_of(row.timestamp, config_.num_contexts);
    std::array<Var, 2> other_parts{embedding_lookup(tables.user, std::span<const std::size_t>(&user, 1)),
                                   embedding_lookup(tables.context, std::span<const std::size_t>(&ctx, 1))};
    std::vector<ItemBlock> history;
    const std::size_t skip = row.history.size() > config_.max_behavior ? row.history.size() - config_.max_behavior : 0;
    for (std::size_t h = skip; h < row.history.size(); ++h) history.push_back(block(row.history[h], row.history[h]));
    return assemble_input(concat(other_parts, 0), history, block(row.target, row.target), config_.max_behavior);
}

CameNN::Trace CameNN::forward(Tape& tape, TaskKind task, const TaskRow& row, const FeatureBank& bank,
                              std::optional<std::uint64_t> dropout_seed) {
    Trace tr{build_input(tape, task, row, bank), {}, {}, {}, {}};
    const Var e = tr.input.embeddings;
    tr.shared = frame_->shared_bottom(e, dropout_seed);
    tr.moe = frame_->moe_forward(task, e, tr.shared, dropout_seed);
    tr.tower = frame_->tower_forward(task, tr.moe.mixed, dropout_seed);
    const HeadPooling pooling = task == TaskKind::CVR ? config_.cvr_head : HeadPooling::Cls;
    tr.probability = head_forward(tr.tower, heads_[task_index(task)], pooling, tr.input.cls_index);
    return tr;
}

Var CameNN::batch_probabilities(Tape& tape, TaskKind task, std::span<const TaskRow> rows, const FeatureBank& bank,
                                std::optional<std::uint64_t> dropout_seed) {
    if (rows.empty()) throw ContractError("empty batch for task " + std::string(task_name(task)));
    std::vector<Var> probs;
    probs.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::optional<std::uint64_t> seed;
        if (dropout_seed) seed = hash_combine(*dropout_seed, i);
        probs.push_back(forward(tape, task, rows[i], bank, seed).probability);
    }
    return concat(probs, 0);
}

Var CameNN::task_loss(Tape& tape, TaskKind task, std::span<const TaskRow> rows, const FeatureBank& bank,
                      std::optional<std::uint64_t> dropout_seed) {
    Var p = batch_probabilities(tape, task, rows, bank, dropout_seed);
    std::vector<double> labels;
    labels.reserve(rows.size());
    for (const auto& r : rows) labels.push_back(r.label);
    return bce_loss(p, labels);
}

JointLoss joint_loss(Tape& tape, CameNN& model, const std::array<std::span<const TaskRow>, 3>& batches,
                     const TaskWeights& weights, const FeatureBank& bank, std::optional<std::uint64_t> dropout_seed) {
    weights.validate();
    JointLoss out;
    std::array<std::optional<Var>, 3> losses;
    for (TaskKind k : kAllTasks) {
        if (!weights.active(k)) continue;
        std::optional<std::uint64_t> seed;
        if (dropout_seed) seed = hash_combine(*dropout_seed, task_index(k));
        Var l = model.task_loss(tape, k, batches[task_index(k)], bank, seed);
        out.task_loss[task_index(k)] = l.value().item();
        losses[task_index(k)] = l;
    }
    out.total = combine_losses(losses, weights);
    return out;
}

}  // namespace camenn
