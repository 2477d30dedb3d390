#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "camenn/config.hpp"
#include "camenn/dataset.hpp"
#include "camenn/model.hpp"

namespace camenn {

/// Dataset-derived state that training never modifies.
struct Workspace {
    LoadedDataset dataset;
    Vocabulary vocab;
    TextProvider text;
    ImageProvider image;
    FeatureBank bank;
    std::vector<ItemId> alignment_train_items;
    std::vector<ItemId> alignment_heldout_items;
    TaskBatch cvr_train, cvr_validation, cvr_test;
};

Workspace prepare_workspace(const RunConfig& config);
Workspace prepare_workspace(const RunConfig& config, LoadedDataset dataset);

/// Frozen text/image providers for a catalog, including any imported tables.
std::pair<TextProvider, ImageProvider> make_providers(const RunConfig& config, const Vocabulary& vocab);

struct EvalReport {
    std::optional<double> cvr_auc, ita_accuracy, tia_accuracy;
    std::optional<double> cvr_loss, ita_loss, tia_loss;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;

    std::string to_json() const;
};

struct ScoredRows {
    std::vector<double> scores, labels;
    double loss = 0.0;  // mean BCE
};

/// Forward-only scoring, one tape per row.
ScoredRows score_rows(CameNN& model, TaskKind task, std::span<const TaskRow> rows, const FeatureBank& bank);

/// Test-side metrics: CVR AUC over `cvr_rows`, ITA/TIA accuracy over
/// balanced alignment batches built from `alignment_items`.
EvalReport evaluate(CameNN& model, const Workspace& ws, std::span<const TaskRow> cvr_rows,
                    std::span<const ItemId> alignment_items, std::size_t negative_ratio, std::uint64_t seed);

std::vector<NamedTensor> model_tensors(const CameNN& model);
void load_model_tensors(CameNN& model, const std::vector<NamedTensor>& tensors);

inline constexpr const char* kInitCheckpoint = "init.ckpt";
inline constexpr const char* kBestCheckpoint = "best.ckpt";
inline constexpr const char* kStateCheckpoint = "state.ckpt";
inline constexpr const char* kReportFile = "report.json";
inline constexpr const char* kTrainLog = "train.log";

struct TrainResult {
    EvalReport report;
    std::filesystem::path checkpoint;  // best parameters
};

/// Trains with round-robin task batches and early stopping on validation CVR
/// AUC (mean alignment accuracy when CVR is inactive). Writes init.ckpt,
/// best.ckpt, state.ckpt (resume point after each epoch), train.log and
/// report.json into config.output_dir. With `resume`, continues from
/// state.ckpt in the output directory.
TrainResult run_training(const RunConfig& config, const Workspace& ws, std::ostream* log = nullptr,
                         bool resume = false);

/// Builds a model for `config` and loads parameters from a checkpoint.
std::unique_ptr<CameNN> load_model(const RunConfig& config, const Workspace& ws,
                                   const std::filesystem::path& checkpoint);

struct SimilarityMatrix {
    std::vector<ItemId> items;
    std::vector<std::vector<double>> cosine;  // [text of row item][image of column item]
    std::vector<std::string> warnings;

    double diagonal_mean() const;
    double off_diagonal_mean() const;
};

/// Pooled text and image rows of each item's own alignment input, taken at
/// the MoE output (tower input) of `task`.
SimilarityMatrix similarity_matrix(CameNN& model, const FeatureBank& bank, std::span<const ItemId> items,
                                   TaskKind task);
void write_similarity_csv(std::ostream& out, const SimilarityMatrix& m);

/// Up to `count` held-out items with pairwise distinct concepts, lowest ids first.
std::vector<ItemId> pick_similarity_items(const Workspace& ws, std::size_t count);

struct AblationCell {
    ExpertKind kind;
    std::uint64_t seed;
    double cvr_auc;
};

struct AblationTable {
    std::vector<AblationCell> cells;

    /// mean and sample standard deviation (n - 1) of CVR AUC for one frame.
    std::pair<double, double> summary(ExpertKind kind) const;
    std::string to_csv() const;
};

/// Trains each expert kind (mlp_relu, recurrent, transformer) for every seed
/// under otherwise identical settings; runs go to output_dir/<kind>_seed<s>.
AblationTable run_ablation(const RunConfig& config, const Workspace& ws, std::span<const std::uint64_t> seeds,
                           std::ostream* log = nullptr);

}  // namespace camenn
