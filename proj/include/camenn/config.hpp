#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "camenn/model.hpp"
#include "camenn/optim.hpp"

namespace camenn {

struct TrainSettings {
    std::size_t batch_size = 32;
    std::size_t epochs = 20;
    std::size_t patience = 3;
    std::size_t max_steps_per_epoch = 0;  // 0 = one pass over the largest active task
    double validation_fraction = 0.1;     // of training users, held out for early stopping
    double alignment_fraction = 0.75;     // of items, used for alignment training
    std::size_t negative_ratio = 1;
    std::size_t eval_alignment_items = 0;  // 0 = all held-out items
    std::uint64_t seed = 1;
};

struct RunConfig {
    std::filesystem::path data_dir = "data";
    std::filesystem::path output_dir = "run";
    std::uint64_t provider_seed = 1;
    std::filesystem::path provider_import;  // optional checkpoint with provider tables
    ModelConfig model;
    TaskWeights weights;
    AdamConfig optim;
    TrainSettings train;
    TaskKind similarity_task = TaskKind::ITA;

    RunConfig();

    /// Sets one dotted key, e.g. "moe.top_k". Throws ConfigError on unknown
    /// keys or malformed values.
    void set(std::string_view key, std::string_view value);
    /// "key=value".
    void set_assignment(std::string_view assignment);

    /// Canonical "key = value" listing, sorted by key.
    std::string to_string() const;
    /// fnv1a64 of to_string(), hex.
    std::string hash() const;

    void validate() const;
};

/// INI file: [section] headers and key = value lines; keys become
/// "section.key". Throws ConfigError naming the line on syntax errors.
RunConfig load_config(const std::filesystem::path& path);
void apply_config_text(RunConfig& config, std::string_view ini_text);

}  // namespace camenn
