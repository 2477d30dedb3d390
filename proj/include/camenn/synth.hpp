#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "camenn/dataset.hpp"

namespace camenn {

inline constexpr std::size_t kImageSide = 30;
inline constexpr std::size_t kImageGrid = 3;
inline constexpr std::size_t kSignatureWords = 4;
inline constexpr std::size_t kSignatureTokensPerItem = 3;
inline constexpr std::size_t kGenericTokensPerItem = 2;
inline constexpr double kTextCorruptionShare = 0.6;
inline constexpr double kImageNoiseBlend = 0.6;
inline constexpr double kMinTemplateDistance = 32.0;  // mean absolute pixel difference

struct LatentConcept {
    std::size_t id = 0;
    std::vector<std::string> signature;  // words owned by this concept only
    Image template_image;                // kImageSide x kImageSide x 1
    std::vector<double> embedding;       // latent preference space
    double popularity = 0.0;
};

std::vector<LatentConcept> gen_concepts(std::size_t num_concepts, std::size_t latent_dim, std::uint64_t seed,
                                       double popularity_scale = 0.0);

/// Filler words shared by all concepts.
const std::vector<std::string>& generic_words();

double template_distance(const Image& a, const Image& b);

std::vector<ItemRecord> gen_catalog(std::span<const LatentConcept> concepts, std::size_t num_items,
                                    double text_corruption_rate, double image_corruption_rate, std::uint64_t seed);
/// Same, with concepts from gen_concepts(num_concepts, 4, seed).
std::vector<ItemRecord> gen_catalog(std::size_t num_concepts, std::size_t num_items, double text_corruption_rate,
                                    double image_corruption_rate, std::uint64_t seed);

std::vector<UserRecord> gen_users(std::size_t num_users, std::size_t latent_dim, std::uint64_t seed);

struct PreferenceModel {
    std::vector<std::vector<double>> concept_embedding;
    std::vector<double> concept_popularity;
    double noise = 0.5;               // std-dev of the logit noise
    double positive_fraction = 0.2;   // share of records labelled bought

    static PreferenceModel from_concepts(std::span<const LatentConcept> concepts, double noise,
                                         double positive_fraction);
};

/// sigmoid(preference . concept_embedding + popularity + noise * noise_draw).
double buy_probability(const UserRecord& user, std::size_t concept_id, const PreferenceModel& model,
                       double noise_draw);

/// Users and items are drawn uniformly; timestamps are 1..n in generation
/// order. A record is bought iff its buy probability is among the top
/// `positive_fraction` of the log. Uses the true concept of each item.
std::vector<InteractionRecord> gen_interactions(std::span<const UserRecord> users, std::span<const ItemRecord> catalog,
                                                std::size_t num_interactions, const PreferenceModel& model,
                                                std::uint64_t seed);

bool user_in_train(UserId user, double fraction, std::uint64_t seed);

struct Split {
    std::vector<InteractionRecord> train, test;
};

/// Partition by user-id hash; record order is preserved on each side.
Split split_dataset(std::span<const InteractionRecord> records, double fraction, std::uint64_t seed);

/// Full dataset from a manifest; seeds for each stage derive from manifest.seed.
Dataset generate_dataset(const DatasetManifest& manifest);
std::vector<LatentConcept> manifest_concepts(const DatasetManifest& manifest);

}  // namespace camenn
