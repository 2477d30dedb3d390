#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "camenn/embedding.hpp"

namespace camenn {

using ItemId = std::uint64_t;
using UserId = std::uint64_t;

struct ItemRecord {
    ItemId id = 0;
    std::size_t concept_id = 0;  // ground truth, kept even when corrupted
    std::string text;
    Image image;
    bool text_corrupted = false;
    bool image_corrupted = false;

    bool operator==(const ItemRecord&) const = default;
};

struct UserRecord {
    UserId id = 0;
    std::vector<double> preference;

    bool operator==(const UserRecord&) const = default;
};

struct InteractionRecord {
    UserId user = 0;
    std::uint64_t timestamp = 0;
    ItemId item = 0;
    bool bought = false;

    bool operator==(const InteractionRecord&) const = default;
};

struct Dataset {
    std::vector<ItemRecord> items;  // items[i].id == i
    std::vector<UserRecord> users;  // users[u].id == u
    std::vector<InteractionRecord> interactions;

    bool operator==(const Dataset&) const = default;
};

/// Everything needed to regenerate a dataset, plus checksums of the files
/// written from it.
struct DatasetManifest {
    std::uint64_t seed = 1;
    std::size_t num_concepts = 40;
    std::size_t num_items = 5000;
    std::size_t num_users = 2000;
    std::size_t num_interactions = 50000;
    std::size_t latent_dim = 4;
    double text_corruption_rate = 0.3;
    double image_corruption_rate = 0.3;
    double preference_noise = 0.5;
    double popularity_scale = 0.0;  // std-dev of a per-concept logit offset
    double positive_fraction = 0.2;
    double split_fraction = 0.75;
    std::map<std::string, std::string> checksums;  // file name -> fnv1a64 hex

    bool operator==(const DatasetManifest&) const = default;
};

inline constexpr const char* kCatalogFile = "catalog.jsonl";
inline constexpr const char* kUsersFile = "users.jsonl";
inline constexpr const char* kInteractionsFile = "interactions.jsonl";
inline constexpr const char* kManifestFile = "manifest.json";

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws ParseError(line 0) on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

void write_catalog(std::ostream& out, std::span<const ItemRecord> items);
void write_users(std::ostream& out, std::span<const UserRecord> users);
void write_interactions(std::ostream& out, std::span<const InteractionRecord> interactions);

/// Readers throw ParseError carrying the 1-based line number of the first bad record.
std::vector<ItemRecord> read_catalog(std::istream& in);
std::vector<UserRecord> read_users(std::istream& in);
std::vector<InteractionRecord> read_interactions(std::istream& in);

/// Sets one manifest field by name (e.g. "num_items"); throws ConfigError.
void set_manifest_field(DatasetManifest& manifest, std::string_view key, std::string_view value);

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(std::string_view text);

/// Writes the three record files and manifest.json (with fresh checksums) into `dir`.
DatasetManifest write_dataset(const std::filesystem::path& dir, const Dataset& data, DatasetManifest manifest);

struct LoadedDataset {
    Dataset data;
    DatasetManifest manifest;
};

/// Reads a directory written by write_dataset and verifies checksums.
LoadedDataset read_dataset(const std::filesystem::path& dir);

std::string checksum_hex(std::string_view bytes);

}  // namespace camenn
