#include "camenn/dataset.hpp"

#include <sodium.h>

#include <cstdio>
#include <fstream>
#include <istream>
#include <json.hpp>
#include <ostream>
#include <sstream>

#include "camenn/errors.hpp"
#include "camenn/rng.hpp"

namespace camenn {

using nlohmann::json;

namespace {

constexpr int kBase64Variant = sodium_base64_VARIANT_ORIGINAL;

template <class Record, class Parse>
std::vector<Record> read_lines(std::istream& in, Parse parse) {
    std::vector<Record> out;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        try {
            out.push_back(parse(json::parse(line)));
        } catch (const json::exception& e) {
            throw ParseError(e.what(), number);
        } catch (const ParseError& e) {
            throw ParseError(e.message(), number);
        }
    }
    return out;
}

template <class Record, class Encode>
void write_lines(std::ostream& out, std::span<const Record> records, Encode encode) {
    for (const auto& r : records) out << encode(r).dump() << '\n';
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string(), 0);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ParseError("cannot write " + path.string(), 0);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ParseError("short write to " + path.string(), 0);
}

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out(sodium_base64_encoded_len(bytes.size(), kBase64Variant), '\0');
    sodium_bin2base64(out.data(), out.size(), bytes.data(), bytes.size(), kBase64Variant);
    out.pop_back();  // trailing NUL
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    std::vector<std::uint8_t> out(text.size() / 4 * 3 + 3);
    std::size_t len = 0;
    const char* end = nullptr;
    if (sodium_base642bin(out.data(), out.size(), text.data(), text.size(), nullptr, &len, &end, kBase64Variant) != 0 ||
        end != text.data() + text.size())
        throw ParseError("malformed base64 payload", 0);
    out.resize(len);
    return out;
}

void write_catalog(std::ostream& out, std::span<const ItemRecord> items) {
    write_lines(out, items, [](const ItemRecord& r) {
        return json{{"id", r.id},
                    {"concept", r.concept_id},
                    {"text", r.text},
                    {"height", r.image.height},
                    {"width", r.image.width},
                    {"channels", r.image.channels},
                    {"pixels", base64_encode(r.image.pixels)},
                    {"text_corrupted", r.text_corrupted},
                    {"image_corrupted", r.image_corrupted}};
    });
}

void write_users(std::ostream& out, std::span<const UserRecord> users) {
    write_lines(out, users, [](const UserRecord& r) { return json{{"id", r.id}, {"preference", r.preference}}; });
}

void write_interactions(std::ostream& out, std::span<const InteractionRecord> interactions) {
    write_lines(out, interactions, [](const InteractionRecord& r) {
        return json{{"user", r.user}, {"timestamp", r.timestamp}, {"item", r.item}, {"bought", r.bought ? 1 : 0}};
    });
}

std::vector<ItemRecord> read_catalog(std::istream& in) {
    return read_lines<ItemRecord>(in, [](const json& j) {
        ItemRecord r;
        r.id = j.at("id").get<ItemId>();
        r.concept_id = j.at("concept").get<std::size_t>();
        r.text = j.at("text").get<std::string>();
        r.image.height = j.at("height").get<std::size_t>();
        r.image.width = j.at("width").get<std::size_t>();
        r.image.channels = j.at("channels").get<std::size_t>();
        r.image.pixels = base64_decode(j.at("pixels").get<std::string>());
        if (r.image.pixels.size() != r.image.height * r.image.width * r.image.channels)
            throw ParseError("pixel payload has " + std::to_string(r.image.pixels.size()) + " bytes, expected " +
                                 std::to_string(r.image.height * r.image.width * r.image.channels),
                             0);
        r.text_corrupted = j.at("text_corrupted").get<bool>();
        r.image_corrupted = j.at("image_corrupted").get<bool>();
        return r;
    });
}

std::vector<UserRecord> read_users(std::istream& in) {
    return read_lines<UserRecord>(in, [](const json& j) {
        return UserRecord{j.at("id").get<UserId>(), j.at("preference").get<std::vector<double>>()};
    });
}

std::vector<InteractionRecord> read_interactions(std::istream& in) {
    return read_lines<InteractionRecord>(in, [](const json& j) {
        const int bought = j.at("bought").get<int>();
        if (bought != 0 && bought != 1) throw ParseError("bought must be 0 or 1", 0);
        return InteractionRecord{j.at("user").get<UserId>(), j.at("timestamp").get<std::uint64_t>(),
                                 j.at("item").get<ItemId>(), bought == 1};
    });
}

void set_manifest_field(DatasetManifest& m, std::string_view key, std::string_view value) {
    const std::string v(value);
    auto integer = [&]() -> std::uint64_t {
        std::size_t used = 0;
        try {
            const unsigned long long x = std::stoull(v, &used);
            if (used == v.size() && v.find('-') == std::string::npos) return x;
        } catch (const std::exception&) {
        }
        throw ConfigError("manifest field " + std::string(key) + ": '" + v + "' is not a non-negative integer");
    };
    auto real = [&]() -> double {
        std::size_t used = 0;
        try {
            const double x = std::stod(v, &used);
            if (used == v.size()) return x;
        } catch (const std::exception&) {
        }
        throw ConfigError("manifest field " + std::string(key) + ": '" + v + "' is not a number");
    };
    if (key == "seed") m.seed = integer();
    else if (key == "num_concepts") m.num_concepts = integer();
    else if (key == "num_items") m.num_items = integer();
    else if (key == "num_users") m.num_users = integer();
    else if (key == "num_interactions") m.num_interactions = integer();
    else if (key == "latent_dim") m.latent_dim = integer();
    else if (key == "text_corruption_rate") m.text_corruption_rate = real();
    else if (key == "image_corruption_rate") m.image_corruption_rate = real();
    else if (key == "preference_noise") m.preference_noise = real();
    else if (key == "popularity_scale") m.popularity_scale = real();
    else if (key == "positive_fraction") m.positive_fraction = real();
    else if (key == "split_fraction") m.split_fraction = real();
    else throw ConfigError("unknown manifest field '" + std::string(key) + "'");
}

std::string manifest_to_json(const DatasetManifest& m) {
    json j{{"format", "camenn-dataset-1"},
           {"seed", m.seed},
           {"num_concepts", m.num_concepts},
           {"num_items", m.num_items},
           {"num_users", m.num_users},
           {"num_interactions", m.num_interactions},
           {"latent_dim", m.latent_dim},
           {"text_corruption_rate", m.text_corruption_rate},
           {"image_corruption_rate", m.image_corruption_rate},
           {"preference_noise", m.preference_noise},
           {"popularity_scale", m.popularity_scale},
           {"positive_fraction", m.positive_fraction},
           {"split_fraction", m.split_fraction},
           {"checksums", m.checksums}};
    return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(std::string_view text) {
    try {
        json j = json::parse(text);
        if (j.value("format", std::string()) != "camenn-dataset-1") throw ParseError("unsupported manifest format", 0);
        DatasetManifest m;
        m.seed = j.at("seed").get<std::uint64_t>();
        m.num_concepts = j.at("num_concepts").get<std::size_t>();
        m.num_items = j.at("num_items").get<std::size_t>();
        m.num_users = j.at("num_users").get<std::size_t>();
        m.num_interactions = j.at("num_interactions").get<std::size_t>();
        m.latent_dim = j.at("latent_dim").get<std::size_t>();
        m.text_corruption_rate = j.at("text_corruption_rate").get<double>();
        m.image_corruption_rate = j.at("image_corruption_rate").get<double>();
        m.preference_noise = j.at("preference_noise").get<double>();
        m.popularity_scale = j.value("popularity_scale", m.popularity_scale);
        m.positive_fraction = j.at("positive_fraction").get<double>();
        m.split_fraction = j.at("split_fraction").get<double>();
        if (j.contains("checksums")) m.checksums = j.at("checksums").get<std::map<std::string, std::string>>();
        return m;
    } catch (const json::exception& e) {
        throw ParseError(std::string("manifest: ") + e.what(), 0);
    }
}

std::string checksum_hex(std::string_view bytes) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
    return buf;
}

DatasetManifest write_dataset(const std::filesystem::path& dir, const Dataset& data, DatasetManifest manifest) {
    std::filesystem::create_directories(dir);
    auto emit = [&](const char* name, auto writer) {
        std::ostringstream ss;
        writer(ss);
        const std::string bytes = ss.str();
        write_file(dir / name, bytes);
        manifest.checksums[name] = checksum_hex(bytes);
    };
    emit(kCatalogFile, [&](std::ostream& o) { write_catalog(o, data.items); });
    emit(kUsersFile, [&](std::ostream& o) { write_users(o, data.users); });
    emit(kInteractionsFile, [&](std::ostream& o) { write_interactions(o, data.interactions); });
    write_file(dir / kManifestFile, manifest_to_json(manifest));
    return manifest;
}

LoadedDataset read_dataset(const std::filesystem::path& dir) {
    LoadedDataset out;
    out.manifest = manifest_from_json(read_file(dir / kManifestFile));
    auto load = [&](const char* name, auto reader) {
        const std::string bytes = read_file(dir / name);
        auto it = out.manifest.checksums.find(name);
        if (it != out.manifest.checksums.end() && it->second != checksum_hex(bytes))
            throw ParseError(std::string(name) + ": checksum mismatch (manifest " + it->second + ", file " +
                                 checksum_hex(bytes) + ")",
                             0);
        std::istringstream in(bytes);
        try {
            return reader(in);
        } catch (const ParseError& e) {
            throw ParseError(std::string(name) + ": " + e.message(), e.line());
        }
    };
    out.data.items = load(kCatalogFile, [](std::istream& in) { return read_catalog(in); });
    out.data.users = load(kUsersFile, [](std::istream& in) { return read_users(in); });
    out.data.interactions = load(kInteractionsFile, [](std::istream& in) { return read_interactions(in); });

    for (std::size_t i = 0; i < out.data.items.size(); ++i)
        if (out.data.items[i].id != i)
            throw ParseError(std::string(kCatalogFile) + ": item ids must be 0..n-1 in order", i + 1);
    for (std::size_t u = 0; u < out.data.users.size(); ++u)
        if (out.data.users[u].id != u)
            throw ParseError(std::string(kUsersFile) + ": user ids must be 0..n-1 in order", u + 1);
    for (std::size_t k = 0; k < out.data.interactions.size(); ++k) {
        const auto& r = out.data.interactions[k];
        if (r.user >= out.data.users.size() || r.item >= out.data.items.size())
            throw ParseError(std::string(kInteractionsFile) + ": unknown user or item id", k + 1);
    }
    return out;
}

}  // namespace camenn
