#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "camenn/errors.hpp"
#include "camenn/rng.hpp"
#include "camenn/synth.hpp"

using namespace camenn;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("camenn_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

DatasetManifest small_manifest(std::uint64_t seed = 7) {
    DatasetManifest m;
    m.seed = seed;
    m.num_concepts = 6;
    m.num_items = 60;
    m.num_users = 40;
    m.num_interactions = 1000;
    return m;
}

std::vector<std::string> words_of(const std::string& text) { return split_words(text); }

}  // namespace

TEST(Base64, KnownVectorsAndErrors) {
    const std::string man = "Man";
    EXPECT_EQ(base64_encode({reinterpret_cast<const std::uint8_t*>(man.data()), man.size()}), "TWFu");
    EXPECT_EQ(base64_encode(std::vector<std::uint8_t>{0xff}), "/w==");
    EXPECT_EQ(base64_decode("/w=="), std::vector<std::uint8_t>{0xff});
    EXPECT_TRUE(base64_decode("").empty());
    EXPECT_THROW(base64_decode("T!Fu"), ParseError);
}

TEST(Concepts, DistinctSignaturesAndTemplates) {
    auto concepts = gen_concepts(40, 4, 3);
    std::set<std::string> words;
    for (const auto& c : concepts) {
        EXPECT_EQ(c.signature.size(), kSignatureWords);
        for (const auto& w : c.signature) EXPECT_TRUE(words.insert(w).second) << w;
        EXPECT_EQ(c.template_image.pixels.size(), kImageSide * kImageSide);
    }
    for (std::size_t a = 0; a < concepts.size(); ++a)
        for (std::size_t b = a + 1; b < concepts.size(); ++b)
            EXPECT_GE(template_distance(concepts[a].template_image, concepts[b].template_image), kMinTemplateDistance);
}

TEST(Concepts, PopularityScaleOnlyMovesPopularity) {
    auto flat = gen_concepts(10, 4, 3);
    auto scaled = gen_concepts(10, 4, 3, 0.5);
    double spread = 0.0;
    for (std::size_t c = 0; c < flat.size(); ++c) {
        EXPECT_EQ(flat[c].popularity, 0.0);
        EXPECT_EQ(flat[c].embedding, scaled[c].embedding);
        EXPECT_EQ(flat[c].template_image, scaled[c].template_image);
        spread += std::abs(scaled[c].popularity);
    }
    EXPECT_GT(spread, 0.0);
}

TEST(Catalog, DegenerateRates) {
    for (const auto& it : gen_catalog(5, 200, 0.0, 0.0, 1)) {
        EXPECT_FALSE(it.text_corrupted);
        EXPECT_FALSE(it.image_corrupted);
    }
    for (const auto& it : gen_catalog(5, 200, 1.0, 0.0, 1)) EXPECT_TRUE(it.text_corrupted);
    EXPECT_THROW(gen_catalog(10, 9, 0.0, 0.0, 1), ContractError);
    EXPECT_THROW(gen_catalog(3, 9, 1.5, 0.0, 1), ContractError);
}

TEST(Catalog, RealisedRatesWithinBinomialBound) {
    auto items = gen_catalog(20, 10000, 0.3, 0.3, 11);
    double t = 0, i = 0;
    for (const auto& it : items) {
        t += it.text_corrupted;
        i += it.image_corrupted;
    }
    EXPECT_NEAR(t / 10000.0, 0.3, 0.014);
    EXPECT_NEAR(i / 10000.0, 0.3, 0.014);
}

TEST(Catalog, CorruptionKeepsConceptAndMixesSignatures) {
    auto concepts = gen_concepts(8, 4, 5);
    auto items = gen_catalog(concepts, 400, 0.5, 0.5, 5);
    std::map<std::string, std::size_t> owner;
    for (const auto& c : concepts)
        for (const auto& w : c.signature) owner[w] = c.id;
    for (const auto& it : items) {
        ASSERT_LT(it.concept_id, concepts.size());
        std::size_t own = 0, foreign = 0;
        const auto words = words_of(it.text);
        EXPECT_EQ(words.size(), kSignatureTokensPerItem + kGenericTokensPerItem);
        for (const auto& w : words) {
            auto f = owner.find(w);
            if (f == owner.end()) continue;
            (f->second == it.concept_id ? own : foreign) += 1;
        }
        if (it.text_corrupted) {
            EXPECT_EQ(foreign, 3u) << it.text;
        } else {
            EXPECT_EQ(own, kSignatureTokensPerItem);
            EXPECT_EQ(foreign, 0u);
        }
        const double dist = template_distance(it.image, concepts[it.concept_id].template_image);
        if (it.image_corrupted)
            EXPECT_GT(dist, 20.0);
        else
            EXPECT_LE(dist, 16.0);
    }
}

TEST(Interactions, PositiveFractionAndChronology) {
    DatasetManifest m = small_manifest();
    m.num_items = 500;
    m.num_users = 1000;
    m.num_interactions = 50000;
    Dataset d = generate_dataset(m);
    double pos = 0;
    std::map<UserId, std::uint64_t> last;
    for (const auto& r : d.interactions) {
        pos += r.bought;
        auto [it, fresh] = last.emplace(r.user, r.timestamp);
        if (!fresh) {
            EXPECT_GT(r.timestamp, it->second);
            it->second = r.timestamp;
        }
    }
    EXPECT_NEAR(pos / 50000.0, 0.2, 0.02);
}

TEST(Interactions, AlignedPreferenceDominatesPositives) {
    auto concepts = gen_concepts(4, 4, 2);
    auto items = gen_catalog(concepts, 400, 0.0, 0.0, 2);
    PreferenceModel model;
    for (std::size_t c = 0; c < 4; ++c) {
        std::vector<double> e(4, 0.0);
        e[c] = 1.0;
        model.concept_embedding.push_back(e);
        model.concept_popularity.push_back(0.0);
    }
    model.noise = 0.1;
    std::vector<UserRecord> user{{0, {4.0, 0.0, 0.0, 0.0}}};
    auto log = gen_interactions(user, items, 4000, model, 9);
    std::map<std::size_t, int> bought;
    int total = 0;
    for (const auto& r : log)
        if (r.bought) {
            ++bought[items[r.item].concept_id];
            ++total;
        }
    EXPECT_GT(bought[0], 0.95 * total);
}

TEST(Interactions, OrthogonalPreferenceZeroNoiseIsHalf) {
    PreferenceModel model;
    model.concept_embedding = {{1.0, 0.0}};
    model.concept_popularity = {0.0};
    model.noise = 0.0;
    EXPECT_EQ(buy_probability(UserRecord{0, {0.0, 3.0}}, 0, model, 1.7), 0.5);
}

TEST(Interactions, EmptyCatalogIsContractError) {
    std::vector<UserRecord> users{{0, {1.0}}};
    PreferenceModel model;
    EXPECT_THROW(gen_interactions(users, {}, 10, model, 1), ContractError);
}

TEST(Split, UserLevelFractionDeterminismAndDisjointness) {
    std::size_t in_train = 0;
    for (UserId u = 0; u < 1000; ++u) in_train += user_in_train(u, 0.75, 5);
    EXPECT_NEAR(static_cast<double>(in_train), 750.0, 20.0);

    Dataset d = generate_dataset(small_manifest());
    Split a = split_dataset(d.interactions, 0.75, 5), b = split_dataset(d.interactions, 0.75, 5);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.test, b.test);
    EXPECT_EQ(a.train.size() + a.test.size(), d.interactions.size());
    std::set<UserId> tr, te;
    for (const auto& r : a.train) tr.insert(r.user);
    for (const auto& r : a.test) te.insert(r.user);
    for (UserId u : te) EXPECT_EQ(tr.count(u), 0u);
    EXPECT_THROW(split_dataset(d.interactions, 1.0, 5), ContractError);
}

TEST(DatasetIo, EmptyDatasetRoundTrips) {
    auto dir = scratch_dir("empty");
    write_dataset(dir, Dataset{}, DatasetManifest{});
    auto loaded = read_dataset(dir);
    EXPECT_EQ(loaded.data, Dataset{});
}

TEST(DatasetIo, RandomDatasetRoundTripsBitExactly) {
    auto dir = scratch_dir("roundtrip");
    DatasetManifest m = small_manifest(21);
    m.num_interactions = 1000;
    Dataset d = generate_dataset(m);
    d.items[3].text = "caf\xc3\xa9 \"quoted\"\ttab";  // UTF-8 and escapes
    Rng rng(4);
    for (auto& u : d.users)
        for (auto& v : u.preference) v = rng.normal() * 1e-3 + 1.0 / 3.0;
    DatasetManifest written = write_dataset(dir, d, m);
    auto loaded = read_dataset(dir);
    EXPECT_EQ(loaded.data, d);
    EXPECT_EQ(loaded.manifest, written);
    EXPECT_EQ(written.checksums.size(), 3u);
}

TEST(DatasetIo, RegenerationIsByteIdentical) {
    auto a = scratch_dir("regen_a"), b = scratch_dir("regen_b");
    write_dataset(a, generate_dataset(small_manifest(3)), small_manifest(3));
    write_dataset(b, generate_dataset(small_manifest(3)), small_manifest(3));
    for (const char* f : {kCatalogFile, kUsersFile, kInteractionsFile, kManifestFile})
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
    write_dataset(b, generate_dataset(small_manifest(4)), small_manifest(4));
    EXPECT_NE(slurp(a / kCatalogFile), slurp(b / kCatalogFile));
}

TEST(DatasetIo, TruncatedFileNamesFailingLine) {
    std::ostringstream out;
    std::vector<InteractionRecord> recs{{0, 1, 2, true}, {1, 2, 3, false}, {2, 3, 4, false}};
    write_interactions(out, recs);
    std::string text = out.str();
    text.resize(text.size() - 7);
    std::istringstream in(text);
    try {
        read_interactions(in);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    }
}

TEST(DatasetIo, BadRecordsAreParseErrors) {
    std::istringstream bad_bought("{\"user\":0,\"timestamp\":1,\"item\":0,\"bought\":2}\n");
    EXPECT_THROW(read_interactions(bad_bought), ParseError);
    std::istringstream bad_pixels(
        "{\"id\":0,\"concept\":0,\"text\":\"a\",\"height\":2,\"width\":2,\"channels\":1,\"pixels\":\"/w==\","
        "\"text_corrupted\":false,\"image_corrupted\":false}\n");
    try {
        read_catalog(bad_pixels);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 1u);
    }
}

TEST(DatasetIo, ChecksumMismatchDetected) {
    auto dir = scratch_dir("checksum");
    write_dataset(dir, generate_dataset(small_manifest()), small_manifest());
    {
        std::ofstream f(dir / kInteractionsFile, std::ios::app);
        f << "{\"user\":0,\"timestamp\":99999,\"item\":0,\"bought\":0}\n";
    }
    EXPECT_THROW(read_dataset(dir), ParseError);
}

TEST(DatasetIo, GoldenFixtureMatchesGenerator) {
    const std::filesystem::path golden = std::filesystem::path(CAMENN_TEST_DATA_DIR) / "golden";
    auto loaded = read_dataset(golden);
    DatasetManifest m = loaded.manifest;
    EXPECT_EQ(generate_dataset(m), loaded.data);
    auto dir = scratch_dir("golden");
    m.checksums.clear();
    write_dataset(dir, generate_dataset(m), m);
    for (const char* f : {kCatalogFile, kUsersFile, kInteractionsFile, kManifestFile})
        EXPECT_EQ(slurp(dir / f), slurp(golden / f)) << f;
}
