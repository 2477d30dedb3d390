#include "camenn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "camenn/errors.hpp"
#include "camenn/rng.hpp"

namespace camenn {

namespace {

constexpr std::size_t kCellSide = 5;
constexpr int kItemJitter = 16;
constexpr std::size_t kDefaultLatentDim = 4;

std::uint64_t stage_seed(std::uint64_t seed, const char* stage) { return hash_combine(seed, fnv1a64(stage)); }

std::string pseudo_word(Rng& rng) {
    static constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
    static constexpr const char* kVowels[] = {"a", "e", "i", "o", "u"};
    std::string w;
    for (int s = 0; s < 3; ++s) {
        w += kOnsets[rng.below(std::size(kOnsets))];
        w += kVowels[rng.below(std::size(kVowels))];
    }
    return w;
}

Image random_template(Rng& rng) {
    Image img{kImageSide, kImageSide, 1, std::vector<std::uint8_t>(kImageSide * kImageSide)};
    const std::size_t cells = kImageSide / kCellSide;
    for (std::size_t cy = 0; cy < cells; ++cy)
        for (std::size_t cx = 0; cx < cells; ++cx) {
            const auto level = static_cast<std::uint8_t>(rng.below(256));
            for (std::size_t y = 0; y < kCellSide; ++y)
                for (std::size_t x = 0; x < kCellSide; ++x)
                    img.pixels[(cy * kCellSide + y) * kImageSide + cx * kCellSide + x] = level;
        }
    return img;
}

std::uint8_t clamp_pixel(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

void check_rate(double r, const char* what) {
    if (!(r >= 0.0 && r <= 1.0)) throw ContractError(std::string(what) + " must lie in [0,1]");
}

}  // namespace

const std::vector<std::string>& generic_words() {
    static const std::vector<std::string> words = {"fresh", "new",   "sale",  "best",   "daily", "pack",
                                                   "value", "home",  "family", "classic", "select", "premium",
                                                   "bundle", "choice", "deal", "natural", "original", "style"};
    return words;
}

double template_distance(const Image& a, const Image& b) {
    if (a.pixels.size() != b.pixels.size()) throw ContractError("template_distance: image sizes differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) s += std::abs(int(a.pixels[i]) - int(b.pixels[i]));
    return s / static_cast<double>(a.pixels.size());
}

std::vector<LatentConcept> gen_concepts(std::size_t num_concepts, std::size_t latent_dim, std::uint64_t seed,
                                       double popularity_scale) {
    if (num_concepts == 0) throw ContractError("need at least one concept");
    Rng rng(stage_seed(seed, "concepts"));
    std::set<std::string> used(generic_words().begin(), generic_words().end());
    std::vector<LatentConcept> out(num_concepts);
    for (std::size_t c = 0; c < num_concepts; ++c) {
        LatentConcept& lc = out[c];
        lc.id = c;
        while (lc.signature.size() < kSignatureWords) {
            std::string w = pseudo_word(rng);
            if (used.insert(w).second) lc.signature.push_back(w);
        }
        for (int attempt = 0;; ++attempt) {
            if (attempt == 1000) throw ContractError("could not place " + std::to_string(num_concepts) +
                                                     " concept templates at the minimum distance");
            lc.template_image = random_template(rng);
            bool ok = true;
            for (std::size_t p = 0; p < c && ok; ++p)
                ok = template_distance(lc.template_image, out[p].template_image) >= kMinTemplateDistance;
            if (ok) break;
        }
        const double scale = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(latent_dim, 1)));
        lc.embedding.resize(latent_dim);
        for (auto& v : lc.embedding) v = rng.normal() * scale;
        lc.popularity = popularity_scale * rng.normal();
    }
    return out;
}

std::vector<ItemRecord> gen_catalog(std::span<const LatentConcept> concepts, std::size_t num_items,
                                    double text_corruption_rate, double image_corruption_rate, std::uint64_t seed) {
    check_rate(text_corruption_rate, "text_corruption_rate");
    check_rate(image_corruption_rate, "image_corruption_rate");
    if (concepts.size() > num_items)
        throw ContractError(std::to_string(concepts.size()) + " concepts exceed " + std::to_string(num_items) +
                            " items");
    Rng rng(stage_seed(seed, "catalog"));
    const auto& generic = generic_words();
    std::vector<ItemRecord> items(num_items);
    for (std::size_t i = 0; i < num_items; ++i) {
        ItemRecord& it = items[i];
        it.id = i;
        it.concept_id = rng.below(concepts.size());
        const LatentConcept& lc = concepts[it.concept_id];
        it.text_corrupted = rng.bernoulli(text_corruption_rate);
        it.image_corrupted = rng.bernoulli(image_corruption_rate);

        std::vector<std::string> sig = lc.signature;
        rng.shuffle(std::span<std::string>(sig));
        std::vector<std::string> words(sig.begin(), sig.begin() + kSignatureTokensPerItem);
        for (std::size_t g = 0; g < kGenericTokensPerItem; ++g) words.push_back(generic[rng.below(generic.size())]);
        rng.shuffle(std::span<std::string>(words));
        if (it.text_corrupted && concepts.size() > 1) {
            std::size_t other = rng.below(concepts.size() - 1);
            if (other >= it.concept_id) ++other;
            std::vector<std::size_t> pos(words.size());
            std::iota(pos.begin(), pos.end(), 0);
            rng.shuffle(std::span<std::size_t>(pos));
            const auto replace = static_cast<std::size_t>(std::lround(kTextCorruptionShare * words.size()));
            for (std::size_t k = 0; k < replace; ++k)
                words[pos[k]] = concepts[other].signature[rng.below(kSignatureWords)];
        }
        it.text = join(words);

        it.image = lc.template_image;
        for (auto& p : it.image.pixels) {
            const double jittered = p + static_cast<double>(static_cast<int>(rng.below(2 * kItemJitter + 1)) - kItemJitter);
            p = clamp_pixel(it.image_corrupted
                                ? (1.0 - kImageNoiseBlend) * jittered + kImageNoiseBlend * rng.uniform(0.0, 255.0)
                                : jittered);
        }
    }
    return items;
}

std::vector<ItemRecord> gen_catalog(std::size_t num_concepts, std::size_t num_items, double text_corruption_rate,
                                    double image_corruption_rate, std::uint64_t seed) {
    if (num_concepts > num_items)
        throw ContractError(std::to_string(num_concepts) + " concepts exceed " + std::to_string(num_items) + " items");
    auto concepts = gen_concepts(num_concepts, kDefaultLatentDim, seed);
    return gen_catalog(concepts, num_items, text_corruption_rate, image_corruption_rate, seed);
}

std::vector<UserRecord> gen_users(std::size_t num_users, std::size_t latent_dim, std::uint64_t seed) {
    Rng rng(stage_seed(seed, "users"));
    std::vector<UserRecord> users(num_users);
    for (std::size_t u = 0; u < num_users; ++u) {
        users[u].id = u;
        users[u].preference.resize(latent_dim);
        for (auto& v : users[u].preference) v = rng.normal();
    }
    return users;
}

PreferenceModel PreferenceModel::from_concepts(std::span<const LatentConcept> concepts, double noise,
                                               double positive_fraction) {
    PreferenceModel m;
    for (const auto& c : concepts) {
        m.concept_embedding.push_back(c.embedding);
        m.concept_popularity.push_back(c.popularity);
    }
    m.noise = noise;
    m.positive_fraction = positive_fraction;
    return m;
}

double buy_probability(const UserRecord& user, std::size_t concept_id, const PreferenceModel& model,
                       double noise_draw) {
    const auto& e = model.concept_embedding.at(concept_id);
    if (e.size() != user.preference.size())
        throw DimensionError("user preference has " + std::to_string(user.preference.size()) +
                             " dims, concept embedding " + std::to_string(e.size()));
    double logit = std::inner_product(e.begin(), e.end(), user.preference.begin(), 0.0);
    if (concept_id < model.concept_popularity.size()) logit += model.concept_popularity[concept_id];
    logit += model.noise * noise_draw;
    return 1.0 / (1.0 + std::exp(-logit));
}

std::vector<InteractionRecord> gen_interactions(std::span<const UserRecord> users, std::span<const ItemRecord> catalog,
                                                std::size_t num_interactions, const PreferenceModel& model,
                                                std::uint64_t seed) {
    if (catalog.empty()) throw ContractError("gen_interactions: empty catalog");
    if (users.empty()) throw ContractError("gen_interactions: no users");
    if (num_interactions == 0) throw ContractError("gen_interactions: need at least one interaction");
    if (!(model.positive_fraction > 0.0 && model.positive_fraction < 1.0))
        throw ContractError("positive_fraction must lie in (0,1)");
    Rng rng(stage_seed(seed, "interactions"));
    std::vector<InteractionRecord> out(num_interactions);
    std::vector<double> prob(num_interactions);
    for (std::size_t i = 0; i < num_interactions; ++i) {
        const UserRecord& u = users[rng.below(users.size())];
        const ItemRecord& item = catalog[rng.below(catalog.size())];
        out[i] = {u.id, i + 1, item.id, false};
        prob[i] = buy_probability(u, item.concept_id, model, rng.normal());
    }
    // Rank-based threshold: exactly round(n * (1 - positive_fraction)) records fall below it.
    std::vector<std::size_t> order(num_interactions);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return prob[a] < prob[b]; });
    const auto negatives =
        static_cast<std::size_t>(std::lround(static_cast<double>(num_interactions) * (1.0 - model.positive_fraction)));
    for (std::size_t r = negatives; r < num_interactions; ++r) out[order[r]].bought = true;
    return out;
}

bool user_in_train(UserId user, double fraction, std::uint64_t seed) {
    return hash_unit(hash_combine(stage_seed(seed, "split"), user)) < fraction;
}

Split split_dataset(std::span<const InteractionRecord> records, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ContractError("split fraction must lie in (0,1)");
    Split s;
    for (const auto& r : records) (user_in_train(r.user, fraction, seed) ? s.train : s.test).push_back(r);
    return s;
}

std::vector<LatentConcept> manifest_concepts(const DatasetManifest& m) {
    return gen_concepts(m.num_concepts, m.latent_dim, m.seed, m.popularity_scale);
}

Dataset generate_dataset(const DatasetManifest& m) {
    Dataset d;
    auto concepts = manifest_concepts(m);
    d.items = gen_catalog(concepts, m.num_items, m.text_corruption_rate, m.image_corruption_rate, m.seed);
    d.users = gen_users(m.num_users, m.latent_dim, m.seed);
    d.interactions = gen_interactions(d.users, d.items, m.num_interactions,
                                      PreferenceModel::from_concepts(concepts, m.preference_noise, m.positive_fraction),
                                      m.seed);
    return d;
}

}  // namespace camenn
