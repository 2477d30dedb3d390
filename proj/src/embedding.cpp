#include "camenn/embedding.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "camenn/errors.hpp"
#include "camenn/ops.hpp"
#include "camenn/rng.hpp"

namespace camenn {

// ---------------------------------------------------------------------------
// Vocabulary and tokenizer

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) && c < 0x80) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus) {
    std::set<std::string> distinct;
    for (const auto& text : corpus)
        for (auto& w : split_words(text)) distinct.insert(std::move(w));
    std::vector<std::string> words{std::string(kUnknownToken)};
    for (const auto& w : distinct)
        if (w != kUnknownToken) words.push_back(w);
    return Vocabulary(std::move(words));
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    if (words_.empty() || words_[0] != kUnknownToken)
        throw ContractError("vocabulary must start with the unknown token");
    for (std::size_t i = 0; i < words_.size(); ++i)
        if (!index_.emplace(words_[i], i).second) throw ContractError("duplicate vocabulary word '" + words_[i] + "'");
}

std::size_t Vocabulary::id(std::string_view word) const {
    auto it = index_.find(std::string(word));
    return it == index_.end() ? kUnknownId : it->second;
}

TextTokenSequence tokenize(std::string_view raw_text, const Vocabulary& vocab, std::size_t max_len) {
    TextTokenSequence seq;
    for (const auto& w : split_words(raw_text)) {
        if (seq.ids.size() == max_len) break;
        seq.ids.push_back(vocab.id(w));
    }
    return seq;
}

// ---------------------------------------------------------------------------
// Patches

ImagePatchGrid split_patches(const Image& image, std::size_t grid_rows, std::size_t grid_cols) {
    if (grid_rows == 0 || grid_cols == 0) throw ContractError("split_patches: empty grid");
    if (image.pixels.size() != image.height * image.width * image.channels)
        throw ContractError("split_patches: pixel buffer does not match image dimensions");
    if (image.height % grid_rows != 0 || image.width % grid_cols != 0)
        throw ContractError("split_patches: " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                            " image is not divisible into a " + std::to_string(grid_rows) + "x" +
                            std::to_string(grid_cols) + " grid");
    ImagePatchGrid grid;
    grid.grid_rows = grid_rows;
    grid.grid_cols = grid_cols;
    grid.patch_height = image.height / grid_rows;
    grid.patch_width = image.width / grid_cols;
    grid.channels = image.channels;
    const std::size_t row_bytes = grid.patch_width * image.channels;
    for (std::size_t r = 0; r < grid_rows; ++r)
        for (std::size_t c = 0; c < grid_cols; ++c) {
            std::vector<std::uint8_t> patch;
            patch.reserve(grid.patch_values());
            for (std::size_t y = 0; y < grid.patch_height; ++y) {
                const std::size_t src = ((r * grid.patch_height + y) * image.width + c * grid.patch_width) * image.channels;
                patch.insert(patch.end(), image.pixels.begin() + static_cast<std::ptrdiff_t>(src),
                             image.pixels.begin() + static_cast<std::ptrdiff_t>(src + row_bytes));
            }
            grid.patches.push_back(std::move(patch));
        }
    return grid;
}

Image reassemble(const ImagePatchGrid& grid) {
    Image image;
    image.height = grid.grid_rows * grid.patch_height;
    image.width = grid.grid_cols * grid.patch_width;
    image.channels = grid.channels;
    image.pixels.resize(image.height * image.width * image.channels);
    const std::size_t row_bytes = grid.patch_width * grid.channels;
    for (std::size_t r = 0; r < grid.grid_rows; ++r)
        for (std::size_t c = 0; c < grid.grid_cols; ++c) {
            const auto& patch = grid.patches.at(r * grid.grid_cols + c);
            for (std::size_t y = 0; y < grid.patch_height; ++y) {
                const std::size_t dst = ((r * grid.patch_height + y) * image.width + c * grid.patch_width) * grid.channels;
                std::copy_n(patch.begin() + static_cast<std::ptrdiff_t>(y * row_bytes), row_bytes,
                            image.pixels.begin() + static_cast<std::ptrdiff_t>(dst));
            }
        }
    return image;
}

// ---------------------------------------------------------------------------
// Providers

TextProvider::TextProvider(std::size_t vocab_size, std::size_t dim, std::uint64_t seed) : table_({vocab_size, dim}) {
    const double bound = std::sqrt(3.0);
    for (std::size_t id = 0; id < vocab_size; ++id) {
        const std::uint64_t row_key = hash_combine(hash_combine(seed, 0x7465787450ULL), id);
        for (std::size_t c = 0; c < dim; ++c) table_[id * dim + c] = bound * (2.0 * hash_unit(hash_combine(row_key, c)) - 1.0);
    }
}

TextProvider::TextProvider(Tensor table) : table_(std::move(table)) {
    if (table_.rank() != 2) throw DimensionError("text provider table must be [vocab x dim]");
    table_.set_requires_grad(false);
}

Tensor TextProvider::embed(std::span<const std::size_t> ids) const {
    if (ids.empty()) throw ContractError("TextProvider::embed: empty token sequence");
    const std::size_t d = dim();
    Tensor out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= vocab_size())
            throw ContractError("token id " + std::to_string(ids[i]) + " outside provider vocabulary of " +
                                std::to_string(vocab_size()));
        std::copy_n(&table_[ids[i] * d], d, &out[i * d]);
    }
    return out;
}

ImageProvider::ImageProvider(std::size_t patch_values, std::size_t dim, std::uint64_t seed)
    : projection_({patch_values, dim}) {
    // Centred pixels have std ~0.3, so this bound gives pre-activations of
    // roughly unit scale before the tanh.
    const double bound = 3.0 * std::sqrt(3.0 / static_cast<double>(patch_values));
    init_uniform(projection_, bound, seed, kTensorName);
}

ImageProvider::ImageProvider(Tensor projection) : projection_(std::move(projection)) {
    if (projection_.rank() != 2) throw DimensionError("image provider projection must be [patch_values x dim]");
    projection_.set_requires_grad(false);
}

Tensor ImageProvider::embed_patch(std::span<const std::uint8_t> patch) const {
    if (patch.size() != patch_values())
        throw DimensionError("patch has " + std::to_string(patch.size()) + " values, provider expects " +
                             std::to_string(patch_values()));
    const std::size_t d = dim();
    Tensor out({1, d});
    for (std::size_t i = 0; i < patch.size(); ++i) {
        const double x = static_cast<double>(patch[i]) / 255.0 - 0.5;
        const double* w = &projection_[i * d];
        for (std::size_t c = 0; c < d; ++c) out[c] += x * w[c];
    }
    for (auto& v : out.data()) v = std::tanh(v);
    return out;
}

Tensor ImageProvider::embed(const ImagePatchGrid& grid) const {
    if (grid.patches.empty()) throw ContractError("ImageProvider::embed: no patches");
    const std::size_t d = dim();
    Tensor out({grid.patches.size(), d});
    for (std::size_t p = 0; p < grid.patches.size(); ++p) {
        Tensor row = embed_patch(grid.patches[p]);
        std::copy_n(row.data().data(), d, &out[p * d]);
    }
    return out;
}

void import_provider_tables(const std::vector<NamedTensor>& tensors, std::optional<TextProvider>& text,
                            std::optional<ImageProvider>& image) {
    if (const auto* t = try_find_tensor(tensors, TextProvider::kTensorName)) {
        if (text && t->tensor.shape() != text->table().shape())
            throw DimensionError(std::string("imported ") + TextProvider::kTensorName + " has shape " +
                                 shape_string(t->tensor.shape()) + ", expected " + shape_string(text->table().shape()));
        text.emplace(t->tensor);
    }
    if (const auto* t = try_find_tensor(tensors, ImageProvider::kTensorName)) {
        if (image && t->tensor.shape() != image->projection().shape())
            throw DimensionError(std::string("imported ") + ImageProvider::kTensorName + " has shape " +
                                 shape_string(t->tensor.shape()) + ", expected " +
                                 shape_string(image->projection().shape()));
        image.emplace(t->tensor);
    }
}

// ---------------------------------------------------------------------------
// Trainable tables

void register_embedding_params(ParamStore& params, const EmbeddingShape& shape, std::uint64_t seed) {
    const std::size_t d = shape.dim;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    auto add = [&](const std::string& name, std::size_t rows) {
        Tensor& t = params.add(name, {rows, d});
        init_uniform(t, bound, seed, name);
        return &t;
    };
    const Tensor* pos_t = add("embed.text_position", shape.max_text_len);
    const Tensor* pos_p = add("embed.patch_position", shape.max_patch_len);
    add("embed.segment", 2);
    add("embed.cls", 1);
    add("embed.sep", 1);
    add("embed.user", shape.num_users);
    add("embed.context", shape.num_contexts);

    for (const Tensor* table : {pos_t, pos_p}) {
        const std::size_t rows = table->dim(0);
        for (std::size_t p = 0; p < rows; ++p)
            for (std::size_t q = p + 1; q < rows; ++q)
                if (std::equal(&(*table)[p * d], &(*table)[p * d] + d, &(*table)[q * d]))
                    throw ContractError("position rows " + std::to_string(p) + " and " + std::to_string(q) +
                                        " coincide after initialisation");
    }
}

EmbeddingTables EmbeddingTables::bind(Tape& tape, ParamStore& params) {
    return {tape.leaf(params.get("embed.text_position")), tape.leaf(params.get("embed.patch_position")),
            tape.leaf(params.get("embed.segment")),       tape.leaf(params.get("embed.cls")),
            tape.leaf(params.get("embed.sep")),           tape.leaf(params.get("embed.user")),
            tape.leaf(params.get("embed.context"))};
}

Var add_position_and_segment(Tape& tape, const Tensor& provider_rows, Var position_table, Var segment_table,
                             std::size_t segment_row) {
    const std::size_t n = provider_rows.dim(0);
    if (n > position_table.shape()[0])
        throw ContractError("sequence of " + std::to_string(n) + " exceeds the " +
                            std::to_string(position_table.shape()[0]) + " available positions");
    std::vector<std::size_t> positions(n), segments(n, segment_row);
    for (std::size_t i = 0; i < n; ++i) positions[i] = i;
    Var base = tape.constant(provider_rows);
    return add(add(base, embedding_lookup(position_table, positions)), embedding_lookup(segment_table, segments));
}

Var encode_text(Tape& tape, const TextTokenSequence& tokens, const TextProvider& provider, Var position_table,
                Var segment_table) {
    return add_position_and_segment(tape, provider.embed(tokens.ids), position_table, segment_table, kTextSegmentRow);
}

Var encode_image(Tape& tape, const ImagePatchGrid& grid, const ImageProvider& provider, Var position_table,
                 Var segment_table) {
    return add_position_and_segment(tape, provider.embed(grid), position_table, segment_table, kImageSegmentRow);
}

// ---------------------------------------------------------------------------
// Assembly

std::size_t ItemBlock::length() const {
    return 2 + (text ? text->shape()[0] : 0) + (image ? image->shape()[0] : 0);
}

std::vector<std::size_t> InputSequence::target_rows(Segment segment) const {
    std::vector<std::size_t> rows;
    for (std::size_t r = block_boundaries[block_boundaries.size() - 2]; r < block_boundaries.back(); ++r)
        if (segments[r] == segment) rows.push_back(r);
    return rows;
}

InputSequence assemble_input(std::optional<Var> other, std::span<const ItemBlock> user_items, const ItemBlock& target,
                             std::size_t max_behavior) {
    if (user_items.size() > max_behavior)
        throw ContractError("behaviour sequence of " + std::to_string(user_items.size()) + " items exceeds maximum " +
                            std::to_string(max_behavior));
    const std::size_t d = target.cls.shape().back();
    InputSequence seq;
    std::vector<Var> parts;
    auto push = [&](Var v, Segment seg) {
        if (v.shape().size() != 2 || v.shape()[1] != d)
            throw DimensionError("assemble_input: block part " + shape_string(v.shape()) + " does not have width " +
                                 std::to_string(d));
        parts.push_back(v);
        const std::size_t rows = v.shape()[0];
        for (std::size_t r = 0; r < rows; ++r) {
            seq.segments.push_back(seg);
            seq.positions.push_back(r);
        }
    };
    if (other) {
        seq.has_other = true;
        seq.block_boundaries.push_back(0);
        push(*other, Segment::Other);
    }
    auto push_block = [&](const ItemBlock& b) {
        seq.block_boundaries.push_back(seq.segments.size());
        push(b.cls, Segment::Special);
        if (b.text) push(*b.text, Segment::Text);
        push(b.sep, Segment::Special);
        if (b.image) push(*b.image, Segment::Image);
    };
    for (const auto& b : user_items) push_block(b);
    seq.cls_index = seq.segments.size();
    push_block(target);
    seq.block_boundaries.push_back(seq.segments.size());
    seq.embeddings = concat(parts, 0);
    return seq;
}

}  // namespace camenn
