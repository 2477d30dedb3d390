#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "camenn/checkpoint.hpp"
#include "camenn/params.hpp"
#include "camenn/tape.hpp"

namespace camenn {

inline constexpr std::size_t kMaxTextLen = 50;
inline constexpr std::size_t kMaxPatchLen = 9;

// ---------------------------------------------------------------------------
// Text side

/// Closed word vocabulary. Id 0 is always the unknown token.
class Vocabulary {
public:
    static constexpr std::size_t kUnknownId = 0;
    static constexpr std::string_view kUnknownToken = "[UNK]";

    /// Sorted distinct words of the corpus after `split_words`.
    static Vocabulary build(std::span<const std::string> corpus);

    /// `words[0]` must be the unknown token; words must be distinct.
    explicit Vocabulary(std::vector<std::string> words);

    std::size_t id(std::string_view word) const;
    const std::string& word(std::size_t id) const { return words_.at(id); }
    std::size_t size() const noexcept { return words_.size(); }
    const std::vector<std::string>& words() const noexcept { return words_; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Lowercased ASCII alphanumeric runs; every other byte separates words.
std::vector<std::string> split_words(std::string_view text);

struct TextTokenSequence {
    std::vector<std::size_t> ids;
};

TextTokenSequence tokenize(std::string_view raw_text, const Vocabulary& vocab, std::size_t max_len = kMaxTextLen);

// ---------------------------------------------------------------------------
// Image side

/// 8-bit image, row-major HxWxC.
struct Image {
    std::size_t height = 0, width = 0, channels = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
    bool operator==(const Image&) const = default;
};

/// Equal-size patches in row-major grid order; each patch is itself HxWxC row-major.
struct ImagePatchGrid {
    std::size_t grid_rows = 0, grid_cols = 0;
    std::size_t patch_height = 0, patch_width = 0, channels = 0;
    std::vector<std::vector<std::uint8_t>> patches;

    std::size_t patch_values() const noexcept { return patch_height * patch_width * channels; }
};

ImagePatchGrid split_patches(const Image& image, std::size_t grid_rows, std::size_t grid_cols);
Image reassemble(const ImagePatchGrid& grid);

// ---------------------------------------------------------------------------
// Frozen providers (stand-ins for pre-trained encoders)

/// Token id -> d-dim vector from a frozen table. The default table is a pure
/// function of (seed, token id, dim), unit variance per component.
class TextProvider {
public:
    static constexpr const char* kTensorName = "text_provider.table";

    TextProvider(std::size_t vocab_size, std::size_t dim, std::uint64_t seed);
    /// Imported table of shape [vocab x dim].
    explicit TextProvider(Tensor table);

    std::size_t dim() const { return table_.dim(1); }
    std::size_t vocab_size() const { return table_.dim(0); }
    const Tensor& table() const noexcept { return table_; }

    /// Rows for `ids` as an [n x dim] tensor. Throws ContractError on ids
    /// outside the table.
    Tensor embed(std::span<const std::size_t> ids) const;

private:
    Tensor table_;
};

/// Patch pixels -> d-dim vector: centred pixels times a frozen random
/// projection, squashed by tanh.
class ImageProvider {
public:
    static constexpr const char* kTensorName = "image_provider.projection";

    ImageProvider(std::size_t patch_values, std::size_t dim, std::uint64_t seed);
    /// Imported projection of shape [patch_values x dim].
    explicit ImageProvider(Tensor projection);

    std::size_t dim() const { return projection_.dim(1); }
    std::size_t patch_values() const { return projection_.dim(0); }
    const Tensor& projection() const noexcept { return projection_; }

    Tensor embed_patch(std::span<const std::uint8_t> patch) const;
    /// One row per patch, grid order.
    Tensor embed(const ImagePatchGrid& grid) const;

private:
    Tensor projection_;
};

/// Replaces provider tables with imported tensors found in `tensors`, if any.
/// Shapes must match the providers being replaced.
void import_provider_tables(const std::vector<NamedTensor>& tensors, std::optional<TextProvider>& text,
                            std::optional<ImageProvider>& image);

// ---------------------------------------------------------------------------
// Trainable embedding tables and input assembly

enum class Segment : std::uint8_t { Other, Special, Text, Image };

/// Rows of the segment table.
inline constexpr std::size_t kTextSegmentRow = 0;
inline constexpr std::size_t kImageSegmentRow = 1;

struct EmbeddingShape {
    std::size_t dim = 16;
    std::size_t max_text_len = kMaxTextLen;
    std::size_t max_patch_len = kMaxPatchLen;
    std::size_t num_users = 1;
    std::size_t num_contexts = 1;
};

/// Registers embed.* tables in `params`, initialises them from `seed` and
/// verifies that position rows are pairwise distinct.
void register_embedding_params(ParamStore& params, const EmbeddingShape& shape, std::uint64_t seed);

/// Per-call handles to the trainable tables on a tape.
struct EmbeddingTables {
    Var text_position, patch_position, segment, cls, sep, user, context;

    static EmbeddingTables bind(Tape& tape, ParamStore& params);
};

/// provider rows + position_table[0..n) + segment_table[segment_row].
Var add_position_and_segment(Tape& tape, const Tensor& provider_rows, Var position_table, Var segment_table,
                             std::size_t segment_row);

/// Text token embedding: provider(token_t) + position_table[t] + segment_table['T'].
Var encode_text(Tape& tape, const TextTokenSequence& tokens, const TextProvider& provider, Var position_table,
                Var segment_table);

/// Patch embedding: provider(patch_p) + position_table[p] + segment_table['I'].
Var encode_image(Tape& tape, const ImagePatchGrid& grid, const ImageProvider& provider, Var position_table,
                 Var segment_table);

/// [CLS], text tokens, [SEP], image patches. Empty text or image parts are absent.
struct ItemBlock {
    Var cls;
    std::optional<Var> text;
    Var sep;
    std::optional<Var> image;

    std::size_t length() const;
};

struct InputSequence {
    Var embeddings;                     // [total_len x d]
    std::vector<Segment> segments;      // per row
    std::vector<std::size_t> positions; // per row, restarting in every block
    /// Start row of E_Other (if present), of every behaviour block, of the
    /// target block, then total_len as the final entry.
    std::vector<std::size_t> block_boundaries;
    bool has_other = false;
    std::size_t cls_index = 0;  // target block's [CLS] row

    std::size_t length() const { return segments.size(); }
    /// Rows that belong to text (or image) tokens of the target block.
    std::vector<std::size_t> target_rows(Segment segment) const;
};

/// Concatenates E_Other, E_1..E_N and E_Target in that order.
InputSequence assemble_input(std::optional<Var> other, std::span<const ItemBlock> user_items, const ItemBlock& target,
                             std::size_t max_behavior = std::numeric_limits<std::size_t>::max());

}  // namespace camenn
