#pragma once

#include "cindep/latent.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace cindep {

/// Integer token grid, batch x time x codebooks, every index below `vocab`.
struct CodeGrid {
    std::size_t batch = 0;
    std::size_t steps = 0;
    std::size_t codebooks = 0;
    std::uint32_t vocab = 0;
    std::vector<std::uint32_t> indices;

    CodeGrid() = default;
    CodeGrid(std::size_t batch, std::size_t steps, std::size_t codebooks, std::uint32_t vocab);
    CodeGrid(std::size_t batch, std::size_t steps, std::size_t codebooks, std::uint32_t vocab,
             std::vector<std::uint32_t> indices);  // validates shape and range

    std::size_t frames() const noexcept { return batch * steps; }

    std::uint32_t& at(std::size_t b, std::size_t t, std::size_t k) noexcept {
        return indices[(b * steps + t) * codebooks + k];
    }
    std::uint32_t at(std::size_t b, std::size_t t, std::size_t k) const noexcept {
        return indices[(b * steps + t) * codebooks + k];
    }

    /// Stream k over all B*T frames, batch-major.
    std::vector<std::uint32_t> stream(std::size_t k) const;

    friend bool operator==(const CodeGrid&, const CodeGrid&) = default;
};

enum class PatternKind : std::uint8_t { Parallel = 1, Delay = 2, Flatten = 3 };

std::string_view pattern_name(PatternKind kind) noexcept;
/// `parallel` | `delay` | `flatten`.
PatternKind parse_pattern(std::string_view name);

/// Tokens re-laid out by a decoding pattern.
///
/// Parallel and delay keep K columns (delay stretches time to T+K-1); flatten
/// produces one column of length T*K, ordered frame-major then codebook.
/// Positions without a source token hold `special_id() == vocab`.
struct PatternedGrid {
    PatternKind kind = PatternKind::Parallel;
    std::size_t batch = 0;
    std::size_t source_steps = 0;
    std::size_t source_codebooks = 0;
    std::uint32_t vocab = 0;
    std::size_t steps = 0;  // patterned length
    std::size_t width = 0;  // tokens per patterned step
    std::vector<std::uint32_t> tokens;
    std::vector<bool> valid;

    std::uint32_t special_id() const noexcept { return vocab; }
    std::size_t valid_count() const noexcept;
};

PatternedGrid apply_pattern(const CodeGrid& grid, PatternKind kind);

/// Exact inverse of apply_pattern. Throws FormatError when the mask or token
/// placement disagrees with the pattern.
CodeGrid invert_pattern(const PatternedGrid& patterned);

/// Validity of position (t, k) of a delayed layout of source length T.
constexpr bool delay_position_valid(std::size_t t, std::size_t k, std::size_t source_steps) noexcept {
    return t >= k && t - k < source_steps;
}

/// Source frame read by codebook k in delayed frame `frame` of delayed_latents.
constexpr std::size_t delayed_source_frame(std::size_t frame, std::size_t k,
                                           std::size_t codebooks) noexcept {
    return frame + codebooks - 1 - k;
}

/// Delay realignment of continuous codes, dropping incomplete frames.
///
/// `codes` holds B*T samples batch-major. Output frame t of each sequence stacks
/// codebook k from source frame t + K - 1 - k, giving B*(T-K+1) samples.
LatentBatch delayed_latents(const LatentBatch& codes, std::size_t segment_length);

/// Same realignment for integer tokens: B x (T-K+1) x K.
CodeGrid delayed_grid(const CodeGrid& grid);

}  // namespace cindep
