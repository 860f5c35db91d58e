#include "cindep/patterns.hpp"

#include "cindep/errors.hpp"

#include <algorithm>
#include <string>

namespace cindep {

CodeGrid::CodeGrid(std::size_t batch, std::size_t steps, std::size_t codebooks, std::uint32_t vocab)
    : batch(batch), steps(steps), codebooks(codebooks), vocab(vocab),
      indices(batch * steps * codebooks, 0) {
    if (vocab == 0) throw ArgumentError("CodeGrid vocabulary must be at least 1");
}

CodeGrid::CodeGrid(std::size_t batch, std::size_t steps, std::size_t codebooks, std::uint32_t vocab,
                   std::vector<std::uint32_t> idx)
    : batch(batch), steps(steps), codebooks(codebooks), vocab(vocab), indices(std::move(idx)) {
    if (vocab == 0) throw ArgumentError("CodeGrid vocabulary must be at least 1");
    if (indices.size() != batch * steps * codebooks) {
        throw DimensionError("CodeGrid holds " + std::to_string(indices.size()) +
                             " indices, expected " + std::to_string(batch * steps * codebooks));
    }
    for (auto v : indices) {
        if (v >= vocab) {
            throw ArgumentError("token " + std::to_string(v) + " outside vocabulary of size " +
                                std::to_string(vocab));
        }
    }
}

std::vector<std::uint32_t> CodeGrid::stream(std::size_t k) const {
    std::vector<std::uint32_t> out(frames());
    for (std::size_t f = 0; f < out.size(); ++f) out[f] = indices[f * codebooks + k];
    return out;
}

std::string_view pattern_name(PatternKind kind) noexcept {
    switch (kind) {
        case PatternKind::Parallel: return "parallel";
        case PatternKind::Delay: return "delay";
        case PatternKind::Flatten: return "flatten";
    }
    return "unknown";
}

PatternKind parse_pattern(std::string_view name) {
    if (name == "parallel") return PatternKind::Parallel;
    if (name == "delay") return PatternKind::Delay;
    if (name == "flatten") return PatternKind::Flatten;
    throw FormatError("unknown pattern '" + std::string(name) + "'");
}

std::size_t PatternedGrid::valid_count() const noexcept {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), true));
}

namespace {

struct Layout {
    std::size_t steps;
    std::size_t width;
};

Layout layout_for(PatternKind kind, std::size_t source_steps, std::size_t codebooks) {
    switch (kind) {
        case PatternKind::Parallel: return {source_steps, codebooks};
        case PatternKind::Delay:
            return {codebooks == 0 ? source_steps : source_steps + codebooks - 1, codebooks};
        case PatternKind::Flatten: return {source_steps * codebooks, 1};
    }
    throw ArgumentError("unknown pattern kind");
}

}  // namespace

PatternedGrid apply_pattern(const CodeGrid& grid, PatternKind kind) {
    const auto [steps, width] = layout_for(kind, grid.steps, grid.codebooks);
    PatternedGrid out;
    out.kind = kind;
    out.batch = grid.batch;
    out.source_steps = grid.steps;
    out.source_codebooks = grid.codebooks;
    out.vocab = grid.vocab;
    out.steps = steps;
    out.width = width;
    out.tokens.assign(grid.batch * steps * width, out.special_id());
    out.valid.assign(out.tokens.size(), false);

    const std::size_t K = grid.codebooks;
    for (std::size_t b = 0; b < grid.batch; ++b) {
        for (std::size_t t = 0; t < grid.steps; ++t) {
            for (std::size_t k = 0; k < K; ++k) {
                std::size_t pos = 0;
                switch (kind) {
                    case PatternKind::Parallel: pos = (b * steps + t) * width + k; break;
                    case PatternKind::Delay: pos = (b * steps + t + k) * width + k; break;
                    case PatternKind::Flatten: pos = b * steps + t * K + k; break;
                }
                out.tokens[pos] = grid.at(b, t, k);
                out.valid[pos] = true;
            }
        }
    }
    return out;
}

CodeGrid invert_pattern(const PatternedGrid& p) {
    const auto [steps, width] = layout_for(p.kind, p.source_steps, p.source_codebooks);
    if (steps != p.steps || width != p.width) {
        throw FormatError("patterned layout " + std::to_string(p.steps) + "x" +
                          std::to_string(p.width) + " inconsistent with " +
                          std::string(pattern_name(p.kind)) + " of source length " +
                          std::to_string(p.source_steps));
    }
    if (p.tokens.size() != p.batch * steps * width || p.valid.size() != p.tokens.size()) {
        throw FormatError("patterned token count does not match its layout");
    }

    const std::size_t K = p.source_codebooks;
    CodeGrid grid(p.batch, p.source_steps, K, p.vocab);
    for (std::size_t b = 0; b < p.batch; ++b) {
        for (std::size_t t = 0; t < steps; ++t) {
            for (std::size_t c = 0; c < width; ++c) {
                const std::size_t pos = (b * steps + t) * width + c;
                bool expect_valid = true;
                std::size_t src_t = t;
                std::size_t src_k = c;
                if (p.kind == PatternKind::Delay) {
                    expect_valid = delay_position_valid(t, c, p.source_steps);
                    src_t = t - c;
                } else if (p.kind == PatternKind::Flatten) {
                    src_t = t / K;
                    src_k = t % K;
                }
                if (p.valid[pos] != expect_valid) {
                    throw FormatError("validity mask inconsistent with " +
                                      std::string(pattern_name(p.kind)) + " at step " +
                                      std::to_string(t) + ", column " + std::to_string(c));
                }
                const auto token = p.tokens[pos];
                if (!expect_valid) {
                    if (token != p.special_id()) {
                        throw FormatError("masked position holds token " + std::to_string(token) +
                                          " instead of the special id");
                    }
                    continue;
                }
                if (token >= p.vocab) {
                    throw FormatError("special id or out-of-range token at valid position (step " +
                                      std::to_string(t) + ", column " + std::to_string(c) + ")");
                }
                grid.at(b, src_t, src_k) = token;
            }
        }
    }
    return grid;
}

LatentBatch delayed_latents(const LatentBatch& codes, std::size_t segment_length) {
    const std::size_t K = codes.codebooks();
    const std::size_t T = segment_length;
    if (T == 0 || codes.samples() % T != 0) {
        throw DimensionError("sample count " + std::to_string(codes.samples()) +
                             " is not a multiple of segment length " + std::to_string(T));
    }
    if (T < K) {
        throw ArgumentError("delay needs segment length >= codebooks (" + std::to_string(T) + " < " +
                            std::to_string(K) + ")");
    }
    const std::size_t B = codes.samples() / T;
    const std::size_t valid = T - K + 1;
    LatentBatch out(B * valid, K, codes.dim());
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = 0; t < valid; ++t) {
            for (std::size_t k = 0; k < K; ++k) {
                const auto src = codes.code(b * T + delayed_source_frame(t, k, K), k);
                std::copy(src.begin(), src.end(), out.code(b * valid + t, k).begin());
            }
        }
    }
    return out;
}

CodeGrid delayed_grid(const CodeGrid& grid) {
    const std::size_t K = grid.codebooks;
    const std::size_t T = grid.steps;
    if (T < K) {
        throw ArgumentError("delay needs segment length >= codebooks (" + std::to_string(T) + " < " +
                            std::to_string(K) + ")");
    }
    const std::size_t valid = T - K + 1;
    CodeGrid out(grid.batch, valid, K, grid.vocab);
    for (std::size_t b = 0; b < grid.batch; ++b) {
        for (std::size_t t = 0; t < valid; ++t) {
            for (std::size_t k = 0; k < K; ++k) out.at(b, t, k) = grid.at(b, delayed_source_frame(t, k, K), k);
        }
    }
    return out;
}

}  // namespace cindep
