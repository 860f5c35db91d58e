#pragma once

#include "cindep/infotheory.hpp"
#include "cindep/latent.hpp"
#include "cindep/mmd.hpp"
#include "cindep/patterns.hpp"
#include "cindep/quantizers.hpp"
#include "cindep/trainer.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace cindep {

enum class FileFormat { Csv, Binary };

/// `csv` | `bin`.
FileFormat parse_file_format(std::string_view text);

/// T frames of K indices below M. A patterned file also records the pattern and
/// the original frame count, and may hold the special id M at masked positions.
struct TokenFile {
    std::size_t steps = 0;  // T
    std::size_t codebooks = 0;  // K
    std::uint32_t vocab = 0;    // M
    std::optional<PatternKind> pattern;
    std::size_t original_steps = 0;
    std::vector<std::uint32_t> indices;  // T x K, frame-major

    void validate() const;  // throws FormatError
    friend bool operator==(const TokenFile&, const TokenFile&) = default;
};

/// CSV: first line `T,K,M` (or `T,K,M,pattern,original_T`), then one line of K
/// indices per frame. Binary: "CIDX", u16 version (1, or 2 with the u32 pattern
/// tag and u32 original T after the header), T, K, M as u32, then T*K u32, all
/// little-endian.
void write_tokens(std::ostream& out, const TokenFile& file, FileFormat format);
/// Detects the encoding from the leading bytes.
TokenFile read_tokens(std::istream& in);

TokenFile tokens_from_grid(const CodeGrid& grid);  // batch frames are concatenated
CodeGrid grid_from_tokens(const TokenFile& file);  // batch 1; rejects patterned files
TokenFile tokens_from_patterned(const PatternedGrid& patterned);  // batch 1 only
PatternedGrid patterned_from_tokens(const TokenFile& file);       // needs pattern metadata

/// CSV: first line `S,K,N`, then one line of K*N reals per sample.
/// Binary: "CLAT", S, K, N as u32, then S*K*N f64, all little-endian.
void write_latents(std::ostream& out, const LatentBatch& latents, FileFormat format);
LatentBatch read_latents(std::istream& in);

/// Shortest text that reads back to the same double.
std::string format_real(double v);

void write_tc_csv(std::ostream& out, const TcReport& report);
void write_mi_profile_csv(std::ostream& out, const std::vector<double>& profile);
void write_mmd_csv(std::ostream& out, const MmdReport& report);
void write_train_csv(std::ostream& out, const TrainReport& report);
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

// File-path conveniences; open failures throw FormatError.
TokenFile load_tokens(const std::string& path);
void save_tokens(const std::string& path, const TokenFile& file, FileFormat format);
LatentBatch load_latents(const std::string& path);
void save_latents(const std::string& path, const LatentBatch& latents, FileFormat format);
Quantizer load_quantizer(const std::string& path);
void save_quantizer(const std::string& path, const Quantizer& q);

}  // namespace cindep
