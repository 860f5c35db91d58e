#pragma once

#include "cindep/latent.hpp"
#include "cindep/numerics.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <variant>
#include <vector>

namespace cindep {

/// Codebook-learning settings for the exponential-moving-average update.
struct EmaSettings {
    double decay = 0.99;
    double epsilon = 1e-5;           // Laplace smoothing of cluster sizes
    double dead_threshold = 1.0;     // usage below this over a window triggers re-seeding
    std::size_t dead_window = 20;    // updates per usage window
};

/// M code vectors of dimension N plus the running statistics of their EMA update.
struct Codebook {
    Matrix entries;                     // M x N
    std::vector<double> usage_counts;   // assignments in the current window
    std::vector<double> ema_cluster_size;
    Matrix ema_embed_sum;               // M x N
    std::size_t updates_in_window = 0;

    Codebook() = default;
    explicit Codebook(Matrix entries);  // EMA state seeded as if each entry had one member

    std::size_t size() const noexcept { return entries.rows(); }
    std::size_t dim() const noexcept { return entries.cols(); }
};

struct RvqQuantizer {
    std::vector<Codebook> stages;  // K stages, all of dimension N

    std::size_t codebooks() const noexcept { return stages.size(); }
    std::size_t dim() const noexcept { return stages.empty() ? 0 : stages.front().dim(); }
    void validate() const;
};

/// Product quantizer: group g quantizes dimensions [g*N/C, (g+1)*N/C).
struct PvqQuantizer {
    std::vector<Codebook> groups;
    bool dropout_enabled = false;

    std::size_t codebooks() const noexcept { return groups.size(); }
    std::size_t group_dim() const noexcept { return groups.empty() ? 0 : groups.front().dim(); }
    std::size_t dim() const noexcept { return group_dim() * groups.size(); }
    void validate() const;
};

using Quantizer = std::variant<RvqQuantizer, PvqQuantizer>;

struct QuantizeResult {
    std::vector<std::uint32_t> indices;  // S x K
    LatentBatch codes;                   // S x K x N, PVQ codes zero outside their group
    Matrix reconstruction;               // S x N
    Matrix residual;                     // input minus reconstruction, accumulated stage by stage
    double commit_loss = 0.0;
    double codebook_loss = 0.0;
    std::size_t active_stages = 0;       // stages that reach the reconstruction

    std::uint32_t index(std::size_t s, std::size_t k) const noexcept {
        return indices[s * codes.codebooks() + k];
    }
};

/// Index of the nearest entry in squared Euclidean distance; ties go to the lowest index.
std::uint32_t nearest_code(const Codebook& cb, std::span<const double> x);

QuantizeResult rvq_encode(const RvqQuantizer& q, const Matrix& x);
Matrix rvq_decode(const RvqQuantizer& q, std::span<const std::uint32_t> indices);

/// Quantizes each group independently. With dropout enabled a depth k ~ U{1..K}
/// is drawn once per call and codes of stages beyond k are zeroed.
QuantizeResult pvq_encode(const PvqQuantizer& q, const Matrix& x, SeededRng& rng);
/// Deterministic variant with an explicit number of active stages (1..K).
QuantizeResult pvq_encode_depth(const PvqQuantizer& q, const Matrix& x, std::size_t active);
Matrix pvq_decode(const PvqQuantizer& q, std::span<const std::uint32_t> indices);

/// Full-depth encoding for either scheme (no dropout).
QuantizeResult encode(const Quantizer& q, const Matrix& x);

/// EMA update of every stage from a batch of encoder outputs; dead entries are
/// re-seeded from random batch rows.
void update_codebooks(RvqQuantizer& q, const Matrix& batch, const EmaSettings& ema,
                      SeededRng& rng);
void update_codebooks(PvqQuantizer& q, const Matrix& batch, const EmaSettings& ema,
                      SeededRng& rng);
void update_codebooks(Quantizer& q, const Matrix& batch, const EmaSettings& ema, SeededRng& rng);

/// EMA update of one codebook from vectors and their assignments.
void update_codebook(Codebook& cb, const Matrix& vectors, std::span<const std::uint32_t> assignments,
                     const EmaSettings& ema, SeededRng& rng);

/// Initializes entries from distinct random batch rows (stage residuals for RVQ).
Quantizer init_quantizer_from_batch(const Quantizer& shape, const Matrix& batch, SeededRng& rng);

enum class SchemeTag : std::uint32_t { Rvq = 1, Pvq = 2, PvqDropout = 3 };

SchemeTag scheme_of(const Quantizer& q) noexcept;
std::size_t codebook_count(const Quantizer& q) noexcept;
std::size_t codebook_size(const Quantizer& q) noexcept;
std::size_t latent_dim(const Quantizer& q) noexcept;

/// Builds a quantizer of the given scheme with zero entries.
Quantizer make_quantizer(SchemeTag scheme, std::size_t K, std::size_t M, std::size_t N);

/// CQNT container: "CQNT", u16 version, then scheme, K, M, N, C as u32 LE,
/// then every stage's entries as f64 LE, row-major.
void write_quantizer(std::ostream& out, const Quantizer& q);
Quantizer read_quantizer(std::istream& in);

}  // namespace cindep
