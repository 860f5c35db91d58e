#pragma once

#include "cindep/kernels.hpp"
#include "cindep/latent.hpp"
#include "cindep/numerics.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cindep {

/// How the factorized set is drawn relative to the joint set.
enum class SamplingMode : std::uint8_t {
    Coupled,  // both sets come from the same samples; the factorized one is shuffled
    Split,    // joint set from the first half, factorized set shuffled from the second
};

std::string_view sampling_mode_name(SamplingMode mode) noexcept;

struct MmdConfig {
    KernelSpec kernel = KernelSpec::default_gaussian();
    bool apply_delay = false;
    std::uint64_t seed = 0;
    SamplingMode mode = SamplingMode::Coupled;
};

struct MmdReport {
    double value = 0.0;  // unbiased, may be negative
    std::size_t sample_count = 0;
    std::string kernel;
    std::uint64_t seed = 0;
    bool delay = false;
    SamplingMode mode = SamplingMode::Coupled;
};

/// Row i of codebook k is taken from row pi_k(i), with a fresh pi_k per codebook.
LatentBatch shuffle_factorized(const LatentBatch& z, SeededRng& rng);

/// Unbiased estimate: within-set sums exclude the diagonal, the cross sum includes it.
MmdReport mmd_unbiased(const KernelSpec& kernel, const Matrix& z, const Matrix& zbar);

/// Biased V-statistic (all pairs in every term); non-negative for PSD kernels.
double mmd_biased(const KernelSpec& kernel, const Matrix& z, const Matrix& zbar);

struct MmdGradient {
    Matrix grad_z;
    Matrix grad_zbar;
};

/// Exact gradient of mmd_unbiased with respect to every entry of both sets.
MmdGradient mmd_grad(const KernelSpec& kernel, const Matrix& z, const Matrix& zbar);

/// Source of every (row, codebook) slot of the joint and factorized sets.
///
/// Sources are flat sample indices into the original B*T layout, so delay
/// realignment and shuffling are both folded into one gather.
struct FactorizedPlan {
    std::size_t rows = 0;
    std::size_t codebooks = 0;
    std::vector<std::size_t> joint_source;     // rows x K
    std::vector<std::size_t> shuffled_source;  // rows x K
};

/// Draws the permutations for one independence-loss evaluation.
///
/// Consumes one permutation per codebook from `rng`, in codebook order.
FactorizedPlan make_factorized_plan(std::size_t samples, std::size_t codebooks,
                                    std::size_t segment_length, bool apply_delay, SamplingMode mode,
                                    SeededRng& rng);

struct IndependenceLoss {
    MmdReport report;
    LatentBatch grad;  // same shape as the input codes; empty when not requested
};

/// Independence loss over codes of shape (B*T) x K x N, batch-major.
///
/// Optional delay realignment, then batch/time grouping, per-codebook shuffling,
/// flattening to K*N vectors and mmd_unbiased. The gradient is scattered back to
/// the original code positions, summing joint and shuffled appearances.
IndependenceLoss independence_loss(const LatentBatch& codes, std::size_t segment_length,
                                   const MmdConfig& cfg, SeededRng& rng, bool with_grad = true);

/// Same as above with the generator seeded from cfg.seed.
IndependenceLoss independence_loss(const LatentBatch& codes, std::size_t segment_length,
                                   const MmdConfig& cfg, bool with_grad = true);

/// Codes given as indices into per-codebook tables.
///
/// Sample s, codebook k holds row indices[s*K + k] of tables[k]; every table has N
/// columns. Kernel values come from per-codebook lookup tables, so the cost per
/// pair is O(K) instead of O(K*N). Matches independence_loss on the expanded codes.
IndependenceLoss independence_loss_indexed(std::span<const std::uint32_t> indices,
                                           const std::vector<Matrix>& tables,
                                           std::size_t segment_length, const MmdConfig& cfg,
                                           SeededRng& rng, bool with_grad = true);

}  // namespace cindep
