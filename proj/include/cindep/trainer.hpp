#pragma once

#include "cindep/infotheory.hpp"
#include "cindep/kernels.hpp"
#include "cindep/mmd.hpp"
#include "cindep/numerics.hpp"
#include "cindep/quantizers.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace cindep {

/// Correlated synthetic frames: x_t = A u_t + noise, u an AR(1) Gaussian of rank r.
struct SyntheticDataSpec {
    std::size_t latent_rank = 4;
    std::uint64_t mixing_seed = 7;
    double rho = 0.9;           // temporal correlation of u, in [0, 1)
    double noise_scale = 0.1;
    bool identity_mixing = false;  // A = I; needs latent_rank == input_dim
};

/// A fixed D x r mixing matrix drawn from spec.mixing_seed (or the identity).
Matrix mixing_matrix(const SyntheticDataSpec& spec, std::size_t input_dim);

/// `count` batches of `batch` independent sequences of `steps` frames each,
/// laid out batch-major as (batch*steps) x input_dim. Each sequence starts from
/// the stationary distribution of u.
std::vector<Matrix> generate_synthetic(const SyntheticDataSpec& spec, std::size_t input_dim,
                                       std::size_t batch, std::size_t steps, SeededRng& rng,
                                       std::size_t count);

struct ToyCodecConfig {
    std::size_t input_dim = 16;
    std::size_t K = 4;
    std::size_t M = 64;
    std::size_t N = 16;
    SchemeTag scheme = SchemeTag::Pvq;
    double lambda_inde = 0.0;
    double lambda_commit = 0.25;
    KernelSpec kernel = KernelSpec::default_gaussian();
    std::optional<bool> apply_delay;  // unset: on when K > 1
    SamplingMode sampling_mode = SamplingMode::Coupled;
    double learning_rate = 0.05;
    std::size_t steps = 2000;
    std::size_t batch_size = 64;
    std::size_t segment_length = 32;
    std::uint64_t seed = 1;

    SyntheticDataSpec data;
    EmaSettings ema;
    std::size_t data_batches = 32;   // training pool, cycled
    std::size_t eval_interval = 50;  // MMD measurement period when lambda_inde == 0
    std::size_t eval_frames = 32768;
    std::size_t eval_mmd_batches = 4;
    std::size_t tc_pairs = 5;

    bool delay_enabled() const noexcept { return apply_delay.value_or(K > 1); }
    std::size_t frames_per_batch() const noexcept { return batch_size * segment_length; }

    /// Throws ArgumentError naming the offending field.
    void validate() const;
};

/// Flat `key=value` lines; `#` starts a comment. Unknown keys and bad values
/// throw FormatError naming the key.
ToyCodecConfig parse_config(std::istream& in);
ToyCodecConfig load_config(const std::string& path);
/// Every key, one per line, in a fixed order; parse_config reads it back.
std::string format_config(const ToyCodecConfig& cfg);

struct StepLosses {
    double rec = 0.0;
    double commit = 0.0;
    double inde = 0.0;   // last measured value when lambda_inde == 0
    double total = 0.0;  // rec + lambda_commit * commit + lambda_inde * inde
    bool inde_measured = false;
};

struct TrainReport {
    StepLosses initial;
    std::vector<StepLosses> curve;  // one entry per step
    double final_rec = 0.0;         // on held-out frames, full depth
    MmdReport final_mmd;            // mean over the held-out MMD batches
    TcReport final_tc;
    std::vector<double> usage;      // fraction of entries used per codebook, held-out frames
    ToyCodecConfig config;
    std::uint64_t seed = 0;
};

/// Training pool and held-out frames shared by every run of a sweep.
struct TrainingData {
    std::vector<Matrix> train;
    std::vector<Matrix> eval;  // eval_frames worth of batches
};

TrainingData make_training_data(const ToyCodecConfig& cfg);

/// Affine encoder and decoder around a quantizer.
struct ToyModel {
    Matrix enc_w;  // N x D
    std::vector<double> enc_b;
    Matrix dec_w;  // D x N
    std::vector<double> dec_b;
    Quantizer quantizer;
};

/// Random affine maps; codebooks seeded from encoder outputs of `first_batch`.
ToyModel init_toy_model(const ToyCodecConfig& cfg, const Matrix& first_batch, SeededRng& rng);

struct ToyGradients {
    StepLosses losses;
    Matrix enc_w;
    std::vector<double> enc_b;
    Matrix dec_w;
    std::vector<double> dec_b;
};

/// Losses and parameter gradients on one batch at full quantizer depth.
/// The independence term is measured only when `with_inde`; its permutations
/// come from `perm_rng`.
ToyGradients toy_gradients(const ToyModel& model, const Matrix& x, const ToyCodecConfig& cfg,
                           SeededRng& perm_rng, bool with_inde = true);

TrainReport train_toy(const ToyCodecConfig& cfg, const TrainingData& data);
TrainReport train_toy(const ToyCodecConfig& cfg);

struct SweepRow {
    double lambda = 0.0;
    double mmd = 0.0;
    double tc_ratio_percent = 0.0;
    double rec = 0.0;
};

/// One run per lambda on shared data and seed. `threads` caps concurrent runs.
std::vector<SweepRow> sweep_weights(const ToyCodecConfig& cfg, const std::vector<double>& lambdas,
                                    std::size_t threads = 1);

/// Max |analytic - numeric| / max|numeric| over all encoder and decoder
/// parameters, with quantizer indices, dropout depth and permutations frozen.
/// Needs input_dim <= 6 and batch_size * segment_length <= 16.
double grad_check(const ToyCodecConfig& cfg);

}  // namespace cindep
