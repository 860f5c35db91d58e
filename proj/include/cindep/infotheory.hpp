#pragma once

#include "cindep/numerics.hpp"
#include "cindep/patterns.hpp"

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace cindep {

/// Plug-in estimator options. Defaults reproduce the plain histogram estimate.
struct InfoOptions {
    bool miller_madow = false;    // add (occupied bins - 1) / 2S to every entropy
    bool mean_of_ratios = false;  // average per-pair ratios instead of ratio of means
    double min_samples_per_bin = 5.0;
};

/// Counts of symbol tuples of a fixed arity; only observed tuples are stored.
class DiscreteHistogram {
public:
    explicit DiscreteHistogram(std::size_t arity);

    void add(std::span<const std::uint32_t> tuple);

    std::size_t arity() const noexcept { return arity_; }
    std::uint64_t total() const noexcept { return total_; }
    std::size_t occupied() const noexcept { return bins_.size(); }
    const std::map<std::vector<std::uint32_t>, std::uint64_t>& bins() const noexcept {
        return bins_;
    }

    double entropy(bool miller_madow = false) const;

private:
    std::size_t arity_;
    std::uint64_t total_ = 0;
    std::map<std::vector<std::uint32_t>, std::uint64_t> bins_;
};

/// Plug-in entropy in nats.
double entropy(std::span<const std::uint32_t> samples, std::uint32_t support,
               bool miller_madow = false);

/// Joint plug-in entropy of two aligned streams, in nats.
double joint_entropy(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b,
                     std::uint32_t support_a, std::uint32_t support_b, bool miller_madow = false);

/// H(a) + H(b) - H(a, b), in nats.
double total_correlation_pair(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b,
                              std::uint32_t support_a, std::uint32_t support_b,
                              bool miller_madow = false);

struct PairTc {
    std::size_t i = 0;
    std::size_t j = 0;
    double tc_nats = 0.0;
    double joint_entropy_nats = 0.0;
    std::size_t occupied_bins = 0;
};

struct TcReport {
    double tc_nats = 0.0;              // mean over pairs
    double joint_entropy_nats = 0.0;   // mean over pairs
    double ratio_percent = 0.0;
    std::vector<PairTc> pairs;
    std::size_t sample_count = 0;
    bool miller_madow = false;
    bool mean_of_ratios = false;
    std::vector<std::string> warnings;  // sample-adequacy notes, never fatal
};

/// Total correlation of `num_pairs` distinct random codebook pairs relative to
/// their joint entropy, in percent.
TcReport tc_ratio(const CodeGrid& grid, std::size_t num_pairs, SeededRng& rng,
                  const InfoOptions& options = {});

/// Mutual information between each codebook and the tuple of all others, in nats.
std::vector<double> pairwise_mi_profile(const CodeGrid& grid, bool miller_madow = false);

}  // namespace cindep
