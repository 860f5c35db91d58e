#include "cindep/infotheory.hpp"

#include "cindep/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cindep {

namespace {

// Entropy from a sorted key sequence: counts are the run lengths.
double entropy_of_sorted(const std::vector<std::uint64_t>& keys, bool miller_madow,
                         std::size_t* occupied = nullptr) {
    const double n = static_cast<double>(keys.size());
    double sum_clogc = 0.0;
    std::size_t bins = 0;
    for (std::size_t i = 0; i < keys.size();) {
        std::size_t j = i + 1;
        while (j < keys.size() && keys[j] == keys[i]) ++j;
        const double c = static_cast<double>(j - i);
        sum_clogc += c * std::log(c);
        ++bins;
        i = j;
    }
    if (occupied) *occupied = bins;
    double h = std::log(n) - sum_clogc / n;
    if (h < 0.0) h = 0.0;  // rounding when all mass sits in one bin
    if (miller_madow) h += static_cast<double>(bins - 1) / (2.0 * n);
    return h;
}

void check_symbols(std::span<const std::uint32_t> s, std::uint32_t support, const char* name) {
    if (s.empty()) throw ArgumentError(std::string(name) + ": empty sample");
    for (auto v : s) {
        if (v >= support) {
            throw ArgumentError(std::string(name) + ": symbol " + std::to_string(v) +
                                " outside support " + std::to_string(support));
        }
    }
}

std::vector<std::uint64_t> pair_keys(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b,
                                     std::uint32_t support_b) {
    std::vector<std::uint64_t> keys(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        keys[i] = std::uint64_t{a[i]} * support_b + b[i];
    }
    std::sort(keys.begin(), keys.end());
    return keys;
}

double marginal_entropy(std::span<const std::uint32_t> s, bool miller_madow) {
    std::vector<std::uint64_t> keys(s.begin(), s.end());
    std::sort(keys.begin(), keys.end());
    return entropy_of_sorted(keys, miller_madow);
}

}  // namespace

DiscreteHistogram::DiscreteHistogram(std::size_t arity) : arity_(arity) {
    if (arity == 0) throw ArgumentError("histogram arity must be at least 1");
}

void DiscreteHistogram::add(std::span<const std::uint32_t> tuple) {
    if (tuple.size() != arity_) {
        throw DimensionError("tuple of arity " + std::to_string(tuple.size()) +
                             " added to histogram of arity " + std::to_string(arity_));
    }
    ++bins_[std::vector<std::uint32_t>(tuple.begin(), tuple.end())];
    ++total_;
}

double DiscreteHistogram::entropy(bool miller_madow) const {
    if (total_ == 0) throw ArgumentError("entropy of an empty histogram");
    const double n = static_cast<double>(total_);
    double sum_clogc = 0.0;
    for (const auto& [tuple, count] : bins_) {
        const double c = static_cast<double>(count);
        sum_clogc += c * std::log(c);
    }
    double h = std::max(0.0, std::log(n) - sum_clogc / n);
    if (miller_madow) h += static_cast<double>(bins_.size() - 1) / (2.0 * n);
    return h;
}

double entropy(std::span<const std::uint32_t> samples, std::uint32_t support, bool miller_madow) {
    check_symbols(samples, support, "entropy");
    return marginal_entropy(samples, miller_madow);
}

double joint_entropy(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b,
                     std::uint32_t support_a, std::uint32_t support_b, bool miller_madow) {
    if (a.size() != b.size()) {
        throw DimensionError("streams differ in length: " + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()));
    }
    check_symbols(a, support_a, "joint_entropy");
    check_symbols(b, support_b, "joint_entropy");
    return entropy_of_sorted(pair_keys(a, b, support_b), miller_madow);
}

double total_correlation_pair(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b,
                              std::uint32_t support_a, std::uint32_t support_b, bool miller_madow) {
    const double hab = joint_entropy(a, b, support_a, support_b, miller_madow);
    return marginal_entropy(a, miller_madow) + marginal_entropy(b, miller_madow) - hab;
}

TcReport tc_ratio(const CodeGrid& grid, std::size_t num_pairs, SeededRng& rng,
                  const InfoOptions& options) {
    const std::size_t K = grid.codebooks;
    if (K < 2) throw ArgumentError("tc_ratio needs at least 2 codebooks");
    const std::size_t available = K * (K - 1) / 2;
    if (num_pairs == 0 || num_pairs > available) {
        throw ArgumentError("num_pairs must be in [1, " + std::to_string(available) + "], got " +
                            std::to_string(num_pairs));
    }
    if (grid.frames() == 0) throw ArgumentError("tc_ratio: empty grid");

    std::vector<std::pair<std::size_t, std::size_t>> all;
    for (std::size_t i = 0; i < K; ++i) {
        for (std::size_t j = i + 1; j < K; ++j) all.emplace_back(i, j);
    }
    const auto order = sample_permutation(rng, all.size());

    TcReport report;
    report.sample_count = grid.frames();
    report.miller_madow = options.miller_madow;
    report.mean_of_ratios = options.mean_of_ratios;
    const double n = static_cast<double>(grid.frames());
    double ratio_sum = 0.0;
    for (std::size_t p = 0; p < num_pairs; ++p) {
        const auto [i, j] = all[order[p]];
        const auto a = grid.stream(i);
        const auto b = grid.stream(j);
        PairTc pair;
        pair.i = i;
        pair.j = j;
        pair.joint_entropy_nats =
            entropy_of_sorted(pair_keys(a, b, grid.vocab), options.miller_madow, &pair.occupied_bins);
        pair.tc_nats = marginal_entropy(a, options.miller_madow) +
                       marginal_entropy(b, options.miller_madow) - pair.joint_entropy_nats;
        if (n / static_cast<double>(pair.occupied_bins) < options.min_samples_per_bin) {
            std::ostringstream msg;
            msg << "pair (" << i << "," << j << "): " << n / pair.occupied_bins
                << " samples per occupied bin, below " << options.min_samples_per_bin
                << "; plug-in estimate is biased upward";
            report.warnings.push_back(msg.str());
        }
        report.tc_nats += pair.tc_nats;
        report.joint_entropy_nats += pair.joint_entropy_nats;
        if (pair.joint_entropy_nats > 0.0) ratio_sum += 100.0 * pair.tc_nats / pair.joint_entropy_nats;
        report.pairs.push_back(pair);
    }
    const double count = static_cast<double>(num_pairs);
    report.tc_nats /= count;
    report.joint_entropy_nats /= count;
    if (options.mean_of_ratios) {
        report.ratio_percent = ratio_sum / count;
    } else if (report.joint_entropy_nats > 0.0) {
        report.ratio_percent = 100.0 * report.tc_nats / report.joint_entropy_nats;
    }
    return report;
}

std::vector<double> pairwise_mi_profile(const CodeGrid& grid, bool miller_madow) {
    const std::size_t K = grid.codebooks;
    if (K < 2) throw ArgumentError("pairwise_mi_profile needs at least 2 codebooks");
    const std::size_t S = grid.frames();
    if (S == 0) throw ArgumentError("pairwise_mi_profile: empty grid");

    std::vector<double> profile(K);
    std::vector<std::uint32_t> rest_key(K - 1);
    for (std::size_t k = 0; k < K; ++k) {
        // Dictionary-encode the (K-1)-tuple of the other streams.
        std::map<std::vector<std::uint32_t>, std::uint32_t> dictionary;
        std::vector<std::uint32_t> rest(S);
        for (std::size_t f = 0; f < S; ++f) {
            std::size_t w = 0;
            for (std::size_t o = 0; o < K; ++o) {
                if (o != k) rest_key[w++] = grid.indices[f * K + o];
            }
            const auto [it, inserted] =
                dictionary.try_emplace(rest_key, static_cast<std::uint32_t>(dictionary.size()));
            rest[f] = it->second;
        }
        const auto own = grid.stream(k);
        const auto rest_support = static_cast<std::uint32_t>(dictionary.size());
        profile[k] = total_correlation_pair(own, rest, grid.vocab, rest_support, miller_madow);
    }
    return profile;
}

}  // namespace cindep
