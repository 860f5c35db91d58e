#pragma once

#include "cindep/errors.hpp"
#include "cindep/numerics.hpp"

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cindep {

/// Real code vectors laid out samples x codebooks x dim, row-major.
class LatentBatch {
public:
    LatentBatch() = default;
    LatentBatch(std::size_t samples, std::size_t codebooks, std::size_t dim, double fill = 0.0)
        : samples_(samples), codebooks_(codebooks), dim_(dim),
          data_(samples * codebooks * dim, fill) {}
    LatentBatch(std::size_t samples, std::size_t codebooks, std::size_t dim,
                std::vector<double> data)
        : samples_(samples), codebooks_(codebooks), dim_(dim), data_(std::move(data)) {
        if (data_.size() != samples_ * codebooks_ * dim_) {
            throw DimensionError("latent data length " + std::to_string(data_.size()) +
                                 " does not match " + std::to_string(samples_) + "x" +
                                 std::to_string(codebooks_) + "x" + std::to_string(dim_));
        }
    }

    std::size_t samples() const noexcept { return samples_; }
    std::size_t codebooks() const noexcept { return codebooks_; }
    std::size_t dim() const noexcept { return dim_; }

    std::span<double> code(std::size_t s, std::size_t k) noexcept {
        return {data_.data() + (s * codebooks_ + k) * dim_, dim_};
    }
    std::span<const double> code(std::size_t s, std::size_t k) const noexcept {
        return {data_.data() + (s * codebooks_ + k) * dim_, dim_};
    }
    /// All K codes of one sample, concatenated (length K*N).
    std::span<const double> sample(std::size_t s) const noexcept {
        return {data_.data() + s * codebooks_ * dim_, codebooks_ * dim_};
    }
    std::span<double> sample(std::size_t s) noexcept {
        return {data_.data() + s * codebooks_ * dim_, codebooks_ * dim_};
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    /// Samples x (K*N) view as a matrix (copy).
    Matrix flattened() const { return Matrix(samples_, codebooks_ * dim_, data_); }

    bool all_finite() const noexcept {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    friend bool operator==(const LatentBatch&, const LatentBatch&) = default;

private:
    std::size_t samples_ = 0;
    std::size_t codebooks_ = 0;
    std::size_t dim_ = 0;
    std::vector<double> data_;
};

}  // namespace cindep
