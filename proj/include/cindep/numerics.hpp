#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace cindep {

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix from_rows(const std::vector<std::vector<double>>& rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    bool all_finite() const noexcept;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// xoshiro256** seeded through SplitMix64.
///
/// The state is filled with four consecutive SplitMix64 outputs starting from
/// `seed`; every draw is then the xoshiro256** scrambled output. Integer draws
/// are identical on every platform. Gaussian draws use Box-Muller and go
/// through libm, so they match bit for bit only where libm does.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed);

    /// Direct state constructor, used to check against reference vectors.
    static SeededRng from_state(std::uint64_t s0, std::uint64_t s1, std::uint64_t s2,
                                std::uint64_t s3);

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() noexcept;
    /// Uniform in [0, bound); rejection sampling, no modulo bias. bound > 0.
    std::uint64_t uniform_index(std::uint64_t bound) noexcept;
    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept;
    double normal() noexcept;

    /// Derives an independent child seed, e.g. one per worker or sub-task.
    std::uint64_t split() noexcept;

private:
    SeededRng() = default;

    std::uint64_t seed_ = 0;
    std::uint64_t s_[4] = {0, 0, 0, 0};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// SplitMix64 step: advances `state` and returns the mixed output.
std::uint64_t splitmix64(std::uint64_t& state) noexcept;

/// A bijection on {0, ..., n-1}.
class Permutation {
public:
    Permutation() = default;
    explicit Permutation(std::vector<std::size_t> mapping);  // validates bijectivity

    static Permutation identity(std::size_t n);

    std::size_t size() const noexcept { return map_.size(); }
    std::size_t operator[](std::size_t i) const noexcept { return map_[i]; }
    std::span<const std::size_t> mapping() const noexcept { return map_; }

    Permutation inverse() const;
    /// (this ∘ other)[i] = this[other[i]].
    Permutation compose(const Permutation& other) const;

    friend bool operator==(const Permutation&, const Permutation&) = default;

private:
    std::vector<std::size_t> map_;
};

/// Squared Euclidean distances between every row of `a` and every row of `b`.
Matrix pairwise_sq_dists(const Matrix& a, const Matrix& b);

/// Uniform draw from the symmetric group via Fisher-Yates.
Permutation sample_permutation(SeededRng& rng, std::size_t n);

double squared_distance(std::span<const double> x, std::span<const double> y);
double dot(std::span<const double> x, std::span<const double> y);

}  // namespace cindep
