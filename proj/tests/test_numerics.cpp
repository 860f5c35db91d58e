#include <doctest.h>

#include "cindep/errors.hpp"
#include "cindep/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

using namespace cindep;

namespace {

Matrix random_matrix(SeededRng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.normal();
    return m;
}

}  // namespace

TEST_CASE("pairwise_sq_dists small cases") {
    const auto origin = Matrix::from_rows({{0.0, 0.0}});
    CHECK(pairwise_sq_dists(origin, origin)(0, 0) == 0.0);

    const auto a = Matrix::from_rows({{1.0, 0.0}});
    const auto b = Matrix::from_rows({{0.0, 1.0}});
    CHECK(pairwise_sq_dists(a, b)(0, 0) == 2.0);

    CHECK_THROWS_AS(pairwise_sq_dists(a, Matrix(1, 3)), DimensionError);
}

TEST_CASE("pairwise_sq_dists matches a per-pair loop") {
    SeededRng rng(7);
    const auto a = random_matrix(rng, 3, 2);
    const auto b = random_matrix(rng, 4, 2);
    const auto d = pairwise_sq_dists(a, b);
    REQUIRE(d.rows() == 3);
    REQUIRE(d.cols() == 4);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            const double dx = a(i, 0) - b(j, 0);
            const double dy = a(i, 1) - b(j, 1);
            CHECK(std::abs(d(i, j) - (dx * dx + dy * dy)) <= 1e-12);
        }
    }
}

TEST_CASE("pairwise_sq_dists of a set with itself is symmetric with zero diagonal") {
    SeededRng rng(11);
    const auto a = random_matrix(rng, 9, 5);
    const auto d = pairwise_sq_dists(a, a);
    for (std::size_t i = 0; i < 9; ++i) {
        CHECK(d(i, i) == 0.0);
        for (std::size_t j = 0; j < 9; ++j) {
            CHECK(d(i, j) == d(j, i));
            CHECK(d(i, j) >= 0.0);
        }
    }
}

TEST_CASE("SplitMix64 and xoshiro256** reference outputs") {
    std::uint64_t state = 1234567;
    const std::uint64_t expected_sm[] = {6457827717110365317ULL, 3203168211198807973ULL,
                                         9817491932198370423ULL, 4593380528125082431ULL,
                                         16408922859458223821ULL};
    for (auto e : expected_sm) CHECK(splitmix64(state) == e);

    auto rng = SeededRng::from_state(1, 2, 3, 4);
    const std::uint64_t expected_xo[] = {11520ULL, 0ULL, 1509978240ULL, 1215971899390074240ULL,
                                         1216172134540287360ULL, 607988272756665600ULL};
    for (auto e : expected_xo) CHECK(rng.next_u64() == e);

    SeededRng seeded(42);
    CHECK(seeded.next_u64() == 1546998764402558742ULL);
    CHECK(seeded.next_u64() == 6990951692964543102ULL);
    CHECK(seeded.next_u64() == 12544586762248559009ULL);
}

TEST_CASE("uniform draws stay in range") {
    SeededRng rng(3);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(rng.uniform_index(7) < 7);
    }
}

TEST_CASE("normal draws have unit moments") {
    SeededRng rng(5);
    const int n = 200000;
    double sum = 0.0;
    double sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    CHECK(std::abs(sum / n) < 0.01);
    CHECK(std::abs(sq / n - 1.0) < 0.02);
}

TEST_CASE("sample_permutation basics") {
    SeededRng rng(1);
    CHECK(sample_permutation(rng, 1) == Permutation::identity(1));
    CHECK_THROWS_AS(sample_permutation(rng, 0), ArgumentError);

    SeededRng r1(99);
    SeededRng r2(99);
    CHECK(sample_permutation(r1, 5) == sample_permutation(r2, 5));
}

TEST_CASE("permutation composed with its inverse is the identity") {
    SeededRng rng(17);
    for (std::size_t n : {1u, 2u, 7u, 100u}) {
        const auto p = sample_permutation(rng, n);
        CHECK(p.compose(p.inverse()) == Permutation::identity(n));
        CHECK(p.inverse().compose(p) == Permutation::identity(n));
    }
}

TEST_CASE("permutation constructor rejects non-bijections") {
    CHECK_THROWS_AS(Permutation({0, 0, 1}), ArgumentError);
    CHECK_THROWS_AS(Permutation({0, 3}), ArgumentError);
}

TEST_CASE("sample_permutation is uniform over S_3") {
    SeededRng rng(2024);
    std::map<std::vector<std::size_t>, int> freq;
    const int draws = 60000;
    for (int i = 0; i < draws; ++i) {
        const auto p = sample_permutation(rng, 3);
        ++freq[{p.mapping().begin(), p.mapping().end()}];
    }
    REQUIRE(freq.size() == 6);
    double chi2 = 0.0;
    const double expected = draws / 6.0;
    for (const auto& [perm, count] : freq) {
        CHECK(std::abs(count / static_cast<double>(draws) - 1.0 / 6.0) <= 0.01);
        chi2 += (count - expected) * (count - expected) / expected;
    }
    // 5 degrees of freedom; 20.5 is the 0.999 quantile.
    CHECK(chi2 < 20.5);
}
