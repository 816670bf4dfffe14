#include <doctest.h>

#include <cmath>
#include <random>

#include "pathsearch/core.hpp"

using namespace pathsearch;

namespace {

std::size_t naive_hamming(const BitVector& a, const BitVector& b) {
    std::size_t d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += a.get(i) != b.get(i);
    return d;
}

BitVector random_bits(std::size_t n, std::mt19937_64& rng) {
    BitVector v(n);
    for (std::size_t i = 0; i < n; ++i) v.set(i, rng() & 1u);
    return v;
}

}  // namespace

TEST_CASE("hamming_distance basic cases") {
    std::mt19937_64 rng(1);
    const BitVector x = random_bits(768, rng);
    CHECK(hamming_distance(x.view(), x.view()) == 0);
    CHECK(hamming_distance(x.view(), x.complement().view()) == 768);
    CHECK(hamming_distance(BitVector::from_string("1010").view(), BitVector::from_string("0110").view()) == 2);
    CHECK_THROWS_AS(hamming_distance(BitVector(4).view(), BitVector(5).view()), DimensionError);
}

TEST_CASE("packed popcount equals the per-bit loop") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 10000; ++t) {
        const std::size_t n = 1 + rng() % 200;
        const BitVector a = random_bits(n, rng);
        const BitVector b = random_bits(n, rng);
        REQUIRE(hamming_distance(a.view(), b.view()) == naive_hamming(a, b));
    }
}

TEST_CASE("hamming_distance is a metric") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 500; ++t) {
        const BitVector a = random_bits(130, rng), b = random_bits(130, rng), c = random_bits(130, rng);
        const auto ab = hamming_distance(a.view(), b.view());
        CHECK(ab == hamming_distance(b.view(), a.view()));
        CHECK(hamming_distance(a.view(), c.view()) <= ab + hamming_distance(b.view(), c.view()));
    }
}

TEST_CASE("binarize uses strict sign at zero") {
    Matrix rows(1, 4);
    rows << -1.0, 0.0, 2.5, -0.1;
    const BinaryMosaicCode code = binarize(MosaicSet(rows));
    CHECK_FALSE(code.code(0).bit(0));
    CHECK_FALSE(code.code(0).bit(1));
    CHECK(code.code(0).bit(2));
    CHECK_FALSE(code.code(0).bit(3));

    Matrix pos = Matrix::Constant(2, 70, 0.5);
    const BinaryMosaicCode ones = binarize(MosaicSet(pos));
    for (std::size_t m = 0; m < 2; ++m) {
        CHECK(hamming_distance(ones.code(m), BitVector(70).view()) == 70);
        // padding bits beyond 70 stay clear
        CHECK((ones.code_words(m)[1] >> 6) == 0);
    }
}

TEST_CASE("negated mosaics binarize to the complement") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix rows(3, 100);
    for (auto& x : rows.reshaped()) x = n(rng);
    const BinaryMosaicCode a = binarize(MosaicSet(rows));
    const BinaryMosaicCode b = binarize(MosaicSet(-rows));
    for (std::size_t m = 0; m < 3; ++m) CHECK(hamming_distance(a.code(m), b.code(m)) == 100);
}

TEST_CASE("binarize rejects non-finite entries") {
    Matrix rows = Matrix::Zero(1, 3);
    rows(0, 1) = std::nan("");
    CHECK_THROWS_AS(binarize(MosaicSet(rows)), NumericError);
}

TEST_CASE("mosaic code serialization") {
    BinaryMosaicCode code(16, 768);
    CHECK(code.serialized_size() == 1536);
    std::mt19937_64 rng(5);
    BinaryMosaicCode odd(3, 13);
    for (std::size_t m = 0; m < 3; ++m)
        for (std::size_t b = 0; b < 13; ++b) odd.set_bit(m, b, rng() & 1u);
    const auto bytes = odd.to_bytes();
    CHECK(bytes.size() == 6);
    CHECK(BinaryMosaicCode::from_bytes(bytes, 3, 13) == odd);
}

TEST_CASE("l2_normalize") {
    Vector v(2);
    v << 3, 4;
    const SemanticVector s = l2_normalize(v);
    CHECK(s.values()(0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(s.values()(1) == doctest::Approx(0.8).epsilon(1e-12));
    const SemanticVector h = l2_normalize(Vector::Ones(4));
    for (int i = 0; i < 4; ++i) CHECK(h.values()(i) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(std::abs(l2_normalize(s.values()).values().norm() - 1.0) < 1e-9);
    CHECK_THROWS_AS(l2_normalize(Vector::Zero(3)), DegenerateInputError);
}

TEST_CASE("euclidean_distance") {
    Vector a(2), b(2);
    a << 0.6, 0.8;
    b << 1.0, 0.0;
    const auto u = l2_normalize(a), v = l2_normalize(b);
    CHECK(euclidean_distance(u, u) == 0.0);
    CHECK(euclidean_distance(u, v) == doctest::Approx(std::sqrt(0.8)).epsilon(1e-12));
    Vector e0 = Vector::Zero(3), e1 = Vector::Zero(3);
    e0(0) = 1;
    e1(1) = 1;
    CHECK(euclidean_distance(l2_normalize(e0), l2_normalize(e1)) == doctest::Approx(std::sqrt(2.0)));
    CHECK_THROWS_AS(euclidean_distance(u, l2_normalize(e0)), DimensionError);
}

TEST_CASE("euclidean_distance is monotone decreasing in cosine") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n(0.0, 1.0);
    auto rand_unit = [&] {
        Vector v(16);
        for (auto& x : v) x = n(rng);
        return l2_normalize(v);
    };
    for (int t = 0; t < 300; ++t) {
        const auto q = rand_unit(), a = rand_unit(), b = rand_unit();
        const double ca = q.values().dot(a.values()), cb = q.values().dot(b.values());
        if (std::abs(ca - cb) < 1e-12) continue;
        CHECK((ca > cb) == (euclidean_distance(q, a) < euclidean_distance(q, b)));
        CHECK(euclidean_distance(q, a) == doctest::Approx(std::sqrt(2.0 - 2.0 * ca)).epsilon(1e-9));
    }
}

TEST_CASE("domain type invariants") {
    CHECK_THROWS(PatchEmbeddingMatrix(Matrix(0, 4)));
    Matrix bad = Matrix::Zero(2, 2);
    bad(1, 1) = INFINITY;
    CHECK_THROWS_AS(PatchEmbeddingMatrix{bad}, NumericError);
    CHECK_THROWS(MosaicSet(Matrix(0, 3)));
}
