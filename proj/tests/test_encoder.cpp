#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>

#include "oracle.hpp"
#include "pathsearch/encoder.hpp"
#include "pathsearch/patch_io.hpp"

using namespace pathsearch;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(r, c);
    for (auto& x : m.reshaped()) x = n(rng);
    return m;
}

EncoderModel random_model(std::size_t c, std::size_t d, std::size_t m, std::uint64_t seed) {
    EncoderModel model = init_encoder({c, d, m, true, true}, seed);
    std::mt19937_64 rng(seed + 11);
    *model.projection = Matrix::Identity(c, c) + random_matrix(c, c, rng, 0.2);
    return model;
}

Matrix permute_rows(const Matrix& x, const std::vector<Eigen::Index>& perm) {
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i) = x.row(perm[i]);
    return out;
}

}  // namespace

TEST_CASE("gated attention pool matches the scalar oracle") {
    std::mt19937_64 rng(1);
    GatedAttentionParams p{random_matrix(2, 3, rng), random_matrix(2, 3, rng), random_matrix(2, 1, rng).col(0)};
    const Matrix rows = random_matrix(5, 3, rng);
    const PoolResult got = gated_attention_pool(rows, p);
    const oracle::Pooled want = oracle::pool(oracle::to_rows(rows), p);
    for (int n = 0; n < 5; ++n) CHECK(std::abs(got.weights(n) - want.weights[n]) < 1e-12);
    for (int t = 0; t < 3; ++t) CHECK(std::abs(got.pooled(t) - want.pooled[t]) < 1e-12);
    CHECK(std::abs(got.weights.sum() - 1.0) < 1e-9);
    CHECK((got.weights.array() > 0.0).all());
}

TEST_CASE("gated attention pool edge cases") {
    std::mt19937_64 rng(2);
    GatedAttentionParams p{random_matrix(4, 6, rng), random_matrix(4, 6, rng), Vector::Zero(4)};
    const Matrix one = random_matrix(1, 6, rng);
    const PoolResult single = gated_attention_pool(one, p);
    CHECK(single.weights(0) == doctest::Approx(1.0));
    CHECK((single.pooled.transpose() - one.row(0)).norm() < 1e-12);

    const Matrix rows = random_matrix(7, 6, rng);
    const PoolResult uniform = gated_attention_pool(rows, p);
    for (int n = 0; n < 7; ++n) CHECK(uniform.weights(n) == doctest::Approx(1.0 / 7.0));
    CHECK((uniform.pooled.transpose() - rows.colwise().mean()).norm() < 1e-12);
}

TEST_CASE("correlation layer") {
    std::mt19937_64 rng(3);
    CorrelationParams p{random_matrix(4, 4, rng), random_matrix(4, 4, rng), random_matrix(4, 4, rng)};
    const Matrix x = random_matrix(3, 4, rng);
    const Matrix got = correlate_rows(x, p);
    const oracle::Rows want = oracle::correlate(oracle::to_rows(x), p);
    for (int i = 0; i < 3; ++i)
        for (int t = 0; t < 4; ++t) CHECK(std::abs(got(i, t) - want[i][t]) < 1e-12);

    const Matrix one = random_matrix(1, 4, rng);
    CHECK((correlate_rows(one, p) - (one + one * p.wv)).norm() < 1e-12);

    CorrelationParams zero{Matrix::Zero(4, 4), Matrix::Zero(4, 4), Matrix::Zero(4, 4)};
    CHECK((correlate_rows(x, zero) - x).norm() == 0.0);
}

TEST_CASE("full forward matches the scalar oracle on a 5-patch instance") {
    const EncoderModel model = random_model(8, 4, 2, 5);
    std::mt19937_64 rng(6);
    const Matrix x = random_matrix(5, 8, rng);
    const SlideEncoding enc = encode_slide(PatchEmbeddingMatrix(x), model);
    const oracle::Forward want = oracle::encode(x, model);
    for (int m = 0; m < 2; ++m)
        for (int t = 0; t < 8; ++t) CHECK(std::abs(enc.mosaics.rows()(m, t) - want.mosaics[m][t]) < 1e-9);
    for (int t = 0; t < 8; ++t) CHECK(std::abs(enc.semantic.values()(t) - want.semantic[t]) < 1e-9);
}

TEST_CASE("mosaics are invariant to patch order") {
    const EncoderModel model = random_model(8, 4, 3, 7);
    std::mt19937_64 rng(8);
    const Matrix x = random_matrix(17, 8, rng);
    std::vector<Eigen::Index> perm(17);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const MosaicSet a = generate_mosaics(PatchEmbeddingMatrix(x), model);
    const MosaicSet b = generate_mosaics(PatchEmbeddingMatrix(permute_rows(x, perm)), model);
    CHECK((a.rows() - b.rows()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("mosaic generation edge cases") {
    EncoderModel model = random_model(6, 3, 2, 9);
    std::mt19937_64 rng(10);
    const Matrix one = random_matrix(1, 6, rng);
    const MosaicSet single = generate_mosaics(PatchEmbeddingMatrix(one), model);
    const Matrix corr = correlate(PatchEmbeddingMatrix(one), model).data();
    for (int m = 0; m < 2; ++m) CHECK((single.rows().row(m) - corr.row(0)).norm() < 1e-12);

    model.branches[1] = model.branches[0];
    const MosaicSet same = generate_mosaics(PatchEmbeddingMatrix(random_matrix(9, 6, rng)), model);
    CHECK((same.rows().row(0) - same.rows().row(1)).norm() == 0.0);

    for (std::size_t n : {1u, 2u, 17u, 1000u}) {
        CHECK_NOTHROW(encode_slide(PatchEmbeddingMatrix(random_matrix(n, 6, rng)), model));
    }
}

TEST_CASE("aggregate") {
    EncoderModel model = random_model(5, 3, 1, 12);
    std::mt19937_64 rng(13);
    const Matrix mosaic = random_matrix(1, 5, rng);
    const Vector projected = *model.projection * mosaic.row(0).transpose();
    CHECK((aggregate(MosaicSet(mosaic), model).values() - projected.normalized()).norm() < 1e-12);

    model = random_model(5, 3, 4, 14);
    model.aggregator.w.setZero();
    const Matrix rows = random_matrix(4, 5, rng);
    const Vector mean = *model.projection * rows.colwise().mean().transpose();
    CHECK((aggregate(MosaicSet(rows), model).values() - mean.normalized()).norm() < 1e-12);

    CHECK_THROWS_AS(aggregate(MosaicSet(Matrix::Zero(2, 5)), model), DegenerateInputError);
}

TEST_CASE("hash text embedder") {
    const HashTextEmbedder e(768);
    const SemanticVector a = embed_text("tumor cells invade stroma", e);
    CHECK(a.values() == embed_text("tumor cells invade stroma", e).values());
    CHECK(std::abs(a.values().norm() - 1.0) < 1e-12);
    CHECK_THROWS_AS(embed_text("", e), DegenerateInputError);

    std::mt19937_64 rng(15);
    int below = 0;
    for (int t = 0; t < 100; ++t) {
        std::string x, y;
        for (int w = 0; w < 8; ++w) {
            x += "a" + std::to_string(rng()) + " ";
            y += "b" + std::to_string(rng()) + " ";
        }
        below += embed_text(x, e).values().dot(embed_text(y, e).values()) < 0.5;
    }
    CHECK(below == 100);
}

TEST_CASE("initialization") {
    const EncoderModel model = init_encoder({32, 8, 4, true, true}, 3);
    CHECK(model.m() == 4);
    CHECK(model.temperature_logit == doctest::Approx(std::log(1.0 / 0.07)));
    CHECK(model.correlation.wq.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(32.0));
    CHECK(model.branches[0].w.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(8.0));
    CHECK(*model.projection == Matrix::Identity(32, 32));
    const EncoderModel again = init_encoder({32, 8, 4, true, true}, 3);
    CHECK(again.branches[3].v2 == model.branches[3].v2);
    CHECK_NOTHROW(validate(model));
}

TEST_CASE("model and patch files round-trip") {
    const auto dir = std::filesystem::temp_directory_path() / "pathsearch_test_encoder";
    std::filesystem::create_directories(dir);
    const EncoderModel model = random_model(6, 3, 2, 20);
    save_model(model, dir / "m.psmd");
    const EncoderModel back = load_model(dir / "m.psmd");
    const auto a = parameters(model), b = parameters(back);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        CHECK(std::equal(a[i].values.begin(), a[i].values.end(), b[i].values.begin()));
    }

    std::mt19937_64 rng(21);
    const Matrix x = random_matrix(4, 3, rng).cast<float>().cast<double>();
    write_pemb(dir / "p.pemb", PatchEmbeddingMatrix(x));
    CHECK(read_patches(dir / "p.pemb").data() == x);
    auto bytes = encode_pemb(PatchEmbeddingMatrix(x));
    CHECK(bytes.size() == 16 + 4 * 12);
    bytes[0] = 'X';
    CHECK_THROWS_AS(decode_pemb(bytes), FormatError);
    bytes = encode_pemb(PatchEmbeddingMatrix(x));
    bytes.resize(bytes.size() - 1);
    CHECK_THROWS_AS(decode_pemb(bytes), FormatError);
    std::filesystem::remove_all(dir);
}
