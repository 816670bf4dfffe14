#include "pathsearch/encoder.hpp"

#include <cctype>
#include <cmath>
#include <random>

#include "byte_io.hpp"

namespace pathsearch {

namespace {

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

GatedAttentionParams init_gated(std::size_t dim, std::size_t hidden, std::mt19937_64& rng) {
    const auto c = static_cast<Eigen::Index>(dim);
    const auto d = static_cast<Eigen::Index>(hidden);
    GatedAttentionParams p;
    p.v1 = uniform_matrix(d, c, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
    p.v2 = uniform_matrix(d, c, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
    p.w = uniform_matrix(d, 1, 1.0 / std::sqrt(static_cast<double>(hidden)), rng).col(0);
    return p;
}

// Row-wise softmax with max subtraction.
void softmax_rows_inplace(Matrix& s) {
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        auto row = s.row(i);
        row.array() -= row.maxCoeff();
        row = row.array().exp().matrix();
        row /= row.sum();
    }
}

void check_gated(const GatedAttentionParams& p, std::size_t dim, std::size_t hidden, const std::string& name) {
    if (static_cast<std::size_t>(p.v1.cols()) != dim || static_cast<std::size_t>(p.v2.cols()) != dim ||
        static_cast<std::size_t>(p.v1.rows()) != hidden || static_cast<std::size_t>(p.v2.rows()) != hidden ||
        static_cast<std::size_t>(p.w.size()) != hidden) {
        throw DimensionError(name + ": gated attention shape mismatch");
    }
    if (!p.v1.allFinite() || !p.v2.allFinite() || !p.w.allFinite()) {
        throw NumericError(name + ": non-finite parameter");
    }
}

template <class Model, class Ref, class Span>
std::vector<Ref> collect_parameters(Model& model) {
    std::vector<Ref> out;
    auto add = [&](std::string name, auto& tensor) {
        out.push_back(Ref{std::move(name), Span(tensor.data(), static_cast<std::size_t>(tensor.size()))});
    };
    add("correlation.wq", model.correlation.wq);
    add("correlation.wk", model.correlation.wk);
    add("correlation.wv", model.correlation.wv);
    for (std::size_t b = 0; b < model.branches.size(); ++b) {
        const std::string prefix = "branches[" + std::to_string(b) + "]";
        add(prefix + ".v1", model.branches[b].v1);
        add(prefix + ".v2", model.branches[b].v2);
        add(prefix + ".w", model.branches[b].w);
    }
    add("aggregator.v1", model.aggregator.v1);
    add("aggregator.v2", model.aggregator.v2);
    add("aggregator.w", model.aggregator.w);
    if (model.projection) add("projection", *model.projection);
    if (model.text_projection) add("text_projection", *model.text_projection);
    out.push_back(Ref{"temperature_logit", Span(&model.temperature_logit, 1)});
    return out;
}

}  // namespace

EncoderModel init_encoder(const EncoderShape& shape, std::uint64_t seed) {
    if (shape.dim == 0 || shape.hidden_dim == 0 || shape.m == 0) {
        throw PreconditionError("encoder shape: dim, hidden_dim and m must be positive");
    }
    std::mt19937_64 rng(seed);
    const auto c = static_cast<Eigen::Index>(shape.dim);
    const double bound = 1.0 / std::sqrt(static_cast<double>(shape.dim));

    EncoderModel model;
    model.correlation.wq = uniform_matrix(c, c, bound, rng);
    model.correlation.wk = uniform_matrix(c, c, bound, rng);
    model.correlation.wv = uniform_matrix(c, c, bound, rng);
    model.branches.reserve(shape.m);
    for (std::size_t b = 0; b < shape.m; ++b) model.branches.push_back(init_gated(shape.dim, shape.hidden_dim, rng));
    model.aggregator = init_gated(shape.dim, shape.hidden_dim, rng);
    if (shape.with_projection) model.projection = Matrix::Identity(c, c);
    if (shape.with_text_projection) model.text_projection = Matrix::Identity(c, c);
    model.temperature_logit = std::log(1.0 / 0.07);
    return model;
}

void validate(const EncoderModel& model) {
    const std::size_t c = model.dim();
    const auto ci = static_cast<Eigen::Index>(c);
    const auto& corr = model.correlation;
    if (c == 0 || corr.wq.cols() != ci || corr.wk.rows() != ci || corr.wk.cols() != ci || corr.wv.rows() != ci ||
        corr.wv.cols() != ci) {
        throw DimensionError("correlation projections must all be C x C");
    }
    if (!corr.wq.allFinite() || !corr.wk.allFinite() || !corr.wv.allFinite()) {
        throw NumericError("correlation: non-finite parameter");
    }
    if (model.branches.empty()) throw DimensionError("encoder needs at least one mosaic branch");
    const std::size_t d = model.hidden_dim();
    for (std::size_t b = 0; b < model.branches.size(); ++b) {
        check_gated(model.branches[b], c, d, "branches[" + std::to_string(b) + "]");
    }
    check_gated(model.aggregator, c, d, "aggregator");
    for (const auto* proj : {&model.projection, &model.text_projection}) {
        if (*proj && ((*proj)->rows() != ci || (*proj)->cols() != ci)) {
            throw DimensionError("projection must be C x C");
        }
        if (*proj && !(*proj)->allFinite()) throw NumericError("projection: non-finite parameter");
    }
    if (!std::isfinite(model.temperature_logit)) throw NumericError("temperature_logit is not finite");
}

std::vector<ParamRef> parameters(EncoderModel& model) {
    return collect_parameters<EncoderModel, ParamRef, std::span<double>>(model);
}

std::vector<ConstParamRef> parameters(const EncoderModel& model) {
    return collect_parameters<const EncoderModel, ConstParamRef, std::span<const double>>(model);
}

EncoderModel zeros_like(const EncoderModel& model) {
    EncoderModel z = model;
    for (auto& p : parameters(z)) std::fill(p.values.begin(), p.values.end(), 0.0);
    return z;
}

Matrix correlate_rows(const Matrix& x, const CorrelationParams& params, CorrelationTape* tape) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(x.cols()));
    Matrix q = x * params.wq;
    Matrix k = x * params.wk;
    Matrix v = x * params.wv;
    Matrix attn = (q * k.transpose()) * scale;
    softmax_rows_inplace(attn);
    Matrix out = attn * v;
    if (params.residual) out += x;
    if (tape) {
        tape->x = x;
        tape->q = std::move(q);
        tape->k = std::move(k);
        tape->v = std::move(v);
        tape->attn = std::move(attn);
    }
    return out;
}

PoolResult pool_rows(const Matrix& rows, const GatedAttentionParams& params, PoolTape* tape) {
    if (rows.rows() < 1) throw DimensionError("gated attention pooling needs at least one row");
    if (rows.cols() != params.v1.cols()) throw DimensionError("gated attention: row dim does not match params");
    Matrix tanh_u = (rows * params.v1.transpose()).array().tanh().matrix();
    Matrix sig_g = (rows * params.v2.transpose()).unaryExpr([](double g) { return 1.0 / (1.0 + std::exp(-g)); });
    Vector logits = tanh_u.cwiseProduct(sig_g) * params.w;
    logits.array() -= logits.maxCoeff();
    Vector weights = logits.array().exp().matrix();
    weights /= weights.sum();
    PoolResult result{rows.transpose() * weights, weights};
    if (tape) {
        tape->rows = rows;
        tape->tanh_u = std::move(tanh_u);
        tape->sig_g = std::move(sig_g);
        tape->weights = result.weights;
    }
    return result;
}

PatchEmbeddingMatrix correlate(const PatchEmbeddingMatrix& patches, const EncoderModel& model) {
    if (patches.dim() != model.dim()) throw DimensionError("patch dim does not match encoder dim");
    return PatchEmbeddingMatrix(correlate_rows(patches.data(), model.correlation));
}

PoolResult gated_attention_pool(const Matrix& rows, const GatedAttentionParams& params) {
    return pool_rows(rows, params);
}

namespace {

Matrix mosaics_from_correlated(const Matrix& correlated, const EncoderModel& model) {
    Matrix mosaics(static_cast<Eigen::Index>(model.m()), correlated.cols());
    for (std::size_t b = 0; b < model.m(); ++b) {
        mosaics.row(static_cast<Eigen::Index>(b)) = pool_rows(correlated, model.branches[b]).pooled.transpose();
    }
    return mosaics;
}

}  // namespace

MosaicSet generate_mosaics(const PatchEmbeddingMatrix& patches, const EncoderModel& model) {
    return MosaicSet(mosaics_from_correlated(correlate(patches, model).data(), model));
}

SemanticVector aggregate(const MosaicSet& mosaics, const EncoderModel& model) {
    if (mosaics.dim() != model.dim()) throw DimensionError("mosaic dim does not match encoder dim");
    Vector pooled = pool_rows(mosaics.rows(), model.aggregator).pooled;
    if (model.projection) pooled = *model.projection * pooled;
    return l2_normalize(pooled);
}

SlideEncoding encode_slide(const PatchEmbeddingMatrix& patches, const EncoderModel& model) {
    MosaicSet mosaics(mosaics_from_correlated(correlate(patches, model).data(), model));
    SemanticVector semantic = aggregate(mosaics, model);
    return {std::move(mosaics), std::move(semantic)};
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t fnv1a(std::string_view s, std::uint64_t basis) {
    std::uint64_t h = basis;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    // FNV low bits mix poorly; finish with the murmur3 avalanche before taking a bucket.
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    h *= 0xc4ceb9fe1a85ec53ULL;
    h ^= h >> 33;
    return h;
}

}  // namespace

Vector HashTextEmbedder::embed(std::string_view report) const {
    Vector out = Vector::Zero(static_cast<Eigen::Index>(dim_));
    std::size_t pos = 0;
    while (pos < report.size()) {
        while (pos < report.size() && std::isspace(static_cast<unsigned char>(report[pos]))) ++pos;
        std::size_t end = pos;
        while (end < report.size() && !std::isspace(static_cast<unsigned char>(report[end]))) ++end;
        if (end > pos) {
            const std::string_view token = report.substr(pos, end - pos);
            const std::uint64_t bucket = fnv1a(token, 0xcbf29ce484222325ULL) % dim_;
            const bool negative = (fnv1a(token, 0x84222325cbf29ce4ULL) >> 63) != 0;
            out(static_cast<Eigen::Index>(bucket)) += negative ? -1.0 : 1.0;
        }
        pos = end;
    }
    return out;
}

SemanticVector embed_text(std::string_view report, const TextEmbedder& embedder) {
    if (report.empty()) throw DegenerateInputError("embed_text: empty report");
    return l2_normalize(embedder.embed(report));
}

SemanticVector embed_text(std::string_view report, const TextEmbedder& embedder, const EncoderModel& model) {
    if (report.empty()) throw DegenerateInputError("embed_text: empty report");
    if (embedder.dim() != model.dim()) throw DimensionError("text embedder dim does not match encoder dim");
    Vector raw = embedder.embed(report);
    if (model.text_projection) raw = *model.text_projection * raw;
    return l2_normalize(raw);
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::string_view kModelMagic = "PSMD";
constexpr std::uint32_t kModelVersion = 1;
constexpr std::uint8_t kFlagProjection = 1;
constexpr std::uint8_t kFlagTextProjection = 2;
constexpr std::uint8_t kFlagResidual = 4;
}  // namespace

void save_model(const EncoderModel& model, const std::filesystem::path& path) {
    validate(model);
    detail::ByteWriter w;
    w.raw(kModelMagic);
    w.u32(kModelVersion);
    w.u32(static_cast<std::uint32_t>(model.dim()));
    w.u32(static_cast<std::uint32_t>(model.hidden_dim()));
    w.u32(static_cast<std::uint32_t>(model.m()));
    std::uint8_t flags = 0;
    if (model.projection) flags |= kFlagProjection;
    if (model.text_projection) flags |= kFlagTextProjection;
    if (model.correlation.residual) flags |= kFlagResidual;
    w.u8(flags);
    for (const auto& p : parameters(model)) {
        for (double v : p.values) w.f64(v);
    }
    detail::write_file_bytes(path, w.buffer());
}

EncoderModel load_model(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    detail::ByteReader r(bytes);
    if (r.str(4, "model magic") != kModelMagic) throw FormatError("bad model magic", 0);
    if (r.u32("model version") != kModelVersion) throw FormatError("unsupported model version", 4);
    EncoderShape shape;
    shape.dim = r.u32("dim");
    shape.hidden_dim = r.u32("hidden dim");
    shape.m = r.u32("mosaic count");
    const std::uint8_t flags = r.u8("flags");
    shape.with_projection = (flags & kFlagProjection) != 0;
    shape.with_text_projection = (flags & kFlagTextProjection) != 0;
    if (shape.dim == 0 || shape.hidden_dim == 0 || shape.m == 0) throw FormatError("zero model dimension", 4);
    EncoderModel model = init_encoder(shape, 0);
    model.correlation.residual = (flags & kFlagResidual) != 0;
    for (auto& p : parameters(model)) {
        r.need(p.values.size() * 8, p.name);
        for (double& v : p.values) v = r.f64(p.name);
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after model parameters", r.offset());
    validate(model);
    return model;
}

}  // namespace pathsearch
