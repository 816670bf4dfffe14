#pragma once

// Vision branch forward pass: inter-patch self-attention, M gated-attention
// branches producing the attentive mosaics, and the gated-attention aggregator
// that folds mosaics into the slide-level semantic embedding. Also the
// pluggable text-embedder interface.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pathsearch/core.hpp"

namespace pathsearch {

/// Gating logits w^T (tanh(V1 h) * sigmoid(V2 h)); V1, V2 are D x C, w has D entries.
struct GatedAttentionParams {
    Matrix v1;
    Matrix v2;
    Vector w;

    std::size_t hidden_dim() const noexcept { return static_cast<std::size_t>(v1.rows()); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(v1.cols()); }
};

/// Single-head scaled dot-product self-attention over patches: X + softmax(X Wq (X Wk)^T / sqrt(C)) X Wv.
struct CorrelationParams {
    Matrix wq;
    Matrix wk;
    Matrix wv;
    bool residual = true;
};

struct EncoderModel {
    CorrelationParams correlation;
    std::vector<GatedAttentionParams> branches;
    GatedAttentionParams aggregator;
    std::optional<Matrix> projection;       // C x C, applied to the aggregated vector
    std::optional<Matrix> text_projection;  // C x C, applied to raw text embeddings
    double temperature_logit = 0.0;         // log of the contrastive scale

    std::size_t dim() const noexcept { return static_cast<std::size_t>(correlation.wq.rows()); }
    std::size_t m() const noexcept { return branches.size(); }
    std::size_t hidden_dim() const noexcept { return aggregator.hidden_dim(); }
};

struct EncoderShape {
    std::size_t dim = kDefaultDim;
    std::size_t hidden_dim = 256;
    std::size_t m = kDefaultMosaics;
    bool with_projection = true;
    bool with_text_projection = true;
};

/// Seeded initialization: weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)],
/// projections at identity, temperature_logit = log(1 / 0.07).
EncoderModel init_encoder(const EncoderShape& shape, std::uint64_t seed);

/// Validates shapes and finiteness; throws DimensionError / NumericError.
void validate(const EncoderModel& model);

/// Named mutable view over one trainable tensor.
struct ParamRef {
    std::string name;
    std::span<double> values;
};
struct ConstParamRef {
    std::string name;
    std::span<const double> values;
};

/// Every trainable tensor in a fixed order (correlation, branches, aggregator,
/// projections, temperature_logit).
std::vector<ParamRef> parameters(EncoderModel& model);
std::vector<ConstParamRef> parameters(const EncoderModel& model);

/// Same shapes as `model`, all values zero.
EncoderModel zeros_like(const EncoderModel& model);

// ---------------------------------------------------------------------------
// Forward pass. The *_rows variants optionally record intermediates for the
// backward pass in training.
// ---------------------------------------------------------------------------

struct CorrelationTape {
    Matrix x;
    Matrix q;
    Matrix k;
    Matrix v;
    Matrix attn;  // N x N row-softmax
};

struct PoolTape {
    Matrix rows;
    Matrix tanh_u;   // R x D
    Matrix sig_g;    // R x D
    Vector weights;  // R
};

struct PoolResult {
    Vector pooled;   // C
    Vector weights;  // R, positive, sums to 1
};

Matrix correlate_rows(const Matrix& x, const CorrelationParams& params, CorrelationTape* tape = nullptr);
PoolResult pool_rows(const Matrix& rows, const GatedAttentionParams& params, PoolTape* tape = nullptr);

PatchEmbeddingMatrix correlate(const PatchEmbeddingMatrix& patches, const EncoderModel& model);
PoolResult gated_attention_pool(const Matrix& rows, const GatedAttentionParams& params);
MosaicSet generate_mosaics(const PatchEmbeddingMatrix& patches, const EncoderModel& model);
SemanticVector aggregate(const MosaicSet& mosaics, const EncoderModel& model);

struct SlideEncoding {
    MosaicSet mosaics;
    SemanticVector semantic;
};

/// Mosaics and semantic vector in one pass (correlation evaluated once).
SlideEncoding encode_slide(const PatchEmbeddingMatrix& patches, const EncoderModel& model);

// ---------------------------------------------------------------------------
// Text side
// ---------------------------------------------------------------------------

/// Maps a report string to a raw (unnormalized) vector. Must be deterministic.
class TextEmbedder {
public:
    virtual ~TextEmbedder() = default;
    virtual std::size_t dim() const noexcept = 0;
    virtual Vector embed(std::string_view report) const = 0;
};

/// Feature hashing: each whitespace token adds +-1 to bucket hash(token) mod C,
/// the sign coming from an independent hash of the same token.
class HashTextEmbedder final : public TextEmbedder {
public:
    explicit HashTextEmbedder(std::size_t dim = kDefaultDim) : dim_(dim) {}
    std::size_t dim() const noexcept override { return dim_; }
    Vector embed(std::string_view report) const override;

private:
    std::size_t dim_;
};

/// l2_normalize(embedder.embed(report)); empty or all-whitespace reports are degenerate.
SemanticVector embed_text(std::string_view report, const TextEmbedder& embedder);

/// Text embedding in the shared space: text_projection applied before normalization.
SemanticVector embed_text(std::string_view report, const TextEmbedder& embedder, const EncoderModel& model);

// ---------------------------------------------------------------------------
// Model persistence ("PSMD": magic, u32 version, u32 dim, u32 hidden, u32 m,
// u8 flags, then every parameter as f64 little-endian in parameters() order).
// ---------------------------------------------------------------------------

void save_model(const EncoderModel& model, const std::filesystem::path& path);
EncoderModel load_model(const std::filesystem::path& path);

}  // namespace pathsearch
