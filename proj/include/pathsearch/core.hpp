#pragma once

// Domain types shared by every module: dense real matrices, bit-packed mosaic
// codes and unit-norm semantic vectors, plus the distance primitives that the
// retrieval path is built from.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace pathsearch {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr std::size_t kDefaultDim = 768;
inline constexpr std::size_t kDefaultMosaics = 16;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shapes or lengths disagree.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf encountered, or a numeric procedure failed.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Input is valid in shape but degenerate for the operation (zero vector, empty string).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

/// A documented precondition on values does not hold.
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Malformed or truncated on-disk data; carries the byte offset where parsing stopped.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

// Warnings go to stderr unless a sink is installed (tests capture them).
using WarningSink = std::function<void(std::string_view)>;
void set_warning_sink(WarningSink sink);
void warn(std::string_view message);

// ---------------------------------------------------------------------------
// Dense inputs
// ---------------------------------------------------------------------------

/// N x C patch embeddings for one slide, one row per tissue patch.
class PatchEmbeddingMatrix {
public:
    PatchEmbeddingMatrix() = default;
    explicit PatchEmbeddingMatrix(Matrix data);

    std::size_t n_patches() const noexcept { return static_cast<std::size_t>(data_.rows()); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(data_.cols()); }
    const Matrix& data() const noexcept { return data_; }

private:
    Matrix data_;
};

/// M x C attentive mosaics of one slide.
class MosaicSet {
public:
    MosaicSet() = default;
    explicit MosaicSet(Matrix rows);

    std::size_t m() const noexcept { return static_cast<std::size_t>(rows_.rows()); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(rows_.cols()); }
    const Matrix& rows() const noexcept { return rows_; }

private:
    Matrix rows_;
};

// ---------------------------------------------------------------------------
// Bit codes
// ---------------------------------------------------------------------------

constexpr std::size_t words_for_bits(std::size_t bits) noexcept { return (bits + 63) / 64; }
constexpr std::size_t bytes_for_bits(std::size_t bits) noexcept { return (bits + 7) / 8; }

/// Non-owning view of a packed bit string. Bit i lives in words[i / 64] at position i % 64.
struct BitView {
    std::span<const std::uint64_t> words;
    std::size_t bits = 0;

    bool bit(std::size_t i) const noexcept { return (words[i / 64] >> (i % 64)) & 1u; }
};

/// Owning packed bit string; padding bits above `bits` are always zero.
class BitVector {
public:
    BitVector() = default;
    explicit BitVector(std::size_t bits) : words_(words_for_bits(bits), 0), bits_(bits) {}
    /// Character i of `bits` (either '0' or '1') becomes bit i.
    static BitVector from_string(std::string_view bits);

    std::size_t size() const noexcept { return bits_; }
    void set(std::size_t i, bool value);
    bool get(std::size_t i) const { return view().bit(i); }
    BitView view() const noexcept { return {words_, bits_}; }
    BitVector complement() const;

private:
    std::vector<std::uint64_t> words_;
    std::size_t bits_ = 0;
};

/// Number of differing bit positions. Throws DimensionError on length mismatch.
std::size_t hamming_distance(BitView a, BitView b);

/// Unchecked popcount(a ^ b) over equal-length word spans; the hot loop of every scan.
inline std::size_t hamming_words(const std::uint64_t* a, const std::uint64_t* b, std::size_t n) noexcept {
    std::size_t d = 0;
    for (std::size_t w = 0; w < n; ++w) {
        d += static_cast<std::size_t>(__builtin_popcountll(a[w] ^ b[w]));
    }
    return d;
}

/// M codes of C bits each, stored contiguously as M * ceil(C/64) words.
class BinaryMosaicCode {
public:
    BinaryMosaicCode() = default;
    BinaryMosaicCode(std::size_t m, std::size_t bits_per_code);

    std::size_t m() const noexcept { return m_; }
    std::size_t bits_per_code() const noexcept { return bits_; }
    std::size_t words_per_code() const noexcept { return words_for_bits(bits_); }

    BitView code(std::size_t index) const noexcept {
        return {std::span<const std::uint64_t>(words_).subspan(index * words_per_code(), words_per_code()),
                bits_};
    }
    const std::uint64_t* code_words(std::size_t index) const noexcept {
        return words_.data() + index * words_per_code();
    }
    void set_bit(std::size_t index, std::size_t bit, bool value);

    /// Bytes used on disk: M * ceil(C/8).
    std::size_t serialized_size() const noexcept { return m_ * bytes_for_bits(bits_); }
    /// Little-endian bytes of each code in turn; bit i of a code is bit (i % 8) of byte i / 8.
    std::vector<std::uint8_t> to_bytes() const;
    static BinaryMosaicCode from_bytes(std::span<const std::uint8_t> bytes, std::size_t m,
                                       std::size_t bits_per_code);

    friend bool operator==(const BinaryMosaicCode&, const BinaryMosaicCode&) = default;

private:
    std::vector<std::uint64_t> words_;
    std::size_t m_ = 0;
    std::size_t bits_ = 0;
};

/// bit i of code m is 1 iff mosaics[m][i] > 0. Throws NumericError on non-finite entries.
BinaryMosaicCode binarize(const MosaicSet& mosaics);

// ---------------------------------------------------------------------------
// Semantic vectors
// ---------------------------------------------------------------------------

/// Unit-norm C-dimensional vector. Image and text embeddings share this type.
class SemanticVector {
public:
    SemanticVector() = default;

    /// Wraps values that are already unit norm (e.g. decoded from an index) without rescaling.
    static SemanticVector from_normalized(Vector values);

    std::size_t dim() const noexcept { return static_cast<std::size_t>(values_.size()); }
    const Vector& values() const noexcept { return values_; }

    friend bool operator==(const SemanticVector& a, const SemanticVector& b) {
        return a.values_.size() == b.values_.size() && a.values_ == b.values_;
    }

private:
    explicit SemanticVector(Vector values) : values_(std::move(values)) {}
    friend SemanticVector l2_normalize(const Vector& v);

    Vector values_;
};

/// v / ||v||_2. Throws DegenerateInputError for a zero vector, NumericError for non-finite input.
SemanticVector l2_normalize(const Vector& v);

/// Plain Euclidean distance between two semantic vectors.
double euclidean_distance(const SemanticVector& u, const SemanticVector& v);

bool all_finite(const Matrix& m) noexcept;

}  // namespace pathsearch
