#include "pathsearch/core.hpp"

#include <cmath>
#include <iostream>
#include <mutex>

namespace pathsearch {

namespace {

std::mutex& sink_mutex() {
    static std::mutex mu;
    return mu;
}

WarningSink& sink() {
    static WarningSink s;
    return s;
}

}  // namespace

void set_warning_sink(WarningSink s) {
    std::lock_guard lock(sink_mutex());
    sink() = std::move(s);
}

void warn(std::string_view message) {
    std::lock_guard lock(sink_mutex());
    if (sink()) {
        sink()(message);
    } else {
        std::cerr << "warning: " << message << '\n';
    }
}

bool all_finite(const Matrix& m) noexcept { return m.allFinite(); }

PatchEmbeddingMatrix::PatchEmbeddingMatrix(Matrix data) : data_(std::move(data)) {
    if (data_.rows() < 1 || data_.cols() < 1) {
        throw DimensionError("patch embedding matrix must have at least one row and one column");
    }
    if (!data_.allFinite()) {
        throw NumericError("patch embedding matrix contains non-finite entries");
    }
}

MosaicSet::MosaicSet(Matrix rows) : rows_(std::move(rows)) {
    if (rows_.rows() < 1 || rows_.cols() < 1) {
        throw DimensionError("mosaic set must have at least one mosaic");
    }
    if (!rows_.allFinite()) {
        throw NumericError("mosaic set contains non-finite entries");
    }
}

BitVector BitVector::from_string(std::string_view bits) {
    BitVector v(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i] != '0' && bits[i] != '1') {
            throw PreconditionError("bit string may only contain '0' and '1'");
        }
        v.set(i, bits[i] == '1');
    }
    return v;
}

void BitVector::set(std::size_t i, bool value) {
    if (i >= bits_) throw DimensionError("bit index out of range");
    const std::uint64_t mask = std::uint64_t{1} << (i % 64);
    if (value) {
        words_[i / 64] |= mask;
    } else {
        words_[i / 64] &= ~mask;
    }
}

BitVector BitVector::complement() const {
    BitVector out(bits_);
    for (std::size_t w = 0; w < words_.size(); ++w) out.words_[w] = ~words_[w];
    if (const std::size_t tail = bits_ % 64; tail != 0 && !out.words_.empty()) {
        out.words_.back() &= (std::uint64_t{1} << tail) - 1;
    }
    return out;
}

std::size_t hamming_distance(BitView a, BitView b) {
    if (a.bits != b.bits || a.words.size() != b.words.size()) {
        throw DimensionError("hamming distance: bit lengths differ (" + std::to_string(a.bits) + " vs " +
                             std::to_string(b.bits) + ")");
    }
    return hamming_words(a.words.data(), b.words.data(), a.words.size());
}

BinaryMosaicCode::BinaryMosaicCode(std::size_t m, std::size_t bits_per_code)
    : words_(m * words_for_bits(bits_per_code), 0), m_(m), bits_(bits_per_code) {}

void BinaryMosaicCode::set_bit(std::size_t index, std::size_t bit, bool value) {
    if (index >= m_ || bit >= bits_) throw DimensionError("mosaic code bit out of range");
    std::uint64_t& word = words_[index * words_per_code() + bit / 64];
    const std::uint64_t mask = std::uint64_t{1} << (bit % 64);
    word = value ? (word | mask) : (word & ~mask);
}

std::vector<std::uint8_t> BinaryMosaicCode::to_bytes() const {
    const std::size_t per_code = bytes_for_bits(bits_);
    std::vector<std::uint8_t> out(m_ * per_code, 0);
    for (std::size_t c = 0; c < m_; ++c) {
        const std::uint64_t* w = code_words(c);
        for (std::size_t byte = 0; byte < per_code; ++byte) {
            out[c * per_code + byte] = static_cast<std::uint8_t>(w[byte / 8] >> (8 * (byte % 8)));
        }
    }
    return out;
}

BinaryMosaicCode BinaryMosaicCode::from_bytes(std::span<const std::uint8_t> bytes, std::size_t m,
                                              std::size_t bits_per_code) {
    const std::size_t per_code = bytes_for_bits(bits_per_code);
    if (bytes.size() != m * per_code) {
        throw DimensionError("mosaic code byte block has wrong size");
    }
    BinaryMosaicCode code(m, bits_per_code);
    const std::size_t wpc = code.words_per_code();
    for (std::size_t c = 0; c < m; ++c) {
        for (std::size_t byte = 0; byte < per_code; ++byte) {
            code.words_[c * wpc + byte / 8] |= std::uint64_t{bytes[c * per_code + byte]} << (8 * (byte % 8));
        }
        // Clear anything past the last valid bit so the zero-padding invariant holds
        // even for hand-crafted input.
        if (const std::size_t tail = bits_per_code % 64; tail != 0) {
            code.words_[c * wpc + wpc - 1] &= (std::uint64_t{1} << tail) - 1;
        }
    }
    return code;
}

BinaryMosaicCode binarize(const MosaicSet& mosaics) {
    const Matrix& rows = mosaics.rows();
    if (!rows.allFinite()) throw NumericError("binarize: non-finite mosaic entry");
    BinaryMosaicCode code(mosaics.m(), mosaics.dim());
    for (std::size_t m = 0; m < mosaics.m(); ++m) {
        for (std::size_t i = 0; i < mosaics.dim(); ++i) {
            if (rows(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(i)) > 0.0) {
                code.set_bit(m, i, true);
            }
        }
    }
    return code;
}

SemanticVector SemanticVector::from_normalized(Vector values) { return SemanticVector(std::move(values)); }

SemanticVector l2_normalize(const Vector& v) {
    if (!v.allFinite()) throw NumericError("l2_normalize: non-finite input");
    const double norm = v.norm();
    if (!(norm > 0.0)) throw DegenerateInputError("l2_normalize: zero vector");
    return SemanticVector(v / norm);
}

double euclidean_distance(const SemanticVector& u, const SemanticVector& v) {
    if (u.dim() != v.dim()) {
        throw DimensionError("euclidean distance: dims differ (" + std::to_string(u.dim()) + " vs " +
                             std::to_string(v.dim()) + ")");
    }
    return (u.values() - v.values()).norm();
}

}  // namespace pathsearch
