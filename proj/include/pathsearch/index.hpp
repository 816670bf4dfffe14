#pragma once

// Retrieval index and query paths.
//
// Image-to-image queries fuse two distance families per candidate:
//   D_mosaic  median over query mosaics of the minimum Hamming distance to any
//             candidate mosaic
//   D_sem     Euclidean distance between unit semantic vectors
// Each family is optionally z-scored over the candidate set before
// D_fuse = D_mosaic + beta * D_sem is sorted ascending.
//
// On-disk format "PSIX", little-endian:
//   magic "PSIX" | u32 version = 1 | u32 m | u32 dim | u8 float_width (4 or 8)
//   | u64 record_count | u32 label_count | label_count x (u16 len, UTF-8 bytes)
//   then per record:
//   u16 id_len, id bytes | u16 label (0xFFFF = none) | m * ceil(dim/8) mosaic bytes
//   | dim * float_width semantic bytes | u8 has_text | [dim * float_width text bytes]

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pathsearch/core.hpp"

namespace pathsearch {

inline constexpr std::uint16_t kNoLabel = 0xFFFF;

struct SlideRecord {
    std::string id;
    std::optional<std::uint16_t> label;
    BinaryMosaicCode mosaic_code;
    SemanticVector semantic;
    std::optional<SemanticVector> text_semantic;
};

struct IndexHeader {
    std::uint32_t m = kDefaultMosaics;
    std::uint32_t dim = kDefaultDim;
    std::uint8_t float_width = 8;
    std::uint64_t record_count = 0;
    std::vector<std::string> label_table;
};

class RetrievalIndex {
public:
    RetrievalIndex(std::size_t m, std::size_t dim, std::uint8_t float_width = 8,
                   std::vector<std::string> label_table = {});

    std::size_t m() const noexcept { return m_; }
    std::size_t dim() const noexcept { return dim_; }
    std::uint8_t float_width() const noexcept { return float_width_; }
    const std::vector<std::string>& label_table() const noexcept { return labels_; }
    const std::vector<SlideRecord>& records() const noexcept { return records_; }
    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }

    IndexHeader header() const;

    /// Appends a record. Throws DimensionError on shape mismatch and PreconditionError on a
    /// duplicate id or an out-of-range label. With float_width 4 the semantic vectors are
    /// rounded to single precision here so memory and disk agree.
    void add(SlideRecord record);

    std::optional<std::size_t> find(const std::string& id) const;

private:
    std::size_t m_;
    std::size_t dim_;
    std::uint8_t float_width_;
    std::vector<std::string> labels_;
    std::vector<SlideRecord> records_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

struct FusionConfig {
    double beta = 1.0;
    bool normalize = true;
    double epsilon = 1e-8;
    std::size_t top_k = 10;
    /// When non-zero, only the `prune_shortlist` candidates with the smallest mosaic
    /// distance enter the semantic and fusion stages.
    std::size_t prune_shortlist = 0;
};

struct QuerySlide {
    BinaryMosaicCode mosaic_code;
    SemanticVector semantic;
    std::optional<std::string> id;  // a record with this id is excluded (leave-one-out)
};

struct RetrievalResult {
    std::string candidate_id;
    double fused_distance = 0.0;
    double mosaic_distance = 0.0;
    double semantic_distance = 0.0;
    std::size_t rank = 0;
};

/// Exact operation counts of the instrumented scan.
struct OpCounters {
    std::uint64_t candidates = 0;
    std::uint64_t mosaic_ops = 0;    // one per Hamming comparison between two mosaic codes
    std::uint64_t semantic_ops = 0;  // one per multiply-add in the Euclidean distance

    friend bool operator==(const OpCounters&, const OpCounters&) = default;
};

double median_min_hamming(const BinaryMosaicCode& query, const BinaryMosaicCode& candidate,
                          OpCounters* counters = nullptr);

/// (x - mean) / (population_stddev + epsilon).
std::vector<double> zscore(std::span<const double> values, double epsilon);

/// Fusion and ranking over precomputed distances. Ties on the fused distance are broken
/// by semantic distance, then by id.
std::vector<RetrievalResult> fuse_and_rank(std::span<const std::string> ids, std::span<const double> mosaic,
                                           std::span<const double> semantic, const FusionConfig& config);

std::vector<RetrievalResult> query_image(const QuerySlide& query, const RetrievalIndex& index,
                                         const FusionConfig& config, OpCounters* counters = nullptr);

struct RankedId {
    std::string id;
    double distance = 0.0;
    std::size_t rank = 0;
};

/// Text query against record semantic vectors.
std::vector<RankedId> query_text_to_image(const SemanticVector& text, const RetrievalIndex& index,
                                          std::size_t top_k, const std::optional<std::string>& exclude_id = {});
/// Slide semantic vector against record text vectors.
std::vector<RankedId> query_image_to_text(const SemanticVector& image, const RetrievalIndex& index,
                                          std::size_t top_k, const std::optional<std::string>& exclude_id = {});
/// Text query against record text vectors.
std::vector<RankedId> query_text_to_text(const SemanticVector& text, const RetrievalIndex& index,
                                         std::size_t top_k, const std::optional<std::string>& exclude_id = {});

std::vector<std::uint8_t> encode_index(const RetrievalIndex& index);
RetrievalIndex decode_index(std::span<const std::uint8_t> bytes);
void save_index(const RetrievalIndex& index, const std::filesystem::path& path);
RetrievalIndex load_index(const std::filesystem::path& path);

/// Bytes of one record's mosaic block and semantic block.
constexpr std::size_t mosaic_block_bytes(std::size_t m, std::size_t dim) noexcept { return m * bytes_for_bits(dim); }
constexpr std::size_t semantic_block_bytes(std::size_t dim, std::size_t float_width) noexcept {
    return dim * float_width;
}

}  // namespace pathsearch
