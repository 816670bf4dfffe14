#include "pathsearch/index.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "byte_io.hpp"

namespace pathsearch {

RetrievalIndex::RetrievalIndex(std::size_t m, std::size_t dim, std::uint8_t float_width,
                               std::vector<std::string> label_table)
    : m_(m), dim_(dim), float_width_(float_width), labels_(std::move(label_table)) {
    if (m == 0 || dim == 0) throw DimensionError("index needs positive m and dim");
    if (float_width != 4 && float_width != 8) throw PreconditionError("float_width must be 4 or 8");
    if (labels_.size() >= kNoLabel) throw PreconditionError("too many labels");
}

IndexHeader RetrievalIndex::header() const {
    return {static_cast<std::uint32_t>(m_), static_cast<std::uint32_t>(dim_), float_width_, records_.size(),
            labels_};
}

namespace {

SemanticVector round_to_width(const SemanticVector& v, std::uint8_t width) {
    if (width == 8) return v;
    Vector out = v.values();
    for (auto& x : out) x = static_cast<double>(static_cast<float>(x));
    return SemanticVector::from_normalized(std::move(out));
}

}  // namespace

void RetrievalIndex::add(SlideRecord record) {
    if (record.mosaic_code.m() != m_ || record.mosaic_code.bits_per_code() != dim_) {
        throw DimensionError("record " + record.id + ": mosaic code shape does not match index");
    }
    if (record.semantic.dim() != dim_ || (record.text_semantic && record.text_semantic->dim() != dim_)) {
        throw DimensionError("record " + record.id + ": semantic dim does not match index");
    }
    if (record.id.size() > 0xFFFF) throw PreconditionError("record id longer than 65535 bytes");
    if (record.label && (*record.label == kNoLabel || (!labels_.empty() && *record.label >= labels_.size()))) {
        throw PreconditionError("record " + record.id + ": label out of range");
    }
    if (by_id_.contains(record.id)) throw PreconditionError("duplicate record id " + record.id);
    record.semantic = round_to_width(record.semantic, float_width_);
    if (record.text_semantic) record.text_semantic = round_to_width(*record.text_semantic, float_width_);
    by_id_.emplace(record.id, records_.size());
    records_.push_back(std::move(record));
}

std::optional<std::size_t> RetrievalIndex::find(const std::string& id) const {
    if (auto it = by_id_.find(id); it != by_id_.end()) return it->second;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Distances
// ---------------------------------------------------------------------------

double median_min_hamming(const BinaryMosaicCode& query, const BinaryMosaicCode& candidate, OpCounters* counters) {
    if (query.bits_per_code() != candidate.bits_per_code()) {
        throw DimensionError("median_min_hamming: code lengths differ");
    }
    if (query.m() == 0 || candidate.m() == 0) throw DimensionError("median_min_hamming: empty mosaic set");
    const std::size_t words = query.words_per_code();
    std::array<std::size_t, 64> stack_minima{};
    std::vector<std::size_t> heap_minima;
    std::span<std::size_t> minima(stack_minima.data(), query.m());
    if (query.m() > stack_minima.size()) {
        heap_minima.resize(query.m());
        minima = heap_minima;
    }
    for (std::size_t m = 0; m < query.m(); ++m) {
        const std::uint64_t* q = query.code_words(m);
        std::size_t best = std::numeric_limits<std::size_t>::max();
        for (std::size_t c = 0; c < candidate.m(); ++c) {
            best = std::min(best, hamming_words(q, candidate.code_words(c), words));
        }
        minima[m] = best;
    }
    if (counters) counters->mosaic_ops += static_cast<std::uint64_t>(query.m()) * candidate.m();
    const std::size_t mid = minima.size() / 2;
    std::nth_element(minima.begin(), minima.begin() + static_cast<std::ptrdiff_t>(mid), minima.end());
    const double upper = static_cast<double>(minima[mid]);
    if (minima.size() % 2 == 1) return upper;
    const double lower =
        static_cast<double>(*std::max_element(minima.begin(), minima.begin() + static_cast<std::ptrdiff_t>(mid)));
    return 0.5 * (lower + upper);
}

std::vector<double> zscore(std::span<const double> values, double epsilon) {
    if (values.empty()) throw DimensionError("zscore: no values");
    const auto n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double denom = std::sqrt(ss / n) + epsilon;
    std::vector<double> out(values.size());
    std::transform(values.begin(), values.end(), out.begin(), [&](double v) { return (v - mean) / denom; });
    return out;
}

namespace {

/// Ranks candidates 0..n-1 by fused distance, materializing only the top_k results.
template <class IdOf>
std::vector<RetrievalResult> rank_fused(std::size_t n, IdOf&& id_of, std::span<const double> mosaic,
                                        std::span<const double> semantic, const FusionConfig& config) {
    if (n == 0) throw DimensionError("fuse_and_rank: no candidates");
    if (config.beta < 0.0) throw PreconditionError("beta must be non-negative");
    if (config.top_k < 1) throw PreconditionError("top_k must be at least 1");

    std::vector<double> fused(n);
    if (config.normalize) {
        const auto zm = zscore(mosaic, config.epsilon);
        const auto zs = zscore(semantic, config.epsilon);
        for (std::size_t i = 0; i < n; ++i) fused[i] = zm[i] + config.beta * zs[i];
    } else {
        for (std::size_t i = 0; i < n; ++i) fused[i] = mosaic[i] + config.beta * semantic[i];
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const auto before = [&](std::size_t a, std::size_t b) {
        if (fused[a] != fused[b]) return fused[a] < fused[b];
        if (semantic[a] != semantic[b]) return semantic[a] < semantic[b];
        return id_of(a) < id_of(b);
    };
    const std::size_t k = std::min(config.top_k, n);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);
    std::vector<RetrievalResult> results;
    results.reserve(k);
    for (std::size_t r = 0; r < k; ++r) {
        const std::size_t i = order[r];
        results.push_back({id_of(i), fused[i], mosaic[i], semantic[i], r + 1});
    }
    return results;
}

}  // namespace

std::vector<RetrievalResult> fuse_and_rank(std::span<const std::string> ids, std::span<const double> mosaic,
                                           std::span<const double> semantic, const FusionConfig& config) {
    if (ids.size() != mosaic.size() || ids.size() != semantic.size()) {
        throw DimensionError("fuse_and_rank: distance lists differ in length");
    }
    return rank_fused(
        ids.size(), [&](std::size_t i) -> const std::string& { return ids[i]; }, mosaic, semantic, config);
}

std::vector<RetrievalResult> query_image(const QuerySlide& query, const RetrievalIndex& index,
                                         const FusionConfig& config, OpCounters* counters) {
    if (index.empty()) throw PreconditionError("query_image: index is empty");
    if (query.mosaic_code.bits_per_code() != index.dim() || query.semantic.dim() != index.dim()) {
        throw DimensionError("query_image: query dims do not match index");
    }
    const auto& records = index.records();
    std::vector<std::size_t> candidates;
    candidates.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (query.id && records[i].id == *query.id) continue;
        candidates.push_back(i);
    }
    if (candidates.empty()) throw PreconditionError("query_image: no candidates besides the query itself");

    std::vector<double> mosaic(candidates.size());
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        mosaic[k] = median_min_hamming(query.mosaic_code, records[candidates[k]].mosaic_code, counters);
    }
    if (config.prune_shortlist > 0 && config.prune_shortlist < candidates.size()) {
        std::vector<std::size_t> order(candidates.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (mosaic[a] != mosaic[b]) return mosaic[a] < mosaic[b];
            return records[candidates[a]].id < records[candidates[b]].id;
        });
        order.resize(config.prune_shortlist);
        std::vector<std::size_t> kept;
        std::vector<double> kept_mosaic;
        for (std::size_t o : order) {
            kept.push_back(candidates[o]);
            kept_mosaic.push_back(mosaic[o]);
        }
        candidates = std::move(kept);
        mosaic = std::move(kept_mosaic);
    }

    std::vector<double> semantic(candidates.size());
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        semantic[k] = euclidean_distance(query.semantic, records[candidates[k]].semantic);
    }
    if (counters) {
        counters->candidates += candidates.size();
        counters->semantic_ops += static_cast<std::uint64_t>(candidates.size()) * index.dim();
    }
    if (config.top_k > candidates.size()) {
        warn("top_k " + std::to_string(config.top_k) + " exceeds candidate count " +
             std::to_string(candidates.size()) + "; truncating");
    }
    return rank_fused(
        candidates.size(), [&](std::size_t k) -> const std::string& { return records[candidates[k]].id; }, mosaic,
        semantic, config);
}

namespace {

template <class Pick>
std::vector<RankedId> rank_by_euclidean(const SemanticVector& query, const RetrievalIndex& index, std::size_t top_k,
                                        const std::optional<std::string>& exclude_id, Pick pick) {
    if (index.empty()) throw PreconditionError("query: index is empty");
    if (query.dim() != index.dim()) throw DimensionError("query: dim does not match index");
    if (top_k < 1) throw PreconditionError("top_k must be at least 1");
    std::vector<RankedId> out;
    for (const auto& rec : index.records()) {
        if (exclude_id && rec.id == *exclude_id) continue;
        if (const SemanticVector* target = pick(rec)) {
            out.push_back({rec.id, euclidean_distance(query, *target), 0});
        }
    }
    if (out.empty()) throw PreconditionError("query: no records carry the requested embedding");
    std::sort(out.begin(), out.end(), [](const RankedId& a, const RankedId& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        return a.id < b.id;
    });
    if (top_k < out.size()) out.resize(top_k);
    for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = i + 1;
    return out;
}

const SemanticVector* pick_semantic(const SlideRecord& r) { return &r.semantic; }
const SemanticVector* pick_text(const SlideRecord& r) { return r.text_semantic ? &*r.text_semantic : nullptr; }

}  // namespace

std::vector<RankedId> query_text_to_image(const SemanticVector& text, const RetrievalIndex& index, std::size_t top_k,
                                          const std::optional<std::string>& exclude_id) {
    return rank_by_euclidean(text, index, top_k, exclude_id, pick_semantic);
}

std::vector<RankedId> query_image_to_text(const SemanticVector& image, const RetrievalIndex& index, std::size_t top_k,
                                          const std::optional<std::string>& exclude_id) {
    return rank_by_euclidean(image, index, top_k, exclude_id, pick_text);
}

std::vector<RankedId> query_text_to_text(const SemanticVector& text, const RetrievalIndex& index, std::size_t top_k,
                                         const std::optional<std::string>& exclude_id) {
    return rank_by_euclidean(text, index, top_k, exclude_id, pick_text);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kMagic = "PSIX";
constexpr std::uint32_t kVersion = 1;

void write_reals(detail::ByteWriter& w, const Vector& v, std::uint8_t width) {
    for (double x : v) {
        if (width == 8) w.f64(x);
        else w.f32(static_cast<float>(x));
    }
}

Vector read_reals(detail::ByteReader& r, std::size_t dim, std::uint8_t width, std::string_view what) {
    r.need(dim * width, what);
    Vector v(static_cast<Eigen::Index>(dim));
    for (auto& x : v) {
        const std::uint64_t at = r.offset();
        x = width == 8 ? r.f64(what) : static_cast<double>(r.f32(what));
        if (!std::isfinite(x)) throw FormatError("non-finite value in " + std::string(what), at);
    }
    return v;
}

}  // namespace

std::vector<std::uint8_t> encode_index(const RetrievalIndex& index) {
    detail::ByteWriter w;
    w.raw(kMagic);
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(index.m()));
    w.u32(static_cast<std::uint32_t>(index.dim()));
    w.u8(index.float_width());
    w.u64(index.size());
    w.u32(static_cast<std::uint32_t>(index.label_table().size()));
    for (const auto& name : index.label_table()) {
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.raw(name);
    }
    for (const auto& rec : index.records()) {
        w.u16(static_cast<std::uint16_t>(rec.id.size()));
        w.raw(rec.id);
        w.u16(rec.label.value_or(kNoLabel));
        w.bytes(rec.mosaic_code.to_bytes());
        write_reals(w, rec.semantic.values(), index.float_width());
        w.u8(rec.text_semantic ? 1 : 0);
        if (rec.text_semantic) write_reals(w, rec.text_semantic->values(), index.float_width());
    }
    return w.take();
}

RetrievalIndex decode_index(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    if (r.str(4, "PSIX magic") != kMagic) throw FormatError("bad PSIX magic", 0);
    if (const auto v = r.u32("PSIX version"); v != kVersion) {
        throw FormatError("unsupported PSIX version " + std::to_string(v), 4);
    }
    const std::uint32_t m = r.u32("mosaic count");
    const std::uint32_t dim = r.u32("dim");
    if (m == 0 || dim == 0) throw FormatError("PSIX header declares zero m or dim", 8);
    const std::uint64_t width_at = r.offset();
    const std::uint8_t width = r.u8("float width");
    if (width != 4 && width != 8) throw FormatError("float width must be 4 or 8", width_at);
    const std::uint64_t count = r.u64("record count");
    const std::uint64_t n_labels_at = r.offset();
    const std::uint32_t n_labels = r.u32("label count");
    if (n_labels >= kNoLabel) throw FormatError("label table too large", n_labels_at);
    std::vector<std::string> labels;
    for (std::uint32_t i = 0; i < n_labels; ++i) {
        const std::uint16_t len = r.u16("label length");
        labels.push_back(r.str(len, "label name"));
    }

    RetrievalIndex index(m, dim, width, std::move(labels));
    const std::size_t mosaic_bytes = mosaic_block_bytes(m, dim);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t record_at = r.offset();
        SlideRecord rec;
        const std::uint16_t id_len = r.u16("record id length");
        rec.id = r.str(id_len, "record id");
        const std::uint16_t label = r.u16("record label");
        if (label != kNoLabel) rec.label = label;
        rec.mosaic_code = BinaryMosaicCode::from_bytes(r.bytes(mosaic_bytes, "mosaic block"), m, dim);
        rec.semantic = SemanticVector::from_normalized(read_reals(r, dim, width, "semantic block"));
        const std::uint64_t flag_at = r.offset();
        const std::uint8_t has_text = r.u8("text flag");
        if (has_text > 1) throw FormatError("text presence flag must be 0 or 1", flag_at);
        if (has_text) rec.text_semantic = SemanticVector::from_normalized(read_reals(r, dim, width, "text block"));
        try {
            index.add(std::move(rec));
        } catch (const Error& e) {
            throw FormatError(std::string("invalid record: ") + e.what(), record_at);
        }
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after last record", r.offset());
    return index;
}

void save_index(const RetrievalIndex& index, const std::filesystem::path& path) {
    detail::write_file_bytes(path, encode_index(index));
}

RetrievalIndex load_index(const std::filesystem::path& path) { return decode_index(detail::read_file_bytes(path)); }

}  // namespace pathsearch
