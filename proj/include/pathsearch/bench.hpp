#pragma once

// Cost models and measured scaling of the fixed-size mosaic scan against a
// fractional-sampling baseline that keeps floor(f * P) patch codes per slide.

#include <cstdint>
#include <string>
#include <vector>

#include "pathsearch/core.hpp"
#include "pathsearch/index.hpp"

namespace pathsearch {

struct CostModelParams {
    std::uint64_t s = 1;              // database size
    std::uint64_t p_bar = 1;          // mean patches per slide
    double f = 0.05;                  // baseline sampling fraction, in (0, 1)
    std::uint64_t m = kDefaultMosaics;
    std::uint64_t dim = kDefaultDim;
    std::uint64_t budget = 1'000'000'000;
};

/// Codes the baseline keeps for a slide of `patches` patches: floor(f * patches), at least 1.
std::uint64_t sampled_mosaic_count(std::uint64_t patches, double f);

/// floor(f * p_q) * floor(f * p_i) mosaic comparisons.
std::uint64_t baseline_ops_per_candidate(std::uint64_t p_q, std::uint64_t p_i, double f);

struct PathSearchOps {
    std::uint64_t mosaic = 0;    // m^2
    std::uint64_t semantic = 0;  // dim
    std::uint64_t total() const noexcept { return mosaic + semantic; }
};
PathSearchOps pathsearch_ops_per_candidate(std::uint64_t m, std::uint64_t dim);

struct Capacity {
    std::uint64_t baseline = 0;
    std::uint64_t pathsearch = 0;
};
/// Largest database each method can scan per query within params.budget operations.
Capacity capacity_under_budget(const CostModelParams& params);

/// Bytes the baseline stores per slide: sampled codes of ceil(dim / 8) bytes each.
std::uint64_t baseline_store_bytes(std::uint64_t patches, double f, std::uint64_t dim);

// ---------------------------------------------------------------------------
// In-memory baseline
// ---------------------------------------------------------------------------

/// Baseline database: for each slide, the uniformly sampled subset of its patch codes.
struct BaselineIndex {
    std::size_t dim = 0;
    std::vector<BinaryMosaicCode> slides;
};

/// Builds `slides` synthetic slides of `patches` random patch codes each and keeps a uniform
/// random sample of floor(f * patches) of them.
BaselineIndex make_baseline_index(std::size_t slides, std::uint64_t patches, double f, std::size_t dim,
                                  std::uint64_t seed);

/// Median-of-minimum Hamming distance of the query's sampled codes against every slide.
std::vector<double> baseline_scan(const BinaryMosaicCode& query, const BaselineIndex& index, OpCounters* counters);

/// Random M-mosaic records with random unit semantic vectors.
RetrievalIndex make_random_index(std::size_t records, std::size_t m, std::size_t dim, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Scaling measurement
// ---------------------------------------------------------------------------

struct ScalingConfig {
    std::vector<std::uint64_t> pathsearch_sizes{10'000, 20'000, 40'000};
    std::vector<std::uint64_t> baseline_sizes{50, 100, 200};
    std::vector<std::uint64_t> p_bars{1'000};
    std::vector<double> fractions{0.05};
    std::size_t repetitions = 5;
    std::uint64_t seed = 0;
    std::size_t m = kDefaultMosaics;
    std::size_t dim = kDefaultDim;
    std::uint64_t memory_cap_bytes = 2ull << 30;
};

/// One CSV row: method,S,p_bar,f_or_m,ops_per_query,median_ms. PathSearch rows carry
/// p_bar = 0 (cost does not depend on it) and f_or_m = M.
struct ScalingRow {
    std::string method;
    std::uint64_t s = 0;
    std::uint64_t p_bar = 0;
    double f_or_m = 0.0;
    std::uint64_t ops_per_query = 0;
    double median_ms = 0.0;

    friend bool operator==(const ScalingRow&, const ScalingRow&) = default;
};

struct ScalingReport {
    std::vector<ScalingRow> rows;
    std::vector<std::string> notes;  // size reductions and other adjustments
};

ScalingReport measure_scaling(const ScalingConfig& config);

std::string scaling_to_csv(const std::vector<ScalingRow>& rows);
std::vector<ScalingRow> parse_scaling_csv(const std::string& text);

/// Plot-ready analytic curves: figure,method,x,y. "cost_vs_s" gives per-query operations as
/// the database grows; "capacity_vs_pbar" gives supportable database size under the budget.
std::string analytic_curves_csv(const std::vector<std::uint64_t>& sizes, const std::vector<std::uint64_t>& p_bars,
                                const std::vector<double>& fractions, std::uint64_t m, std::uint64_t dim,
                                std::uint64_t budget);

}  // namespace pathsearch
