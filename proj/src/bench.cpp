#include "pathsearch/bench.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace pathsearch {

std::uint64_t sampled_mosaic_count(std::uint64_t patches, double f) {
    if (!(f > 0.0 && f < 1.0)) throw PreconditionError("sampling fraction must lie in (0, 1)");
    if (patches == 0) throw PreconditionError("slide must have at least one patch");
    // The epsilon absorbs binary rounding of f (0.15 * 5000 is not exactly 750 in binary).
    const auto k = static_cast<std::uint64_t>(std::floor(f * static_cast<double>(patches) + 1e-9));
    return std::max<std::uint64_t>(k, 1);
}

std::uint64_t baseline_ops_per_candidate(std::uint64_t p_q, std::uint64_t p_i, double f) {
    return sampled_mosaic_count(p_q, f) * sampled_mosaic_count(p_i, f);
}

PathSearchOps pathsearch_ops_per_candidate(std::uint64_t m, std::uint64_t dim) {
    if (m == 0) throw PreconditionError("mosaic count must be positive");
    return {m * m, dim};
}

Capacity capacity_under_budget(const CostModelParams& p) {
    if (p.s == 0 || p.p_bar == 0 || p.budget == 0) throw PreconditionError("cost model parameters must be positive");
    return {p.budget / baseline_ops_per_candidate(p.p_bar, p.p_bar, p.f),
            p.budget / pathsearch_ops_per_candidate(p.m, p.dim).total()};
}

std::uint64_t baseline_store_bytes(std::uint64_t patches, double f, std::uint64_t dim) {
    return sampled_mosaic_count(patches, f) * bytes_for_bits(dim);
}

// ---------------------------------------------------------------------------

namespace {

void randomize_code(BinaryMosaicCode& code, std::mt19937_64& rng) {
    for (std::size_t m = 0; m < code.m(); ++m) {
        for (std::size_t i = 0; i < code.bits_per_code(); i += 64) {
            const std::uint64_t word = rng();
            for (std::size_t b = 0; b < 64 && i + b < code.bits_per_code(); ++b) {
                if ((word >> b) & 1u) code.set_bit(m, i + b, true);
            }
        }
    }
}

}  // namespace

BaselineIndex make_baseline_index(std::size_t slides, std::uint64_t patches, double f, std::size_t dim,
                                  std::uint64_t seed) {
    const std::uint64_t keep = sampled_mosaic_count(patches, f);
    std::mt19937_64 rng(seed);
    BaselineIndex index;
    index.dim = dim;
    index.slides.reserve(slides);
    std::vector<std::uint64_t> all(patches);
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t s = 0; s < slides; ++s) {
        BinaryMosaicCode patch_codes(patches, dim);
        randomize_code(patch_codes, rng);
        std::vector<std::uint64_t> chosen;
        chosen.reserve(keep);
        std::sample(all.begin(), all.end(), std::back_inserter(chosen), keep, rng);
        BinaryMosaicCode sampled(keep, dim);
        for (std::size_t k = 0; k < chosen.size(); ++k) {
            for (std::size_t b = 0; b < dim; ++b) {
                if (patch_codes.code(chosen[k]).bit(b)) sampled.set_bit(k, b, true);
            }
        }
        index.slides.push_back(std::move(sampled));
    }
    return index;
}

std::vector<double> baseline_scan(const BinaryMosaicCode& query, const BaselineIndex& index, OpCounters* counters) {
    std::vector<double> out;
    out.reserve(index.slides.size());
    for (const auto& slide : index.slides) {
        out.push_back(median_min_hamming(query, slide, counters));
        if (counters) ++counters->candidates;
    }
    return out;
}

RetrievalIndex make_random_index(std::size_t records, std::size_t m, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    RetrievalIndex index(m, dim);
    for (std::size_t r = 0; r < records; ++r) {
        SlideRecord rec;
        rec.id = "r" + std::to_string(r);
        rec.mosaic_code = BinaryMosaicCode(m, dim);
        randomize_code(rec.mosaic_code, rng);
        Vector v(static_cast<Eigen::Index>(dim));
        for (auto& x : v) x = normal(rng);
        rec.semantic = l2_normalize(v);
        index.add(std::move(rec));
    }
    return index;
}

// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

template <class Fn>
double median_ms(std::size_t repetitions, Fn&& fn) {
    fn();  // warm-up
    std::vector<double> times;
    for (std::size_t r = 0; r < std::max<std::size_t>(repetitions, 1); ++r) {
        const auto t0 = Clock::now();
        fn();
        times.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
    }
    std::sort(times.begin(), times.end());
    const std::size_t mid = times.size() / 2;
    return times.size() % 2 ? times[mid] : 0.5 * (times[mid - 1] + times[mid]);
}

std::uint64_t fit_to_cap(std::uint64_t requested, std::uint64_t bytes_per_item, std::uint64_t cap,
                         const std::string& what, std::vector<std::string>& notes) {
    if (bytes_per_item == 0 || requested * bytes_per_item <= cap) return requested;
    const std::uint64_t fitted = std::max<std::uint64_t>(cap / bytes_per_item, 1);
    notes.push_back(what + ": reduced S from " + std::to_string(requested) + " to " + std::to_string(fitted) +
                    " to stay under the memory cap");
    return fitted;
}

}  // namespace

ScalingReport measure_scaling(const ScalingConfig& config) {
    if (!std::is_sorted(config.pathsearch_sizes.begin(), config.pathsearch_sizes.end()) ||
        !std::is_sorted(config.baseline_sizes.begin(), config.baseline_sizes.end())) {
        throw PreconditionError("scaling sizes must be sorted ascending");
    }
    ScalingReport report;
    FusionConfig fusion;
    fusion.top_k = 10;

    // Per record: packed codes, doubles, id string and bookkeeping.
    const std::uint64_t ps_bytes = mosaic_block_bytes(config.m, config.dim) + config.dim * 8 + 160;
    for (std::uint64_t requested : config.pathsearch_sizes) {
        const std::uint64_t s = fit_to_cap(requested, ps_bytes, config.memory_cap_bytes, "pathsearch", report.notes);
        try {
            const RetrievalIndex index = make_random_index(s + 1, config.m, config.dim, config.seed + s);
            const SlideRecord& q = index.records().front();
            const QuerySlide query{q.mosaic_code, q.semantic, q.id};
            OpCounters counters;
            query_image(query, index, fusion, &counters);
            const double ms = median_ms(config.repetitions, [&] { query_image(query, index, fusion); });
            report.rows.push_back({"pathsearch", s, 0, static_cast<double>(config.m),
                                   counters.mosaic_ops + counters.semantic_ops, ms});
        } catch (const std::bad_alloc&) {
            report.notes.push_back("pathsearch: allocation failed at S=" + std::to_string(s) + "; skipped");
        }
    }

    for (std::uint64_t p_bar : config.p_bars) {
        for (double f : config.fractions) {
            const std::uint64_t keep = sampled_mosaic_count(p_bar, f);
            // Building a slide transiently holds all p_bar patch codes.
            const std::uint64_t per_slide = keep * words_for_bits(config.dim) * 8 + 64;
            for (std::uint64_t requested : config.baseline_sizes) {
                const std::uint64_t s =
                    fit_to_cap(requested, per_slide, config.memory_cap_bytes, "baseline", report.notes);
                try {
                    const BaselineIndex index = make_baseline_index(s, p_bar, f, config.dim, config.seed + s + p_bar);
                    const BaselineIndex query_src = make_baseline_index(1, p_bar, f, config.dim, config.seed ^ p_bar);
                    const BinaryMosaicCode& query = query_src.slides.front();
                    OpCounters counters;
                    baseline_scan(query, index, &counters);
                    const double ms = median_ms(config.repetitions, [&] { baseline_scan(query, index, nullptr); });
                    report.rows.push_back({"baseline", s, p_bar, f, counters.mosaic_ops, ms});
                } catch (const std::bad_alloc&) {
                    report.notes.push_back("baseline: allocation failed at S=" + std::to_string(s) + "; skipped");
                }
            }
        }
    }
    return report;
}

std::string scaling_to_csv(const std::vector<ScalingRow>& rows) {
    std::ostringstream out;
    out.precision(17);
    out << "method,S,p_bar,f_or_m,ops_per_query,median_ms\n";
    for (const auto& r : rows) {
        out << r.method << ',' << r.s << ',' << r.p_bar << ',' << r.f_or_m << ',' << r.ops_per_query << ','
            << r.median_ms << '\n';
    }
    return out.str();
}

namespace {

template <class T>
T field_as(std::string_view s, std::size_t line) {
    T v{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw FormatError("scaling CSV line " + std::to_string(line) + ": bad field '" + std::string(s) + "'", line);
    }
    return v;
}

}  // namespace

std::vector<ScalingRow> parse_scaling_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<ScalingRow> rows;
    std::size_t line_no = 0;
    if (!std::getline(in, line) || line != "method,S,p_bar,f_or_m,ops_per_query,median_ms") {
        throw FormatError("scaling CSV header mismatch", 0);
    }
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string_view> f;
        std::string_view rest(line);
        while (true) {
            const auto comma = rest.find(',');
            f.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (f.size() != 6) throw FormatError("scaling CSV line " + std::to_string(line_no) + ": need 6 fields", line_no);
        rows.push_back({std::string(f[0]), field_as<std::uint64_t>(f[1], line_no), field_as<std::uint64_t>(f[2], line_no),
                        field_as<double>(f[3], line_no), field_as<std::uint64_t>(f[4], line_no),
                        field_as<double>(f[5], line_no)});
    }
    return rows;
}

std::string analytic_curves_csv(const std::vector<std::uint64_t>& sizes, const std::vector<std::uint64_t>& p_bars,
                                const std::vector<double>& fractions, std::uint64_t m, std::uint64_t dim,
                                std::uint64_t budget) {
    std::ostringstream out;
    out.precision(17);
    out << "figure,method,x,y\n";
    const std::uint64_t ps = pathsearch_ops_per_candidate(m, dim).total();
    for (std::uint64_t p_bar : p_bars) {
        for (double f : fractions) {
            const std::string name = "baseline_f" + std::to_string(f).substr(0, 4) + "_p" + std::to_string(p_bar);
            const std::uint64_t per = baseline_ops_per_candidate(p_bar, p_bar, f);
            for (std::uint64_t s : sizes) out << "cost_vs_s," << name << ',' << s << ',' << s * per << '\n';
        }
    }
    for (std::uint64_t s : sizes) out << "cost_vs_s,pathsearch," << s << ',' << s * ps << '\n';
    for (double f : fractions) {
        const std::string name = "baseline_f" + std::to_string(f).substr(0, 4);
        for (std::uint64_t p_bar : p_bars) {
            out << "capacity_vs_pbar," << name << ',' << p_bar << ','
                << budget / baseline_ops_per_candidate(p_bar, p_bar, f) << '\n';
        }
    }
    for (std::uint64_t p_bar : p_bars) out << "capacity_vs_pbar,pathsearch," << p_bar << ',' << budget / ps << '\n';
    return out.str();
}

}  // namespace pathsearch
