#pragma once

// Retrieval accuracy and inter-rater agreement statistics.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pathsearch/core.hpp"

namespace pathsearch {

struct LabeledRanking {
    int query_label = 0;
    std::vector<int> retrieved_labels;  // rank 1 first
};

/// True iff the modal label among the first k results equals the query label. When several
/// labels share the highest count, the one holding the best rank wins. Fewer than k results
/// are evaluated on the available prefix (with a warning).
bool top_k_majority(const LabeledRanking& ranking, std::size_t k);

struct AccuracySuite {
    double acc_at_1 = 0.0;
    double mv_at_3 = 0.0;
    double mv_at_5 = 0.0;
    std::size_t queries = 0;
};

/// Throws PreconditionError for an empty set.
AccuracySuite accuracy_suite(const std::vector<LabeledRanking>& rankings);

/// subjects x categories rating counts; every row sums to the number of raters.
struct RaterTable {
    std::size_t n_subjects = 0;
    std::size_t n_raters = 0;
    std::size_t n_categories = 0;
    std::vector<std::vector<std::size_t>> counts;

    static RaterTable from_counts(std::vector<std::vector<std::size_t>> counts);
    /// subjects x raters category labels (0-based category ids).
    static RaterTable from_labels(const std::vector<std::vector<int>>& labels);
};

/// Fleiss' kappa; std::nullopt when chance agreement is 1 (every rating in one category).
std::optional<double> fleiss_kappa(const RaterTable& table);

/// Fraction of subjects where at least `threshold` raters were correct.
double panel_mv_accuracy(const std::vector<std::vector<bool>>& correct, std::size_t threshold = 3);

/// share[k] = fraction of subjects whose largest identical-label group has size k (k = 0..raters).
struct ConsistencyDistribution {
    std::size_t n_raters = 0;
    std::vector<double> share;

    double at(std::size_t group_size) const { return group_size < share.size() ? share[group_size] : 0.0; }
    /// Fraction of subjects whose largest group is smaller than `group_size`.
    double below(std::size_t group_size) const;
};

ConsistencyDistribution consistency_distribution(const std::vector<std::vector<int>>& labels);

struct McNemarResult {
    double p_value = 1.0;
    double statistic = 0.0;  // continuity-corrected chi-square (also reported on the exact path)
    bool exact = true;
};

/// b: discordant pairs only method 1 got right; c: only method 2. Exact binomial for b + c < 25,
/// otherwise continuity-corrected chi-square with one degree of freedom.
McNemarResult mcnemar(std::uint64_t b, std::uint64_t c);

// ---------------------------------------------------------------------------
// CSV interfaces
// ---------------------------------------------------------------------------

struct RankingRow {
    std::string query_id;
    int query_label = 0;
    std::size_t rank = 0;
    int candidate_label = 0;
};

/// Header: query_id,query_label,rank,candidate_label
std::string rankings_to_csv(const std::vector<RankingRow>& rows);
std::vector<RankingRow> parse_rankings_csv(const std::string& text);
/// Groups rows by query (in first-appearance order) and orders each by rank.
std::vector<LabeledRanking> rankings_from_rows(const std::vector<RankingRow>& rows);

/// Rater table CSV: header `subject,truth,r1,...,rK`; labels are free-form strings, truth may be empty.
struct RaterSheet {
    std::vector<std::string> subjects;
    std::vector<std::optional<std::string>> truth;
    std::vector<std::vector<std::string>> labels;  // subjects x raters
};
RaterSheet parse_rater_csv(const std::string& text);

struct AgreementReport {
    std::optional<double> kappa;
    std::optional<double> mv_accuracy;  // only when every subject has a truth label
    ConsistencyDistribution consistency;
};
AgreementReport agreement_report(const RaterSheet& sheet, std::size_t mv_threshold = 3);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace pathsearch
