#include "pathsearch/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string_view>
#include <unordered_map>

namespace pathsearch {

bool top_k_majority(const LabeledRanking& ranking, std::size_t k) {
    if (k < 1) throw PreconditionError("top_k_majority: k must be at least 1");
    if (ranking.retrieved_labels.empty()) throw PreconditionError("top_k_majority: empty ranking");
    if (ranking.retrieved_labels.size() < k) {
        warn("top_k_majority: only " + std::to_string(ranking.retrieved_labels.size()) + " results for k=" +
             std::to_string(k) + "; using the available prefix");
        k = ranking.retrieved_labels.size();
    }
    // label -> (count, first rank)
    std::map<int, std::pair<std::size_t, std::size_t>> tally;
    for (std::size_t r = 0; r < k; ++r) {
        auto [it, inserted] = tally.try_emplace(ranking.retrieved_labels[r], 0, r);
        ++it->second.first;
    }
    int modal = 0;
    std::size_t best_count = 0;
    std::size_t best_rank = 0;
    for (const auto& [label, stats] : tally) {
        const auto [count, first] = stats;
        if (count > best_count || (count == best_count && first < best_rank)) {
            modal = label;
            best_count = count;
            best_rank = first;
        }
    }
    return modal == ranking.query_label;
}

AccuracySuite accuracy_suite(const std::vector<LabeledRanking>& rankings) {
    if (rankings.empty()) throw PreconditionError("accuracy_suite: no rankings");
    AccuracySuite s;
    s.queries = rankings.size();
    for (const auto& r : rankings) {
        s.acc_at_1 += top_k_majority(r, 1) ? 1.0 : 0.0;
        s.mv_at_3 += top_k_majority(r, 3) ? 1.0 : 0.0;
        s.mv_at_5 += top_k_majority(r, 5) ? 1.0 : 0.0;
    }
    const auto n = static_cast<double>(rankings.size());
    s.acc_at_1 /= n;
    s.mv_at_3 /= n;
    s.mv_at_5 /= n;
    return s;
}

RaterTable RaterTable::from_counts(std::vector<std::vector<std::size_t>> counts) {
    RaterTable t;
    if (counts.empty()) throw PreconditionError("rater table: no subjects");
    t.n_subjects = counts.size();
    t.n_categories = counts.front().size();
    for (std::size_t c : counts.front()) t.n_raters += c;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i].size() != t.n_categories) throw DimensionError("rater table: ragged category counts");
        std::size_t sum = 0;
        for (std::size_t c : counts[i]) sum += c;
        if (sum != t.n_raters) {
            throw PreconditionError("rater table: subject " + std::to_string(i) + " has " + std::to_string(sum) +
                                    " ratings, expected " + std::to_string(t.n_raters));
        }
    }
    t.counts = std::move(counts);
    return t;
}

RaterTable RaterTable::from_labels(const std::vector<std::vector<int>>& labels) {
    if (labels.empty()) throw PreconditionError("rater table: no subjects");
    int max_label = -1;
    for (const auto& row : labels) {
        for (int l : row) {
            if (l < 0) throw PreconditionError("rater table: negative category id");
            max_label = std::max(max_label, l);
        }
    }
    std::vector<std::vector<std::size_t>> counts(labels.size(),
                                                 std::vector<std::size_t>(static_cast<std::size_t>(max_label + 1)));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        for (int l : labels[i]) ++counts[i][static_cast<std::size_t>(l)];
    }
    return from_counts(std::move(counts));
}

std::optional<double> fleiss_kappa(const RaterTable& t) {
    if (t.n_raters < 2 || t.n_subjects < 2) throw PreconditionError("fleiss_kappa: need at least 2 raters and 2 subjects");
    const auto n = static_cast<double>(t.n_raters);
    const auto subjects = static_cast<double>(t.n_subjects);
    std::vector<double> column(t.n_categories, 0.0);
    double p_bar = 0.0;
    for (const auto& row : t.counts) {
        double sq = 0.0;
        for (std::size_t j = 0; j < row.size(); ++j) {
            const auto c = static_cast<double>(row[j]);
            sq += c * c;
            column[j] += c;
        }
        p_bar += (sq - n) / (n * (n - 1.0));
    }
    p_bar /= subjects;
    double p_e = 0.0;
    for (double c : column) {
        const double pj = c / (subjects * n);
        p_e += pj * pj;
    }
    if (std::abs(1.0 - p_e) < 1e-15) return std::nullopt;
    return (p_bar - p_e) / (1.0 - p_e);
}

double panel_mv_accuracy(const std::vector<std::vector<bool>>& correct, std::size_t threshold) {
    if (correct.empty()) throw PreconditionError("panel_mv_accuracy: no subjects");
    std::size_t hits = 0;
    for (const auto& row : correct) {
        if (static_cast<std::size_t>(std::count(row.begin(), row.end(), true)) >= threshold) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(correct.size());
}

double ConsistencyDistribution::below(std::size_t group_size) const {
    double s = 0.0;
    for (std::size_t k = 0; k < std::min(group_size, share.size()); ++k) s += share[k];
    return s;
}

ConsistencyDistribution consistency_distribution(const std::vector<std::vector<int>>& labels) {
    if (labels.empty()) throw PreconditionError("consistency_distribution: no subjects");
    ConsistencyDistribution d;
    d.n_raters = labels.front().size();
    d.share.assign(d.n_raters + 1, 0.0);
    for (const auto& row : labels) {
        if (row.size() != d.n_raters) throw DimensionError("consistency_distribution: ragged rater rows");
        std::unordered_map<int, std::size_t> groups;
        std::size_t largest = 0;
        for (int l : row) largest = std::max(largest, ++groups[l]);
        d.share[largest] += 1.0;
    }
    for (double& s : d.share) s /= static_cast<double>(labels.size());
    return d;
}

McNemarResult mcnemar(std::uint64_t b, std::uint64_t c) {
    McNemarResult r;
    const std::uint64_t n = b + c;
    if (n == 0) return r;
    const double diff = std::abs(static_cast<double>(b) - static_cast<double>(c));
    r.statistic = std::max(diff - 1.0, 0.0) * std::max(diff - 1.0, 0.0) / static_cast<double>(n);
    if (n < 25) {
        // Two-sided exact binomial with p = 1/2.
        const std::uint64_t k = std::min(b, c);
        double coef = 1.0;  // C(n, i)
        double tail = 0.0;
        for (std::uint64_t i = 0; i <= k; ++i) {
            if (i > 0) coef = coef * static_cast<double>(n - i + 1) / static_cast<double>(i);
            tail += coef;
        }
        tail = std::ldexp(tail, -static_cast<int>(n));
        r.p_value = std::min(1.0, 2.0 * tail);
        r.exact = true;
    } else {
        r.p_value = std::erfc(std::sqrt(r.statistic / 2.0));
        r.exact = false;
    }
    return r;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        const std::size_t end = line.find(',', pos);
        std::string_view field = line.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
        while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
        while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) {
            field.remove_suffix(1);
        }
        out.emplace_back(field);
        if (end == std::string_view::npos) break;
        pos = end + 1;
    }
    return out;
}

std::vector<std::vector<std::string>> read_csv_rows(const std::string& text, std::size_t& header_size,
                                                    std::vector<std::string>* header) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto fields = split_csv_line(line);
        if (first) {
            header_size = fields.size();
            if (header) *header = fields;
            first = false;
            continue;
        }
        rows.push_back(std::move(fields));
    }
    return rows;
}

template <class T>
T to_number(const std::string& s, std::size_t row, const char* column) {
    T v{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw FormatError("row " + std::to_string(row) + ": bad " + column + " '" + s + "'", row);
    }
    return v;
}

}  // namespace

std::string rankings_to_csv(const std::vector<RankingRow>& rows) {
    std::ostringstream out;
    out << "query_id,query_label,rank,candidate_label\n";
    for (const auto& r : rows) out << r.query_id << ',' << r.query_label << ',' << r.rank << ',' << r.candidate_label << '\n';
    return out.str();
}

std::vector<RankingRow> parse_rankings_csv(const std::string& text) {
    std::size_t header_size = 0;
    std::vector<std::string> header;
    const auto rows = read_csv_rows(text, header_size, &header);
    if (header.size() != 4 || header[0] != "query_id") {
        throw FormatError("rankings CSV must start with header query_id,query_label,rank,candidate_label", 0);
    }
    std::vector<RankingRow> out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != 4) throw FormatError("rankings CSV row " + std::to_string(i + 1) + " needs 4 fields", i + 1);
        out.push_back({rows[i][0], to_number<int>(rows[i][1], i + 1, "query_label"),
                       to_number<std::size_t>(rows[i][2], i + 1, "rank"),
                       to_number<int>(rows[i][3], i + 1, "candidate_label")});
    }
    return out;
}

std::vector<LabeledRanking> rankings_from_rows(const std::vector<RankingRow>& rows) {
    std::vector<std::string> order;
    std::unordered_map<std::string, std::vector<const RankingRow*>> grouped;
    for (const auto& r : rows) {
        auto [it, inserted] = grouped.try_emplace(r.query_id);
        if (inserted) order.push_back(r.query_id);
        it->second.push_back(&r);
    }
    std::vector<LabeledRanking> out;
    for (const auto& id : order) {
        auto& group = grouped[id];
        std::sort(group.begin(), group.end(), [](const RankingRow* a, const RankingRow* b) { return a->rank < b->rank; });
        LabeledRanking lr;
        lr.query_label = group.front()->query_label;
        for (const auto* r : group) {
            if (r->query_label != lr.query_label) throw FormatError("query " + id + " has inconsistent labels", 0);
            lr.retrieved_labels.push_back(r->candidate_label);
        }
        out.push_back(std::move(lr));
    }
    return out;
}

RaterSheet parse_rater_csv(const std::string& text) {
    std::size_t header_size = 0;
    std::vector<std::string> header;
    const auto rows = read_csv_rows(text, header_size, &header);
    if (header_size < 4 || header[0] != "subject" || header[1] != "truth") {
        throw FormatError("rater CSV must start with header subject,truth,r1,r2,...", 0);
    }
    RaterSheet sheet;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != header_size) {
            throw FormatError("rater CSV row " + std::to_string(i + 1) + " has the wrong field count", i + 1);
        }
        sheet.subjects.push_back(rows[i][0]);
        sheet.truth.push_back(rows[i][1].empty() ? std::nullopt : std::optional<std::string>(rows[i][1]));
        sheet.labels.emplace_back(rows[i].begin() + 2, rows[i].end());
    }
    if (sheet.subjects.empty()) throw FormatError("rater CSV has no subjects", 0);
    return sheet;
}

AgreementReport agreement_report(const RaterSheet& sheet, std::size_t mv_threshold) {
    std::map<std::string, int> ids;
    std::vector<std::vector<int>> coded;
    for (const auto& row : sheet.labels) {
        std::vector<int> r;
        for (const auto& l : row) r.push_back(ids.try_emplace(l, static_cast<int>(ids.size())).first->second);
        coded.push_back(std::move(r));
    }
    AgreementReport rep;
    rep.kappa = fleiss_kappa(RaterTable::from_labels(coded));
    rep.consistency = consistency_distribution(coded);
    const bool all_truth = std::all_of(sheet.truth.begin(), sheet.truth.end(), [](const auto& t) { return t.has_value(); });
    if (all_truth) {
        std::vector<std::vector<bool>> correct;
        for (std::size_t i = 0; i < sheet.labels.size(); ++i) {
            std::vector<bool> row;
            for (const auto& l : sheet.labels[i]) row.push_back(l == *sheet.truth[i]);
            correct.push_back(std::move(row));
        }
        rep.mv_accuracy = panel_mv_accuracy(correct, mv_threshold);
    }
    return rep;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string(), 0);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace pathsearch
