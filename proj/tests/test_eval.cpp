#include <doctest.h>

#include <random>

#include "pathsearch/eval.hpp"
#include "recount.hpp"

using namespace pathsearch;

TEST_CASE("top_k_majority") {
    CHECK(top_k_majority({0, {0, 1, 1}}, 1));
    CHECK(top_k_majority({0, {1, 0, 0}}, 3));
    CHECK(top_k_majority({0, {0, 1, 2}}, 3));
    CHECK_FALSE(top_k_majority({0, {1, 0, 2}}, 3));
    CHECK_FALSE(top_k_majority({0, {1, 1, 0, 0, 0}}, 3));
    CHECK(top_k_majority({0, {1, 1, 0, 0, 0}}, 5));

    int warnings = 0;
    set_warning_sink([&](std::string_view) { ++warnings; });
    CHECK(top_k_majority({2, {2, 1}}, 5));
    set_warning_sink(nullptr);
    CHECK(warnings == 1);
}

TEST_CASE("accuracy suite") {
    const std::vector<LabeledRanking> all{{1, {1, 1, 1, 1, 1}}, {0, {0, 0, 0, 0, 0}}};
    const AccuracySuite s = accuracy_suite(all);
    CHECK(s.acc_at_1 == 1.0);
    CHECK(s.mv_at_3 == 1.0);
    CHECK(s.mv_at_5 == 1.0);
    CHECK(s.queries == 2);
    CHECK_THROWS_AS(accuracy_suite({}), PreconditionError);
}

TEST_CASE("top-k metrics match the recount oracle on random rankings") {
    std::mt19937_64 rng(1);
    std::vector<LabeledRanking> set;
    for (int t = 0; t < 1000; ++t) {
        LabeledRanking r{static_cast<int>(rng() % 4), {}};
        for (int i = 0; i < 5; ++i) r.retrieved_labels.push_back(static_cast<int>(rng() % 4));
        for (std::size_t k : {1u, 3u, 5u}) CHECK(top_k_majority(r, k) == recount::top_k_majority(r.query_label, r.retrieved_labels, k));
        CHECK(top_k_majority(r, 1) == (r.retrieved_labels[0] == r.query_label));
        set.push_back(r);
    }
    const AccuracySuite s = accuracy_suite(set);
    double a1 = 0, m3 = 0, m5 = 0;
    for (const auto& r : set) {
        a1 += r.retrieved_labels[0] == r.query_label;
        m3 += recount::top_k_majority(r.query_label, r.retrieved_labels, 3);
        m5 += recount::top_k_majority(r.query_label, r.retrieved_labels, 5);
    }
    CHECK(s.acc_at_1 == doctest::Approx(a1 / 1000));
    CHECK(s.mv_at_3 == doctest::Approx(m3 / 1000));
    CHECK(s.mv_at_5 == doctest::Approx(m5 / 1000));
}

TEST_CASE("fleiss kappa") {
    CHECK(std::abs(*fleiss_kappa(RaterTable::from_counts({{4, 0}, {2, 2}, {0, 4}})) - 5.0 / 9.0) < 1e-9);
    CHECK(*fleiss_kappa(RaterTable::from_counts({{3, 0}, {0, 3}, {3, 0}})) == doctest::Approx(1.0));
    CHECK_FALSE(fleiss_kappa(RaterTable::from_counts({{3, 0}, {3, 0}})).has_value());
    // no rater pair ever agrees: P_bar = 0, P_e = 1/3
    CHECK(std::abs(*fleiss_kappa(RaterTable::from_counts({{1, 1, 1}, {1, 1, 1}})) - (-0.5)) < 1e-9);
    CHECK_THROWS(RaterTable::from_counts({{2, 0}, {1, 0}}));
}

TEST_CASE("fleiss kappa at exact chance agreement is zero") {
    // 4 subjects, 2 raters, categories a/b: two unanimous subjects (one a, one b) and two split.
    // P_bar = (1 + 1 + 0 + 0) / 4 = 0.5 and p_a = p_b = 0.5, so P_e = 0.5.
    const auto t = RaterTable::from_counts({{2, 0}, {0, 2}, {1, 1}, {1, 1}});
    CHECK(std::abs(*fleiss_kappa(t)) < 1e-9);
}

TEST_CASE("agreement statistics match recount oracles on random tables") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 1000; ++t) {
        const std::size_t subjects = 2 + rng() % 10, raters = 2 + rng() % 4;
        const int cats = 2 + static_cast<int>(rng() % 3);
        std::vector<std::vector<int>> labels(subjects, std::vector<int>(raters));
        std::vector<std::vector<bool>> correct(subjects, std::vector<bool>(raters));
        for (std::size_t s = 0; s < subjects; ++s)
            for (std::size_t r = 0; r < raters; ++r) {
                labels[s][r] = static_cast<int>(rng() % cats);
                correct[s][r] = labels[s][r] == 0;
            }
        const auto k = fleiss_kappa(RaterTable::from_labels(labels));
        bool single_category = true;
        for (const auto& row : labels)
            for (int l : row) single_category &= l == labels[0][0];
        if (single_category) {
            CHECK_FALSE(k.has_value());
        } else {
            REQUIRE(k.has_value());
            CHECK(*k == doctest::Approx(recount::fleiss_kappa(labels, cats)).epsilon(1e-9));
            CHECK(*k <= 1.0 + 1e-12);
        }
        CHECK(panel_mv_accuracy(correct, 3) == doctest::Approx(recount::panel_mv(correct, 3)));
        const auto dist = consistency_distribution(labels);
        for (std::size_t g = 1; g <= raters; ++g) CHECK(dist.at(g) == doctest::Approx(recount::consistency_at(labels, g)));
    }
}

TEST_CASE("panel and consistency examples") {
    CHECK(panel_mv_accuracy({{true, true, true, true}, {true, true, true, true}}) == 1.0);
    CHECK(panel_mv_accuracy({{true, true, false, false}, {false, true, false, true}}) == 0.0);
    const auto same = consistency_distribution({{1, 1, 1, 1}, {0, 0, 0, 0}});
    CHECK(same.at(4) == 1.0);
    const auto distinct = consistency_distribution({{0, 1, 2, 3}});
    CHECK(distinct.at(1) == 1.0);
    CHECK(distinct.below(2) == 1.0);
    const auto mix = consistency_distribution({{0, 0, 1, 2}, {0, 0, 0, 1}, {3, 3, 3, 3}, {0, 0, 1, 1}});
    CHECK(mix.at(2) == 0.5);
    CHECK(mix.at(3) == 0.25);
    CHECK(mix.at(4) == 0.25);
}

TEST_CASE("mcnemar") {
    const auto r = mcnemar(5, 1);
    CHECK(r.exact);
    CHECK(std::abs(r.p_value - 0.21875) < 1e-9);
    CHECK(r.statistic == doctest::Approx(1.5));
    CHECK(mcnemar(0, 0).p_value == 1.0);
    CHECK(mcnemar(7, 7).p_value == 1.0);
    const auto big = mcnemar(40, 10);
    CHECK_FALSE(big.exact);
    CHECK(big.statistic == doctest::Approx(16.82));
    CHECK(big.p_value < 0.001);
    CHECK(big.p_value == doctest::Approx(std::erfc(std::sqrt(16.82 / 2.0))).epsilon(1e-12));
    for (unsigned b = 0; b < 15; ++b)
        for (unsigned c = 0; c + b < 25; ++c) {
            CHECK(mcnemar(b, c).p_value == doctest::Approx(mcnemar(c, b).p_value).epsilon(1e-12));
            CHECK(mcnemar(b, c).p_value == doctest::Approx(recount::exact_mcnemar(b, c)).epsilon(1e-9));
        }
    CHECK(mcnemar(30, 12).p_value == doctest::Approx(mcnemar(12, 30).p_value));
}

TEST_CASE("rankings CSV round-trip") {
    const std::vector<RankingRow> rows{{"q1", 0, 1, 0}, {"q1", 0, 2, 1}, {"q2", 1, 2, 0}, {"q2", 1, 1, 1}};
    const std::string csv = rankings_to_csv(rows);
    CHECK(csv.rfind("query_id,query_label,rank,candidate_label\n", 0) == 0);
    const auto back = parse_rankings_csv(csv);
    REQUIRE(back.size() == 4);
    CHECK(back[2].query_id == "q2");
    const auto rankings = rankings_from_rows(back);
    REQUIRE(rankings.size() == 2);
    CHECK(rankings[1].retrieved_labels == std::vector<int>{1, 0});
    CHECK_THROWS_AS(parse_rankings_csv("bad,header\n"), FormatError);
    CHECK_THROWS_AS(parse_rankings_csv("query_id,query_label,rank,candidate_label\nq,x,1,0\n"), FormatError);
}

TEST_CASE("rater sheet report") {
    const std::string csv =
        "subject,truth,r1,r2,r3,r4\n"
        "s1,tumor,tumor,tumor,tumor,tumor\n"
        "s2,benign,benign,tumor,benign,benign\n"
        "s3,tumor,benign,tumor,benign,tumor\n";
    const AgreementReport rep = agreement_report(parse_rater_csv(csv));
    REQUIRE(rep.mv_accuracy.has_value());
    CHECK(*rep.mv_accuracy == doctest::Approx(2.0 / 3.0));
    CHECK(rep.consistency.at(4) == doctest::Approx(1.0 / 3.0));
    CHECK(rep.consistency.at(3) == doctest::Approx(1.0 / 3.0));
    CHECK(rep.consistency.at(2) == doctest::Approx(1.0 / 3.0));
    REQUIRE(rep.kappa.has_value());

    const AgreementReport no_truth = agreement_report(parse_rater_csv("subject,truth,r1,r2\na,,x,y\nb,,x,x\n"));
    CHECK_FALSE(no_truth.mv_accuracy.has_value());
    CHECK_THROWS_AS(parse_rater_csv("subject,truth,r1,r2\na,,x\n"), FormatError);
}
