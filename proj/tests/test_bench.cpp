#include <doctest.h>

#include "pathsearch/bench.hpp"

using namespace pathsearch;

TEST_CASE("baseline cost model") {
    CHECK(baseline_ops_per_candidate(5000, 5000, 0.15) == 562500);
    CHECK(baseline_ops_per_candidate(1000, 2000, 0.05) == 5000);
    CHECK(baseline_ops_per_candidate(20, 20, 0.05) == 1);
    CHECK(sampled_mosaic_count(10000, 0.05) == 500);
    CHECK_THROWS_AS(baseline_ops_per_candidate(100, 100, 1.5), PreconditionError);
    CHECK_THROWS_AS(baseline_ops_per_candidate(0, 100, 0.1), PreconditionError);
}

TEST_CASE("pathsearch cost model") {
    CHECK(pathsearch_ops_per_candidate(16, 768).mosaic == 256);
    CHECK(pathsearch_ops_per_candidate(16, 768).total() == 256 + 768);
    CHECK(pathsearch_ops_per_candidate(1, 0).mosaic == 1);
}

TEST_CASE("capacity under a budget") {
    CostModelParams p{1000, 5000, 0.15, 16, 768, 1'000'000'000};
    const Capacity c = capacity_under_budget(p);
    CHECK(c.baseline == 1777);
    CHECK(c.pathsearch == 1'000'000'000 / 1024);
    p.p_bar = 10000;
    CHECK(capacity_under_budget(p).baseline == 1'000'000'000 / (1500 * 1500));
    CHECK(capacity_under_budget(p).pathsearch == c.pathsearch);
    p.p_bar = 2000;
    p.f = 0.1;
    const auto a = capacity_under_budget(p).baseline;
    p.p_bar = 4000;
    CHECK(capacity_under_budget(p).baseline == a / 4);
}

TEST_CASE("baseline store size") {
    CHECK(baseline_store_bytes(10000, 0.05, 768) == 48000);
}

TEST_CASE("instrumented baseline scan matches the analytic count") {
    const BaselineIndex index = make_baseline_index(100, 1000, 0.05, 64, 3);
    const BaselineIndex query = make_baseline_index(1, 1000, 0.05, 64, 4);
    OpCounters ops;
    const auto d = baseline_scan(query.slides.front(), index, &ops);
    CHECK(d.size() == 100);
    CHECK(ops.mosaic_ops == 250000);
    CHECK(ops.candidates == 100);
}

TEST_CASE("pathsearch counters are independent of slide size and linear in S") {
    const RetrievalIndex a = make_random_index(201, 16, 768, 1);
    const RetrievalIndex b = make_random_index(401, 16, 768, 2);
    FusionConfig cfg;
    OpCounters oa, ob;
    const auto& qa = a.records().front();
    const auto& qb = b.records().front();
    query_image({qa.mosaic_code, qa.semantic, qa.id}, a, cfg, &oa);
    query_image({qb.mosaic_code, qb.semantic, qb.id}, b, cfg, &ob);
    CHECK(oa.mosaic_ops == 200 * 256);
    CHECK(oa.semantic_ops == 200 * 768);
    CHECK(ob.mosaic_ops == 2 * oa.mosaic_ops);
    CHECK(ob.semantic_ops == 2 * oa.semantic_ops);
}

TEST_CASE("baseline per-candidate cost is quadratic in patch count") {
    const double lo = static_cast<double>(baseline_ops_per_candidate(1000, 1000, 0.1));
    const double hi = static_cast<double>(baseline_ops_per_candidate(10000, 10000, 0.1));
    CHECK(std::abs(hi / lo / 100.0 - 1.0) < 0.01);
}

TEST_CASE("scaling run and CSV round-trip") {
    ScalingConfig cfg;
    cfg.pathsearch_sizes = {200, 400};
    cfg.baseline_sizes = {4, 8};
    cfg.p_bars = {400};
    cfg.repetitions = 2;
    cfg.dim = 64;
    const ScalingReport report = measure_scaling(cfg);
    REQUIRE(report.rows.size() == 4);
    CHECK(report.rows[0].method == "pathsearch");
    CHECK(report.rows[1].ops_per_query == 2 * report.rows[0].ops_per_query);
    CHECK(report.rows[2].ops_per_query == 4 * 400);
    const auto back = parse_scaling_csv(scaling_to_csv(report.rows));
    REQUIRE(back.size() == report.rows.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].method == report.rows[i].method);
        CHECK(back[i].s == report.rows[i].s);
        CHECK(back[i].p_bar == report.rows[i].p_bar);
        CHECK(back[i].f_or_m == report.rows[i].f_or_m);
        CHECK(back[i].ops_per_query == report.rows[i].ops_per_query);
        CHECK(back[i].median_ms == report.rows[i].median_ms);
    }
    CHECK_THROWS_AS(parse_scaling_csv("nope\n"), FormatError);

    cfg.pathsearch_sizes = {400, 200};
    CHECK_THROWS_AS(measure_scaling(cfg), PreconditionError);
}

TEST_CASE("memory cap reduces database size with a note") {
    ScalingConfig cfg;
    cfg.pathsearch_sizes = {1000};
    cfg.baseline_sizes = {};
    cfg.dim = 64;
    cfg.repetitions = 1;
    cfg.memory_cap_bytes = 100'000;
    const ScalingReport report = measure_scaling(cfg);
    REQUIRE(report.rows.size() == 1);
    CHECK(report.rows[0].s < 1000);
    CHECK(report.notes.size() == 1);
}

TEST_CASE("analytic curves") {
    const std::string csv = analytic_curves_csv({100, 200}, {1000, 2000}, {0.05}, 16, 768, 1'000'000);
    CHECK(csv.rfind("figure,method,x,y\n", 0) == 0);
    CHECK(csv.find("cost_vs_s,pathsearch,200,204800\n") != std::string::npos);
    CHECK(csv.find("capacity_vs_pbar,baseline_f0.05,1000,400\n") != std::string::npos);
    CHECK(csv.find("capacity_vs_pbar,baseline_f0.05,2000,100\n") != std::string::npos);
}
