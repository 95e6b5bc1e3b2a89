#include <doctest.h>

#include <cmath>
#include <set>

#include "lcis/cohort.hpp"
#include "lcis/eval.hpp"
#include "support/oracles.hpp"

using namespace lcis;

namespace {

SimConfig eval_sim(std::uint64_t n, std::uint64_t seed) {
    SimConfig c;
    c.n_patients = n;
    c.params.rho = 0.35;
    c.params.beta_age = 0.1;
    c.params.mu = {{{0.0, 0.02}, {0.4, 0.12}}};
    c.params.tau2 = {{{0.09, 0.0025}, {0.09, 0.0025}}};
    c.params.sigma2 = 0.05;
    c.params.gamma0 = -1.5;
    c.params.gamma1 = 1.4;
    c.psa_mean_count = 6;
    c.biopsy_mean_count = 3;
    c.frac_class_observed = 0.25;
    c.seed = seed;
    return c;
}

AgreementReport tiny_experiment(std::uint64_t seed, int threads = 1) {
    auto [records, truth] = simulate_cohort(eval_sim(18, 91));
    ModelConfig config;
    FitSettings mcmc{2, 150, 80, 1, 0};
    IsSettings is_settings;
    is_settings.dynamic = true;
    is_settings.initial_m = 200;
    is_settings.ess_threshold = 50.0;
    is_settings.m_per_draw = 4;
    return agreement_experiment(records, 3, config, mcmc, is_settings,
                                {"is", "rs", "wu", "rbis"}, seed, threads);
}

}  // namespace

TEST_CASE("rmsd: trivial values and validation") {
    CHECK(rmsd({0.2, 0.4, 0.9}, {0.2, 0.4, 0.9}) == 0.0);
    CHECK(rmsd({0.0, 1.0}, {0.1, 0.9}) == doctest::Approx(0.1).epsilon(1e-14));
    CHECK_THROWS_AS(rmsd({0.1}, {0.1, 0.2}), Error);
    CHECK_THROWS_AS(rmsd({1.2}, {0.1}), Error);
    CHECK_THROWS_AS(rmsd({}, {}), Error);
}

TEST_CASE("rmsd: symmetry and domination by the max difference") {
    Rng rng(55);
    for (int t = 0; t < 200; ++t) {
        std::size_t n = 1 + static_cast<std::size_t>(rng.uniform() * 20);
        std::vector<double> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = rng.uniform();
            b[i] = rng.uniform();
        }
        double r1 = rmsd(a, b), r2 = rmsd(b, a);
        CHECK(r1 == r2);
        CHECK(r1 <= diff_quantiles(a, b, 1.0) + 1e-15);
    }
}

TEST_CASE("diff_quantiles: max at q=1, zeros everywhere on equal input") {
    std::vector<double> a{0.1, 0.5, 0.9, 0.3};
    std::vector<double> b{0.2, 0.4, 0.5, 0.3};
    CHECK(diff_quantiles(a, b, 1.0) == doctest::Approx(0.4).epsilon(1e-14));
    for (double q : {0.0, 0.25, 0.5, 0.99, 1.0}) CHECK(diff_quantiles(a, a, q) == 0.0);
    CHECK_THROWS_AS(diff_quantiles(a, b, 1.5), Error);
}

TEST_CASE("ess_deviation_table: single bin reduces to the overall mean") {
    std::vector<ReportRow> rows(4);
    double devs[] = {0.01, 0.03, 0.02, 0.08};
    double esses[] = {10.0, 100.0, 1000.0, 5000.0};
    for (int i = 0; i < 4; ++i) {
        rows[i].risk_mcmc = 0.5;
        rows[i].risk_is = 0.5 + devs[i];
        rows[i].ess = esses[i];
    }
    auto single = ess_deviation_table(rows, {1.0, 1e9});
    REQUIRE(single.size() == 1);
    CHECK(single[0].count == 4);
    CHECK(single[0].mean_abs_dev == doctest::Approx(0.035).epsilon(1e-12));
}

TEST_CASE("ess_deviation_table: empty bins reported empty, not zero") {
    std::vector<ReportRow> rows(2);
    rows[0].risk_mcmc = 0.5;
    rows[0].risk_is = 0.52;
    rows[0].ess = 5.0;
    rows[1].risk_mcmc = 0.5;
    rows[1].risk_is = 0.51;
    rows[1].ess = 2e4;
    auto bins = ess_deviation_table(rows, {1.0, 10.0, 100.0, 1000.0, 1e5});
    REQUIRE(bins.size() == 4);
    CHECK(bins[0].count == 1);
    CHECK(bins[1].count == 0);
    CHECK(std::isnan(bins[1].mean_abs_dev));
    CHECK(bins[2].count == 0);
    CHECK(bins[3].count == 1);
    CHECK_THROWS_AS(ess_deviation_table(rows, {1.0}), Error);
    CHECK_THROWS_AS(ess_deviation_table(rows, {10.0, 1.0}), Error);
}

TEST_CASE("timing summaries: single sample collapses, replay is deterministic") {
    AgreementReport report;
    ReportRow row;
    row.id = "a";
    row.elapsed_ms = 12.5;
    report.rows.push_back(row);
    auto t = timing_report(report);
    REQUIRE(t.count("is") == 1);
    CHECK(t["is"].min_ms == 12.5);
    CHECK(t["is"].max_ms == 12.5);
    CHECK(t["is"].q25_ms == 12.5);
    CHECK(t["is"].q75_ms == 12.5);

    auto t2 = timing_report(report);
    CHECK(t2["is"].min_ms == t["is"].min_ms);
}

TEST_CASE("report CSV round-trips rows bit-exactly and aggregates recompute bit-exactly") {
    AgreementReport report = tiny_experiment(7);
    REQUIRE(report.rows.size() == 3);

    std::string csv = report_rows_csv(report.rows);
    auto parsed = parse_report_csv(csv);
    REQUIRE(parsed.size() == report.rows.size());
    for (std::size_t i = 0; i < parsed.size(); ++i) {
        CHECK(parsed[i].id == report.rows[i].id);
        CHECK(parsed[i].risk_mcmc == report.rows[i].risk_mcmc);
        CHECK(parsed[i].risk_is == report.rows[i].risk_is);
        CHECK(parsed[i].risk_rs == report.rows[i].risk_rs);
        CHECK(parsed[i].risk_wu == report.rows[i].risk_wu);
        CHECK(parsed[i].risk_rbis == report.rows[i].risk_rbis);
        CHECK(parsed[i].ess == report.rows[i].ess);
        CHECK(parsed[i].proposals_used == report.rows[i].proposals_used);
        CHECK(parsed[i].elapsed_ms == report.rows[i].elapsed_ms);
    }

    auto recomputed = compute_aggregates(parsed);
    REQUIRE(recomputed.size() == report.aggregates.size());
    for (const auto& [method, agg] : report.aggregates) {
        REQUIRE(recomputed.count(method) == 1);
        CHECK(recomputed[method].rmsd_vs_mcmc == agg.rmsd_vs_mcmc);
        CHECK(recomputed[method].max_abs_diff == agg.max_abs_diff);
        CHECK(recomputed[method].q99_abs_diff == agg.q99_abs_diff);
    }
}

TEST_CASE("stable CSV differs from the full CSV only in the elapsed column") {
    AgreementReport report = tiny_experiment(7);
    std::string stable = report_rows_stable_csv(report.rows);
    auto parsed = parse_report_csv(stable);
    for (std::size_t i = 0; i < parsed.size(); ++i) {
        CHECK(std::isnan(parsed[i].elapsed_ms));
        CHECK(parsed[i].risk_is == report.rows[i].risk_is);
    }
}

TEST_CASE("agreement_experiment: rows populated, estimates deterministic given the seed") {
    AgreementReport a = tiny_experiment(11);
    AgreementReport b = tiny_experiment(11);
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        CHECK(a.rows[i].id == b.rows[i].id);
        CHECK(a.rows[i].risk_mcmc == b.rows[i].risk_mcmc);
        CHECK(a.rows[i].risk_is == b.rows[i].risk_is);
        CHECK(a.rows[i].risk_rs == b.rows[i].risk_rs);
        CHECK(a.rows[i].risk_wu == b.rows[i].risk_wu);
        CHECK(a.rows[i].risk_rbis == b.rows[i].risk_rbis);
        CHECK(a.rows[i].ess == b.rows[i].ess);
        CHECK(a.rows[i].proposals_used == b.rows[i].proposals_used);
    }
    for (const auto& row : a.rows) {
        CHECK(row.risk_mcmc >= 0.0);
        CHECK(row.risk_mcmc <= 1.0);
        CHECK(std::isfinite(row.risk_is));
        CHECK(std::isfinite(row.risk_rs));
        CHECK(std::isfinite(row.risk_wu));
        CHECK(std::isfinite(row.risk_rbis));
        CHECK(row.proposals_used > 0);
        CHECK(row.elapsed_ms >= 0.0);
        // fast estimates all track the refit loosely even at this tiny scale
        CHECK(std::abs(row.risk_is - row.risk_mcmc) < 0.35);
    }
    CHECK(a.method_elapsed_ms.count("refit") == 1);
}

TEST_CASE("agreement_experiment: threaded evaluation gives identical estimates") {
    AgreementReport a = tiny_experiment(13, 1);
    AgreementReport b = tiny_experiment(13, 2);
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        CHECK(a.rows[i].risk_mcmc == b.rows[i].risk_mcmc);
        CHECK(a.rows[i].risk_is == b.rows[i].risk_is);
        CHECK(a.rows[i].risk_rs == b.rows[i].risk_rs);
    }
}

TEST_CASE("agreement_experiment: holdouts are the id-sorted tail with labels stripped") {
    auto [records, truth] = simulate_cohort(eval_sim(12, 17));
    ModelConfig config;
    FitSettings mcmc{1, 60, 40, 1, 0};
    auto ctx = prepare_experiment(records, 2, config, mcmc, 2, 3);
    std::sort(records.begin(), records.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });
    REQUIRE(ctx.holdouts.size() == 2);
    CHECK(ctx.holdouts[0].id == records[records.size() - 2].id);
    CHECK(ctx.holdouts[1].id == records[records.size() - 1].id);
    for (const auto& h : ctx.holdouts) CHECK_FALSE(h.observed_class.has_value());
    CHECK(ctx.base.size() == records.size() - 2);
    CHECK(ctx.store.num_patients() == ctx.base.size());

    // invalid holdout counts
    CHECK_THROWS_AS(prepare_experiment(records, 0, config, mcmc, 2, 3), Error);
    CHECK_THROWS_AS(prepare_experiment(records, records.size(), config, mcmc, 2, 3), Error);
}

TEST_CASE("degenerate weights become flagged rows, not failed runs") {
    auto [records, truth] = simulate_cohort(eval_sim(14, 23));
    ModelConfig config;
    FitSettings mcmc{1, 80, 50, 1, 0};
    auto ctx = prepare_experiment(records, 3, config, mcmc, 3, 29);
    // impossible data for one holdout: every proposal weight underflows to zero
    ctx.holdouts[0].psa = {{0.0, 1e160}};
    ctx.holdouts[0].biopsies.clear();

    IsSettings is_settings;
    is_settings.dynamic = false;
    auto report = run_agreement(ctx, is_settings, {"is", "rs"});
    REQUIRE(report.rows.size() == 3);
    CHECK(report.rows[0].degenerate);
    CHECK(std::isnan(report.rows[0].risk_is));
    CHECK(std::isnan(report.rows[0].risk_rs));
    CHECK_FALSE(report.rows[1].degenerate);
    CHECK(std::isfinite(report.rows[1].risk_is));
    // aggregates skip the degenerate row
    CHECK(report.aggregates.count("is") == 1);
}

TEST_CASE("run_agreement validates method names") {
    auto [records, truth] = simulate_cohort(eval_sim(10, 19));
    ModelConfig config;
    FitSettings mcmc{1, 40, 30, 1, 0};
    auto ctx = prepare_experiment(records, 2, config, mcmc, 2, 5);
    IsSettings is_settings;
    CHECK_THROWS_AS(run_agreement(ctx, is_settings, {"nope"}), Error);
}
