#pragma once

#include <chrono>
#include <cmath>
#include <future>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "lcis/estimators.hpp"
#include "lcis/importance.hpp"
#include "lcis/json_io.hpp"
#include "lcis/mcmc.hpp"

namespace lcis {

inline double rmsd(const std::vector<double>& a, const std::vector<double>& b) {
    require_valid(a.size() == b.size() && !a.empty(), "rmsd: inputs must have equal nonzero length");
    KahanSum s;
    for (std::size_t i = 0; i < a.size(); ++i) {
        require_valid(a[i] >= 0.0 && a[i] <= 1.0 && b[i] >= 0.0 && b[i] <= 1.0,
                      "rmsd: entries must lie in [0,1]");
        double d = a[i] - b[i];
        s.add(d * d);
    }
    return std::sqrt(s.value() / static_cast<double>(a.size()));
}

// Empirical q-quantile of |a - b|, nearest-rank convention.
inline double diff_quantiles(const std::vector<double>& a, const std::vector<double>& b, double q) {
    require_valid(a.size() == b.size() && !a.empty(), "diff_quantiles: inputs must have equal nonzero length");
    std::vector<double> diffs(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) diffs[i] = std::abs(a[i] - b[i]);
    return quantile_nearest_rank(std::move(diffs), q);
}

struct ReportRow {
    std::string id;
    double risk_mcmc = std::numeric_limits<double>::quiet_NaN();
    double risk_is = std::numeric_limits<double>::quiet_NaN();
    double risk_rs = std::numeric_limits<double>::quiet_NaN();
    double risk_wu = std::numeric_limits<double>::quiet_NaN();
    double risk_rbis = std::numeric_limits<double>::quiet_NaN();
    double ess = std::numeric_limits<double>::quiet_NaN();
    std::size_t proposals_used = 0;
    double elapsed_ms = std::numeric_limits<double>::quiet_NaN();  // IS update wall time
    // diagnostics carried alongside the row (not CSV columns)
    bool capped = false;
    bool degenerate = false;
    int generations = 0;
    double is_mc_se = std::numeric_limits<double>::quiet_NaN();
    double rs_acceptance_rate = std::numeric_limits<double>::quiet_NaN();
    double rs_expected_acceptance = std::numeric_limits<double>::quiet_NaN();
    std::size_t rs_accepted = 0;
};

struct MethodAggregates {
    double rmsd_vs_mcmc = std::numeric_limits<double>::quiet_NaN();
    double max_abs_diff = std::numeric_limits<double>::quiet_NaN();
    double q99_abs_diff = std::numeric_limits<double>::quiet_NaN();
};

struct AgreementReport {
    std::vector<ReportRow> rows;
    std::map<std::string, MethodAggregates> aggregates;  // per method
    ojson config_echo;
    std::map<std::string, std::vector<double>> method_elapsed_ms;  // includes "refit"
};

namespace detail {

inline double row_method_risk(const ReportRow& row, const std::string& method) {
    if (method == "is") return row.risk_is;
    if (method == "rs") return row.risk_rs;
    if (method == "wu") return row.risk_wu;
    if (method == "rbis") return row.risk_rbis;
    fail(ErrorCode::validation, "unknown method: " + method);
}

}  // namespace detail

// Aggregates are a pure function of the rows; recomputing from a saved CSV
// reproduces them bit-exactly.
inline std::map<std::string, MethodAggregates> compute_aggregates(const std::vector<ReportRow>& rows) {
    std::map<std::string, MethodAggregates> out;
    for (const std::string method : {"is", "rs", "wu", "rbis"}) {
        std::vector<double> ref, est;
        for (const auto& row : rows) {
            double r = detail::row_method_risk(row, method);
            if (std::isnan(r) || std::isnan(row.risk_mcmc)) continue;
            ref.push_back(row.risk_mcmc);
            est.push_back(r);
        }
        if (ref.empty()) continue;
        MethodAggregates agg;
        agg.rmsd_vs_mcmc = rmsd(est, ref);
        agg.max_abs_diff = diff_quantiles(est, ref, 1.0);
        agg.q99_abs_diff = diff_quantiles(est, ref, 0.99);
        out[method] = agg;
    }
    return out;
}

struct EssBin {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
    double mean_abs_dev = std::numeric_limits<double>::quiet_NaN();  // NaN when empty
};

// Mean |risk_is - risk_mcmc| binned by the IS effective sample size.
inline std::vector<EssBin> ess_deviation_table(const std::vector<ReportRow>& rows,
                                               const std::vector<double>& bin_edges) {
    require_valid(bin_edges.size() >= 2, "ess_deviation_table: need at least one bin");
    for (std::size_t i = 1; i < bin_edges.size(); ++i)
        require_valid(bin_edges[i] > bin_edges[i - 1], "ess_deviation_table: edges must increase");
    std::vector<EssBin> bins(bin_edges.size() - 1);
    std::vector<KahanSum> sums(bins.size());
    for (std::size_t b = 0; b < bins.size(); ++b) {
        bins[b].lo = bin_edges[b];
        bins[b].hi = bin_edges[b + 1];
    }
    for (const auto& row : rows) {
        if (std::isnan(row.ess) || std::isnan(row.risk_is) || std::isnan(row.risk_mcmc)) continue;
        for (std::size_t b = 0; b < bins.size(); ++b)
            if (row.ess >= bins[b].lo && row.ess < bins[b].hi) {
                ++bins[b].count;
                sums[b].add(std::abs(row.risk_is - row.risk_mcmc));
                break;
            }
    }
    for (std::size_t b = 0; b < bins.size(); ++b)
        if (bins[b].count > 0) bins[b].mean_abs_dev = sums[b].value() / static_cast<double>(bins[b].count);
    return bins;
}

struct TimingSummary {
    double min_ms = 0.0;
    double q25_ms = 0.0;
    double q75_ms = 0.0;
    double max_ms = 0.0;
    std::size_t count = 0;
};

inline TimingSummary summarize_timings(std::vector<double> times) {
    require_valid(!times.empty(), "timing summary: empty sample");
    TimingSummary s;
    s.count = times.size();
    std::sort(times.begin(), times.end());
    s.min_ms = times.front();
    s.max_ms = times.back();
    s.q25_ms = quantile_nearest_rank(times, 0.25);
    s.q75_ms = quantile_nearest_rank(times, 0.75);
    return s;
}

// Per-method min/IQR/max of per-patient wall times. Falls back to the
// rows' elapsed_ms column (the IS timing) when no side timings exist,
// e.g. after reloading a saved report.
inline std::map<std::string, TimingSummary> timing_report(const AgreementReport& report) {
    std::map<std::string, TimingSummary> out;
    for (const auto& [method, times] : report.method_elapsed_ms)
        if (!times.empty()) out[method] = summarize_timings(times);
    if (out.empty()) {
        std::vector<double> is_times;
        for (const auto& row : report.rows)
            if (!std::isnan(row.elapsed_ms)) is_times.push_back(row.elapsed_ms);
        if (!is_times.empty()) out["is"] = summarize_timings(std::move(is_times));
    }
    return out;
}

// ---- the experiment ----

struct IsSettings {
    bool dynamic = true;
    std::size_t initial_m = 50000;
    double ess_threshold = 1000.0;
    double growth_factor = 10.0;
    std::size_t max_m = 0;          // 0 = cache capacity
    std::size_t fixed_budget = 0;   // fixed mode: 0 = full cache
    std::uint64_t m_per_draw = 10;  // cache density
};

// Base fit plus holdout targets; reusable across method configurations so
// several IS variants can be compared against the same references.
struct ExperimentContext {
    std::vector<PatientRecord> base;
    std::vector<PatientRecord> holdouts;  // observed_class stripped
    ModelConfig config;
    FitSettings mcmc;
    PosteriorSample store;
    ProposalCache cache;
    std::vector<double> refit_risks;
    std::vector<double> refit_elapsed_ms;
    std::uint64_t seed = 0;
};

namespace detail {

template <typename Fn>
inline void parallel_over(std::size_t n, int threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::size_t groups = std::min<std::size_t>(threads, n);
    std::vector<std::future<void>> futures;
    futures.reserve(groups);
    for (std::size_t g = 0; g < groups; ++g)
        futures.push_back(std::async(std::launch::async, [&, g] {
            for (std::size_t i = g; i < n; i += groups) fn(i);
        }));
    for (auto& f : futures) f.get();
}

inline double refit_risk(const std::vector<PatientRecord>& base, const PatientRecord& holdout,
                         const ModelConfig& config, FitSettings settings) {
    std::vector<PatientRecord> cohort = base;
    cohort.push_back(holdout);
    PosteriorSample refit = fit(std::move(cohort), config, settings);
    auto idx = refit.find_patient(holdout.id);
    require_valid(idx.has_value(), "refit: holdout vanished from cohort");
    KahanSum s;
    for (std::size_t j = 0; j < refit.num_draws(); ++j)
        s.add(static_cast<double>(refit.latents[*idx].eta[j]));
    return s.value() / static_cast<double>(refit.num_draws());
}

}  // namespace detail

// Splits off the last `holdout_count` patients (id order) as prediction
// targets, fits the base cohort, pre-generates the proposal cache, and
// computes per-holdout reference risks from MCMC refits of base + that
// patient. Holdout labels are stripped so every estimator conditions on
// the same data.
inline ExperimentContext prepare_experiment(std::vector<PatientRecord> cohort,
                                            std::size_t holdout_count, const ModelConfig& config,
                                            const FitSettings& mcmc, std::uint64_t m_per_draw,
                                            std::uint64_t seed, int threads = 1) {
    require_valid(holdout_count >= 1 && holdout_count < cohort.size(),
                  "prepare_experiment: holdout_count must be >= 1 and < cohort size");
    for (auto& r : cohort) r.validate();
    std::sort(cohort.begin(), cohort.end(),
              [](const PatientRecord& a, const PatientRecord& b) { return a.id < b.id; });

    ExperimentContext ctx;
    ctx.config = config;
    ctx.mcmc = mcmc;
    ctx.seed = seed;
    ctx.base.assign(cohort.begin(), cohort.end() - static_cast<std::ptrdiff_t>(holdout_count));
    ctx.holdouts.assign(cohort.end() - static_cast<std::ptrdiff_t>(holdout_count), cohort.end());
    for (auto& h : ctx.holdouts) h.observed_class.reset();

    FitSettings base_fit = mcmc;
    base_fit.seed = mix_seed(seed, 0x62617365ULL);
    ctx.store = fit(ctx.base, config, base_fit);
    ctx.cache = generate_proposals(ctx.store, m_per_draw, mix_seed(seed, 0x63616368ULL));

    ctx.refit_risks.resize(ctx.holdouts.size());
    ctx.refit_elapsed_ms.resize(ctx.holdouts.size());
    detail::parallel_over(ctx.holdouts.size(), threads, [&](std::size_t h) {
        FitSettings refit_settings = mcmc;
        refit_settings.seed = mix_seed(seed, 0x72656669ULL, h);
        auto started = std::chrono::steady_clock::now();
        ctx.refit_risks[h] = detail::refit_risk(ctx.base, ctx.holdouts[h], config, refit_settings);
        ctx.refit_elapsed_ms[h] =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    });
    return ctx;
}

// Evaluates the fast methods against the prepared references.
inline AgreementReport run_agreement(const ExperimentContext& ctx, const IsSettings& is_settings,
                                     const std::set<std::string>& methods, int threads = 1) {
    for (const auto& m : methods)
        require_valid(m == "is" || m == "rs" || m == "wu" || m == "rbis",
                      "run_agreement: unknown method " + m);
    AgreementReport report;
    report.rows.resize(ctx.holdouts.size());
    std::vector<double> is_times(ctx.holdouts.size()), rs_times(ctx.holdouts.size()),
        wu_times(ctx.holdouts.size()), rbis_times(ctx.holdouts.size());

    detail::parallel_over(ctx.holdouts.size(), threads, [&](std::size_t h) {
        const auto& record = ctx.holdouts[h];
        ReportRow row;
        row.id = record.id;
        row.risk_mcmc = ctx.refit_risks[h];

        if (methods.count("is")) {
            auto started = std::chrono::steady_clock::now();
            try {
                WeightedProposalSet set;
                if (is_settings.dynamic) {
                    DynamicSettings opts;
                    opts.initial_m = is_settings.initial_m;
                    opts.ess_threshold = is_settings.ess_threshold;
                    opts.growth_factor = is_settings.growth_factor;
                    opts.max_m = is_settings.max_m;
                    opts.seed = mix_seed(ctx.seed, 0x69735f64ULL, h);
                    set = dynamic_update(record, ctx.store, ctx.cache, opts);
                } else {
                    std::size_t budget = is_settings.fixed_budget == 0 ? ctx.cache.size()
                                                                       : is_settings.fixed_budget;
                    set = weigh_new_patient_fixed(ctx.cache, ctx.store, record, budget);
                }
                row.risk_is = risk_estimate(set);
                row.ess = set.ess;
                row.proposals_used = set.size();
                row.generations = set.generation;
                row.capped = set.capped;
                row.degenerate = set.degenerate;
                row.is_mc_se = risk_mc_se(set);
            } catch (const Error& e) {
                // degenerate weights become a flagged row, not a failed run
                if (e.code() != ErrorCode::degenerate_weights) throw;
                row.degenerate = true;
                row.capped = true;
            }
            row.elapsed_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
            is_times[h] = row.elapsed_ms;
        }
        if (methods.count("rs")) {
            auto started = std::chrono::steady_clock::now();
            try {
                auto rs = rejection_sample(ctx.cache, ctx.store, record,
                                           mix_seed(ctx.seed, 0x72735f68ULL, h));
                row.risk_rs = rs.risk;
                row.rs_acceptance_rate = rs.acceptance_rate;
                row.rs_expected_acceptance = rs.expected_acceptance_rate;
                row.rs_accepted = rs.accepted.size();
            } catch (const Error& e) {
                if (e.code() != ErrorCode::degenerate_weights) throw;
                row.degenerate = true;
            }
            rs_times[h] =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        }
        if (methods.count("wu")) {
            auto started = std::chrono::steady_clock::now();
            row.risk_wu = conditional_posterior_estimate(ctx.store, record);
            wu_times[h] =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        }
        if (methods.count("rbis")) {
            auto started = std::chrono::steady_clock::now();
            row.risk_rbis = rao_blackwell_is_estimate(ctx.store, record);
            rbis_times[h] =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        }
        report.rows[h] = std::move(row);
    });

    if (methods.count("is")) report.method_elapsed_ms["is"] = std::move(is_times);
    if (methods.count("rs")) report.method_elapsed_ms["rs"] = std::move(rs_times);
    if (methods.count("wu")) report.method_elapsed_ms["wu"] = std::move(wu_times);
    if (methods.count("rbis")) report.method_elapsed_ms["rbis"] = std::move(rbis_times);
    report.method_elapsed_ms["refit"] = ctx.refit_elapsed_ms;
    report.aggregates = compute_aggregates(report.rows);

    std::string method_list;
    for (const auto& m : methods) method_list += (method_list.empty() ? "" : ",") + m;
    report.config_echo = ojson{{"holdouts", ctx.holdouts.size()},
                               {"seed", ctx.seed},
                               {"methods", method_list},
                               {"is",
                                ojson{{"mode", is_settings.dynamic ? "dynamic" : "fixed"},
                                      {"initial", is_settings.initial_m},
                                      {"ess_threshold", is_settings.ess_threshold},
                                      {"growth", is_settings.growth_factor},
                                      {"max", is_settings.max_m},
                                      {"fixed_budget", is_settings.fixed_budget},
                                      {"per_draw", is_settings.m_per_draw}}},
                               {"mcmc",
                                ojson{{"chains", ctx.mcmc.chains},
                                      {"iters", ctx.mcmc.iters},
                                      {"burn_in", ctx.mcmc.burn_in},
                                      {"thin", ctx.mcmc.thin}}}};
    return report;
}

// One-call form: base fit, references, and one method configuration.
inline AgreementReport agreement_experiment(std::vector<PatientRecord> cohort, std::size_t holdout_count,
                                            const ModelConfig& config, const FitSettings& mcmc,
                                            const IsSettings& is_settings,
                                            const std::set<std::string>& methods, std::uint64_t seed,
                                            int threads = 1) {
    auto ctx = prepare_experiment(std::move(cohort), holdout_count, config, mcmc,
                                  is_settings.m_per_draw, seed, threads);
    return run_agreement(ctx, is_settings, methods, threads);
}

// ---- report serialization ----

inline constexpr const char* kReportHeader =
    "id,risk_mcmc,risk_is,risk_rs,risk_wu,risk_rbis,ess,proposals_used,elapsed_ms";

namespace detail {

inline std::string csv_field(double x) { return std::isnan(x) ? std::string() : format_double(x); }

inline double csv_parse_field(const std::string& s) {
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    return std::stod(s);
}

}  // namespace detail

// Full rows, including the measured elapsed_ms column.
inline std::string report_rows_csv(const std::vector<ReportRow>& rows) {
    std::string out = std::string(kReportHeader) + "\n";
    for (const auto& r : rows) {
        out += r.id;
        out += ',';
        out += detail::csv_field(r.risk_mcmc);
        out += ',';
        out += detail::csv_field(r.risk_is);
        out += ',';
        out += detail::csv_field(r.risk_rs);
        out += ',';
        out += detail::csv_field(r.risk_wu);
        out += ',';
        out += detail::csv_field(r.risk_rbis);
        out += ',';
        out += detail::csv_field(r.ess);
        out += ',';
        out += std::to_string(r.proposals_used);
        out += ',';
        out += detail::csv_field(r.elapsed_ms);
        out += '\n';
    }
    return out;
}

// Deterministic variant: identical except the wall-time column is left
// blank, so seeded reruns are byte-identical.
inline std::string report_rows_stable_csv(std::vector<ReportRow> rows) {
    for (auto& r : rows) r.elapsed_ms = std::numeric_limits<double>::quiet_NaN();
    return report_rows_csv(rows);
}

inline std::vector<ReportRow> parse_report_csv(const std::string& text) {
    std::vector<ReportRow> rows;
    std::istringstream in(text);
    std::string line;
    require_valid(std::getline(in, line) && line == kReportHeader, "report CSV: unexpected header");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::string field;
        std::istringstream ls(line);
        while (std::getline(ls, field, ',')) fields.push_back(field);
        while (fields.size() < 9) fields.emplace_back();
        require_valid(fields.size() == 9, "report CSV: wrong column count");
        ReportRow r;
        r.id = fields[0];
        r.risk_mcmc = detail::csv_parse_field(fields[1]);
        r.risk_is = detail::csv_parse_field(fields[2]);
        r.risk_rs = detail::csv_parse_field(fields[3]);
        r.risk_wu = detail::csv_parse_field(fields[4]);
        r.risk_rbis = detail::csv_parse_field(fields[5]);
        r.ess = detail::csv_parse_field(fields[6]);
        r.proposals_used = fields[7].empty() ? 0 : static_cast<std::size_t>(std::stoull(fields[7]));
        r.elapsed_ms = detail::csv_parse_field(fields[8]);
        rows.push_back(std::move(r));
    }
    return rows;
}

inline ojson aggregates_json(const AgreementReport& report) {
    ojson out;
    out["n_holdouts"] = report.rows.size();
    ojson methods = ojson::object();
    for (const auto& [name, agg] : report.aggregates) {
        methods[name] = ojson{{"rmsd", agg.rmsd_vs_mcmc},
                              {"max_abs_diff", agg.max_abs_diff},
                              {"q99_abs_diff", agg.q99_abs_diff}};
    }
    out["methods"] = std::move(methods);
    out["config"] = report.config_echo;
    return out;
}

inline ojson timing_json(const AgreementReport& report) {
    ojson out = ojson::object();
    for (const auto& [name, summary] : timing_report(report)) {
        out[name] = ojson{{"min_ms", summary.min_ms},
                          {"q25_ms", summary.q25_ms},
                          {"q75_ms", summary.q75_ms},
                          {"max_ms", summary.max_ms},
                          {"count", summary.count}};
    }
    return out;
}

}  // namespace lcis
