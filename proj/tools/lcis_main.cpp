// lcis: simulate cohorts, fit the joint posterior, and serve fast
// importance-sampling updates for new patients and new measurements.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lcis/cohort.hpp"
#include "lcis/estimators.hpp"
#include "lcis/eval.hpp"
#include "lcis/importance.hpp"
#include "lcis/json_io.hpp"
#include "lcis/manifest.hpp"
#include "lcis/mcmc.hpp"
#include "lcis/model.hpp"
#include "lcis/store.hpp"
#include "lcis/version.hpp"

namespace fs = std::filesystem;
using namespace lcis;

namespace {

std::string g_command_line;

void emit_error(const char* code, const std::string& message) {
    ojson err;
    err["error"] = code;
    err["message"] = message;
    std::cerr << err.dump() << std::endl;
}

void require_new_output(const std::string& path) {
    require_valid(!fs::exists(path), "output already exists (outputs are new files): " + path);
}

PatientRecord load_patient_file(const std::string& path) {
    return record_from_json(parse_json(read_text_file(path), "PatientRecord"));
}

void record_artifact(const fs::path& workspace, ManifestEntry entry) {
    WorkspaceLock lock(workspace);
    Manifest manifest = Manifest::load(workspace, /*verify_digests=*/true);
    entry.created_at = iso_timestamp_utc();
    entry.tool_version = kVersion;
    entry.command = g_command_line;
    manifest.append(std::move(entry));
    manifest.save();
}

ojson result_json(const WeightedProposalSet& set, double elapsed_ms) {
    ojson out;
    out["risk"] = risk_estimate(set);
    out["ess"] = set.ess;
    out["proposals_used"] = set.size();
    out["generations"] = set.generation;
    out["capped"] = set.capped;
    out["degenerate"] = set.degenerate;
    out["elapsed_ms"] = elapsed_ms;
    out["mc_se"] = risk_mc_se(set);
    if (set.capped) out["warning"] = "CAPPED_ESS";
    return out;
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
    }
};

// ---- subcommand implementations ----

int cmd_simulate(const std::string& config_path, std::uint64_t seed, const std::string& out_cohort,
                 const std::string& out_truth) {
    SimConfig config = sim_config_from_json(parse_json(read_text_file(config_path), "SimConfig"));
    config.seed = seed;  // the CLI seed is authoritative
    require_new_output(out_cohort);
    require_new_output(out_truth);

    auto [records, truth] = simulate_cohort(config);
    write_cohort_jsonl(out_cohort, records);
    write_truth_jsonl(out_truth, truth);

    fs::path workspace = fs::path(out_cohort).parent_path();
    if (workspace.empty()) workspace = ".";
    ManifestEntry cohort_entry;
    cohort_entry.path = fs::path(out_cohort).filename().string();
    cohort_entry.kind = "cohort";
    cohort_entry.digest = file_digest(out_cohort);
    cohort_entry.seeds = ojson{{"seed", seed}};
    cohort_entry.config = to_json(config);
    record_artifact(workspace, cohort_entry);

    ManifestEntry truth_entry;
    truth_entry.path = fs::path(out_truth).filename().string();
    truth_entry.kind = "truth";
    truth_entry.digest = file_digest(out_truth);
    truth_entry.seeds = ojson{{"seed", seed}};
    truth_entry.config = to_json(config);
    record_artifact(workspace, truth_entry);

    ojson out;
    out["patients"] = records.size();
    out["cohort"] = out_cohort;
    out["truth"] = out_truth;
    out["cohort_digest"] = cohort_entry.digest;
    std::cout << out.dump() << std::endl;
    return 0;
}

int cmd_fit(const std::string& cohort_path, const std::string& config_path, int chains, int iters,
            int burn_in, int thin, std::uint64_t seed, const std::string& out) {
    auto cohort = read_cohort_jsonl(cohort_path);
    ModelConfig config = model_config_from_json(parse_json(read_text_file(config_path), "ModelConfig"));
    require_new_output(out);

    FitSettings settings{chains, iters, burn_in, thin, seed};
    Timer timer;
    PosteriorSample store = fit(cohort, config, settings, kVersion);
    std::string digest = write_store(out, store);

    fs::path workspace = fs::path(out).parent_path();
    if (workspace.empty()) workspace = ".";
    ManifestEntry entry;
    entry.path = fs::path(out).filename().string();
    entry.kind = "store";
    entry.digest = digest;
    entry.seeds = ojson{{"seed", seed}};
    entry.inputs = ojson{{"cohort", store.meta.data_digest}};
    entry.config = ojson{{"model", to_json(config)},
                         {"chains", chains},
                         {"iters", iters},
                         {"burn_in", burn_in},
                         {"thin", thin}};
    record_artifact(workspace, entry);

    ojson out_json;
    out_json["store"] = out;
    out_json["store_digest"] = digest;
    out_json["draws"] = store.num_draws();
    out_json["patients"] = store.num_patients();
    out_json["elapsed_ms"] = timer.ms();
    std::cout << out_json.dump() << std::endl;
    return 0;
}

int cmd_cache_proposals(const std::string& store_path, std::uint64_t per_draw, std::uint64_t seed,
                        std::string out) {
    if (out.empty()) out = store_path + ".cache";
    require_new_output(out);
    PosteriorSample store = read_store(store_path);
    Timer timer;
    ProposalCache cache = generate_proposals(store, per_draw, seed);
    // Link to the on-disk artifact: the serialized store must round-trip
    // bit-exactly, so its file digest equals the content digest.
    std::string disk_digest = file_digest(store_path);
    require(disk_digest == cache.store_digest, ErrorCode::io,
            "store file does not round-trip; refusing to link cache");
    write_cache(out, cache);

    fs::path workspace = fs::path(out).parent_path();
    if (workspace.empty()) workspace = ".";
    ManifestEntry entry;
    entry.path = fs::path(out).filename().string();
    entry.kind = "cache";
    entry.digest = file_digest(out);
    entry.seeds = ojson{{"seed", seed}};
    entry.inputs = ojson{{"store", cache.store_digest}};
    entry.config = ojson{{"per_draw", per_draw}};
    record_artifact(workspace, entry);

    ojson out_json;
    out_json["cache"] = out;
    out_json["candidates"] = cache.size();
    out_json["per_draw"] = per_draw;
    out_json["elapsed_ms"] = timer.ms();
    std::cout << out_json.dump() << std::endl;
    return 0;
}

void check_cache_fresh(const std::string& store_path, const ProposalCache& cache) {
    std::string digest = file_digest(store_path);
    require(digest == cache.store_digest, ErrorCode::stale_cache,
            "proposal cache was generated for a different store (store digest " + digest
                + ", cache expects " + cache.store_digest + ")");
}

int cmd_predict_new(const std::string& store_path, const std::string& cache_path,
                    const std::string& patient_path, bool dynamic, double ess_threshold,
                    std::uint64_t initial, std::uint64_t max_m, double growth, bool seed_given,
                    std::uint64_t seed) {
    ProposalCache cache = read_cache(cache_path);
    check_cache_fresh(store_path, cache);
    PosteriorSample store = read_store(store_path);
    PatientRecord record = load_patient_file(patient_path);

    Timer timer;
    WeightedProposalSet set;
    if (dynamic) {
        require_valid(seed_given, "--seed is required with --dynamic (proposal expansion is stochastic)");
        DynamicSettings opts;
        opts.initial_m = initial;
        opts.ess_threshold = ess_threshold;
        opts.growth_factor = growth;
        opts.max_m = max_m;
        opts.seed = seed;
        set = dynamic_update(record, store, cache, opts);
    } else {
        set = weigh_new_patient(cache, store, record);
    }
    std::cout << result_json(set, timer.ms()).dump() << std::endl;
    return 0;
}

int cmd_update_patient(const std::string& store_path, const std::string& id,
                       const std::string& new_obs_path, bool dynamic, double ess_threshold,
                       std::uint64_t initial, std::uint64_t max_m, double growth) {
    PosteriorSample store = read_store(store_path);
    ObservationBlock block =
        observation_block_from_json(parse_json(read_text_file(new_obs_path), "ObservationBlock"));

    Timer timer;
    WeightedProposalSet set;
    if (dynamic) {
        DynamicSettings opts;
        opts.initial_m = initial;
        opts.ess_threshold = ess_threshold;
        opts.growth_factor = growth;
        opts.max_m = max_m;
        set = dynamic_update(id, block, store, opts);
    } else {
        set = weigh_new_observations(store, id, block);
    }
    std::cout << result_json(set, timer.ms()).dump() << std::endl;
    return 0;
}

int cmd_oracle(const std::string& store_path, const std::string& patient_path,
               const std::string& method, const std::string& cache_path, bool seed_given,
               std::uint64_t seed, int grid_points, double grid_halfwidth, std::uint64_t theta_stride) {
    PosteriorSample store = read_store(store_path);
    PatientRecord record = load_patient_file(patient_path);

    Timer timer;
    ojson out;
    out["method"] = method;
    if (method == "rs") {
        require_valid(!cache_path.empty(), "oracle --method rs requires --cache");
        require_valid(seed_given, "--seed is required for --method rs (accept decisions are stochastic)");
        ProposalCache cache = read_cache(cache_path);
        check_cache_fresh(store_path, cache);
        auto rs = rejection_sample(cache, store, record, seed);
        out["risk"] = rs.risk;
        out["accepted"] = rs.accepted.size();
        out["proposals"] = rs.n_proposals;
        out["acceptance_rate"] = rs.acceptance_rate;
        out["expected_acceptance_rate"] = rs.expected_acceptance_rate;
    } else if (method == "wu") {
        out["risk"] = conditional_posterior_estimate(store, record);
    } else if (method == "rbis") {
        out["risk"] = rao_blackwell_is_estimate(store, record);
    } else if (method == "grid") {
        GridSpec spec;
        spec.points = grid_points;
        spec.half_width_sd = grid_halfwidth;
        spec.theta_stride = theta_stride;
        out["risk"] = grid_oracle(record, store, spec);
        out["grid_points"] = spec.points;
        out["half_width_sd"] = spec.half_width_sd;
        out["theta_stride"] = spec.theta_stride;
    } else {
        fail(ErrorCode::validation, "oracle: unknown method " + method);
    }
    out["elapsed_ms"] = timer.ms();
    std::cout << out.dump() << std::endl;
    return 0;
}

int cmd_evaluate(const std::string& cohort_path, std::size_t holdouts, const std::string& methods_csv,
                 const std::string& out_dir, std::uint64_t seed, const std::string& config_path,
                 int chains, int iters, int burn_in, int thin, std::uint64_t per_draw, bool fixed,
                 std::uint64_t fixed_budget, std::uint64_t initial, double ess_threshold, double growth,
                 std::uint64_t max_m, int threads) {
    auto cohort = read_cohort_jsonl(cohort_path);
    ModelConfig config;
    if (!config_path.empty())
        config = model_config_from_json(parse_json(read_text_file(config_path), "ModelConfig"));

    std::set<std::string> methods;
    {
        std::istringstream ss(methods_csv);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (!item.empty()) methods.insert(item);
        }
    }
    require_valid(!methods.empty(), "evaluate: --methods must name at least one method");

    fs::create_directories(out_dir);
    fs::path dir(out_dir);
    require_new_output((dir / "report.csv").string());

    FitSettings mcmc{chains, iters, burn_in, thin, seed};
    IsSettings is_settings;
    is_settings.dynamic = !fixed;
    is_settings.initial_m = initial;
    is_settings.ess_threshold = ess_threshold;
    is_settings.growth_factor = growth;
    is_settings.max_m = max_m;
    is_settings.fixed_budget = fixed_budget;
    is_settings.m_per_draw = per_draw;

    Timer timer;
    AgreementReport report =
        agreement_experiment(cohort, holdouts, config, mcmc, is_settings, methods, seed, threads);

    ojson echo;
    echo["cohort_digest"] = cohort_digest(cohort);
    echo["holdouts"] = holdouts;
    echo["methods"] = methods_csv;
    echo["seed"] = seed;
    echo["model"] = to_json(config);
    echo["mcmc"] = ojson{{"chains", chains}, {"iters", iters}, {"burn_in", burn_in}, {"thin", thin}};
    echo["is"] = ojson{{"mode", fixed ? "fixed" : "dynamic"},
                       {"per_draw", per_draw},
                       {"fixed_budget", fixed_budget},
                       {"initial", initial},
                       {"ess_threshold", ess_threshold},
                       {"growth", growth},
                       {"max", max_m}};
    report.config_echo = echo;

    std::string rows_csv = report_rows_csv(report.rows);
    std::string stable_csv = report_rows_stable_csv(report.rows);
    write_text_file((dir / "report.csv").string(), rows_csv);
    write_text_file((dir / "report.stable.csv").string(), stable_csv);
    write_text_file((dir / "aggregates.json").string(), aggregates_json(report).dump(2) + "\n");
    write_text_file((dir / "timing.json").string(), timing_json(report).dump(2) + "\n");

    for (const char* name : {"report.csv", "report.stable.csv", "aggregates.json"}) {
        ManifestEntry entry;
        entry.path = name;
        entry.kind = "report";
        entry.digest = file_digest((dir / name).string());
        entry.seeds = ojson{{"seed", seed}};
        entry.inputs = ojson{{"cohort", echo["cohort_digest"]}};
        entry.config = echo;
        record_artifact(dir, entry);
    }

    ojson out;
    out["out_dir"] = out_dir;
    out["rows"] = report.rows.size();
    out["aggregates"] = aggregates_json(report)["methods"];
    out["elapsed_ms"] = timer.ms();
    std::cout << out.dump() << std::endl;
    return 0;
}

int cmd_summarize(const std::string& store_path, bool as_json) {
    PosteriorSample store = read_store(store_path);
    auto rows = summarize(store);
    if (as_json) {
        ojson out = ojson::array();
        for (const auto& r : rows) {
            ojson jr;
            jr["name"] = r.name;
            jr["mean"] = r.mean;
            jr["sd"] = r.sd;
            jr["q025"] = r.q025;
            jr["q500"] = r.q500;
            jr["q975"] = r.q975;
            if (std::isnan(r.psr))
                jr["psr"] = nullptr;
            else
                jr["psr"] = r.psr;
            out.push_back(std::move(jr));
        }
        std::cout << out.dump(2) << std::endl;
        return 0;
    }
    std::printf("%-12s %12s %12s %12s %12s %12s %8s\n", "parameter", "mean", "sd", "q2.5%", "median",
                "q97.5%", "psr");
    for (const auto& r : rows) {
        if (std::isnan(r.psr))
            std::printf("%-12s %12.5f %12.5f %12.5f %12.5f %12.5f %8s\n", r.name.c_str(), r.mean, r.sd,
                        r.q025, r.q500, r.q975, "n/a");
        else
            std::printf("%-12s %12.5f %12.5f %12.5f %12.5f %12.5f %8.4f\n", r.name.c_str(), r.mean,
                        r.sd, r.q025, r.q500, r.q975, r.psr);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    std::ostringstream cmdline;
    for (int i = 0; i < argc; ++i) cmdline << (i ? " " : "") << argv[i];
    g_command_line = cmdline.str();

    CLI::App app{"hierarchical latent-class model with fast importance-sampling posterior updates"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    // simulate
    std::string sim_config, sim_out_cohort, sim_out_truth;
    std::uint64_t sim_seed = 0;
    auto* simulate_cmd = app.add_subcommand("simulate", "generate a synthetic cohort from the model");
    simulate_cmd->add_option("--config", sim_config, "SimConfig JSON file")->required();
    simulate_cmd->add_option("--seed", sim_seed, "rng seed")->required();
    simulate_cmd->add_option("--out-cohort", sim_out_cohort, "output cohort JSONL")->required();
    simulate_cmd->add_option("--out-truth", sim_out_truth, "output truth JSONL")->required();

    // fit
    std::string fit_cohort, fit_config, fit_out;
    int fit_chains = 4, fit_iters = 5000, fit_burn_in = 1000, fit_thin = 1;
    std::uint64_t fit_seed = 0;
    auto* fit_cmd = app.add_subcommand("fit", "draw from the joint posterior by MCMC");
    fit_cmd->add_option("--cohort", fit_cohort, "cohort JSONL")->required();
    fit_cmd->add_option("--config", fit_config, "ModelConfig JSON")->required();
    fit_cmd->add_option("--chains", fit_chains, "independent chains");
    fit_cmd->add_option("--iters", fit_iters, "kept draws per chain");
    fit_cmd->add_option("--burn-in", fit_burn_in, "burn-in iterations per chain");
    fit_cmd->add_option("--thin", fit_thin, "thinning interval");
    fit_cmd->add_option("--seed", fit_seed, "rng seed")->required();
    fit_cmd->add_option("--out", fit_out, "output store path")->required();

    // cache-proposals
    std::string cache_store, cache_out;
    std::uint64_t cache_per_draw = 10, cache_seed = 0;
    auto* cache_cmd = app.add_subcommand("cache-proposals", "pre-generate new-patient proposals");
    cache_cmd->add_option("--store", cache_store, "posterior store")->required();
    cache_cmd->add_option("--per-draw", cache_per_draw, "candidates per posterior draw");
    cache_cmd->add_option("--seed", cache_seed, "rng seed")->required();
    cache_cmd->add_option("--out", cache_out, "output cache path (default: STORE.cache)");

    // predict-new
    std::string pn_store, pn_cache, pn_patient;
    bool pn_dynamic = false;
    double pn_ess_threshold = 1000.0, pn_growth = 10.0;
    std::uint64_t pn_initial = 50000, pn_max = 0, pn_seed = 0;
    auto* predict_cmd = app.add_subcommand("predict-new", "risk estimate for a new patient");
    predict_cmd->add_option("--store", pn_store, "posterior store")->required();
    predict_cmd->add_option("--cache", pn_cache, "proposal cache")->required();
    predict_cmd->add_option("--patient", pn_patient, "patient record JSON")->required();
    predict_cmd->add_flag("--dynamic", pn_dynamic, "expand proposals until the ess threshold is met");
    predict_cmd->add_option("--ess-threshold", pn_ess_threshold, "dynamic ess threshold");
    predict_cmd->add_option("--initial", pn_initial, "dynamic initial proposal count");
    predict_cmd->add_option("--max", pn_max, "dynamic proposal ceiling (0 = cache size)");
    predict_cmd->add_option("--growth", pn_growth, "dynamic growth factor");
    auto* pn_seed_opt = predict_cmd->add_option("--seed", pn_seed, "rng seed (required with --dynamic)");

    // update-patient
    std::string up_store, up_id, up_obs;
    bool up_dynamic = false;
    double up_ess_threshold = 1000.0, up_growth = 10.0;
    std::uint64_t up_initial = 50000, up_max = 0;
    auto* update_cmd = app.add_subcommand("update-patient", "reweigh an existing patient on new data");
    update_cmd->add_option("--store", up_store, "posterior store")->required();
    update_cmd->add_option("--id", up_id, "patient id")->required();
    update_cmd->add_option("--new-obs", up_obs, "new observations JSON")->required();
    update_cmd->add_flag("--dynamic", up_dynamic, "start from a slice of the store and expand");
    update_cmd->add_option("--ess-threshold", up_ess_threshold, "dynamic ess threshold");
    update_cmd->add_option("--initial", up_initial, "dynamic initial proposal count");
    update_cmd->add_option("--max", up_max, "dynamic proposal ceiling (0 = store draws)");
    update_cmd->add_option("--growth", up_growth, "dynamic growth factor");

    // oracle
    std::string or_store, or_patient, or_method, or_cache;
    std::uint64_t or_seed = 0, or_stride = 1;
    int or_grid_points = 321;
    double or_grid_halfwidth = 10.0;
    auto* oracle_cmd = app.add_subcommand("oracle", "alternative / brute-force estimators");
    oracle_cmd->add_option("--store", or_store, "posterior store")->required();
    oracle_cmd->add_option("--patient", or_patient, "patient record JSON")->required();
    oracle_cmd->add_option("--method", or_method, "rs | wu | rbis | grid")->required();
    oracle_cmd->add_option("--cache", or_cache, "proposal cache (rs only)");
    auto* or_seed_opt = oracle_cmd->add_option("--seed", or_seed, "rng seed (rs only)");
    oracle_cmd->add_option("--grid-points", or_grid_points, "grid points per dimension");
    oracle_cmd->add_option("--grid-halfwidth", or_grid_halfwidth, "grid half-width in prior sd");
    oracle_cmd->add_option("--theta-stride", or_stride, "use every k-th theta draw");

    // evaluate
    std::string ev_cohort, ev_methods = "is,rs,wu,rbis", ev_out, ev_config;
    std::uint64_t ev_holdouts = 20, ev_seed = 0, ev_per_draw = 10, ev_initial = 50000, ev_max = 0,
                  ev_fixed_budget = 0;
    int ev_chains = 4, ev_iters = 5000, ev_burn_in = 1000, ev_thin = 1, ev_threads = 1;
    double ev_ess_threshold = 1000.0, ev_growth = 10.0;
    bool ev_fixed = false;
    auto* eval_cmd = app.add_subcommand("evaluate", "agreement of fast methods with MCMC refits");
    eval_cmd->add_option("--cohort", ev_cohort, "cohort JSONL")->required();
    eval_cmd->add_option("--holdouts", ev_holdouts, "number of held-out patients");
    eval_cmd->add_option("--methods", ev_methods, "comma list: is,rs,wu,rbis");
    eval_cmd->add_option("--out", ev_out, "output directory")->required();
    eval_cmd->add_option("--seed", ev_seed, "rng seed")->required();
    eval_cmd->add_option("--config", ev_config, "ModelConfig JSON (default priors when omitted)");
    eval_cmd->add_option("--chains", ev_chains, "mcmc chains");
    eval_cmd->add_option("--iters", ev_iters, "kept draws per chain");
    eval_cmd->add_option("--burn-in", ev_burn_in, "burn-in per chain");
    eval_cmd->add_option("--thin", ev_thin, "thinning interval");
    eval_cmd->add_option("--per-draw", ev_per_draw, "cache candidates per draw");
    eval_cmd->add_flag("--fixed", ev_fixed, "fixed proposal budget instead of dynamic expansion");
    eval_cmd->add_option("--fixed-budget", ev_fixed_budget, "fixed budget (0 = full cache)");
    eval_cmd->add_option("--initial", ev_initial, "dynamic initial proposal count");
    eval_cmd->add_option("--ess-threshold", ev_ess_threshold, "dynamic ess threshold");
    eval_cmd->add_option("--growth", ev_growth, "dynamic growth factor");
    eval_cmd->add_option("--max", ev_max, "dynamic proposal ceiling (0 = cache size)");
    eval_cmd->add_option("--threads", ev_threads, "parallel holdout evaluations");

    // summarize
    std::string sum_store;
    bool sum_json = false;
    auto* summarize_cmd = app.add_subcommand("summarize", "posterior summary table with diagnostics");
    summarize_cmd->add_option("--store", sum_store, "posterior store")->required();
    summarize_cmd->add_flag("--json", sum_json, "emit JSON instead of a table");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        emit_error("VALIDATION", e.what());
        return 2;
    }

    try {
        if (simulate_cmd->parsed())
            return cmd_simulate(sim_config, sim_seed, sim_out_cohort, sim_out_truth);
        if (fit_cmd->parsed())
            return cmd_fit(fit_cohort, fit_config, fit_chains, fit_iters, fit_burn_in, fit_thin,
                           fit_seed, fit_out);
        if (cache_cmd->parsed())
            return cmd_cache_proposals(cache_store, cache_per_draw, cache_seed, cache_out);
        if (predict_cmd->parsed())
            return cmd_predict_new(pn_store, pn_cache, pn_patient, pn_dynamic, pn_ess_threshold,
                                   pn_initial, pn_max, pn_growth, pn_seed_opt->count() > 0, pn_seed);
        if (update_cmd->parsed())
            return cmd_update_patient(up_store, up_id, up_obs, up_dynamic, up_ess_threshold,
                                      up_initial, up_max, up_growth);
        if (oracle_cmd->parsed())
            return cmd_oracle(or_store, or_patient, or_method, or_cache, or_seed_opt->count() > 0,
                              or_seed, or_grid_points, or_grid_halfwidth, or_stride);
        if (eval_cmd->parsed())
            return cmd_evaluate(ev_cohort, ev_holdouts, ev_methods, ev_out, ev_seed, ev_config,
                                ev_chains, ev_iters, ev_burn_in, ev_thin, ev_per_draw, ev_fixed,
                                ev_fixed_budget, ev_initial, ev_ess_threshold, ev_growth, ev_max,
                                ev_threads);
        if (summarize_cmd->parsed()) return cmd_summarize(sum_store, sum_json);
    } catch (const Error& e) {
        emit_error(e.code_name(), e.what());
        return 2;
    } catch (const std::exception& e) {
        emit_error("INTERNAL", e.what());
        return 1;
    }
    return 0;
}
