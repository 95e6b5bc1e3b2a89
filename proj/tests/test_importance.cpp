#include <doctest.h>

#include <cmath>
#include <vector>

#include "lcis/cohort.hpp"
#include "lcis/importance.hpp"
#include "lcis/mcmc.hpp"
#include "support/oracles.hpp"

using namespace lcis;

namespace {

struct Fixture {
    std::vector<PatientRecord> records;
    std::vector<PatientLatents> truth;
    PosteriorSample store;
    ProposalCache cache;
    ModelConfig config;
};

Fixture make_fixture(std::uint64_t n_patients = 6, int iters = 100, std::uint64_t m_per_draw = 5,
                     std::uint64_t seed = 13) {
    Fixture f;
    SimConfig c;
    c.n_patients = n_patients;
    c.params.rho = 0.35;
    c.params.beta_age = 0.1;
    c.params.mu = {{{0.0, 0.02}, {0.4, 0.12}}};
    c.params.tau2 = {{{0.09, 0.0025}, {0.09, 0.0025}}};
    c.params.sigma2 = 0.05;
    c.params.gamma0 = -1.5;
    c.params.gamma1 = 1.4;
    c.psa_mean_count = 5;
    c.biopsy_mean_count = 2;
    c.seed = seed;
    auto [records, truth] = simulate_cohort(c);
    f.records = std::move(records);
    f.truth = std::move(truth);
    f.store = fit(f.records, f.config, FitSettings{2, iters, 60, 1, seed});
    f.cache = generate_proposals(f.store, m_per_draw, mix_seed(seed, 1));
    return f;
}

PatientRecord target_patient() {
    PatientRecord r;
    r.id = "new";
    r.age_std = 0.4;
    r.psa = {{0.0, 0.45}, {0.6, 0.52}, {1.2, 0.61}};
    r.biopsies = {{1.0, 1}};
    return r;
}

}  // namespace

TEST_CASE("normalize_log_weights: trivial cases") {
    auto uniform = normalize_log_weights({-3.0, -3.0, -3.0, -3.0});
    for (double w : uniform) CHECK(w == 0.25);

    auto two = normalize_log_weights({0.0, std::log(3.0)});
    CHECK(two[0] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(two[1] == doctest::Approx(0.75).epsilon(1e-14));

    std::vector<double> lw{-1.3, 0.2, 2.7, -0.4};
    auto a = normalize_log_weights(lw);
    for (auto& x : lw) x += 1000.0;
    auto b = normalize_log_weights(lw);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(std::abs(a[i] - b[i]) < 1e-12);
        sum += a[i];
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
}

TEST_CASE("normalize_log_weights: degenerate and invalid input") {
    CHECK_THROWS_AS(normalize_log_weights({kNegInf, kNegInf}), Error);
    try {
        normalize_log_weights({kNegInf});
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::degenerate_weights);
    }
    CHECK_THROWS_AS(normalize_log_weights({0.0, std::nan("")}), Error);
    CHECK_THROWS_AS(normalize_log_weights({}), Error);
    // a single -inf among finite entries is fine and gets zero weight
    auto w = normalize_log_weights({0.0, kNegInf});
    CHECK(w[0] == 1.0);
    CHECK(w[1] == 0.0);
}

TEST_CASE("effective_sample_size: trivial values and bounds") {
    std::vector<double> uniform(1000, 1.0 / 1000.0);
    CHECK(effective_sample_size(uniform) == doctest::Approx(1000.0).epsilon(1e-12));

    std::vector<double> onehot(50, 0.0);
    onehot[7] = 1.0;
    CHECK(effective_sample_size(onehot) == 1.0);

    std::vector<double> half{0.5, 0.5, 0.0, 0.0, 0.0};
    CHECK(effective_sample_size(half) == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("ess stays within [1, M] on fuzzed weight vectors") {
    Rng rng(777);
    for (int trial = 0; trial < 1000; ++trial) {
        std::size_t m = 1 + static_cast<std::size_t>(rng.uniform() * 50);
        std::vector<double> lw(m);
        for (auto& x : lw) x = rng.normal(0.0, 25.0);
        auto w = normalize_log_weights(lw);
        double ess = effective_sample_size(w);
        CHECK(ess >= 1.0);
        CHECK(ess <= static_cast<double>(m));
    }
}

TEST_CASE("weigh_new_patient: empty record gives uniform weights and full ess") {
    Fixture f = make_fixture();
    PatientRecord empty;
    empty.id = "empty";
    empty.age_std = 0.0;
    auto set = weigh_new_patient(f.cache, f.store, empty);
    CHECK(set.size() == f.cache.size());
    CHECK(set.ess == doctest::Approx(static_cast<double>(set.size())).epsilon(1e-12));
    for (double w : set.weights) CHECK(w == 1.0 / static_cast<double>(set.size()));
}

TEST_CASE("weigh_new_patient: the full posterior-to-proposal ratio collapses to the new-patient likelihood") {
    Fixture f = make_fixture(2, 40, 3);  // toy cohort n=2
    PatientRecord target = target_patient();
    auto set = weigh_new_patient(f.cache, f.store, target);

    // canonical patient order inside the store
    std::vector<PatientRecord> sorted = f.records;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });

    const std::size_t J = f.store.num_draws();
    for (std::size_t p = 0; p < set.size(); ++p) {
        std::size_t j = p % J;
        const PopulationParams& theta = f.store.params[j];
        PatientLatents cand = set.candidate(p);

        // numerator: unnormalized log posterior over n+1 patients
        double log_num = log_prior(theta, f.config);
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            PatientLatents b = f.store.latent(i, j);
            log_num += log_obs_likelihood(sorted[i], b, theta) + log_latent_density(b, theta);
        }
        log_num += log_obs_likelihood(target, cand, theta) + log_latent_density(cand, theta);

        // denominator: proposal density g(b_new | theta) times the old posterior
        double log_den = log_latent_density(cand, theta) + log_prior(theta, f.config);
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            PatientLatents b = f.store.latent(i, j);
            log_den += log_obs_likelihood(sorted[i], b, theta) + log_latent_density(b, theta);
        }

        double full_ratio = log_num - log_den;
        CHECK(std::abs(full_ratio - set.log_weights[p]) < 1e-10);
        CHECK(std::abs(full_ratio - log_obs_likelihood(target, cand, theta)) < 1e-10);
    }
}

TEST_CASE("weigh_new_patient: impossible data raises a degenerate-weights error") {
    Fixture f = make_fixture();
    PatientRecord impossible;
    impossible.id = "imp";
    impossible.age_std = 0.0;
    impossible.psa = {{0.0, 1e160}};
    try {
        weigh_new_patient(f.cache, f.store, impossible);
        FAIL("expected degenerate weights");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::degenerate_weights);
    }
}

TEST_CASE("weigh_new_observations: empty block is an exact no-op") {
    Fixture f = make_fixture();
    auto set = weigh_new_observations(f.store, f.store.patient_ids[0], ObservationBlock{});
    CHECK(set.size() == f.store.num_draws());
    CHECK(set.ess == doctest::Approx(static_cast<double>(f.store.num_draws())).epsilon(1e-12));
    for (double w : set.weights) CHECK(w == 1.0 / static_cast<double>(f.store.num_draws()));

    // posterior functionals are bitwise unchanged against uniform averaging
    WeightedProposalSet uniform = set;
    double risk_update = risk_estimate(set);
    double risk_store = risk_estimate(uniform);
    CHECK(risk_update == risk_store);

    double mean_u0 = posterior_functional(
        set, f.store, [](const PatientLatents& l, const PopulationParams&) { return l.u[0]; });
    KahanSum expect;
    for (std::size_t j = 0; j < f.store.num_draws(); ++j)
        expect.add(f.store.latents[0].u0[j] / static_cast<double>(f.store.num_draws()));
    CHECK(mean_u0 == doctest::Approx(expect.value()).epsilon(1e-13));
}

TEST_CASE("weigh_new_observations: single biopsy weight and the full-record ratio") {
    Fixture f = make_fixture();
    std::size_t k = 1;
    std::string id = f.store.patient_ids[k];
    ObservationBlock block;
    block.biopsies = {{50.0, 1}};
    auto set = weigh_new_observations(f.store, id, block);

    // reconstruct the extended record for this patient
    std::vector<PatientRecord> sorted = f.records;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });
    PatientRecord original = sorted[k];
    PatientRecord extended = original;
    extended.biopsies.push_back({50.0, 1});

    for (std::size_t j = 0; j < f.store.num_draws(); ++j) {
        const PopulationParams& theta = f.store.params[j];
        PatientLatents b = f.store.latent(k, j);
        // simplified weight: logistic of the class logit
        double expected = std::log(logistic(theta.gamma0 + theta.gamma1 * b.eta));
        CHECK(std::abs(set.log_weights[j] - expected) < 1e-12);
        // full ratio over the complete record
        double full = log_obs_likelihood(extended, b, theta) - log_obs_likelihood(original, b, theta);
        CHECK(std::abs(set.log_weights[j] - full) < 1e-10);
    }
}

TEST_CASE("weigh_new_observations: unknown ids and stale times rejected") {
    Fixture f = make_fixture();
    CHECK_THROWS_AS(weigh_new_observations(f.store, "nobody", ObservationBlock{}), Error);

    ObservationBlock early;
    early.psa = {{0.0, 0.5}};  // not after the existing series
    CHECK_THROWS_AS(weigh_new_observations(f.store, f.store.patient_ids[0], early), Error);

    ObservationBlock early_biopsy;
    early_biopsy.biopsies = {{0.5, 0}};
    CHECK_THROWS_AS(weigh_new_observations(f.store, f.store.patient_ids[0], early_biopsy), Error);
}

TEST_CASE("posterior_functional: constants and indicator averages") {
    Fixture f = make_fixture();
    PatientRecord empty;
    empty.id = "e";
    empty.age_std = 0.0;
    auto set = weigh_new_patient(f.cache, f.store, empty);

    double c = posterior_functional(
        set, f.store, [](const PatientLatents&, const PopulationParams&) { return 3.7; });
    CHECK(c == doctest::Approx(3.7).epsilon(1e-14));

    // uniform weights: risk equals the candidate class frequency
    double freq = 0.0;
    for (std::size_t p = 0; p < set.size(); ++p) freq += set.cand_eta[p];
    freq /= static_cast<double>(set.size());
    CHECK(risk_estimate(set) == doctest::Approx(freq).epsilon(1e-12));
}

TEST_CASE("duplicating proposals halves weights, doubles ess, keeps functionals") {
    Fixture f = make_fixture();
    PatientRecord target = target_patient();
    auto set = weigh_new_patient(f.cache, f.store, target);

    std::vector<double> doubled = set.log_weights;
    doubled.insert(doubled.end(), set.log_weights.begin(), set.log_weights.end());
    auto w2 = normalize_log_weights(doubled);
    double ess2 = effective_sample_size(w2);
    CHECK(ess2 == doctest::Approx(2.0 * set.ess).epsilon(1e-9));

    KahanSum risk2;
    for (std::size_t p = 0; p < doubled.size(); ++p)
        if (set.cand_eta[p % set.size()]) risk2.add(w2[p]);
    CHECK(risk2.value() == doctest::Approx(risk_estimate(set)).epsilon(1e-11));
}

TEST_CASE("self-normalized IS is consistent: small vs large budgets agree within noise") {
    Fixture f = make_fixture(10, 200, 40, 19);  // cache: 400 draws x 40 = 16000
    PatientRecord target = target_patient();
    auto small = weigh_new_patient_fixed(f.cache, f.store, target, 4000);
    auto large = weigh_new_patient_fixed(f.cache, f.store, target, 16000);
    double se = risk_mc_se(small);
    CHECK(std::abs(risk_estimate(small) - risk_estimate(large)) < 3.0 * se);
}

TEST_CASE("generate_proposals: deterministic, prefix-stable, mixture frequencies match") {
    Fixture f = make_fixture(4, 150, 2, 31);
    ProposalCache again = generate_proposals(f.store, 2, mix_seed(31, 1));
    CHECK(again.eta == f.cache.eta);
    CHECK(again.u0 == f.cache.u0);

    // a larger cache extends the smaller one (same seed): prefix reuse
    ProposalCache bigger = generate_proposals(f.store, 4, mix_seed(31, 1));
    for (std::size_t p = 0; p < f.cache.size(); ++p) {
        CHECK(bigger.eta[p] == f.cache.eta[p]);
        CHECK(bigger.u0[p] == f.cache.u0[p]);
        CHECK(bigger.u1[p] == f.cache.u1[p]);
    }

    // pooled class frequency ~ mean of rho draws
    ProposalCache wide = generate_proposals(f.store, 400, 5);  // 120k candidates
    double mean_rho = 0.0;
    for (const auto& p : f.store.params) mean_rho += p.rho;
    mean_rho /= static_cast<double>(f.store.num_draws());
    double freq = 0.0;
    for (auto e : wide.eta) freq += e;
    freq /= static_cast<double>(wide.size());
    double se = std::sqrt(mean_rho * (1.0 - mean_rho) / static_cast<double>(wide.size()));
    CHECK(std::abs(freq - mean_rho) < 3.0 * se + 1e-3);
}

TEST_CASE("generate_proposals: J=1, m=1 draws exactly one candidate from g") {
    Fixture f = make_fixture(3, 60, 1, 41);
    PosteriorSample single = f.store;
    single.params.resize(1);
    for (auto& col : single.latents) {
        col.eta.resize(1);
        col.u0.resize(1);
        col.u1.resize(1);
    }
    single.meta.iters = 1;
    single.meta.chains = 1;
    ProposalCache cache = generate_proposals(single, 1, 9);
    REQUIRE(cache.size() == 1);
    PatientLatents expected = sample_latents(single.params[0], proposal_seed(9, 0, 0));
    CHECK(static_cast<int>(cache.eta[0]) == expected.eta);
    CHECK(cache.u0[0] == expected.u[0]);
    CHECK(cache.u1[0] == expected.u[1]);
}

TEST_CASE("dynamic_update: early stop when the first round already clears the threshold") {
    Fixture f = make_fixture();
    PatientRecord empty;
    empty.id = "e";
    empty.age_std = 0.0;
    DynamicSettings opts;
    opts.initial_m = 64;
    opts.ess_threshold = 32.0;
    auto set = dynamic_update(empty, f.store, f.cache, opts);
    CHECK(set.generation == 1);
    CHECK(set.size() == 64);
    CHECK_FALSE(set.capped);
    CHECK(set.round_ms.size() == 1);
}

TEST_CASE("dynamic_update defaults follow the documented operating point") {
    DynamicSettings opts;
    CHECK(opts.initial_m == 50000);
    CHECK(opts.ess_threshold == 1000.0);
    CHECK(opts.growth_factor == 10.0);
}

TEST_CASE("dynamic_update: growth is geometric, capped at max_m with the flag set") {
    Fixture f = make_fixture();
    PatientRecord nasty;
    nasty.id = "nasty";
    nasty.age_std = 0.0;
    nasty.psa = {{0.0, 4.2}, {0.5, 4.5}, {1.0, 4.8}};  // far outside the population
    DynamicSettings opts;
    opts.initial_m = 10;
    opts.ess_threshold = 1e9;  // unreachable: force the full growth path
    opts.max_m = 1000;
    auto set = dynamic_update(nasty, f.store, f.cache, opts);
    CHECK(set.size() == 1000);
    CHECK(set.capped);
    CHECK(set.generation == 3);  // 10 -> 100 -> 1000
    CHECK(set.round_ms.size() == 3);

    // weights over the final set equal a direct fixed-budget weighing
    auto direct = weigh_new_patient_fixed(f.cache, f.store, nasty, 1000);
    REQUIRE(direct.size() == set.size());
    for (std::size_t p = 0; p < set.size(); ++p)
        CHECK(set.weights[p] == doctest::Approx(direct.weights[p]).epsilon(1e-14));
    CHECK_FALSE(direct.capped);  // threshold 0: a fixed budget is never capped
}

TEST_CASE("dynamic_update: expansion past the cache generates deterministic extra candidates") {
    Fixture f = make_fixture(4, 50, 2, 51);  // cache: 100 draws x 2
    PatientRecord target = target_patient();
    DynamicSettings opts;
    opts.initial_m = f.cache.size();
    opts.ess_threshold = 1e9;
    opts.max_m = f.cache.size() * 3;  // forces generation beyond the cache
    opts.seed = 77;
    auto a = dynamic_update(target, f.store, f.cache, opts);
    auto b = dynamic_update(target, f.store, f.cache, opts);
    CHECK(a.size() == opts.max_m);
    CHECK(a.capped);
    REQUIRE(a.size() == b.size());
    for (std::size_t p = 0; p < a.size(); ++p) {
        CHECK(a.cand_u0[p] == b.cand_u0[p]);
        CHECK(a.log_weights[p] == b.log_weights[p]);
    }
    // beyond-cache candidates follow the documented (seed, round, draw) scheme
    std::size_t beyond = f.cache.size() + 3;
    std::uint64_t r = beyond / f.store.num_draws(), j = beyond % f.store.num_draws();
    PatientLatents expected = sample_latents(f.store.params[j], proposal_seed(77, r, j));
    CHECK(a.cand_u0[beyond] == expected.u[0]);
}

TEST_CASE("dynamic_update: existing-patient mode is bounded by the store size") {
    Fixture f = make_fixture();
    ObservationBlock block;
    block.biopsies = {{60.0, 1}};
    DynamicSettings opts;
    opts.initial_m = 16;
    opts.ess_threshold = 1e9;
    auto set = dynamic_update(f.store.patient_ids[2], block, f.store, opts);
    CHECK(set.size() == f.store.num_draws());
    CHECK(set.capped);

    auto full = weigh_new_observations(f.store, f.store.patient_ids[2], block);
    for (std::size_t j = 0; j < full.size(); ++j)
        CHECK(set.weights[j] == doctest::Approx(full.weights[j]).epsilon(1e-14));
}

TEST_CASE("dynamic_update: impossible data terminates at the budget with a degenerate error") {
    Fixture f = make_fixture();
    PatientRecord impossible;
    impossible.id = "imp";
    impossible.age_std = 0.0;
    impossible.psa = {{0.0, 1e160}};
    // single-round fixed budget
    try {
        weigh_new_patient_fixed(f.cache, f.store, impossible, 64);
        FAIL("expected degenerate weights");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::degenerate_weights);
    }
    // multi-round growth path: every round all-zero, must still terminate
    DynamicSettings opts;
    opts.initial_m = 8;
    opts.ess_threshold = 10.0;
    opts.max_m = 512;
    CHECK_THROWS_AS(dynamic_update(impossible, f.store, f.cache, opts), Error);
}

TEST_CASE("dynamic_update: invalid budgets rejected") {
    Fixture f = make_fixture();
    PatientRecord target = target_patient();
    DynamicSettings opts;
    opts.initial_m = f.cache.size() + 1;
    opts.max_m = f.cache.size();
    CHECK_THROWS_AS(dynamic_update(target, f.store, f.cache, opts), Error);
    opts.initial_m = 10;
    opts.growth_factor = 1.0;
    CHECK_THROWS_AS(dynamic_update(target, f.store, f.cache, opts), Error);
}

TEST_CASE("weighted proposal set invariants hold after weighing") {
    Fixture f = make_fixture();
    auto set = weigh_new_patient(f.cache, f.store, target_patient());
    KahanSum sum;
    for (double w : set.weights) {
        CHECK(w >= 0.0);
        sum.add(w);
    }
    CHECK(std::abs(sum.value() - 1.0) < 1e-12);
    CHECK(set.ess >= 1.0);
    CHECK(set.ess <= static_cast<double>(set.size()));
    for (auto j : set.draw_index) CHECK(j < f.store.num_draws());
}
