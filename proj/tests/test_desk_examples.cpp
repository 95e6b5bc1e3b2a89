#include <doctest.h>

#include <cmath>

#include "lcis/cohort.hpp"
#include "lcis/estimators.hpp"
#include "lcis/eval.hpp"
#include "lcis/importance.hpp"
#include "lcis/mcmc.hpp"

// Moderate-scale checks of the cross-estimator examples: slower than the
// rest of the unit suite, but well under a minute.

using namespace lcis;

namespace {

struct Desk {
    std::vector<PatientRecord> records;
    std::vector<PatientLatents> truth;
    std::vector<std::string> sorted_ids;
    PopulationParams true_params;
    ModelConfig config;
    FitSettings mcmc{2, 2000, 800, 1, 7};
    PosteriorSample store;
    ProposalCache cache;
};

Desk make_desk() {
    Desk d;
    SimConfig c;
    c.n_patients = 80;
    c.params.rho = 0.3;
    c.params.beta_age = 0.1;
    c.params.mu = {{{0.0, 0.02}, {0.35, 0.10}}};
    c.params.tau2 = {{{0.09, 0.0025}, {0.09, 0.0025}}};
    c.params.sigma2 = 0.04;
    c.params.gamma0 = -1.8;
    c.params.gamma1 = 1.6;
    c.psa_mean_count = 8;
    c.biopsy_mean_count = 4;
    c.frac_class_observed = 0.2;
    c.seed = 61;
    d.true_params = c.params;
    auto [records, truth] = simulate_cohort(c);
    d.records = std::move(records);
    d.truth = std::move(truth);
    d.store = fit(d.records, d.config, d.mcmc);
    d.sorted_ids = d.store.patient_ids;
    d.cache = generate_proposals(d.store, 10, 62);
    return d;
}

}  // namespace

TEST_CASE("conditional-posterior estimates track IS risks at moderate scale") {
    Desk d = make_desk();
    // fresh simulated patients as prediction targets
    SimConfig holdout_sim;
    holdout_sim.n_patients = 8;
    holdout_sim.params = d.true_params;
    holdout_sim.psa_mean_count = 8;
    holdout_sim.biopsy_mean_count = 4;
    holdout_sim.frac_class_observed = 0.0;
    holdout_sim.seed = 63;
    auto [targets, target_truth] = simulate_cohort(holdout_sim);
    (void)target_truth;

    std::vector<double> is_risks, wu_risks;
    for (const auto& target : targets) {
        auto set = weigh_new_patient(d.cache, d.store, target);
        is_risks.push_back(risk_estimate(set));
        wu_risks.push_back(conditional_posterior_estimate(d.store, target));
    }
    CHECK(rmsd(is_risks, wu_risks) <= 0.02);
}

TEST_CASE("new-observation reweighing matches a refit on the extended cohort") {
    Desk d = make_desk();

    // pick unlabeled patients and simulate future data from their true latents
    std::vector<std::size_t> target_rows;
    for (std::size_t i = 0; i < d.records.size() && target_rows.size() < 6; ++i)
        if (!d.records[i].observed_class) target_rows.push_back(i);
    REQUIRE(target_rows.size() == 6);

    std::vector<double> updated, refit_risks;
    for (std::size_t t = 0; t < target_rows.size(); ++t) {
        std::size_t row = target_rows[t];
        const PatientRecord& original = d.records[row];
        double t0 = std::max(original.last_psa_time(), original.last_biopsy_time());
        PatientRecord extended = append_observations(
            original, d.truth[row], d.true_params,
            {{t0 + 0.5, ObsKind::psa}, {t0 + 1.0, ObsKind::psa}, {t0 + 1.0, ObsKind::biopsy}},
            mix_seed(64, t));

        ObservationBlock block;
        block.psa = {extended.psa.end() - 2, extended.psa.end()};
        block.biopsies = {extended.biopsies.end() - 1, extended.biopsies.end()};
        auto set = weigh_new_observations(d.store, original.id, block);
        updated.push_back(risk_estimate(set));

        std::vector<PatientRecord> refit_cohort = d.records;
        refit_cohort[row] = extended;
        FitSettings refit_settings = d.mcmc;
        refit_settings.seed = mix_seed(65, t);
        PosteriorSample refit = fit(refit_cohort, d.config, refit_settings);
        auto idx = refit.find_patient(original.id);
        REQUIRE(idx.has_value());
        KahanSum s;
        for (std::size_t j = 0; j < refit.num_draws(); ++j)
            s.add(static_cast<double>(refit.latents[*idx].eta[j]));
        refit_risks.push_back(s.value() / static_cast<double>(refit.num_draws()));
    }
    CHECK(rmsd(updated, refit_risks) <= 0.03);
}
