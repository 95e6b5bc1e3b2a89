// End-to-end walkthrough: simulate a cohort, fit the joint posterior,
// pre-generate proposals, then update the posterior for a new patient and
// for new measurements on an existing patient.

#include <cstdio>

#include "lcis/cohort.hpp"
#include "lcis/estimators.hpp"
#include "lcis/importance.hpp"
#include "lcis/mcmc.hpp"

using namespace lcis;

int main() {
    SimConfig sim;
    sim.n_patients = 120;
    sim.params.rho = 0.3;
    sim.params.beta_age = 0.1;
    sim.params.mu = {{{0.0, 0.02}, {0.35, 0.10}}};
    sim.params.tau2 = {{{0.09, 0.0025}, {0.09, 0.0025}}};
    sim.params.sigma2 = 0.04;
    sim.params.gamma0 = -1.8;
    sim.params.gamma1 = 1.6;
    sim.psa_mean_count = 8;
    sim.biopsy_mean_count = 4;
    sim.seed = 1;
    auto [records, truth] = simulate_cohort(sim);
    std::printf("simulated %zu patients\n", records.size());

    ModelConfig config;
    PosteriorSample store = fit(records, config, FitSettings{4, 2000, 800, 1, 2});
    std::printf("fit: %zu posterior draws over %zu patients\n", store.num_draws(),
                store.num_patients());
    for (const auto& row : summarize(store))
        std::printf("  %-11s mean %8.4f  sd %7.4f  psr %6.4f\n", row.name.c_str(), row.mean,
                    row.sd, row.psr);

    ProposalCache cache = generate_proposals(store, 10, 3);
    std::printf("cached %zu new-patient proposals\n", cache.size());

    PatientRecord walkin;
    walkin.id = "walkin";
    walkin.age_std = 0.6;
    walkin.psa = {{0.0, 0.55}, {0.5, 0.66}, {1.0, 0.74}};
    walkin.biopsies = {{1.0, 1}};

    DynamicSettings opts;
    opts.initial_m = 20000;
    opts.seed = 4;
    WeightedProposalSet update = dynamic_update(walkin, store, cache, opts);
    std::printf("new patient: risk %.3f (ess %.0f over %zu proposals, %d round%s)\n",
                risk_estimate(update), update.ess, update.size(), update.generation,
                update.generation == 1 ? "" : "s");

    double rb = rao_blackwell_is_estimate(store, walkin);
    std::printf("cross-check (rao-blackwellized): %.3f\n", rb);

    ObservationBlock fresh;
    fresh.psa = {{8.0, 0.9}};
    fresh.biopsies = {{8.0, 1}};
    auto existing = weigh_new_observations(store, store.patient_ids[0], fresh);
    std::printf("existing patient %s after new data: risk %.3f (ess %.0f)\n",
                store.patient_ids[0].c_str(), risk_estimate(existing), existing.ess);
    return 0;
}
