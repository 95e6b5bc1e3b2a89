#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "lcis/model.hpp"
#include "lcis/rng.hpp"

namespace lcis {

// Synthetic data generation from the model itself. Visit schedules are
// fixed grids: psa every spacing_years with a +/- 1 month per-visit jitter,
// biopsies annually starting at year 1.
struct SimConfig {
    std::uint64_t n_patients = 100;
    PopulationParams params;
    int psa_mean_count = 10;
    double psa_spacing_years = 0.5;
    int biopsy_mean_count = 5;
    double frac_class_observed = 0.2;
    double age_mean = 0.0;
    double age_sd = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        require_valid(n_patients >= 1, "SimConfig: n_patients must be >= 1");
        params.validate();
        require_valid(psa_mean_count >= 0 && biopsy_mean_count >= 0,
                      "SimConfig: visit counts must be nonnegative");
        require_valid(psa_spacing_years > 0.0, "SimConfig: psa spacing must be positive");
        require_valid(frac_class_observed >= 0.0 && frac_class_observed <= 1.0,
                      "SimConfig: frac_class_observed must lie in [0,1]");
        require_valid(age_sd >= 0.0, "SimConfig: age_sd must be nonnegative");
    }
};

namespace detail {

inline constexpr double kPsaJitterYears = 1.0 / 12.0;

inline std::string patient_id(std::uint64_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "p%06llu", static_cast<unsigned long long>(index));
    return buf;
}

inline int simulate_biopsy_result(int eta, const PopulationParams& params, Rng& rng) {
    double logit = std::clamp(params.gamma0 + params.gamma1 * eta, -700.0, 700.0);
    return rng.bernoulli(logistic(logit)) ? 1 : 0;
}

inline double simulate_psa_value(double age_std, double time, const PatientLatents& latents,
                                 const PopulationParams& params, Rng& rng) {
    double mean = params.beta_age * age_std + latents.u[0] + latents.u[1] * time;
    return rng.normal(mean, params.sigma2);
}

}  // namespace detail

// Per-patient generation is independent; patient k uses sub-stream
// mix_seed(seed, k), so parallel generation and sequential generation agree.
inline std::pair<std::vector<PatientRecord>, std::vector<PatientLatents>>
simulate_cohort(const SimConfig& config) {
    config.validate();
    std::vector<PatientRecord> records;
    std::vector<PatientLatents> truth;
    records.reserve(config.n_patients);
    truth.reserve(config.n_patients);

    for (std::uint64_t k = 0; k < config.n_patients; ++k) {
        Rng rng(mix_seed(config.seed, k));
        PatientRecord rec;
        rec.id = detail::patient_id(k);
        rec.age_std = rng.normal(config.age_mean, config.age_sd * config.age_sd);

        PatientLatents latents = sample_latents(config.params, rng);

        rec.psa.reserve(config.psa_mean_count);
        for (int v = 0; v < config.psa_mean_count; ++v) {
            double t = config.psa_spacing_years * v
                + rng.uniform(-detail::kPsaJitterYears, detail::kPsaJitterYears);
            rec.psa.push_back({std::max(0.0, t), 0.0});
        }
        std::sort(rec.psa.begin(), rec.psa.end(),
                  [](const PsaObs& a, const PsaObs& b) { return a.time < b.time; });
        for (auto& o : rec.psa)
            o.value = detail::simulate_psa_value(rec.age_std, o.time, latents, config.params, rng);

        rec.biopsies.reserve(config.biopsy_mean_count);
        for (int v = 0; v < config.biopsy_mean_count; ++v)
            rec.biopsies.push_back(
                {static_cast<double>(v + 1), detail::simulate_biopsy_result(latents.eta, config.params, rng)});

        if (rng.bernoulli(config.frac_class_observed)) rec.observed_class = latents.eta;

        rec.validate();
        records.push_back(std::move(rec));
        truth.push_back(latents);
    }
    return {std::move(records), std::move(truth)};
}

enum class ObsKind { psa, biopsy };

// Extends a record with freshly simulated observations at the given times.
// Times must fall strictly after the record's last time of the same kind.
inline PatientRecord append_observations(const PatientRecord& record, const PatientLatents& latents,
                                         const PopulationParams& params,
                                         const std::vector<std::pair<double, ObsKind>>& new_times,
                                         std::uint64_t seed) {
    record.validate();
    latents.validate();
    params.validate();
    PatientRecord out = record;
    if (new_times.empty()) return out;

    Rng rng(seed);
    double last_psa = record.last_psa_time();
    double last_biopsy = record.last_biopsy_time();
    for (const auto& [time, kind] : new_times) {
        require_valid(std::isfinite(time) && time >= 0.0, "append_observations: times must be >= 0");
        if (kind == ObsKind::psa) {
            require_valid(time > last_psa, "append_observations: psa time not after existing data");
            out.psa.push_back({time, detail::simulate_psa_value(out.age_std, time, latents, params, rng)});
            last_psa = time;
        } else {
            require_valid(time > last_biopsy, "append_observations: biopsy time not after existing data");
            out.biopsies.push_back({time, detail::simulate_biopsy_result(latents.eta, params, rng)});
            last_biopsy = time;
        }
    }
    out.validate();
    return out;
}

}  // namespace lcis
