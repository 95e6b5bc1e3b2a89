#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lcis/math.hpp"
#include "lcis/mcmc.hpp"
#include "lcis/model.hpp"
#include "lcis/rng.hpp"
#include "lcis/store.hpp"

namespace lcis {

// Proposals for one target patient with importance weights and diagnostics.
// Proposal p pairs candidate latents with posterior draw j = p mod J; for a
// new patient the candidates come from the proposal cache, for an existing
// patient they are the store's own draws of that patient's latents.
struct WeightedProposalSet {
    std::string patient_id;
    std::vector<std::uint32_t> draw_index;
    std::vector<std::uint8_t> cand_eta;
    std::vector<double> cand_u0;
    std::vector<double> cand_u1;
    std::vector<double> log_weights;
    std::vector<double> weights;
    double ess = 0.0;
    int generation = 1;       // expansion rounds used
    bool capped = false;      // max_m reached below the ess threshold
    bool degenerate = false;  // ess < 2 at max_m
    std::vector<double> round_ms;

    std::size_t size() const { return weights.size(); }

    PatientLatents candidate(std::size_t p) const {
        return PatientLatents{static_cast<int>(cand_eta[p]), {cand_u0[p], cand_u1[p]}};
    }
};

// Pre-generated candidate latents, keyed to a posterior store by content
// digest. Candidate p = r*J + j is draw r from g(. | theta^(j)), so any
// prefix spreads evenly over the posterior draws.
struct ProposalCache {
    std::string store_digest;
    std::uint64_t num_draws = 0;  // J of the source store
    std::uint64_t m_per_draw = 0;
    std::uint64_t seed = 0;
    std::vector<std::uint8_t> eta;
    std::vector<double> u0;
    std::vector<double> u1;

    std::size_t size() const { return eta.size(); }

    void validate() const {
        require_valid(num_draws >= 1 && m_per_draw >= 1, "ProposalCache: empty cache");
        require_valid(eta.size() == num_draws * m_per_draw && u0.size() == eta.size()
                          && u1.size() == eta.size(),
                      "ProposalCache: size must equal J * m_per_draw");
    }
};

inline std::uint64_t proposal_seed(std::uint64_t seed, std::uint64_t round, std::uint64_t draw) {
    return mix_seed(mix_seed(seed, 0x70726f70ULL), round * 0x9e3779b97f4a7c15ULL + draw);
}

// Draws m_per_draw candidates from g(. | theta^(j)) for every posterior
// draw, deterministically from (seed, round, draw).
inline ProposalCache generate_proposals(const PosteriorSample& store, std::uint64_t m_per_draw,
                                        std::uint64_t seed) {
    store.validate();
    require_valid(m_per_draw >= 1, "generate_proposals: m_per_draw must be >= 1");
    ProposalCache cache;
    cache.store_digest = store_digest(store);
    cache.num_draws = store.num_draws();
    cache.m_per_draw = m_per_draw;
    cache.seed = seed;
    const std::size_t total = store.num_draws() * m_per_draw;
    cache.eta.resize(total);
    cache.u0.resize(total);
    cache.u1.resize(total);
    for (std::uint64_t r = 0; r < m_per_draw; ++r)
        for (std::uint64_t j = 0; j < store.num_draws(); ++j) {
            PatientLatents l = sample_latents(store.params[j], proposal_seed(seed, r, j));
            std::size_t p = r * store.num_draws() + j;
            cache.eta[p] = static_cast<std::uint8_t>(l.eta);
            cache.u0[p] = l.u[0];
            cache.u1[p] = l.u[1];
        }
    return cache;
}

// Normalized weights from log weights: exp(lw - logsumexp(lw)), computed
// with a max shift. Exactly uniform when all entries are equal, so a
// no-new-data update is an exact no-op downstream.
inline std::vector<double> normalize_log_weights(const std::vector<double>& log_weights) {
    require_valid(!log_weights.empty(), "normalize_log_weights: empty input");
    double max_lw = kNegInf;
    bool all_equal = true;
    for (double lw : log_weights) {
        require_valid(!std::isnan(lw) && lw != std::numeric_limits<double>::infinity(),
                      "normalize_log_weights: log weights must not be NaN or +inf");
        if (lw != log_weights.front()) all_equal = false;
        if (lw > max_lw) max_lw = lw;
    }
    require(std::isfinite(max_lw), ErrorCode::degenerate_weights,
            "all proposal weights are zero: the observed data has no support under any proposal");

    std::vector<double> weights(log_weights.size());
    if (all_equal) {
        double w = 1.0 / static_cast<double>(log_weights.size());
        for (auto& x : weights) x = w;
        return weights;
    }
    KahanSum sum;
    for (std::size_t i = 0; i < log_weights.size(); ++i) {
        weights[i] = std::exp(log_weights[i] - max_lw);
        sum.add(weights[i]);
    }
    double total = sum.value();
    for (auto& w : weights) w /= total;
    return weights;
}

// ESS = 1 / sum w^2 over normalized weights; clamped into [1, M] against
// floating-point rounding at the boundaries.
inline double effective_sample_size(const std::vector<double>& weights) {
    require_valid(!weights.empty(), "effective_sample_size: empty input");
    KahanSum sq;
    for (double w : weights) {
        require_valid(w >= 0.0 && std::isfinite(w), "effective_sample_size: weights must be >= 0");
        sq.add(w * w);
    }
    double denom = sq.value();
    require(denom > 0.0, ErrorCode::degenerate_weights, "effective_sample_size: all weights are zero");
    double ess = 1.0 / denom;
    return std::min(std::max(ess, 1.0), static_cast<double>(weights.size()));
}

namespace detail {

struct RecordView {
    const PatientRecord* record;
    std::size_t n_biopsy;
    std::size_t k_reclass;
};

inline RecordView make_view(const PatientRecord& record) {
    return {&record, record.biopsies.size(), count_reclassified(record.biopsies)};
}

inline double weight_loglik(const RecordView& view, const PatientLatents& latents,
                            const PopulationParams& params) {
    KahanSum total;
    double base = params.beta_age * view.record->age_std + latents.u[0];
    for (const auto& o : view.record->psa)
        total.add(log_normal_pdf(o.value, base + latents.u[1] * o.time, params.sigma2));
    total.add(biopsy_loglik(view.n_biopsy, view.k_reclass, params.gamma0 + params.gamma1 * latents.eta));
    return total.value();
}

inline void finalize_set(WeightedProposalSet& set) {
    set.weights = normalize_log_weights(set.log_weights);
    set.ess = effective_sample_size(set.weights);
}

}  // namespace detail

// New-patient weights (the likelihood of the new patient's data at each
// cached candidate). Uses the full cache.
inline WeightedProposalSet weigh_new_patient(const ProposalCache& cache, const PosteriorSample& store,
                                             const PatientRecord& record) {
    record.validate();
    cache.validate();
    require_valid(cache.num_draws == store.num_draws(),
                  "weigh_new_patient: cache does not match store (draw count)");
    if (!record.psa.empty())
        for (const auto& p : store.params)
            require_valid(p.sigma2 > 0.0, "weigh_new_patient: store draw with nonpositive sigma2");

    auto started = std::chrono::steady_clock::now();
    WeightedProposalSet set;
    set.patient_id = record.id;
    const std::size_t total = cache.size();
    const std::size_t J = store.num_draws();
    set.draw_index.resize(total);
    set.cand_eta = cache.eta;
    set.cand_u0 = cache.u0;
    set.cand_u1 = cache.u1;
    set.log_weights.resize(total);
    auto view = detail::make_view(record);
    for (std::size_t p = 0; p < total; ++p) {
        std::uint32_t j = static_cast<std::uint32_t>(p % J);
        set.draw_index[p] = j;
        PatientLatents cand{static_cast<int>(cache.eta[p]), {cache.u0[p], cache.u1[p]}};
        set.log_weights[p] = detail::weight_loglik(view, cand, store.params[j]);
    }
    detail::finalize_set(set);
    set.round_ms.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count());
    return set;
}

// Existing-patient update: the store's own (theta, b_k) draws are the
// proposals and the weight reduces to the likelihood of only the new data.
inline WeightedProposalSet weigh_new_observations(const PosteriorSample& store,
                                                  const std::string& patient_id,
                                                  const ObservationBlock& new_obs) {
    new_obs.validate();
    auto idx = store.find_patient(patient_id);
    require_valid(idx.has_value(), "weigh_new_observations: unknown patient id " + patient_id);
    std::size_t k = *idx;
    if (!new_obs.psa.empty())
        require_valid(new_obs.psa.front().time > store.patient_last_psa_time[k],
                      "weigh_new_observations: new psa observations must be later than existing ones");
    if (!new_obs.biopsies.empty())
        require_valid(new_obs.biopsies.front().time > store.patient_last_biopsy_time[k],
                      "weigh_new_observations: new biopsies must be later than existing ones");

    auto started = std::chrono::steady_clock::now();
    WeightedProposalSet set;
    set.patient_id = patient_id;
    const std::size_t J = store.num_draws();
    set.draw_index.resize(J);
    const auto& col = store.latents[k];
    set.cand_eta = col.eta;
    set.cand_u0 = col.u0;
    set.cand_u1 = col.u1;
    set.log_weights.resize(J);
    double age = store.patient_age_std[k];
    for (std::size_t j = 0; j < J; ++j) {
        set.draw_index[j] = static_cast<std::uint32_t>(j);
        set.log_weights[j] =
            log_obs_likelihood_block(new_obs, age, store.latent(k, j), store.params[j]);
    }
    detail::finalize_set(set);
    set.round_ms.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count());
    return set;
}

// Weighted posterior expectation of a functional of (candidate, theta).
template <typename Functional>
inline double posterior_functional(const WeightedProposalSet& set, const PosteriorSample& store,
                                   Functional&& f) {
    require_valid(set.size() > 0 && set.weights.size() == set.size(),
                  "posterior_functional: set not finalized");
    KahanSum s;
    for (std::size_t p = 0; p < set.size(); ++p)
        s.add(set.weights[p] * f(set.candidate(p), store.params[set.draw_index[p]]));
    return s.value();
}

// Posterior probability of the aggressive class.
inline double risk_estimate(const WeightedProposalSet& set) {
    KahanSum s;
    for (std::size_t p = 0; p < set.size(); ++p)
        if (set.cand_eta[p]) s.add(set.weights[p]);
    return s.value();
}

// Delta-method Monte Carlo standard error of the self-normalized estimate.
inline double risk_mc_se(const WeightedProposalSet& set) {
    double risk = risk_estimate(set);
    KahanSum s;
    for (std::size_t p = 0; p < set.size(); ++p) {
        double d = static_cast<double>(set.cand_eta[p]) - risk;
        s.add(set.weights[p] * set.weights[p] * d * d);
    }
    return std::sqrt(s.value());
}

struct DynamicSettings {
    std::size_t initial_m = 50000;
    double ess_threshold = 1000.0;
    double growth_factor = 10.0;
    std::size_t max_m = 0;  // 0: cache capacity (new patient) or J (existing patient)
    std::uint64_t seed = 0;

    void validate(std::size_t cap) const {
        require_valid(growth_factor > 1.0, "DynamicSettings: growth_factor must be > 1");
        std::size_t effective_max = max_m == 0 ? cap : max_m;
        require_valid(initial_m >= 1, "DynamicSettings: initial_m must be >= 1");
        require_valid(initial_m <= effective_max, "DynamicSettings: initial_m must be <= max_m");
    }
};

namespace detail {

// Shared expansion loop. candidate_fn(p) must be deterministic in p.
template <typename CandidateFn>
inline WeightedProposalSet dynamic_loop(const std::string& patient_id, const PosteriorSample& store,
                                        const RecordView* view, const ObservationBlock* block,
                                        double age_std, CandidateFn&& candidate_fn, std::size_t max_m,
                                        const DynamicSettings& opts) {
    WeightedProposalSet set;
    set.patient_id = patient_id;
    const std::size_t J = store.num_draws();
    std::size_t target = std::min(opts.initial_m, max_m);
    set.generation = 0;

    for (;;) {
        auto started = std::chrono::steady_clock::now();
        // weights stay unset while every weight so far is zero, so the
        // proposal count lives in log_weights
        std::size_t from = set.log_weights.size();
        set.draw_index.reserve(target);
        set.cand_eta.reserve(target);
        set.cand_u0.reserve(target);
        set.cand_u1.reserve(target);
        set.log_weights.reserve(target);
        for (std::size_t p = from; p < target; ++p) {
            std::uint32_t j = static_cast<std::uint32_t>(p % J);
            PatientLatents cand = candidate_fn(p);
            set.draw_index.push_back(j);
            set.cand_eta.push_back(static_cast<std::uint8_t>(cand.eta));
            set.cand_u0.push_back(cand.u[0]);
            set.cand_u1.push_back(cand.u[1]);
            double lw = view ? weight_loglik(*view, cand, store.params[j])
                             : log_obs_likelihood_block(*block, age_std, cand, store.params[j]);
            set.log_weights.push_back(lw);
        }
        ++set.generation;

        bool any_finite = false;
        for (double lw : set.log_weights)
            if (std::isfinite(lw)) { any_finite = true; break; }

        double ess = 0.0;
        if (any_finite) {
            set.weights = normalize_log_weights(set.log_weights);
            ess = effective_sample_size(set.weights);
        }
        set.ess = ess;
        auto elapsed = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started);
        set.round_ms.push_back(elapsed.count());

        if (any_finite && ess >= opts.ess_threshold) break;
        if (set.log_weights.size() >= max_m) {
            require(any_finite, ErrorCode::degenerate_weights,
                    "dynamic update: all weights are zero at the maximum proposal budget");
            set.capped = ess < opts.ess_threshold;
            set.degenerate = ess < 2.0;
            break;
        }
        double grown = static_cast<double>(target) * opts.growth_factor;
        target = grown >= static_cast<double>(max_m) ? max_m
                                                     : static_cast<std::size_t>(grown);
    }
    return set;
}

}  // namespace detail

// Dynamic proposal expansion for a new patient: weigh an initial slice of
// the cache, then grow geometrically (reusing cached candidates first, then
// drawing extra candidates per theta draw) until the ess threshold is met
// or max_m is hit, in which case the result is flagged `capped`.
inline WeightedProposalSet dynamic_update(const PatientRecord& record, const PosteriorSample& store,
                                          const ProposalCache& cache, const DynamicSettings& opts) {
    record.validate();
    cache.validate();
    require_valid(cache.num_draws == store.num_draws(),
                  "dynamic_update: cache does not match store (draw count)");
    std::size_t cap = opts.max_m == 0 ? cache.size() : opts.max_m;
    opts.validate(cap);
    auto view = detail::make_view(record);
    const std::size_t J = store.num_draws();
    auto candidate_fn = [&](std::size_t p) -> PatientLatents {
        if (p < cache.size())
            return PatientLatents{static_cast<int>(cache.eta[p]), {cache.u0[p], cache.u1[p]}};
        std::uint64_t r = p / J, j = p % J;
        return sample_latents(store.params[j], proposal_seed(opts.seed, r, j));
    };
    return detail::dynamic_loop(record.id, store, &view, nullptr, record.age_std, candidate_fn,
                                cap, opts);
}

// Dynamic variant of the existing-patient update; proposals are store draws,
// so the ceiling is J.
inline WeightedProposalSet dynamic_update(const std::string& patient_id, const ObservationBlock& new_obs,
                                          const PosteriorSample& store, const DynamicSettings& opts) {
    new_obs.validate();
    auto idx = store.find_patient(patient_id);
    require_valid(idx.has_value(), "dynamic_update: unknown patient id " + patient_id);
    std::size_t k = *idx;
    if (!new_obs.psa.empty())
        require_valid(new_obs.psa.front().time > store.patient_last_psa_time[k],
                      "dynamic_update: new psa observations must be later than existing ones");
    if (!new_obs.biopsies.empty())
        require_valid(new_obs.biopsies.front().time > store.patient_last_biopsy_time[k],
                      "dynamic_update: new biopsies must be later than existing ones");
    std::size_t cap = opts.max_m == 0 ? store.num_draws() : std::min(opts.max_m, store.num_draws());
    opts.validate(cap);
    auto candidate_fn = [&](std::size_t p) { return store.latent(k, p); };
    return detail::dynamic_loop(patient_id, store, nullptr, &new_obs, store.patient_age_std[k],
                                candidate_fn, cap, opts);
}

// Fixed-budget variant: weighs exactly `budget` proposals (a cache prefix).
inline WeightedProposalSet weigh_new_patient_fixed(const ProposalCache& cache,
                                                   const PosteriorSample& store,
                                                   const PatientRecord& record, std::size_t budget) {
    DynamicSettings opts;
    opts.initial_m = budget;
    opts.ess_threshold = 0.0;  // never expand
    opts.max_m = budget;
    return dynamic_update(record, store, cache, opts);
}

// ---- cache persistence ----

inline constexpr char kCacheMagic[9] = "LCISCACH";
inline constexpr std::uint32_t kCacheVersion = 1;

inline std::string serialize_cache(const ProposalCache& cache) {
    cache.validate();
    detail::ByteWriter w;
    w.bytes(kCacheMagic, 8);
    w.u32(kCacheVersion);
    w.str16(cache.store_digest);
    w.u64(cache.num_draws);
    w.u64(cache.m_per_draw);
    w.u64(cache.seed);
    w.u8_array(cache.eta);
    w.f64_array(cache.u0);
    w.f64_array(cache.u1);
    return w.take();
}

inline void write_cache(const std::string& path, const ProposalCache& cache) {
    detail::write_binary_file(path, serialize_cache(cache));
}

inline ProposalCache read_cache(const std::string& path) {
    detail::ByteReader r(detail::read_binary_file(path));
    char magic[8];
    for (int i = 0; i < 8; ++i) magic[i] = static_cast<char>(r.u8());
    require(std::memcmp(magic, kCacheMagic, 8) == 0, ErrorCode::io, "not a proposal cache file");
    require(r.u32() == kCacheVersion, ErrorCode::io, "unsupported cache version");
    ProposalCache cache;
    cache.store_digest = r.str16();
    cache.num_draws = r.u64();
    cache.m_per_draw = r.u64();
    cache.seed = r.u64();
    std::size_t total = cache.num_draws * cache.m_per_draw;
    cache.eta = r.u8_array(total);
    cache.u0 = r.f64_array(total);
    cache.u1 = r.f64_array(total);
    require(r.exhausted(), ErrorCode::io, "trailing bytes in cache file");
    cache.validate();
    return cache;
}

}  // namespace lcis
