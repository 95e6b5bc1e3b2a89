#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lcis/importance.hpp"
#include "lcis/math.hpp"
#include "lcis/mcmc.hpp"
#include "lcis/model.hpp"

namespace lcis {

namespace detail {

// log p(eta = 1 | record, theta) and the per-draw marginal log-likelihood,
// both from the closed-form class marginals.
struct ClassPosterior {
    double prob1;
    double log_marginal;
};

inline ClassPosterior class_posterior(const PatientRecord& record, const PopulationParams& params) {
    double l1 = std::log(params.rho) + marginal_class_loglik(record, 1, params);
    double l0 = std::log1p(-params.rho) + marginal_class_loglik(record, 0, params);
    double lse = logsumexp2(l0, l1);
    return {std::exp(l1 - lse), lse};
}

}  // namespace detail

struct RejectionResult {
    std::vector<std::uint32_t> accepted;  // proposal indices
    double risk = 0.0;
    double acceptance_rate = 0.0;
    double expected_acceptance_rate = 0.0;  // mean weight / max weight
    std::size_t n_proposals = 0;
};

// Accept candidate p with probability w_p / w_max using the unstandardized
// weights; accepted candidates are unweighted draws from the updated
// posterior. The envelope is the exact maximum over the proposal set.
inline RejectionResult rejection_sample(const ProposalCache& cache, const PosteriorSample& store,
                                        const PatientRecord& record, std::uint64_t seed) {
    record.validate();
    cache.validate();
    require_valid(cache.num_draws == store.num_draws(),
                  "rejection_sample: cache does not match store (draw count)");

    const std::size_t total = cache.size();
    const std::size_t J = store.num_draws();
    std::vector<double> lw(total);
    auto view = detail::make_view(record);
    double lw_max = kNegInf;
    for (std::size_t p = 0; p < total; ++p) {
        PatientLatents cand{static_cast<int>(cache.eta[p]), {cache.u0[p], cache.u1[p]}};
        lw[p] = detail::weight_loglik(view, cand, store.params[p % J]);
        if (lw[p] > lw_max) lw_max = lw[p];
    }
    require(std::isfinite(lw_max), ErrorCode::degenerate_weights,
            "rejection_sample: zero envelope (all weights are zero)");

    RejectionResult out;
    out.n_proposals = total;
    Rng rng(mix_seed(seed, 0x72656a65ULL));
    std::size_t n_eta1 = 0;
    KahanSum mean_ratio;
    for (std::size_t p = 0; p < total; ++p) {
        double ratio = std::exp(lw[p] - lw_max);
        mean_ratio.add(ratio);
        if (rng.uniform() < ratio) {
            out.accepted.push_back(static_cast<std::uint32_t>(p));
            n_eta1 += cache.eta[p];
        }
    }
    require(!out.accepted.empty(), ErrorCode::degenerate_weights, "rejection_sample: nothing accepted");
    out.risk = static_cast<double>(n_eta1) / static_cast<double>(out.accepted.size());
    out.acceptance_rate = static_cast<double>(out.accepted.size()) / static_cast<double>(total);
    out.expected_acceptance_rate = mean_ratio.value() / static_cast<double>(total);
    return out;
}

// Conditional-posterior estimator: averages the per-draw conditional class
// probability under the unchanged theta posterior. The continuous random
// effects are integrated analytically and the discrete class is summed.
inline double conditional_posterior_estimate(const PosteriorSample& store, const PatientRecord& record) {
    record.validate();
    store.validate();
    KahanSum s;
    for (const auto& params : store.params)
        s.add(detail::class_posterior(record, params).prob1);
    return s.value() / static_cast<double>(store.num_draws());
}

// Exact-target, reduced-variance IS: weight each theta draw by the
// patient's marginal likelihood and average the conditional class
// probability. Deterministic given the store (no proposal noise).
inline double rao_blackwell_is_estimate(const PosteriorSample& store, const PatientRecord& record) {
    record.validate();
    store.validate();
    const std::size_t J = store.num_draws();
    std::vector<double> lw(J);
    std::vector<double> prob1(J);
    for (std::size_t j = 0; j < J; ++j) {
        auto cp = detail::class_posterior(record, store.params[j]);
        lw[j] = cp.log_marginal;
        prob1[j] = cp.prob1;
    }
    auto weights = normalize_log_weights(lw);
    KahanSum s;
    for (std::size_t j = 0; j < J; ++j) s.add(weights[j] * prob1[j]);
    return s.value();
}

// Brute-force tensor-grid oracle over the random effects.
struct GridSpec {
    int points = 321;            // per dimension; must satisfy points % 4 == 1
    double half_width_sd = 10.0; // box half-width in prior sds; >= 8
    double richardson_tol = 1e-6;
    std::size_t theta_stride = 1;

    void validate() const {
        require_valid(points >= 5 && points % 4 == 1, "GridSpec: points must be >= 5 with points % 4 == 1");
        require_valid(half_width_sd >= 8.0, "GridSpec: half width must cover >= 8 prior sd");
        require_valid(richardson_tol > 0.0, "GridSpec: tolerance must be positive");
        require_valid(theta_stride >= 1, "GridSpec: theta_stride must be >= 1");
    }
};

namespace detail {

struct GridAxis {
    std::vector<double> nodes;
    std::vector<double> log_weight;  // Simpson weight x prior density, log scale
    bool degenerate = false;
};

inline GridAxis make_axis(double mean, double var, int points, double half_width_sd) {
    GridAxis axis;
    if (var < kDegenerateVariance) {
        axis.degenerate = true;
        axis.nodes = {mean};
        axis.log_weight = {0.0};
        return axis;
    }
    double sd = std::sqrt(var);
    double lo = mean - half_width_sd * sd;
    double step = 2.0 * half_width_sd * sd / (points - 1);
    axis.nodes.resize(points);
    axis.log_weight.resize(points);
    for (int i = 0; i < points; ++i) {
        axis.nodes[i] = lo + step * i;
        double simpson = (i == 0 || i == points - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
        axis.log_weight[i] =
            std::log(simpson * step / 3.0) + log_normal_pdf(axis.nodes[i], mean, var);
    }
    return axis;
}

// log of the psa-part likelihood at u, for a prepared record.
struct PsaData {
    std::vector<double> times;
    std::vector<double> values;
    double offset = 0.0;  // beta_age * age_std
    double sigma2 = 1.0;

    double loglik(double u0, double u1) const {
        KahanSum s;
        for (std::size_t i = 0; i < times.size(); ++i)
            s.add(log_normal_pdf(values[i], offset + u0 + u1 * times[i], sigma2));
        return s.value();
    }
};

inline double grid_class_integral(const PsaData& psa, const GridAxis& a0, const GridAxis& a1) {
    std::vector<double> terms;
    terms.reserve(a0.nodes.size() * a1.nodes.size());
    for (std::size_t i = 0; i < a0.nodes.size(); ++i)
        for (std::size_t k = 0; k < a1.nodes.size(); ++k)
            terms.push_back(a0.log_weight[i] + a1.log_weight[k]
                            + psa.loglik(a0.nodes[i], a1.nodes[k]));
    return logsumexp(terms);
}

inline double grid_prob1_single(const PatientRecord& record, const PopulationParams& params,
                                const GridSpec& spec, bool coarse) {
    PsaData psa;
    psa.offset = params.beta_age * record.age_std;
    psa.sigma2 = params.sigma2;
    for (const auto& o : record.psa) {
        psa.times.push_back(o.time);
        psa.values.push_back(o.value);
    }
    std::size_t nb = record.biopsies.size();
    std::size_t kb = count_reclassified(record.biopsies);

    double log_term[2];
    for (int eta = 0; eta < 2; ++eta) {
        int points = coarse ? (spec.points + 1) / 2 : spec.points;
        GridAxis a0 = make_axis(params.mu[eta][0], params.tau2[eta][0], points, spec.half_width_sd);
        GridAxis a1 = make_axis(params.mu[eta][1], params.tau2[eta][1], points, spec.half_width_sd);
        double log_integral = record.psa.empty()
            ? 0.0
            : grid_class_integral(psa, a0, a1);
        double class_prior = eta ? std::log(params.rho) : std::log1p(-params.rho);
        log_term[eta] = class_prior + log_integral
            + biopsy_loglik(nb, kb, params.gamma0 + params.gamma1 * eta);
    }
    return std::exp(log_term[1] - logsumexp2(log_term[0], log_term[1]));
}

}  // namespace detail

// Posterior class probability for one theta by tensor-grid integration,
// with an internal grid-refinement check.
inline double grid_oracle(const PatientRecord& record, const PopulationParams& params,
                          const GridSpec& spec = {}) {
    record.validate();
    params.validate();
    spec.validate();
    double fine = detail::grid_prob1_single(record, params, spec, false);
    double coarse = detail::grid_prob1_single(record, params, spec, true);
    require(std::abs(fine - coarse) <= spec.richardson_tol, ErrorCode::precision,
            "grid_oracle: grid too coarse (refinement check failed)");
    return fine;
}

// Averaged over the store's theta draws (optionally strided), under the
// same unchanged-theta-posterior approximation as the conditional-posterior
// estimator.
inline double grid_oracle(const PatientRecord& record, const PosteriorSample& store,
                          const GridSpec& spec = {}) {
    record.validate();
    store.validate();
    spec.validate();
    KahanSum fine_sum, coarse_sum;
    std::size_t count = 0;
    for (std::size_t j = 0; j < store.num_draws(); j += spec.theta_stride) {
        fine_sum.add(detail::grid_prob1_single(record, store.params[j], spec, false));
        coarse_sum.add(detail::grid_prob1_single(record, store.params[j], spec, true));
        ++count;
    }
    double fine = fine_sum.value() / static_cast<double>(count);
    double coarse = coarse_sum.value() / static_cast<double>(count);
    require(std::abs(fine - coarse) <= spec.richardson_tol, ErrorCode::precision,
            "grid_oracle: grid too coarse (refinement check failed)");
    return fine;
}

}  // namespace lcis
