#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "lcis/error.hpp"
#include "lcis/math.hpp"
#include "lcis/rng.hpp"

namespace lcis {

// Two-class longitudinal model:
//   class    eta ~ Bernoulli(rho), eta = 1 is the aggressive class
//   effects  u | eta ~ N(mu[eta], diag(tau2[eta])), u = (intercept, slope)
//   psa      y_t | u ~ N(beta_age * age_std + u0 + u1 * t, sigma2)
//   biopsy   r_t | eta ~ Bernoulli(logistic(gamma0 + gamma1 * eta))
//
// Variance entries below kDegenerateVariance denote point masses; sampling
// handles them, density evaluation of a degenerate component is rejected.

struct PopulationParams {
    double rho = 0.5;
    double beta_age = 0.0;
    std::array<std::array<double, 2>, 2> mu{{{0.0, 0.0}, {0.0, 0.0}}};    // [class][intercept, slope]
    std::array<std::array<double, 2>, 2> tau2{{{1.0, 1.0}, {1.0, 1.0}}};  // diagonal variances
    double sigma2 = 1.0;
    double gamma0 = 0.0;
    double gamma1 = 0.0;

    // rho at the closed boundary and zero variances are degenerate but
    // admissible (point masses); log_prior assigns them no mass.
    void validate() const {
        require_valid(std::isfinite(rho) && rho >= 0.0 && rho <= 1.0,
                      "PopulationParams: rho must lie in [0,1]");
        require_valid(std::isfinite(beta_age), "PopulationParams: beta_age must be finite");
        for (int c = 0; c < 2; ++c)
            for (int d = 0; d < 2; ++d) {
                require_valid(std::isfinite(mu[c][d]), "PopulationParams: mu must be finite");
                require_valid(std::isfinite(tau2[c][d]) && tau2[c][d] >= 0.0,
                              "PopulationParams: tau2 entries must be nonnegative and finite");
            }
        require_valid(std::isfinite(sigma2) && sigma2 >= 0.0,
                      "PopulationParams: sigma2 must be nonnegative and finite");
        require_valid(std::isfinite(gamma0) && std::isfinite(gamma1),
                      "PopulationParams: gamma coefficients must be finite");
    }
};

struct PatientLatents {
    int eta = 0;                      // 0 = indolent, 1 = aggressive
    std::array<double, 2> u{0.0, 0.0};

    void validate() const {
        require_valid(eta == 0 || eta == 1, "PatientLatents: eta must be 0 or 1");
        require_valid(std::isfinite(u[0]) && std::isfinite(u[1]),
                      "PatientLatents: random effects must be finite");
    }
};

struct PsaObs {
    double time = 0.0;   // years since diagnosis
    double value = 0.0;  // log-biomarker
};

struct BiopsyObs {
    double time = 0.0;
    int result = 0;  // 1 = grade reclassification
};

struct PatientRecord {
    std::string id;
    double age_std = 0.0;
    std::vector<PsaObs> psa;
    std::vector<BiopsyObs> biopsies;
    std::optional<int> observed_class;

    void validate() const {
        require_valid(!id.empty(), "PatientRecord: id must be nonempty");
        require_valid(std::isfinite(age_std), "PatientRecord: age_std must be finite");
        double prev = 0.0;
        for (const auto& o : psa) {
            require_valid(std::isfinite(o.time) && o.time >= 0.0, "PatientRecord: psa times must be >= 0");
            require_valid(o.time >= prev, "PatientRecord: psa times must be nondecreasing");
            require_valid(std::isfinite(o.value), "PatientRecord: psa values must be finite");
            prev = o.time;
        }
        prev = 0.0;
        for (const auto& o : biopsies) {
            require_valid(std::isfinite(o.time) && o.time >= 0.0, "PatientRecord: biopsy times must be >= 0");
            require_valid(o.time >= prev, "PatientRecord: biopsy times must be nondecreasing");
            require_valid(o.result == 0 || o.result == 1, "PatientRecord: biopsy result must be 0 or 1");
            prev = o.time;
        }
        if (observed_class)
            require_valid(*observed_class == 0 || *observed_class == 1,
                          "PatientRecord: observed_class must be 0 or 1");
    }

    double last_psa_time() const { return psa.empty() ? -1.0 : psa.back().time; }
    double last_biopsy_time() const { return biopsies.empty() ? -1.0 : biopsies.back().time; }
};

// New observations for an existing patient (the real-time update path).
struct ObservationBlock {
    std::vector<PsaObs> psa;
    std::vector<BiopsyObs> biopsies;

    bool empty() const { return psa.empty() && biopsies.empty(); }

    void validate() const {
        double prev = 0.0;
        for (const auto& o : psa) {
            require_valid(std::isfinite(o.time) && o.time >= 0.0 && o.time >= prev,
                          "ObservationBlock: psa times must be nondecreasing and >= 0");
            require_valid(std::isfinite(o.value), "ObservationBlock: psa values must be finite");
            prev = o.time;
        }
        prev = 0.0;
        for (const auto& o : biopsies) {
            require_valid(std::isfinite(o.time) && o.time >= 0.0 && o.time >= prev,
                          "ObservationBlock: biopsy times must be nondecreasing and >= 0");
            require_valid(o.result == 0 || o.result == 1, "ObservationBlock: result must be 0 or 1");
            prev = o.time;
        }
    }
};

// Prior hyperparameters: rho ~ Beta(a_rho, b_rho); each mu component
// ~ N(m0, s0^2); each tau2 entry and sigma2 ~ InvGamma(a_tau, b_tau);
// beta_age ~ N(0, s_beta^2); gamma0, gamma1 ~ N(0, s_gamma^2).
struct ModelConfig {
    double a_rho = 1.0;
    double b_rho = 1.0;
    double m0 = 0.0;
    double s0 = 5.0;
    double a_tau = 2.0;
    double b_tau = 0.01;
    double s_beta = 5.0;
    double s_gamma = 5.0;

    void validate() const {
        require_valid(a_rho > 0.0 && b_rho > 0.0, "ModelConfig: Beta hyperparameters must be positive");
        require_valid(std::isfinite(m0), "ModelConfig: m0 must be finite");
        require_valid(s0 > 0.0, "ModelConfig: s0 must be positive");
        require_valid(a_tau > 0.0 && b_tau > 0.0, "ModelConfig: inverse-gamma hyperparameters must be positive");
        require_valid(s_beta > 0.0 && s_gamma > 0.0, "ModelConfig: coefficient prior sds must be positive");
    }
};

inline double psa_mean(const PatientRecord& record, const PatientLatents& latents,
                       const PopulationParams& params, double time) {
    return params.beta_age * record.age_std + latents.u[0] + latents.u[1] * time;
}

namespace detail {

// Biopsy terms depend on the data only through (count, successes), so the
// sum is computed from counts; this also makes it exactly order-invariant.
inline double biopsy_loglik(std::size_t n, std::size_t successes, double logit) {
    if (n == 0) return 0.0;
    double out = 0.0;
    if (successes > 0) out += static_cast<double>(successes) * log_sigmoid(logit);
    if (successes < n) out += static_cast<double>(n - successes) * log_sigmoid(-logit);
    return out;
}

template <typename BiopsyList>
inline std::size_t count_reclassified(const BiopsyList& biopsies) {
    std::size_t k = 0;
    for (const auto& o : biopsies) k += static_cast<std::size_t>(o.result);
    return k;
}

// Unvalidated core of log f(y | b, theta); hot path for weight loops.
inline double obs_loglik_core(const PatientRecord& record, const PatientLatents& latents,
                              const PopulationParams& params) {
    KahanSum total;
    double base = params.beta_age * record.age_std + latents.u[0];
    for (const auto& o : record.psa)
        total.add(log_normal_pdf(o.value, base + latents.u[1] * o.time, params.sigma2));
    double logit = params.gamma0 + params.gamma1 * latents.eta;
    total.add(biopsy_loglik(record.biopsies.size(), count_reclassified(record.biopsies), logit));
    return total.value();
}

}  // namespace detail

// log f(y | b, theta): Gaussian psa terms plus Bernoulli biopsy terms.
// An empty record contributes exactly 0.
inline double log_obs_likelihood(const PatientRecord& record, const PatientLatents& latents,
                                 const PopulationParams& params) {
    record.validate();
    latents.validate();
    params.validate();
    if (!record.psa.empty())
        require_valid(params.sigma2 > 0.0, "log_obs_likelihood: sigma2 must be positive with psa data");
    return detail::obs_loglik_core(record, latents, params);
}

// Same likelihood over a block of new observations only (the new-data part
// that the patient-update weight ratio reduces to).
inline double log_obs_likelihood_block(const ObservationBlock& block, double age_std,
                                       const PatientLatents& latents, const PopulationParams& params) {
    block.validate();
    if (block.empty()) return 0.0;
    KahanSum total;
    double base = params.beta_age * age_std + latents.u[0];
    for (const auto& o : block.psa)
        total.add(log_normal_pdf(o.value, base + latents.u[1] * o.time, params.sigma2));
    double logit = params.gamma0 + params.gamma1 * latents.eta;
    total.add(detail::biopsy_loglik(block.biopsies.size(),
                                    detail::count_reclassified(block.biopsies), logit));
    return total.value();
}

// log g(b | theta): class prevalence plus the class-conditional Gaussian.
inline double log_latent_density(const PatientLatents& latents, const PopulationParams& params) {
    latents.validate();
    params.validate();
    const auto& m = params.mu[latents.eta];
    const auto& t2 = params.tau2[latents.eta];
    require_valid(t2[0] > 0.0 && t2[1] > 0.0, "log_latent_density: tau2 must be positive");
    double out = latents.eta ? std::log(params.rho) : std::log1p(-params.rho);
    out += log_normal_pdf(latents.u[0], m[0], t2[0]);
    out += log_normal_pdf(latents.u[1], m[1], t2[1]);
    return out;
}

// log pi(theta); returns -inf for out-of-support values.
inline double log_prior(const PopulationParams& params, const ModelConfig& config) {
    config.validate();
    double out = log_beta_pdf(params.rho, config.a_rho, config.b_rho);
    double s0v = config.s0 * config.s0;
    for (int c = 0; c < 2; ++c)
        for (int d = 0; d < 2; ++d) {
            out += log_normal_pdf(params.mu[c][d], config.m0, s0v);
            out += log_inv_gamma_pdf(params.tau2[c][d], config.a_tau, config.b_tau);
        }
    out += log_inv_gamma_pdf(params.sigma2, config.a_tau, config.b_tau);
    out += log_normal_pdf(params.beta_age, 0.0, config.s_beta * config.s_beta);
    double sgv = config.s_gamma * config.s_gamma;
    out += log_normal_pdf(params.gamma0, 0.0, sgv);
    out += log_normal_pdf(params.gamma1, 0.0, sgv);
    return out;
}

// Draw b ~ g(. | theta). Degenerate variances collapse to the mean.
inline PatientLatents sample_latents(const PopulationParams& params, Rng& rng) {
    params.validate();
    PatientLatents out;
    out.eta = rng.bernoulli(params.rho) ? 1 : 0;
    out.u[0] = rng.normal(params.mu[out.eta][0], params.tau2[out.eta][0]);
    out.u[1] = rng.normal(params.mu[out.eta][1], params.tau2[out.eta][1]);
    return out;
}

inline PatientLatents sample_latents(const PopulationParams& params, std::uint64_t seed) {
    Rng rng(seed);
    return sample_latents(params, rng);
}

namespace detail {

// log N(r; 0, sigma2 I + Z D Z') for D = diag(d), Z rows (1, t_i), via the
// 2x2 Woodbury identity. Entries of d below the degeneracy floor are
// treated as point masses (dropped from the low-rank part).
inline double log_mvn_lowrank(const std::vector<double>& r, const std::vector<double>& times,
                              const std::array<double, 2>& d, double sigma2) {
    require_valid(sigma2 > 0.0, "marginal likelihood: sigma2 must be positive");
    const std::size_t m = r.size();
    bool active0 = d[0] >= kDegenerateVariance;
    bool active1 = d[1] >= kDegenerateVariance;

    double rr = 0.0, zr0 = 0.0, zr1 = 0.0;
    double z00 = 0.0, z01 = 0.0, z11 = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        rr += r[i] * r[i];
        zr0 += r[i];
        zr1 += r[i] * times[i];
        z00 += 1.0;
        z01 += times[i];
        z11 += times[i] * times[i];
    }

    double quad, logdet;
    if (active0 && active1) {
        double a00 = 1.0 / d[0] + z00 / sigma2;
        double a01 = z01 / sigma2;
        double a11 = 1.0 / d[1] + z11 / sigma2;
        double det = a00 * a11 - a01 * a01;
        require(a00 > 0.0 && det > 0.0, ErrorCode::validation,
                "marginal likelihood: covariance not positive definite");
        double b0 = zr0 / sigma2, b1 = zr1 / sigma2;
        // solve A x = b for the 2x2 system
        double x0 = (a11 * b0 - a01 * b1) / det;
        double x1 = (a00 * b1 - a01 * b0) / det;
        quad = rr / sigma2 - (b0 * x0 + b1 * x1);
        logdet = static_cast<double>(m) * std::log(sigma2) + std::log(det) + std::log(d[0]) + std::log(d[1]);
    } else if (active0 || active1) {
        double dv = active0 ? d[0] : d[1];
        double zz = active0 ? z00 : z11;
        double zr = active0 ? zr0 : zr1;
        double a = 1.0 / dv + zz / sigma2;
        require(a > 0.0, ErrorCode::validation, "marginal likelihood: covariance not positive definite");
        double b = zr / sigma2;
        quad = rr / sigma2 - b * b / a;
        logdet = static_cast<double>(m) * std::log(sigma2) + std::log(a) + std::log(dv);
    } else {
        quad = rr / sigma2;
        logdet = static_cast<double>(m) * std::log(sigma2);
    }
    return -0.5 * (static_cast<double>(m) * kLogTwoPi + logdet + quad);
}

}  // namespace detail

// log [ ∫ f(psa | u, theta) N(u; mu[eta], diag(tau2[eta])) du ] + log f(biopsies | eta, theta).
// The psa vector is jointly Gaussian; computed in closed form.
inline double marginal_class_loglik(const PatientRecord& record, int eta,
                                    const PopulationParams& params) {
    record.validate();
    params.validate();
    require_valid(eta == 0 || eta == 1, "marginal_class_loglik: eta must be 0 or 1");

    double out = 0.0;
    if (!record.psa.empty()) {
        const auto& m = params.mu[eta];
        std::vector<double> r(record.psa.size());
        std::vector<double> times(record.psa.size());
        for (std::size_t i = 0; i < record.psa.size(); ++i) {
            times[i] = record.psa[i].time;
            r[i] = record.psa[i].value - params.beta_age * record.age_std - m[0] - m[1] * times[i];
        }
        out += detail::log_mvn_lowrank(r, times, params.tau2[eta], params.sigma2);
    }
    double logit = params.gamma0 + params.gamma1 * eta;
    out += detail::biopsy_loglik(record.biopsies.size(),
                                 detail::count_reclassified(record.biopsies), logit);
    return out;
}

// theta ~ pi(theta). gamma1 is drawn from its prior truncated to [0, inf),
// matching the identification constraint enforced by the fitter.
inline PopulationParams sample_params_from_prior(const ModelConfig& config, Rng& rng) {
    config.validate();
    PopulationParams p;
    p.rho = rng.beta(config.a_rho, config.b_rho);
    double s0v = config.s0 * config.s0;
    for (int c = 0; c < 2; ++c)
        for (int d = 0; d < 2; ++d) {
            p.mu[c][d] = rng.normal(config.m0, s0v);
            p.tau2[c][d] = rng.inv_gamma(config.a_tau, config.b_tau);
        }
    p.sigma2 = rng.inv_gamma(config.a_tau, config.b_tau);
    p.beta_age = rng.normal(0.0, config.s_beta * config.s_beta);
    double sgv = config.s_gamma * config.s_gamma;
    p.gamma0 = rng.normal(0.0, sgv);
    p.gamma1 = rng.truncated_normal_nonneg(0.0, sgv);
    return p;
}

}  // namespace lcis
