#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "lcis/json_io.hpp"
#include "lcis/math.hpp"
#include "lcis/model.hpp"
#include "lcis/rng.hpp"

namespace lcis {

inline constexpr int kNumParams = 13;

inline const char* param_name(int index) {
    static const char* names[kNumParams] = {
        "rho", "beta_age", "mu[0][0]", "mu[0][1]", "mu[1][0]", "mu[1][1]",
        "tau2[0][0]", "tau2[0][1]", "tau2[1][0]", "tau2[1][1]", "sigma2", "gamma0", "gamma1"};
    return names[index];
}

inline double param_get(const PopulationParams& p, int index) {
    switch (index) {
        case 0: return p.rho;
        case 1: return p.beta_age;
        case 2: return p.mu[0][0];
        case 3: return p.mu[0][1];
        case 4: return p.mu[1][0];
        case 5: return p.mu[1][1];
        case 6: return p.tau2[0][0];
        case 7: return p.tau2[0][1];
        case 8: return p.tau2[1][0];
        case 9: return p.tau2[1][1];
        case 10: return p.sigma2;
        case 11: return p.gamma0;
        case 12: return p.gamma1;
    }
    fail(ErrorCode::validation, "param_get: index out of range");
}

inline void param_set(PopulationParams& p, int index, double v) {
    switch (index) {
        case 0: p.rho = v; return;
        case 1: p.beta_age = v; return;
        case 2: p.mu[0][0] = v; return;
        case 3: p.mu[0][1] = v; return;
        case 4: p.mu[1][0] = v; return;
        case 5: p.mu[1][1] = v; return;
        case 6: p.tau2[0][0] = v; return;
        case 7: p.tau2[0][1] = v; return;
        case 8: p.tau2[1][0] = v; return;
        case 9: p.tau2[1][1] = v; return;
        case 10: p.sigma2 = v; return;
        case 11: p.gamma0 = v; return;
        case 12: p.gamma1 = v; return;
    }
    fail(ErrorCode::validation, "param_set: index out of range");
}

struct FitSettings {
    int chains = 4;
    int iters = 5000;    // kept draws per chain
    int burn_in = 1000;  // discarded iterations per chain (adaptation window)
    int thin = 1;
    std::uint64_t seed = 0;

    void validate() const {
        require_valid(chains >= 1, "FitSettings: chains must be >= 1");
        require_valid(iters >= 1, "FitSettings: iters must be >= 1");
        require_valid(burn_in >= 0, "FitSettings: burn_in must be >= 0");
        require_valid(thin >= 1, "FitSettings: thin must be >= 1");
    }
};

struct StoreMeta {
    int chains = 0;
    int iters = 0;
    int burn_in = 0;
    int thin = 0;
    std::uint64_t seed = 0;
    std::string data_digest;
    std::string tool_version;
};

// Per-patient latent draws, columnar over the J kept draws.
struct PatientDrawColumns {
    std::vector<std::uint8_t> eta;
    std::vector<double> u0;
    std::vector<double> u1;
};

// The draw set {theta^(j), b_{1:n}^(j)}, j = 1..J, with enough per-patient
// side data (age, last observation times) to weigh later updates without
// the original cohort file. Draws are chain-interleaved: draw j came from
// chain j % chains, so any prefix covers all chains evenly.
struct PosteriorSample {
    std::vector<std::string> patient_ids;  // sorted ascending
    std::vector<double> patient_age_std;
    std::vector<double> patient_last_psa_time;     // -1 when none
    std::vector<double> patient_last_biopsy_time;  // -1 when none
    std::vector<PopulationParams> params;
    std::vector<PatientDrawColumns> latents;  // [patient][draw]
    StoreMeta meta;

    std::size_t num_draws() const { return params.size(); }
    std::size_t num_patients() const { return patient_ids.size(); }

    PatientLatents latent(std::size_t patient, std::size_t draw) const {
        const auto& col = latents[patient];
        return PatientLatents{static_cast<int>(col.eta[draw]), {col.u0[draw], col.u1[draw]}};
    }

    std::optional<std::size_t> find_patient(const std::string& id) const {
        auto it = std::lower_bound(patient_ids.begin(), patient_ids.end(), id);
        if (it == patient_ids.end() || *it != id) return std::nullopt;
        return static_cast<std::size_t>(it - patient_ids.begin());
    }

    std::vector<double> param_column(int index) const {
        std::vector<double> out(params.size());
        for (std::size_t j = 0; j < params.size(); ++j) out[j] = param_get(params[j], index);
        return out;
    }

    void validate() const {
        require_valid(num_draws() >= 1, "PosteriorSample: needs at least one draw");
        require_valid(patient_age_std.size() == num_patients()
                          && patient_last_psa_time.size() == num_patients()
                          && patient_last_biopsy_time.size() == num_patients()
                          && latents.size() == num_patients(),
                      "PosteriorSample: inconsistent patient tables");
        for (const auto& col : latents)
            require_valid(col.eta.size() == num_draws() && col.u0.size() == num_draws()
                              && col.u1.size() == num_draws(),
                          "PosteriorSample: inconsistent draw columns");
        for (std::size_t i = 1; i < patient_ids.size(); ++i)
            require_valid(patient_ids[i - 1] < patient_ids[i],
                          "PosteriorSample: patient ids must be sorted and unique");
    }
};

// ---- Gibbs kernels ----
// Each conditional is exposed on its own so tests can exercise it
// single-site against the closed form.

namespace kernels {

inline double sample_rho(std::size_t n_class1, std::size_t n_total, const ModelConfig& config, Rng& rng) {
    return rng.beta(config.a_rho + static_cast<double>(n_class1),
                    config.b_rho + static_cast<double>(n_total - n_class1));
}

// mu[c][d] | u, tau2: Gaussian conjugate update from n_c effects summing to `sum`.
inline double sample_mu(double sum, std::size_t count, double tau2_d, const ModelConfig& config, Rng& rng) {
    double prior_prec = 1.0 / (config.s0 * config.s0);
    double prec = prior_prec + static_cast<double>(count) / tau2_d;
    double mean = (config.m0 * prior_prec + sum / tau2_d) / prec;
    return rng.normal(mean, 1.0 / prec);
}

// tau2[c][d] | u, mu: inverse-gamma update from the centered sum of squares.
inline double sample_tau2(double sq_sum, std::size_t count, const ModelConfig& config, Rng& rng) {
    return rng.inv_gamma(config.a_tau + 0.5 * static_cast<double>(count), config.b_tau + 0.5 * sq_sum);
}

inline double sample_sigma2(double rss, std::size_t n_obs, const ModelConfig& config, Rng& rng) {
    return rng.inv_gamma(config.a_tau + 0.5 * static_cast<double>(n_obs), config.b_tau + 0.5 * rss);
}

inline double sample_beta(double weighted_residual_sum, double weighted_xx, double sigma2,
                          const ModelConfig& config, Rng& rng) {
    double prec = 1.0 / (config.s_beta * config.s_beta) + weighted_xx / sigma2;
    double mean = (weighted_residual_sum / sigma2) / prec;
    return rng.normal(mean, 1.0 / prec);
}

// P(eta = 1 | u, biopsies, theta); the psa terms cancel given u.
inline double eta_conditional_prob1(const std::array<double, 2>& u, const PopulationParams& params,
                                    std::size_t n_biopsy, std::size_t k_reclass) {
    double l1 = std::log(params.rho)
        + log_normal_pdf(u[0], params.mu[1][0], params.tau2[1][0])
        + log_normal_pdf(u[1], params.mu[1][1], params.tau2[1][1])
        + detail::biopsy_loglik(n_biopsy, k_reclass, params.gamma0 + params.gamma1);
    double l0 = std::log1p(-params.rho)
        + log_normal_pdf(u[0], params.mu[0][0], params.tau2[0][0])
        + log_normal_pdf(u[1], params.mu[0][1], params.tau2[0][1])
        + detail::biopsy_loglik(n_biopsy, k_reclass, params.gamma0);
    return logistic(l1 - l0);
}

// Sufficient statistics of one patient's data for the Gibbs sweeps.
struct PatientStats {
    double x = 0.0;  // age_std
    std::size_t m = 0;
    double st = 0.0, stt = 0.0, sy = 0.0, syt = 0.0, syy = 0.0;
    std::size_t n_biopsy = 0, k_reclass = 0;
    std::optional<int> label;

    static PatientStats from_record(const PatientRecord& r) {
        PatientStats s;
        s.x = r.age_std;
        s.m = r.psa.size();
        for (const auto& o : r.psa) {
            s.st += o.time;
            s.stt += o.time * o.time;
            s.sy += o.value;
            s.syt += o.value * o.time;
            s.syy += o.value * o.value;
        }
        s.n_biopsy = r.biopsies.size();
        s.k_reclass = detail::count_reclassified(r.biopsies);
        s.label = r.observed_class;
        return s;
    }
};

// u | eta, psa: bivariate Gaussian conjugate update (precision form).
inline std::array<double, 2> sample_u(const PatientStats& s, int eta, const PopulationParams& params,
                                      Rng& rng) {
    const auto& mu = params.mu[eta];
    const auto& t2 = params.tau2[eta];
    require_valid(t2[0] > 0.0 && t2[1] > 0.0 && params.sigma2 > 0.0,
                  "sample_u: variances must be positive");
    double l00 = 1.0 / t2[0] + static_cast<double>(s.m) / params.sigma2;
    double l01 = s.st / params.sigma2;
    double l11 = 1.0 / t2[1] + s.stt / params.sigma2;
    double sy_adj = s.sy - static_cast<double>(s.m) * params.beta_age * s.x;
    double syt_adj = s.syt - params.beta_age * s.x * s.st;
    double h0 = mu[0] / t2[0] + sy_adj / params.sigma2;
    double h1 = mu[1] / t2[1] + syt_adj / params.sigma2;

    // Cholesky of the 2x2 precision
    double c00 = std::sqrt(l00);
    double c10 = l01 / c00;
    double c11sq = l11 - c10 * c10;
    require_valid(c11sq > 0.0, "sample_u: precision not positive definite");
    double c11 = std::sqrt(c11sq);

    // mean = Lambda^{-1} h
    double y0 = h0 / c00;
    double y1 = (h1 - c10 * y0) / c11;
    double mean1 = y1 / c11;
    double mean0 = (y0 - c10 * mean1) / c00;

    // u = mean + C^{-T} z has covariance Lambda^{-1}
    double z0 = rng.normal();
    double z1 = rng.normal();
    double w1 = z1 / c11;
    double w0 = (z0 - c10 * w1) / c00;
    return {mean0 + w0, mean1 + w1};
}

// Adaptive random-walk state for the biopsy coefficients; adaptation runs
// during burn-in only.
struct GammaProposal {
    double sd0 = 0.2;
    double sd1 = 0.2;
    double target_accept = 0.35;
    std::size_t step = 0;

    void adapt(bool accepted) {
        ++step;
        double rate = std::pow(static_cast<double>(step), -0.6);
        double delta = rate * ((accepted ? 1.0 : 0.0) - target_accept);
        sd0 *= std::exp(delta);
        sd1 *= std::exp(delta);
    }
};

// Biopsy outcome counts grouped by current class assignment.
struct BiopsyClassCounts {
    std::size_t n0 = 0, k0 = 0;  // class 0: totals, reclassifications
    std::size_t n1 = 0, k1 = 0;
};

inline double gamma_log_target(double g0, double g1, const BiopsyClassCounts& counts,
                               const ModelConfig& config) {
    if (g1 < 0.0) return kNegInf;  // identification constraint
    double sgv = config.s_gamma * config.s_gamma;
    return detail::biopsy_loglik(counts.n0, counts.k0, g0)
        + detail::biopsy_loglik(counts.n1, counts.k1, g0 + g1)
        + log_normal_pdf(g0, 0.0, sgv) + log_normal_pdf(g1, 0.0, sgv);
}

// One random-walk Metropolis step on (gamma0, gamma1); returns acceptance.
inline bool gamma_metropolis_step(double& g0, double& g1, const BiopsyClassCounts& counts,
                                  const ModelConfig& config, const GammaProposal& proposal, Rng& rng) {
    double cand0 = g0 + proposal.sd0 * rng.normal();
    double cand1 = g1 + proposal.sd1 * rng.normal();
    double delta = gamma_log_target(cand0, cand1, counts, config) - gamma_log_target(g0, g1, counts, config);
    bool accept = delta >= 0.0 || rng.uniform() < std::exp(delta);
    if (accept) {
        g0 = cand0;
        g1 = cand1;
    }
    return accept;
}

}  // namespace kernels

// One Gibbs update of a patient's latent block: eta from its exact
// conditional (skipped when the class is observed), then u given eta.
inline PatientLatents update_patient_block(const PatientRecord& record, const PatientLatents& current,
                                           const PopulationParams& params, Rng& rng) {
    record.validate();
    current.validate();
    params.validate();
    auto stats = kernels::PatientStats::from_record(record);
    PatientLatents out = current;
    if (stats.label) {
        out.eta = *stats.label;
    } else {
        double p1 = kernels::eta_conditional_prob1(current.u, params, stats.n_biopsy, stats.k_reclass);
        out.eta = rng.bernoulli(p1) ? 1 : 0;
    }
    out.u = kernels::sample_u(stats, out.eta, params, rng);
    return out;
}

namespace detail {

inline PopulationParams update_population_from_stats(const std::vector<kernels::PatientStats>& stats,
                                                     const std::vector<PatientLatents>& latents,
                                                     const PopulationParams& current,
                                                     const ModelConfig& config,
                                                     kernels::GammaProposal& proposal, bool adapt,
                                                     Rng& rng) {
    PopulationParams next = current;
    const std::size_t n = stats.size();

    std::size_t n1 = 0;
    for (const auto& l : latents) n1 += static_cast<std::size_t>(l.eta);
    next.rho = kernels::sample_rho(n1, n, config, rng);

    // class-stratified moments of the random effects
    for (int c = 0; c < 2; ++c) {
        std::size_t nc = 0;
        double sum0 = 0.0, sum1 = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (latents[i].eta == c) {
                ++nc;
                sum0 += latents[i].u[0];
                sum1 += latents[i].u[1];
            }
        next.mu[c][0] = kernels::sample_mu(sum0, nc, next.tau2[c][0], config, rng);
        next.mu[c][1] = kernels::sample_mu(sum1, nc, next.tau2[c][1], config, rng);
        double sq0 = 0.0, sq1 = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (latents[i].eta == c) {
                double d0 = latents[i].u[0] - next.mu[c][0];
                double d1 = latents[i].u[1] - next.mu[c][1];
                sq0 += d0 * d0;
                sq1 += d1 * d1;
            }
        next.tau2[c][0] = kernels::sample_tau2(sq0, nc, config, rng);
        next.tau2[c][1] = kernels::sample_tau2(sq1, nc, config, rng);
    }

    // residual variance and the age effect from psa residual sums
    double rss = 0.0;
    std::size_t n_obs = 0;
    double wrs = 0.0, wxx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = stats[i];
        const auto& u = latents[i].u;
        double bx = next.beta_age * s.x;
        double m = static_cast<double>(s.m);
        rss += s.syy - 2.0 * bx * s.sy + m * bx * bx
            - 2.0 * (u[0] * (s.sy - m * bx) + u[1] * (s.syt - bx * s.st))
            + m * u[0] * u[0] + 2.0 * u[0] * u[1] * s.st + u[1] * u[1] * s.stt;
        n_obs += s.m;
        wrs += s.x * (s.sy - u[0] * m - u[1] * s.st);
        wxx += s.x * s.x * m;
    }
    rss = std::max(rss, 0.0);  // guard tiny negative rounding
    next.sigma2 = kernels::sample_sigma2(rss, n_obs, config, rng);
    next.beta_age = kernels::sample_beta(wrs, wxx, next.sigma2, config, rng);

    kernels::BiopsyClassCounts counts;
    for (std::size_t i = 0; i < n; ++i) {
        if (latents[i].eta == 0) {
            counts.n0 += stats[i].n_biopsy;
            counts.k0 += stats[i].k_reclass;
        } else {
            counts.n1 += stats[i].n_biopsy;
            counts.k1 += stats[i].k_reclass;
        }
    }
    bool accepted = kernels::gamma_metropolis_step(next.gamma0, next.gamma1, counts, config, proposal, rng);
    if (adapt) proposal.adapt(accepted);
    return next;
}

}  // namespace detail

// One Gibbs sweep over the population block with a fixed (non-adapting)
// random-walk proposal for the biopsy coefficients.
inline PopulationParams update_population_block(const std::vector<PatientRecord>& cohort,
                                                const std::vector<PatientLatents>& latents,
                                                const PopulationParams& params,
                                                const ModelConfig& config, Rng& rng) {
    require_valid(cohort.size() == latents.size(), "update_population_block: cohort/latents size mismatch");
    params.validate();
    config.validate();
    std::vector<kernels::PatientStats> stats;
    stats.reserve(cohort.size());
    for (const auto& r : cohort) {
        r.validate();
        stats.push_back(kernels::PatientStats::from_record(r));
    }
    kernels::GammaProposal proposal;
    return detail::update_population_from_stats(stats, latents, params, config, proposal, false, rng);
}

namespace detail {

// Blocked draw of (beta_age, u0_1:n): beta_age from its conditional with
// the random intercepts integrated out, then each intercept refreshed from
// its conditional given the new beta_age. Age is constant within patient,
// so the plain beta | u conditional is a narrow ridge; the collapsed draw
// mixes at the marginal scale.
inline void blocked_beta_intercepts(const std::vector<kernels::PatientStats>& stats,
                                    std::vector<PatientLatents>& latents, PopulationParams& params,
                                    const ModelConfig& config, Rng& rng) {
    double prec = 1.0 / (config.s_beta * config.s_beta);
    double num = 0.0;
    for (std::size_t i = 0; i < stats.size(); ++i) {
        const auto& s = stats[i];
        if (s.m == 0) continue;
        int eta = latents[i].eta;
        double m = static_cast<double>(s.m);
        double v = params.tau2[eta][0] + params.sigma2 / m;
        double ybar = (s.sy - latents[i].u[1] * s.st) / m;
        prec += s.x * s.x / v;
        num += s.x * (ybar - params.mu[eta][0]) / v;
    }
    params.beta_age = rng.normal(num / prec, 1.0 / prec);

    for (std::size_t i = 0; i < stats.size(); ++i) {
        const auto& s = stats[i];
        int eta = latents[i].eta;
        double t20 = params.tau2[eta][0];
        if (s.m == 0) {
            latents[i].u[0] = rng.normal(params.mu[eta][0], t20);
            continue;
        }
        double m = static_cast<double>(s.m);
        double resid = s.sy - m * params.beta_age * s.x - latents[i].u[1] * s.st;
        double p0 = 1.0 / t20 + m / params.sigma2;
        double mean0 = (params.mu[eta][0] / t20 + resid / params.sigma2) / p0;
        latents[i].u[0] = rng.normal(mean0, 1.0 / p0);
    }
}

// Per-patient least-squares moments for chain initialization.
struct InitMoments {
    double alpha_mean = 0.0, alpha_var = 0.1;
    double slope_mean = 0.0, slope_var = 0.01;
    double resid_var = 0.1;
    double reclass_rate = 0.1;
};

inline InitMoments init_moments(const std::vector<kernels::PatientStats>& stats) {
    InitMoments m;
    std::vector<double> alphas, slopes;
    KahanSum rss_sum;
    std::size_t rss_n = 0;
    std::size_t nb = 0, kb = 0;
    for (const auto& s : stats) {
        nb += s.n_biopsy;
        kb += s.k_reclass;
        if (s.m == 0) continue;
        double mm = static_cast<double>(s.m);
        double tvar = s.stt - s.st * s.st / mm;
        double slope = tvar > 1e-9 ? (s.syt - s.sy * s.st / mm) / tvar : 0.0;
        double alpha = (s.sy - slope * s.st) / mm;
        alphas.push_back(alpha);
        slopes.push_back(slope);
        if (s.m >= 3) {
            double rss = s.syy - 2.0 * alpha * s.sy - 2.0 * slope * s.syt + mm * alpha * alpha
                + 2.0 * alpha * slope * s.st + slope * slope * s.stt;
            rss_sum.add(std::max(rss, 0.0));
            rss_n += s.m - 2;
        }
    }
    if (!alphas.empty()) {
        m.alpha_mean = mean_of(alphas);
        m.slope_mean = mean_of(slopes);
        if (alphas.size() >= 2) {
            m.alpha_var = std::max(variance_of(alphas), 1e-4);
            m.slope_var = std::max(variance_of(slopes), 1e-5);
        }
    }
    if (rss_n > 0) m.resid_var = std::max(rss_sum.value() / static_cast<double>(rss_n), 1e-4);
    m.reclass_rate = (static_cast<double>(kb) + 0.5) / (static_cast<double>(nb) + 1.0);
    // overflowing data must not poison the starting point; the sweeps'
    // finiteness checks report the offending update instead
    InitMoments fallback;
    if (!std::isfinite(m.alpha_mean)) m.alpha_mean = fallback.alpha_mean;
    if (!std::isfinite(m.alpha_var)) m.alpha_var = fallback.alpha_var;
    if (!std::isfinite(m.slope_mean)) m.slope_mean = fallback.slope_mean;
    if (!std::isfinite(m.slope_var)) m.slope_var = fallback.slope_var;
    if (!std::isfinite(m.resid_var)) m.resid_var = fallback.resid_var;
    return m;
}

// Overdispersed data-informed starting point; prior-sampled starts put the
// intercept variances on a slow transient.
inline PopulationParams initial_params(const InitMoments& m, const ModelConfig& config, Rng& rng) {
    (void)config;
    PopulationParams p;
    p.rho = 0.2 + 0.6 * rng.uniform();
    p.beta_age = rng.normal(0.0, 0.01);
    for (int c = 0; c < 2; ++c) {
        p.mu[c][0] = m.alpha_mean + rng.normal(0.0, m.alpha_var);
        p.mu[c][1] = m.slope_mean + rng.normal(0.0, m.slope_var);
        p.tau2[c][0] = std::max(m.alpha_var * std::exp(rng.normal(0.0, 0.25)), 1e-6);
        p.tau2[c][1] = std::max(m.slope_var * std::exp(rng.normal(0.0, 0.25)), 1e-6);
    }
    p.sigma2 = std::max(m.resid_var * std::exp(rng.normal(0.0, 0.25)), 1e-6);
    double rate = std::min(std::max(m.reclass_rate, 1e-3), 1.0 - 1e-3);
    p.gamma0 = std::log(rate / (1.0 - rate)) + rng.normal(0.0, 0.09);
    p.gamma1 = std::abs(rng.normal(0.5, 0.25));
    return p;
}

inline void check_finite_params(const PopulationParams& p, int iteration) {
    for (int i = 0; i < kNumParams; ++i) {
        double v = param_get(p, i);
        if (!std::isfinite(v))
            fail(ErrorCode::validation,
                 std::string("fit: non-finite value for ") + param_name(i) + " at iteration "
                     + std::to_string(iteration));
    }
}

inline void check_finite_latents(const std::vector<PatientLatents>& latents,
                                 const std::vector<std::string>& ids, int iteration) {
    for (std::size_t i = 0; i < latents.size(); ++i)
        if (!std::isfinite(latents[i].u[0] + latents[i].u[1]))
            fail(ErrorCode::validation,
                 "fit: non-finite random effects for patient " + ids[i] + " at iteration "
                     + std::to_string(iteration));
}

// One full Metropolis-within-Gibbs sweep: patient blocks, population
// conditionals, then the blocked (beta_age, intercepts) move.
inline void gibbs_sweep(const std::vector<kernels::PatientStats>& stats,
                        std::vector<PatientLatents>& latents, PopulationParams& params,
                        const ModelConfig& config, kernels::GammaProposal& proposal, bool adapt,
                        Rng& rng) {
    for (std::size_t i = 0; i < stats.size(); ++i) {
        const auto& s = stats[i];
        int eta = latents[i].eta;
        if (!s.label) {
            double p1 = kernels::eta_conditional_prob1(latents[i].u, params, s.n_biopsy, s.k_reclass);
            eta = rng.bernoulli(p1) ? 1 : 0;
        }
        latents[i].eta = eta;
        latents[i].u = kernels::sample_u(s, eta, params, rng);
    }
    params = update_population_from_stats(stats, latents, params, config, proposal, adapt, rng);
    blocked_beta_intercepts(stats, latents, params, config, rng);
}

}  // namespace detail

// Draws from the joint posterior over (theta, b_1:n) by Metropolis-within-
// Gibbs. Chains run independently off per-chain sub-seeds; kept draws are
// chain-interleaved. Patients are processed in id order regardless of the
// input file order, so permuted cohort files give identical output.
inline PosteriorSample fit(std::vector<PatientRecord> cohort, const ModelConfig& config,
                           const FitSettings& settings, const std::string& tool_version = "") {
    settings.validate();
    config.validate();
    require_valid(!cohort.empty(), "fit: cohort must be nonempty");
    for (const auto& r : cohort) r.validate();
    std::sort(cohort.begin(), cohort.end(),
              [](const PatientRecord& a, const PatientRecord& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < cohort.size(); ++i)
        require_valid(cohort[i - 1].id != cohort[i].id, "fit: duplicate patient id " + cohort[i].id);

    const std::size_t n = cohort.size();
    std::vector<kernels::PatientStats> stats;
    stats.reserve(n);
    for (const auto& r : cohort) stats.push_back(kernels::PatientStats::from_record(r));

    PosteriorSample out;
    out.meta = StoreMeta{settings.chains, settings.iters, settings.burn_in, settings.thin,
                         settings.seed, cohort_digest(cohort), tool_version};
    out.patient_ids.reserve(n);
    for (const auto& r : cohort) {
        out.patient_ids.push_back(r.id);
        out.patient_age_std.push_back(r.age_std);
        out.patient_last_psa_time.push_back(r.last_psa_time());
        out.patient_last_biopsy_time.push_back(r.last_biopsy_time());
    }
    const std::size_t total_draws = static_cast<std::size_t>(settings.chains) * settings.iters;
    out.params.resize(total_draws);
    out.latents.resize(n);
    for (auto& col : out.latents) {
        col.eta.resize(total_draws);
        col.u0.resize(total_draws);
        col.u1.resize(total_draws);
    }

    const detail::InitMoments moments = detail::init_moments(stats);
    for (int chain = 0; chain < settings.chains; ++chain) {
        Rng rng(mix_seed(settings.seed, 0x6669745fULL, static_cast<std::uint64_t>(chain)));
        PopulationParams params = detail::initial_params(moments, config, rng);
        std::vector<PatientLatents> latents(n);
        for (std::size_t i = 0; i < n; ++i) {
            latents[i].eta = stats[i].label ? *stats[i].label : (rng.bernoulli(0.5) ? 1 : 0);
            latents[i].u[0] = rng.normal(params.mu[latents[i].eta][0], params.tau2[latents[i].eta][0]);
            latents[i].u[1] = rng.normal(params.mu[latents[i].eta][1], params.tau2[latents[i].eta][1]);
        }

        kernels::GammaProposal proposal;
        const int total_iters = settings.burn_in + settings.iters * settings.thin;
        int kept = 0;
        for (int iter = 0; iter < total_iters; ++iter) {
            bool adapting = iter < settings.burn_in;
            detail::gibbs_sweep(stats, latents, params, config, proposal, adapting, rng);
            detail::check_finite_params(params, iter);
            detail::check_finite_latents(latents, out.patient_ids, iter);

            if (iter >= settings.burn_in && (iter - settings.burn_in) % settings.thin == 0) {
                std::size_t slot = static_cast<std::size_t>(kept) * settings.chains + chain;
                if (slot < total_draws) {
                    out.params[slot] = params;
                    for (std::size_t i = 0; i < n; ++i) {
                        out.latents[i].eta[slot] = static_cast<std::uint8_t>(latents[i].eta);
                        out.latents[i].u0[slot] = latents[i].u[0];
                        out.latents[i].u1[slot] = latents[i].u[1];
                    }
                    ++kept;
                }
                if (kept >= settings.iters) break;
            }
        }
    }
    out.validate();
    return out;
}

// ---- summaries ----

struct SummaryRow {
    std::string name;
    double mean = 0.0;
    double sd = 0.0;
    double q025 = 0.0;
    double q500 = 0.0;
    double q975 = 0.0;
    double psr = std::numeric_limits<double>::quiet_NaN();  // NaN = undefined
};

// Potential scale reduction across chains, clamped below at 1; NaN when the
// within-chain variance vanishes (constant draws) or with a single chain.
inline double potential_scale_reduction(const std::vector<double>& draws, int chains) {
    if (chains < 2) return std::numeric_limits<double>::quiet_NaN();
    std::size_t per_chain = draws.size() / chains;
    if (per_chain < 2) return std::numeric_limits<double>::quiet_NaN();

    std::vector<double> chain_means(chains);
    double w = 0.0;
    for (int c = 0; c < chains; ++c) {
        KahanSum sum;
        for (std::size_t k = 0; k < per_chain; ++k) sum.add(draws[k * chains + c]);
        double mean = sum.value() / static_cast<double>(per_chain);
        chain_means[c] = mean;
        KahanSum sq;
        for (std::size_t k = 0; k < per_chain; ++k) {
            double d = draws[k * chains + c] - mean;
            sq.add(d * d);
        }
        w += sq.value() / static_cast<double>(per_chain - 1);
    }
    w /= chains;
    if (!(w > 0.0)) return std::numeric_limits<double>::quiet_NaN();

    double grand = mean_of(chain_means);
    double b_over_n = 0.0;
    for (double m : chain_means) b_over_n += (m - grand) * (m - grand);
    b_over_n /= (chains - 1);

    double n = static_cast<double>(per_chain);
    double var_plus = (n - 1.0) / n * w + b_over_n;
    return std::max(1.0, std::sqrt(var_plus / w));
}

inline std::vector<SummaryRow> summarize(const PosteriorSample& sample) {
    sample.validate();
    std::vector<SummaryRow> rows;
    rows.reserve(kNumParams);
    for (int i = 0; i < kNumParams; ++i) {
        auto col = sample.param_column(i);
        SummaryRow row;
        row.name = param_name(i);
        row.mean = mean_of(col);
        row.sd = std::sqrt(variance_of(col));
        row.q025 = quantile_nearest_rank(col, 0.025);
        row.q500 = quantile_nearest_rank(col, 0.5);
        row.q975 = quantile_nearest_rank(col, 0.975);
        row.psr = potential_scale_reduction(col, sample.meta.chains);
        rows.push_back(std::move(row));
    }
    return rows;
}

// Posterior mean of eta per patient: the in-sample risk estimates.
inline std::vector<double> training_risks(const PosteriorSample& sample) {
    std::vector<double> out(sample.num_patients());
    for (std::size_t i = 0; i < sample.num_patients(); ++i) {
        KahanSum s;
        for (std::size_t j = 0; j < sample.num_draws(); ++j)
            s.add(static_cast<double>(sample.latents[i].eta[j]));
        out[i] = s.value() / static_cast<double>(sample.num_draws());
    }
    return out;
}

}  // namespace lcis
