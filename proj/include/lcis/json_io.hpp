#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lcis/cohort.hpp"
#include "lcis/error.hpp"
#include "lcis/math.hpp"
#include "lcis/model.hpp"
#include "lcis/sha256.hpp"

namespace lcis {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* what) {
    require_valid(j.is_object(), std::string(what) + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) { ok = true; break; }
        require_valid(ok, std::string(what) + ": unknown field '" + key + "'");
    }
}

inline double get_number(const json& j, const char* key, const char* what) {
    require_valid(j.contains(key), std::string(what) + ": missing field '" + key + "'");
    const auto& v = j.at(key);
    require_valid(v.is_number(), std::string(what) + ": field '" + key + "' must be a number");
    return v.get<double>();
}

inline std::uint64_t get_uint(const json& j, const char* key, const char* what) {
    require_valid(j.contains(key), std::string(what) + ": missing field '" + key + "'");
    const auto& v = j.at(key);
    require_valid(v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0),
                  std::string(what) + ": field '" + key + "' must be a nonnegative integer");
    return v.get<std::uint64_t>();
}

inline int get_binary(const json& v, const char* what) {
    require_valid(v.is_number_integer(), std::string(what) + ": expected 0 or 1");
    int x = v.get<int>();
    require_valid(x == 0 || x == 1, std::string(what) + ": expected 0 or 1");
    return x;
}

}  // namespace detail

// ---- PopulationParams ----

inline ojson to_json(const PopulationParams& p) {
    ojson j;
    j["rho"] = p.rho;
    j["beta_age"] = p.beta_age;
    j["mu"] = {{p.mu[0][0], p.mu[0][1]}, {p.mu[1][0], p.mu[1][1]}};
    j["tau2"] = {{p.tau2[0][0], p.tau2[0][1]}, {p.tau2[1][0], p.tau2[1][1]}};
    j["sigma2"] = p.sigma2;
    j["gamma0"] = p.gamma0;
    j["gamma1"] = p.gamma1;
    return j;
}

inline PopulationParams params_from_json(const json& j) {
    detail::check_keys(j, {"rho", "beta_age", "mu", "tau2", "sigma2", "gamma0", "gamma1"},
                       "PopulationParams");
    PopulationParams p;
    p.rho = detail::get_number(j, "rho", "PopulationParams");
    p.beta_age = detail::get_number(j, "beta_age", "PopulationParams");
    for (const char* key : {"mu", "tau2"}) {
        require_valid(j.contains(key), std::string("PopulationParams: missing field '") + key + "'");
        const auto& m = j.at(key);
        require_valid(m.is_array() && m.size() == 2 && m[0].is_array() && m[1].is_array()
                          && m[0].size() == 2 && m[1].size() == 2,
                      std::string("PopulationParams: '") + key + "' must be a 2x2 array");
        for (int c = 0; c < 2; ++c)
            for (int d = 0; d < 2; ++d) {
                require_valid(m[c][d].is_number(),
                              std::string("PopulationParams: '") + key + "' entries must be numbers");
                (key[0] == 'm' ? p.mu : p.tau2)[c][d] = m[c][d].get<double>();
            }
    }
    p.sigma2 = detail::get_number(j, "sigma2", "PopulationParams");
    p.gamma0 = detail::get_number(j, "gamma0", "PopulationParams");
    p.gamma1 = detail::get_number(j, "gamma1", "PopulationParams");
    p.validate();
    return p;
}

// ---- ModelConfig ----

inline ojson to_json(const ModelConfig& c) {
    ojson j;
    j["a_rho"] = c.a_rho;
    j["b_rho"] = c.b_rho;
    j["m0"] = c.m0;
    j["s0"] = c.s0;
    j["a_tau"] = c.a_tau;
    j["b_tau"] = c.b_tau;
    j["s_beta"] = c.s_beta;
    j["s_gamma"] = c.s_gamma;
    return j;
}

inline ModelConfig model_config_from_json(const json& j) {
    detail::check_keys(j, {"a_rho", "b_rho", "m0", "s0", "a_tau", "b_tau", "s_beta", "s_gamma"},
                       "ModelConfig");
    ModelConfig c;
    c.a_rho = detail::get_number(j, "a_rho", "ModelConfig");
    c.b_rho = detail::get_number(j, "b_rho", "ModelConfig");
    c.m0 = detail::get_number(j, "m0", "ModelConfig");
    c.s0 = detail::get_number(j, "s0", "ModelConfig");
    c.a_tau = detail::get_number(j, "a_tau", "ModelConfig");
    c.b_tau = detail::get_number(j, "b_tau", "ModelConfig");
    c.s_beta = detail::get_number(j, "s_beta", "ModelConfig");
    c.s_gamma = detail::get_number(j, "s_gamma", "ModelConfig");
    c.validate();
    return c;
}

// ---- PatientRecord ----

inline ojson to_json(const PatientRecord& r) {
    ojson j;
    j["id"] = r.id;
    j["age_std"] = r.age_std;
    j["psa"] = ojson::array();
    for (const auto& o : r.psa) j["psa"].push_back(ojson{{"time", o.time}, {"value", o.value}});
    j["biopsies"] = ojson::array();
    for (const auto& o : r.biopsies) j["biopsies"].push_back(ojson{{"time", o.time}, {"result", o.result}});
    if (r.observed_class) j["observed_class"] = *r.observed_class;
    return j;
}

inline PatientRecord record_from_json(const json& j) {
    detail::check_keys(j, {"id", "age_std", "psa", "biopsies", "observed_class"}, "PatientRecord");
    PatientRecord r;
    require_valid(j.contains("id") && j.at("id").is_string(), "PatientRecord: 'id' must be a string");
    r.id = j.at("id").get<std::string>();
    r.age_std = detail::get_number(j, "age_std", "PatientRecord");
    require_valid(j.contains("psa") && j.at("psa").is_array(), "PatientRecord: 'psa' must be an array");
    for (const auto& o : j.at("psa")) {
        detail::check_keys(o, {"time", "value"}, "PatientRecord.psa");
        r.psa.push_back({detail::get_number(o, "time", "PatientRecord.psa"),
                         detail::get_number(o, "value", "PatientRecord.psa")});
    }
    require_valid(j.contains("biopsies") && j.at("biopsies").is_array(),
                  "PatientRecord: 'biopsies' must be an array");
    for (const auto& o : j.at("biopsies")) {
        detail::check_keys(o, {"time", "result"}, "PatientRecord.biopsies");
        r.biopsies.push_back({detail::get_number(o, "time", "PatientRecord.biopsies"),
                              detail::get_binary(o.at("result"), "PatientRecord.biopsies.result")});
    }
    if (j.contains("observed_class"))
        r.observed_class = detail::get_binary(j.at("observed_class"), "PatientRecord.observed_class");
    r.validate();
    return r;
}

// ---- PatientLatents (truth files) ----

inline ojson to_json(const PatientLatents& l) {
    return ojson{{"eta", l.eta}, {"u", {l.u[0], l.u[1]}}};
}

inline PatientLatents latents_from_json(const json& j) {
    detail::check_keys(j, {"eta", "u"}, "PatientLatents");
    PatientLatents l;
    require_valid(j.contains("eta"), "PatientLatents: missing 'eta'");
    l.eta = detail::get_binary(j.at("eta"), "PatientLatents.eta");
    require_valid(j.contains("u") && j.at("u").is_array() && j.at("u").size() == 2,
                  "PatientLatents: 'u' must be a 2-array");
    l.u[0] = j.at("u")[0].get<double>();
    l.u[1] = j.at("u")[1].get<double>();
    l.validate();
    return l;
}

// ---- SimConfig ----

inline ojson to_json(const SimConfig& c) {
    ojson j;
    j["n_patients"] = c.n_patients;
    j["params"] = to_json(c.params);
    j["psa_visits"] = ojson{{"mean_count", c.psa_mean_count}, {"spacing_years", c.psa_spacing_years}};
    j["biopsy_schedule"] = ojson{{"mean_count", c.biopsy_mean_count}};
    j["frac_class_observed"] = c.frac_class_observed;
    j["age_mean"] = c.age_mean;
    j["age_sd"] = c.age_sd;
    j["seed"] = c.seed;
    return j;
}

inline SimConfig sim_config_from_json(const json& j) {
    detail::check_keys(j,
                       {"n_patients", "params", "psa_visits", "biopsy_schedule",
                        "frac_class_observed", "age_mean", "age_sd", "seed"},
                       "SimConfig");
    SimConfig c;
    c.n_patients = detail::get_uint(j, "n_patients", "SimConfig");
    require_valid(j.contains("params"), "SimConfig: missing 'params'");
    c.params = params_from_json(j.at("params"));
    require_valid(j.contains("psa_visits"), "SimConfig: missing 'psa_visits'");
    detail::check_keys(j.at("psa_visits"), {"mean_count", "spacing_years"}, "SimConfig.psa_visits");
    c.psa_mean_count = static_cast<int>(detail::get_uint(j.at("psa_visits"), "mean_count", "SimConfig.psa_visits"));
    c.psa_spacing_years = detail::get_number(j.at("psa_visits"), "spacing_years", "SimConfig.psa_visits");
    require_valid(j.contains("biopsy_schedule"), "SimConfig: missing 'biopsy_schedule'");
    detail::check_keys(j.at("biopsy_schedule"), {"mean_count"}, "SimConfig.biopsy_schedule");
    c.biopsy_mean_count =
        static_cast<int>(detail::get_uint(j.at("biopsy_schedule"), "mean_count", "SimConfig.biopsy_schedule"));
    c.frac_class_observed = detail::get_number(j, "frac_class_observed", "SimConfig");
    c.age_mean = detail::get_number(j, "age_mean", "SimConfig");
    c.age_sd = detail::get_number(j, "age_sd", "SimConfig");
    if (j.contains("seed")) c.seed = detail::get_uint(j, "seed", "SimConfig");
    c.validate();
    return c;
}

// ---- ObservationBlock ----

inline ojson to_json(const ObservationBlock& b) {
    ojson j;
    j["psa"] = ojson::array();
    for (const auto& o : b.psa) j["psa"].push_back(ojson{{"time", o.time}, {"value", o.value}});
    j["biopsies"] = ojson::array();
    for (const auto& o : b.biopsies) j["biopsies"].push_back(ojson{{"time", o.time}, {"result", o.result}});
    return j;
}

inline ObservationBlock observation_block_from_json(const json& j) {
    detail::check_keys(j, {"psa", "biopsies"}, "ObservationBlock");
    ObservationBlock b;
    if (j.contains("psa")) {
        require_valid(j.at("psa").is_array(), "ObservationBlock: 'psa' must be an array");
        for (const auto& o : j.at("psa")) {
            detail::check_keys(o, {"time", "value"}, "ObservationBlock.psa");
            b.psa.push_back({detail::get_number(o, "time", "ObservationBlock.psa"),
                             detail::get_number(o, "value", "ObservationBlock.psa")});
        }
    }
    if (j.contains("biopsies")) {
        require_valid(j.at("biopsies").is_array(), "ObservationBlock: 'biopsies' must be an array");
        for (const auto& o : j.at("biopsies")) {
            detail::check_keys(o, {"time", "result"}, "ObservationBlock.biopsies");
            b.biopsies.push_back({detail::get_number(o, "time", "ObservationBlock.biopsies"),
                                  detail::get_binary(o.at("result"), "ObservationBlock.biopsies.result")});
        }
    }
    b.validate();
    return b;
}

// ---- files ----

inline json parse_json(const std::string& text, const char* what) {
    json j = json::parse(text, nullptr, false);
    require_valid(!j.is_discarded(), std::string(what) + ": malformed JSON");
    return j;
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::io, "cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write file: " + path);
    out << content;
    require(static_cast<bool>(out), ErrorCode::io, "write failed: " + path);
}

inline std::vector<PatientRecord> read_cohort_jsonl(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::io, "cannot open cohort file: " + path);
    std::vector<PatientRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(record_from_json(parse_json(line, "PatientRecord")));
        } catch (const Error& e) {
            fail(e.code(), path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline void write_cohort_jsonl(const std::string& path, const std::vector<PatientRecord>& records) {
    std::ostringstream ss;
    for (const auto& r : records) ss << to_json(r).dump() << '\n';
    write_text_file(path, ss.str());
}

inline void write_truth_jsonl(const std::string& path, const std::vector<PatientLatents>& truth) {
    std::ostringstream ss;
    for (const auto& l : truth) ss << to_json(l).dump() << '\n';
    write_text_file(path, ss.str());
}

// Canonical content digest: records sorted by id, one canonical JSON line
// each. Invariant to on-disk file ordering.
inline std::string cohort_digest(std::vector<PatientRecord> records) {
    std::sort(records.begin(), records.end(),
              [](const PatientRecord& a, const PatientRecord& b) { return a.id < b.id; });
    Sha256 h;
    for (const auto& r : records) {
        std::string line = to_json(r).dump();
        h.update(line);
        h.update("\n", 1);
    }
    return h.hex_digest();
}

}  // namespace lcis
