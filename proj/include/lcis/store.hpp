#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "lcis/json_io.hpp"
#include "lcis/mcmc.hpp"
#include "lcis/sha256.hpp"

namespace lcis {

namespace detail {

// Little-endian raw serialization helpers for the columnar artifacts.
class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v) { raw(&v, sizeof v); }
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void f64(double v) { raw(&v, sizeof v); }
    void bytes(const void* p, std::size_t len) { raw(p, len); }

    void str16(const std::string& s) {
        require_valid(s.size() <= 0xffff, "serialized string too long");
        u16(static_cast<std::uint16_t>(s.size()));
        raw(s.data(), s.size());
    }

    void f64_array(const std::vector<double>& xs) {
        raw(xs.data(), xs.size() * sizeof(double));
    }

    void u8_array(const std::vector<std::uint8_t>& xs) { raw(xs.data(), xs.size()); }

    std::string take() { return std::move(buf_); }
    const std::string& view() const { return buf_; }

private:
    void raw(const void* p, std::size_t len) {
        buf_.append(static_cast<const char*>(p), len);
    }
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string data) : data_(std::move(data)) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
    std::uint16_t u16() { std::uint16_t v; std::memcpy(&v, take(2), 2); return v; }
    std::uint32_t u32() { std::uint32_t v; std::memcpy(&v, take(4), 4); return v; }
    std::uint64_t u64() { std::uint64_t v; std::memcpy(&v, take(8), 8); return v; }
    double f64() { double v; std::memcpy(&v, take(8), 8); return v; }

    std::string str16() {
        std::size_t len = u16();
        const char* p = take(len);
        return std::string(p, len);
    }

    std::vector<double> f64_array(std::size_t count) {
        std::vector<double> out(count);
        std::memcpy(out.data(), take(count * sizeof(double)), count * sizeof(double));
        return out;
    }

    std::vector<std::uint8_t> u8_array(std::size_t count) {
        std::vector<std::uint8_t> out(count);
        std::memcpy(out.data(), take(count), count);
        return out;
    }

    bool exhausted() const { return pos_ == data_.size(); }

private:
    const char* take(std::size_t len) {
        require(pos_ + len <= data_.size(), ErrorCode::io, "binary artifact truncated");
        const char* p = data_.data() + pos_;
        pos_ += len;
        return p;
    }
    std::string data_;
    std::size_t pos_ = 0;
};

inline std::string read_binary_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::io, "cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_binary_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write file: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorCode::io, "write failed: " + path);
}

}  // namespace detail

inline constexpr char kStoreMagic[9] = "LCISPOST";
inline constexpr std::uint32_t kStoreVersion = 1;

// Columnar binary layout: header (magic, version, J, n, meta, parameter
// layout), patient table, then contiguous per-parameter arrays followed by
// per-patient draw columns.
inline std::string serialize_store(const PosteriorSample& store) {
    store.validate();
    detail::ByteWriter w;
    w.bytes(kStoreMagic, 8);
    w.u32(kStoreVersion);
    w.u64(store.num_draws());
    w.u64(store.num_patients());
    w.u32(static_cast<std::uint32_t>(store.meta.chains));
    w.u32(static_cast<std::uint32_t>(store.meta.iters));
    w.u32(static_cast<std::uint32_t>(store.meta.burn_in));
    w.u32(static_cast<std::uint32_t>(store.meta.thin));
    w.u64(store.meta.seed);
    w.str16(store.meta.data_digest);
    w.str16(store.meta.tool_version);

    w.u32(kNumParams);
    for (int i = 0; i < kNumParams; ++i) w.str16(param_name(i));

    for (std::size_t i = 0; i < store.num_patients(); ++i) {
        w.str16(store.patient_ids[i]);
        w.f64(store.patient_age_std[i]);
        w.f64(store.patient_last_psa_time[i]);
        w.f64(store.patient_last_biopsy_time[i]);
    }

    for (int i = 0; i < kNumParams; ++i) w.f64_array(store.param_column(i));

    for (const auto& col : store.latents) {
        w.u8_array(col.eta);
        w.f64_array(col.u0);
        w.f64_array(col.u1);
    }
    return w.take();
}

inline PosteriorSample deserialize_store(std::string bytes) {
    detail::ByteReader r(std::move(bytes));
    char magic[8];
    for (int i = 0; i < 8; ++i) magic[i] = static_cast<char>(r.u8());
    require(std::memcmp(magic, kStoreMagic, 8) == 0, ErrorCode::io, "not a posterior store file");
    require(r.u32() == kStoreVersion, ErrorCode::io, "unsupported store version");

    PosteriorSample store;
    std::uint64_t draws = r.u64();
    std::uint64_t patients = r.u64();
    store.meta.chains = static_cast<int>(r.u32());
    store.meta.iters = static_cast<int>(r.u32());
    store.meta.burn_in = static_cast<int>(r.u32());
    store.meta.thin = static_cast<int>(r.u32());
    store.meta.seed = r.u64();
    store.meta.data_digest = r.str16();
    store.meta.tool_version = r.str16();

    std::uint32_t n_params = r.u32();
    require(n_params == kNumParams, ErrorCode::io, "unexpected parameter layout");
    for (std::uint32_t i = 0; i < n_params; ++i)
        require(r.str16() == param_name(static_cast<int>(i)), ErrorCode::io, "unexpected parameter layout");

    store.patient_ids.reserve(patients);
    for (std::uint64_t i = 0; i < patients; ++i) {
        store.patient_ids.push_back(r.str16());
        store.patient_age_std.push_back(r.f64());
        store.patient_last_psa_time.push_back(r.f64());
        store.patient_last_biopsy_time.push_back(r.f64());
    }

    std::vector<std::vector<double>> columns(kNumParams);
    for (int i = 0; i < kNumParams; ++i) columns[i] = r.f64_array(draws);
    store.params.resize(draws);
    for (std::uint64_t j = 0; j < draws; ++j)
        for (int i = 0; i < kNumParams; ++i) param_set(store.params[j], i, columns[i][j]);

    store.latents.resize(patients);
    for (std::uint64_t i = 0; i < patients; ++i) {
        store.latents[i].eta = r.u8_array(draws);
        store.latents[i].u0 = r.f64_array(draws);
        store.latents[i].u1 = r.f64_array(draws);
    }
    require(r.exhausted(), ErrorCode::io, "trailing bytes in store file");
    store.validate();
    return store;
}

inline std::string store_digest(const PosteriorSample& store) {
    Sha256 h;
    auto bytes = serialize_store(store);
    h.update(bytes.data(), bytes.size());
    return h.hex_digest();
}

// Writes the binary store plus a human-readable JSON sidecar; returns the
// store content digest.
inline std::string write_store(const std::string& path, const PosteriorSample& store) {
    auto bytes = serialize_store(store);
    Sha256 h;
    h.update(bytes.data(), bytes.size());
    std::string digest = h.hex_digest();
    detail::write_binary_file(path, bytes);

    ojson meta;
    meta["store_digest"] = digest;
    meta["draws"] = store.num_draws();
    meta["patients"] = store.num_patients();
    meta["chains"] = store.meta.chains;
    meta["iters"] = store.meta.iters;
    meta["burn_in"] = store.meta.burn_in;
    meta["thin"] = store.meta.thin;
    meta["seed"] = store.meta.seed;
    meta["data_digest"] = store.meta.data_digest;
    meta["tool_version"] = store.meta.tool_version;
    meta["layout"] = "chain-interleaved";
    write_text_file(path + ".meta.json", meta.dump(2) + "\n");
    return digest;
}

inline PosteriorSample read_store(const std::string& path) {
    return deserialize_store(detail::read_binary_file(path));
}

inline std::string file_digest(const std::string& path) {
    auto bytes = detail::read_binary_file(path);
    Sha256 h;
    h.update(bytes.data(), bytes.size());
    return h.hex_digest();
}

// Debug export: one JSON line per draw.
inline void export_store_jsonl(const std::string& path, const PosteriorSample& store) {
    std::ostringstream ss;
    for (std::size_t j = 0; j < store.num_draws(); ++j) {
        ojson line;
        line["draw"] = j;
        line["chain"] = store.meta.chains > 0 ? static_cast<int>(j % store.meta.chains) : 0;
        line["params"] = to_json(store.params[j]);
        ojson lat = ojson::array();
        for (std::size_t i = 0; i < store.num_patients(); ++i) {
            auto l = store.latent(i, j);
            lat.push_back(ojson{{"id", store.patient_ids[i]}, {"eta", l.eta}, {"u", {l.u[0], l.u[1]}}});
        }
        line["latents"] = std::move(lat);
        ss << line.dump() << '\n';
    }
    write_text_file(path, ss.str());
}

}  // namespace lcis
