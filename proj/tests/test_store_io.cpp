#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "lcis/cohort.hpp"
#include "lcis/importance.hpp"
#include "lcis/manifest.hpp"
#include "lcis/mcmc.hpp"
#include "lcis/store.hpp"

using namespace lcis;
namespace fs = std::filesystem;

namespace {

PosteriorSample tiny_store(std::uint64_t seed = 21) {
    SimConfig c;
    c.n_patients = 6;
    c.params.rho = 0.4;
    c.params.mu = {{{0.0, 0.0}, {0.5, 0.1}}};
    c.params.tau2 = {{{0.1, 0.01}, {0.1, 0.01}}};
    c.params.sigma2 = 0.05;
    c.params.gamma0 = -1.0;
    c.params.gamma1 = 1.0;
    c.psa_mean_count = 4;
    c.biopsy_mean_count = 2;
    c.seed = seed;
    auto [records, truth] = simulate_cohort(c);
    ModelConfig config;
    return fit(records, config, FitSettings{2, 50, 30, 1, static_cast<std::uint64_t>(seed)});
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("lcis_io_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("store binary round-trips bit-exactly") {
    PosteriorSample store = tiny_store();
    std::string bytes = serialize_store(store);
    PosteriorSample loaded = deserialize_store(bytes);
    CHECK(serialize_store(loaded) == bytes);
    CHECK(loaded.meta.chains == store.meta.chains);
    CHECK(loaded.meta.data_digest == store.meta.data_digest);
    CHECK(loaded.patient_ids == store.patient_ids);
    CHECK(loaded.params.size() == store.params.size());
    for (std::size_t j = 0; j < store.num_draws(); ++j)
        for (int i = 0; i < kNumParams; ++i)
            CHECK(param_get(loaded.params[j], i) == param_get(store.params[j], i));
}

TEST_CASE("store file digest equals content digest (cache linkage invariant)") {
    TempDir dir;
    PosteriorSample store = tiny_store();
    auto path = (dir.path / "s.bin").string();
    std::string digest = write_store(path, store);
    CHECK(digest == store_digest(store));
    CHECK(file_digest(path) == digest);
    CHECK(fs::exists(path + ".meta.json"));
}

TEST_CASE("store loader rejects corrupted magic and truncation") {
    PosteriorSample store = tiny_store();
    std::string bytes = serialize_store(store);
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(deserialize_store(bad), Error);
    CHECK_THROWS_AS(deserialize_store(bytes.substr(0, bytes.size() / 2)), Error);
    std::string padded = bytes + "zz";
    CHECK_THROWS_AS(deserialize_store(padded), Error);
}

TEST_CASE("jsonl export has one parseable line per draw") {
    TempDir dir;
    PosteriorSample store = tiny_store();
    auto path = (dir.path / "s.jsonl").string();
    export_store_jsonl(path, store);
    std::ifstream in(path);
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) {
        json j = parse_json(line, "export");
        CHECK(j.contains("params"));
        CHECK(j.at("latents").size() == store.num_patients());
        ++lines;
    }
    CHECK(lines == store.num_draws());
}

TEST_CASE("proposal cache round-trips and validates") {
    TempDir dir;
    PosteriorSample store = tiny_store();
    ProposalCache cache = generate_proposals(store, 3, 99);
    CHECK(cache.size() == store.num_draws() * 3);
    auto path = (dir.path / "c.bin").string();
    write_cache(path, cache);
    ProposalCache loaded = read_cache(path);
    CHECK(loaded.store_digest == cache.store_digest);
    CHECK(loaded.m_per_draw == cache.m_per_draw);
    CHECK(loaded.seed == cache.seed);
    CHECK(loaded.eta == cache.eta);
    CHECK(loaded.u0 == cache.u0);
    CHECK(loaded.u1 == cache.u1);
    CHECK(serialize_cache(loaded) == serialize_cache(cache));
}

TEST_CASE("manifest: append, atomic save, digest verification") {
    TempDir dir;
    write_text_file((dir.path / "artifact.txt").string(), "payload\n");

    {
        WorkspaceLock lock(dir.path);
        Manifest m = Manifest::load(dir.path);
        ManifestEntry e;
        e.path = "artifact.txt";
        e.kind = "cohort";
        e.digest = file_digest((dir.path / "artifact.txt").string());
        e.created_at = iso_timestamp_utc();
        m.append(e);
        m.save();
    }
    CHECK(fs::exists(Manifest::file_path(dir.path)));
    CHECK_FALSE(fs::exists(dir.path / "manifest.lock"));

    Manifest reloaded = Manifest::load(dir.path, true);
    CHECK(reloaded.entries().size() == 1);

    write_text_file((dir.path / "artifact.txt").string(), "tampered\n");
    CHECK_THROWS_AS(Manifest::load(dir.path, true), Error);
}

TEST_CASE("manifest lock blocks concurrent writers") {
    TempDir dir;
    WorkspaceLock lock(dir.path);
    CHECK_THROWS_AS(WorkspaceLock(dir.path), Error);
}
