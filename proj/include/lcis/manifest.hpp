#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <string>
#include <vector>

#include "lcis/json_io.hpp"
#include "lcis/store.hpp"

namespace lcis {

namespace fs = std::filesystem;

inline std::string iso_timestamp_utc() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct ManifestEntry {
    std::string path;  // relative to the workspace
    std::string kind;  // cohort | truth | store | cache | report | ...
    std::string digest;
    std::string created_at;
    std::string tool_version;
    std::string command;
    ojson seeds = ojson::object();
    ojson inputs = ojson::object();  // name -> digest of consumed artifacts
    ojson config = ojson::object();  // inline config: seeds + configs regenerate the artifact
};

// Guards a workspace against concurrent writers. Acquired for the duration
// of any subcommand that mutates the manifest.
class WorkspaceLock {
public:
    explicit WorkspaceLock(const fs::path& workspace)
        : path_(workspace / "manifest.lock") {
        fs::create_directories(workspace);
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        require(fd_ >= 0, ErrorCode::validation,
                "workspace is locked by another writer (remove " + path_.string()
                    + " if no other process is running)");
    }

    ~WorkspaceLock() {
        if (fd_ >= 0) {
            ::close(fd_);
            std::error_code ec;
            fs::remove(path_, ec);
        }
    }

    WorkspaceLock(const WorkspaceLock&) = delete;
    WorkspaceLock& operator=(const WorkspaceLock&) = delete;

private:
    fs::path path_;
    int fd_ = -1;
};

class Manifest {
public:
    static fs::path file_path(const fs::path& workspace) { return workspace / "manifest.json"; }

    static Manifest load(const fs::path& workspace, bool verify_digests = false) {
        Manifest m;
        m.workspace_ = workspace;
        fs::path file = file_path(workspace);
        if (!fs::exists(file)) return m;
        json j = parse_json(read_text_file(file.string()), "manifest");
        require_valid(j.contains("entries") && j.at("entries").is_array(), "manifest: missing entries");
        for (const auto& e : j.at("entries")) {
            ManifestEntry entry;
            entry.path = e.value("path", "");
            entry.kind = e.value("kind", "");
            entry.digest = e.value("digest", "");
            entry.created_at = e.value("created_at", "");
            entry.tool_version = e.value("tool_version", "");
            entry.command = e.value("command", "");
            if (e.contains("seeds")) entry.seeds = e.at("seeds");
            if (e.contains("inputs")) entry.inputs = e.at("inputs");
            if (e.contains("config")) entry.config = e.at("config");
            m.entries_.push_back(std::move(entry));
        }
        if (verify_digests) m.verify();
        return m;
    }

    void verify() const {
        for (const auto& e : entries_) {
            fs::path artifact = workspace_ / e.path;
            require(fs::exists(artifact), ErrorCode::validation,
                    "manifest: missing artifact " + e.path);
            std::string digest = file_digest(artifact.string());
            require(digest == e.digest, ErrorCode::validation,
                    "manifest: digest mismatch for " + e.path);
        }
    }

    void append(ManifestEntry entry) { entries_.push_back(std::move(entry)); }

    // Atomic write-rename; the manifest itself is append-only by convention.
    void save() const {
        ojson j;
        j["entries"] = ojson::array();
        for (const auto& e : entries_) {
            ojson je;
            je["path"] = e.path;
            je["kind"] = e.kind;
            je["digest"] = e.digest;
            je["created_at"] = e.created_at;
            je["tool_version"] = e.tool_version;
            je["command"] = e.command;
            je["seeds"] = e.seeds;
            je["inputs"] = e.inputs;
            je["config"] = e.config;
            j["entries"].push_back(std::move(je));
        }
        fs::path file = file_path(workspace_);
        fs::path tmp = file;
        tmp += ".tmp";
        write_text_file(tmp.string(), j.dump(2) + "\n");
        std::error_code ec;
        fs::rename(tmp, file, ec);
        require(!ec, ErrorCode::io, "manifest: atomic rename failed: " + ec.message());
    }

    const std::vector<ManifestEntry>& entries() const { return entries_; }
    const fs::path& workspace() const { return workspace_; }

private:
    fs::path workspace_;
    std::vector<ManifestEntry> entries_;
};

}  // namespace lcis
