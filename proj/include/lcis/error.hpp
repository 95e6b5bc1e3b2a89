#pragma once

#include <stdexcept>
#include <string>

namespace lcis {

// Stable error vocabulary; the CLI maps these onto machine-readable codes.
enum class ErrorCode {
    validation,
    stale_cache,
    degenerate_weights,
    capped_ess,
    precision,
    io,
};

inline const char* error_code_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::validation: return "VALIDATION";
        case ErrorCode::stale_cache: return "STALE_CACHE";
        case ErrorCode::degenerate_weights: return "DEGENERATE_WEIGHTS";
        case ErrorCode::capped_ess: return "CAPPED_ESS";
        case ErrorCode::precision: return "PRECISION";
        case ErrorCode::io: return "IO";
    }
    return "UNKNOWN";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg)
        : std::runtime_error(msg), code_(code) {}

    ErrorCode code() const { return code_; }
    const char* code_name() const { return error_code_name(code_); }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
    throw Error(code, msg);
}

inline void require(bool ok, ErrorCode code, const std::string& msg) {
    if (!ok) fail(code, msg);
}

inline void require_valid(bool ok, const std::string& msg) {
    if (!ok) fail(ErrorCode::validation, msg);
}

}  // namespace lcis
