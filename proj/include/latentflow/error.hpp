#pragma once

#include <stdexcept>
#include <string>

namespace lf {

/// Failure categories shared by the C++ core and the C API status codes.
enum class ErrorCode : int {
    invalid_argument = 1,
    io = 2,
    bad_magic = 3,
    truncated_payload = 4,
    header_mismatch = 5,
    shape_mismatch = 6,
    hash_mismatch = 7,
    diverged = 8,
    not_found = 9,
    degenerate = 10,
    cfl_violation = 11,
    internal = 12,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) fail(code, what);
}

}  // namespace lf
