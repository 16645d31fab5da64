#include "latentflow/bytes.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "latentflow/error.hpp"

namespace lf {

const char* error_code_name(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::invalid_argument: return "invalid argument";
    case ErrorCode::io: return "i/o error";
    case ErrorCode::bad_magic: return "bad magic";
    case ErrorCode::truncated_payload: return "truncated payload";
    case ErrorCode::header_mismatch: return "header mismatch";
    case ErrorCode::shape_mismatch: return "shape mismatch";
    case ErrorCode::hash_mismatch: return "hash mismatch";
    case ErrorCode::diverged: return "diverged";
    case ErrorCode::not_found: return "not found";
    case ErrorCode::degenerate: return "degenerate input";
    case ErrorCode::cfl_violation: return "CFL violation";
    case ErrorCode::internal: return "internal error";
    }
    return "unknown error";
}

namespace bytes {

std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::not_found, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const unsigned char> data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) fail(ErrorCode::io, "short write to " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    write_file(path, std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

std::string read_text(const std::filesystem::path& path) {
    auto data = read_file(path);
    return {data.begin(), data.end()};
}

std::string file_hash(const std::filesystem::path& path) {
    auto data = read_file(path);
    return hex64(fnv1a(data));
}

}  // namespace bytes
}  // namespace lf
