#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace flowforge {

// ---------------------------------------------------------------------------
// Error types
// ---------------------------------------------------------------------------

struct CaptureParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EmptyCaptureError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct LengthMismatchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct VocabMismatchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InvalidTokenError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Logging: plain stderr lines, silenced via FLOWFORGE_QUIET=1.
// ---------------------------------------------------------------------------

void log_info(const std::string& msg);
void log_warn(const std::string& msg);

// Number of warnings emitted since process start (tests assert on this).
std::uint64_t warn_count();

// ---------------------------------------------------------------------------
// FNV-1a 64-bit hash: stable across platforms, used for seed fan-out and
// manifest/config hashes.
// ---------------------------------------------------------------------------

std::uint64_t fnv1a(const void* data, std::size_t len,
                    std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t fnv1a(const std::string& s,
                    std::uint64_t seed = 0xcbf29ce484222325ull);

// Derive a child seed from a master seed and a stage/device label.
std::uint64_t seed_for(std::uint64_t master, const std::string& label);

std::string hex64(std::uint64_t v);

}  // namespace flowforge
