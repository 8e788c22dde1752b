#include "flowforge/common.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <mutex>

namespace flowforge {

namespace {

std::mutex g_log_mutex;
std::atomic<std::uint64_t> g_warns{0};

bool quiet() {
    static const bool q = [] {
        const char* v = std::getenv("FLOWFORGE_QUIET");
        return v != nullptr && v[0] == '1';
    }();
    return q;
}

}  // namespace

void log_info(const std::string& msg) {
    if (quiet()) return;
    std::lock_guard<std::mutex> lock(g_log_mutex);
    std::cerr << "[flowforge] " << msg << "\n";
}

void log_warn(const std::string& msg) {
    g_warns.fetch_add(1, std::memory_order_relaxed);
    if (quiet()) return;
    std::lock_guard<std::mutex> lock(g_log_mutex);
    std::cerr << "[flowforge] warning: " << msg << "\n";
}

std::uint64_t warn_count() { return g_warns.load(std::memory_order_relaxed); }

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t fnv1a(const std::string& s, std::uint64_t seed) {
    return fnv1a(s.data(), s.size(), seed);
}

std::uint64_t seed_for(std::uint64_t master, const std::string& label) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(master >> (8 * i));
    return fnv1a(label.data(), label.size(), fnv1a(buf, 8));
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

}  // namespace flowforge
