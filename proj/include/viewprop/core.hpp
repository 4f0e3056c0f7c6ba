// viewprop/core.hpp
//
// Shared basics: error taxonomy, deterministic seed derivation, logging,
// and a minimal parallel-for. Everything downstream assumes these.
#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace viewprop {

// ── errors ──────────────────────────────────────────────────────────────

// Base for all domain failures. Precondition violations on arguments use
// std::invalid_argument directly; these are for runtime/data failures.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

struct GenerationError : Error {
    explicit GenerationError(const std::string& msg) : Error(msg) {}
};

struct EditorError : Error {
    explicit EditorError(const std::string& msg) : Error(msg) {}
};

struct MetricError : Error {
    explicit MetricError(const std::string& msg) : Error(msg) {}
};

// ── deterministic seed derivation ───────────────────────────────────────
//
// All randomness in the pipeline is counter-based: a draw is a pure
// function of (seed, tag, index). This is what makes checkpoint resume
// reproduce an uninterrupted run bit-exactly; no RNG state is carried.

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index) {
    std::uint64_t h = splitmix64(seed ^ fnv1a64(tag));
    return splitmix64(h ^ (index * 0x9e3779b97f4a7c15ull));
}

// Uniform in [0, 1) from 64 hash bits.
inline double uniform01(std::uint64_t h) {
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline double clamp01(double v) {
    return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
}

// ── logging ─────────────────────────────────────────────────────────────
//
// Verbosity is controlled by VIEWPROP_LOG=error|info|debug (default info).
// All log output goes to stderr; stdout is reserved for command results.

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

inline LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("VIEWPROP_LOG");
        if (!env) return LogLevel::Info;
        std::string_view v{env};
        if (v == "error") return LogLevel::Error;
        if (v == "debug") return LogLevel::Debug;
        return LogLevel::Info;
    }();
    return level;
}

inline void log_at(LogLevel lvl, const std::string& msg) {
    if (static_cast<int>(lvl) > static_cast<int>(log_level())) return;
    const char* tag = lvl == LogLevel::Error ? "error" : (lvl == LogLevel::Info ? "info" : "debug");
    std::fprintf(stderr, "[viewprop %s] %s\n", tag, msg.c_str());
}

inline void log_error(const std::string& msg) { log_at(LogLevel::Error, msg); }
inline void log_info(const std::string& msg) { log_at(LogLevel::Info, msg); }
inline void log_debug(const std::string& msg) { log_at(LogLevel::Debug, msg); }

// ── parallel for ────────────────────────────────────────────────────────
//
// Static chunking over [0, n). Each index must touch disjoint state, so
// results are independent of the worker count. First thrown exception is
// rethrown on the caller.

inline void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    if (workers <= 1 || n == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    int used = std::min(workers, n);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(used));
    std::exception_ptr first_error;
    std::atomic<bool> failed{false};
    std::mutex err_mutex;
    for (int w = 0; w < used; ++w) {
        pool.emplace_back([&, w] {
            for (int i = w; i < n; i += used) {
                if (failed.load(std::memory_order_relaxed)) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (!first_error) first_error = std::current_exception();
                    failed.store(true, std::memory_order_relaxed);
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace viewprop
