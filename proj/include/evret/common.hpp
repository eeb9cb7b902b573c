#pragma once

#include <cstdio>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>

namespace evret {

// ---------------------------------------------------------------------------
// Error types
// ---------------------------------------------------------------------------

/// Base class for all engine errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Corpus file rejected (malformed line, duplicate id, broken reference).
class CorpusError : public Error {
public:
    using Error::Error;
};

/// Bad configuration: mismatched dimensions, invalid limits, unknown keys.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Remote provider could not be reached after the configured retries.
class TransportError : public Error {
public:
    TransportError(const std::string& what, int attempts)
        : Error(what), attempts_(attempts) {}
    int attempts() const { return attempts_; }

private:
    int attempts_;
};

/// Provider-side failure attributed to a specific query.
class QueryError : public Error {
public:
    QueryError(const std::string& what, std::string query_id)
        : Error(what), query_id_(std::move(query_id)) {}
    const std::string& query_id() const { return query_id_; }

private:
    std::string query_id_;
};

/// Fusion input rejected (inconsistent query sets, duplicate ids in a run).
class FusionError : public Error {
public:
    using Error::Error;
};

/// Metric computation rejected (unknown metric name, bad weights, missing truth).
class MetricError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Logging
// ---------------------------------------------------------------------------

enum class LogLevel { debug = 0, info = 1, warn = 2, error = 3 };

using LogSink = std::function<void(LogLevel, const std::string&)>;

namespace detail {

struct LogState {
    std::mutex mu;
    LogLevel min_level = LogLevel::info;
    LogSink sink;
};

inline LogState& log_state() {
    static LogState state;
    return state;
}

inline const char* level_tag(LogLevel level) {
    switch (level) {
        case LogLevel::debug: return "debug";
        case LogLevel::info: return "info";
        case LogLevel::warn: return "warn";
        case LogLevel::error: return "error";
    }
    return "?";
}

}  // namespace detail

/// Replace the default stderr sink. Pass nullptr to restore it.
inline void set_log_sink(LogSink sink) {
    auto& state = detail::log_state();
    std::lock_guard<std::mutex> lock(state.mu);
    state.sink = std::move(sink);
}

inline void set_log_level(LogLevel level) {
    auto& state = detail::log_state();
    std::lock_guard<std::mutex> lock(state.mu);
    state.min_level = level;
}

inline void log(LogLevel level, const std::string& message) {
    auto& state = detail::log_state();
    std::lock_guard<std::mutex> lock(state.mu);
    if (level < state.min_level) return;
    if (state.sink) {
        state.sink(level, message);
    } else {
        std::fprintf(stderr, "[evret %s] %s\n", detail::level_tag(level), message.c_str());
    }
}

inline void log_debug(const std::string& m) { log(LogLevel::debug, m); }
inline void log_info(const std::string& m) { log(LogLevel::info, m); }
inline void log_warn(const std::string& m) { log(LogLevel::warn, m); }
inline void log_error(const std::string& m) { log(LogLevel::error, m); }

}  // namespace evret
