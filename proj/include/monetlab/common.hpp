#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace monetlab {

// Error categories map to process exit codes: usage=1, data/format=2, numeric=3.
enum class ErrorKind { usage = 1, data = 2, numeric = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }
    int exit_code() const { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

inline Error usage_error(const std::string& msg) { return Error(ErrorKind::usage, msg); }
inline Error data_error(const std::string& msg) { return Error(ErrorKind::data, msg); }
inline Error numeric_error(const std::string& msg) { return Error(ErrorKind::numeric, msg); }

// Log levels controlled by MONETLAB_LOG={error,info,debug}; default info.
enum class LogLevel { error = 0, info = 1, debug = 2 };

inline LogLevel log_level() {
    static LogLevel lvl = [] {
        const char* e = std::getenv("MONETLAB_LOG");
        if (!e) return LogLevel::info;
        std::string s(e);
        if (s == "error") return LogLevel::error;
        if (s == "debug") return LogLevel::debug;
        return LogLevel::info;
    }();
    return lvl;
}

template <typename... Args>
inline void log_at(LogLevel lvl, const char* tag, const char* fmt, Args... args) {
    if (lvl > log_level()) return;
    std::fprintf(stderr, "[%s] ", tag);
    std::fprintf(stderr, fmt, args...);
    std::fprintf(stderr, "\n");
}

#define MLOG_ERROR(...) ::monetlab::log_at(::monetlab::LogLevel::error, "error", __VA_ARGS__)
#define MLOG_INFO(...) ::monetlab::log_at(::monetlab::LogLevel::info, "info", __VA_ARGS__)
#define MLOG_DEBUG(...) ::monetlab::log_at(::monetlab::LogLevel::debug, "debug", __VA_ARGS__)

}  // namespace monetlab
