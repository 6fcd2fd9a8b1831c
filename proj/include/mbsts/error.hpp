#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mbsts {

enum class ErrorKind {
    dimension,
    numerical,
    data,
    config,
    integrity,
    network,
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::data: return "data";
    case ErrorKind::config: return "config";
    case ErrorKind::integrity: return "integrity";
    case ErrorKind::network: return "network";
    }
    return "unknown";
}

/// Library-wide exception. `kind()` classifies the failure for callers
/// (the CLI maps it onto exit codes and a one-line error record).
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
    throw Error(kind, what);
}

} // namespace mbsts
