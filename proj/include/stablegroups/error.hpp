#pragma once

#include <stdexcept>
#include <string>

namespace stablegroups {

/// Broad failure classes. The CLI maps them onto exit codes 1/2/2/3.
enum class ErrorClass { usage, config, data, numeric };

class Error : public std::runtime_error {
public:
    Error(ErrorClass cls, const std::string& what)
        : std::runtime_error(what), cls_(cls) {}

    ErrorClass error_class() const noexcept { return cls_; }

private:
    ErrorClass cls_;
};

struct UsageError : Error {
    explicit UsageError(const std::string& w) : Error(ErrorClass::usage, w) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error(ErrorClass::config, w) {}
};

struct DataError : Error {
    explicit DataError(const std::string& w) : Error(ErrorClass::data, w) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& w) : Error(ErrorClass::numeric, w) {}
};

inline int exit_code_for(ErrorClass cls) {
    switch (cls) {
    case ErrorClass::usage: return 1;
    case ErrorClass::config:
    case ErrorClass::data: return 2;
    case ErrorClass::numeric: return 3;
    }
    return 3;
}

} // namespace stablegroups
