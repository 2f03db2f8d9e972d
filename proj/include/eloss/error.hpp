#pragma once

#include <stdexcept>
#include <string>

namespace eloss {

enum class ErrorKind {
    invalid_argument,
    out_of_domain,
    degenerate_point,
    not_bracketed,
    non_convergent,
    config,
};

/// Single exception type for the library; `kind()` lets callers branch without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
    if (!cond) throw Error(kind, msg);
}

// literal messages: no string is built unless the check fails
inline void require(bool cond, ErrorKind kind, const char* msg) {
    if (!cond) throw Error(kind, msg);
}

}  // namespace eloss
