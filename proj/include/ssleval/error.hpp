#pragma once
#ifndef SSLEVAL_ERROR_HPP
#define SSLEVAL_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace ssleval {

/// Failure categories. The CLI maps these onto exit codes.
enum class ErrorKind {
    io,                  // unreadable/unwritable file
    unrecognized_format, // bad magic or version
    truncated_payload,   // declared sizes exceed the bytes on disk
    non_finite,          // NaN/Inf in frames or derived sums
    invalid_input,       // structurally invalid data (dims, duplicates, empty)
    math,                // undefined result (zero matrix, constant series, ...)
    precondition,        // caller asked for something the data cannot satisfy
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::io: return "io";
        case ErrorKind::unrecognized_format: return "unrecognized_format";
        case ErrorKind::truncated_payload: return "truncated_payload";
        case ErrorKind::non_finite: return "non_finite";
        case ErrorKind::invalid_input: return "invalid_input";
        case ErrorKind::math: return "math";
        case ErrorKind::precondition: return "precondition";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// 0 ok, 1 I/O or format, 2 math, 3 precondition.
inline int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::math: return 2;
        case ErrorKind::precondition: return 3;
        default: return 1;
    }
}

}  // namespace ssleval

#endif  // SSLEVAL_ERROR_HPP
