#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pillcase {

/// Machine-readable failure codes shared by every module and the HTTP API.
enum class ErrorCode {
    range,              // weight outside [0.0, 99.9] or more than one decimal
    parse,              // NDEF framing mismatch
    payload,            // non-digit byte where a weight digit belongs
    empty_tag,          // no record in the data block
    device_unpowered,   // sampling with the lid closed
    lid_closed,         // pill removal with the lid closed
    underflow,          // removing more pills than present
    invalid_argument,
    calibration,
    scan_rejected,      // scanning while the tag is being rewritten
    scan_error,         // tag unreadable during a scan
    state,              // session not calibrated or otherwise out of order
    not_found,
    validation,
    insufficient_data,
    spec_error,         // invalid population / experiment parameters
    io,
};

constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::range: return "range_error";
        case ErrorCode::parse: return "parse_error";
        case ErrorCode::payload: return "payload_error";
        case ErrorCode::empty_tag: return "empty_tag";
        case ErrorCode::device_unpowered: return "device_unpowered";
        case ErrorCode::lid_closed: return "lid_closed";
        case ErrorCode::underflow: return "underflow";
        case ErrorCode::invalid_argument: return "invalid_argument";
        case ErrorCode::calibration: return "calibration_error";
        case ErrorCode::scan_rejected: return "scan_rejected";
        case ErrorCode::scan_error: return "scan_error";
        case ErrorCode::state: return "state_error";
        case ErrorCode::not_found: return "not_found";
        case ErrorCode::validation: return "validation_error";
        case ErrorCode::insufficient_data: return "insufficient_data";
        case ErrorCode::spec_error: return "spec_error";
        case ErrorCode::io: return "io_error";
    }
    return "unknown";
}

/// Exception carrying an ErrorCode, a human message and, for codec failures,
/// the offset of the first offending byte.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message, std::optional<std::size_t> offset = std::nullopt)
        : std::runtime_error(message), code_(code), offset_(offset) {}

    ErrorCode code() const noexcept { return code_; }
    std::optional<std::size_t> offset() const noexcept { return offset_; }

private:
    ErrorCode code_;
    std::optional<std::size_t> offset_;
};

/// Half-away-from-zero rounding to one decimal place. Every gram value the
/// library produces goes through this.
inline double round_to_tenth(double grams) {
    return std::round(grams * 10.0) / 10.0;
}

inline long long round_half_away(double x) {
    return std::llround(x);
}

} // namespace pillcase
