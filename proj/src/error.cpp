#include "tipcache/error.hpp"

namespace tipcache {

const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::DimensionMismatch: return "dimension mismatch";
        case ErrorCode::LabelOutOfRange: return "label out of range";
        case ErrorCode::NotNormalized: return "not normalized";
        case ErrorCode::EmptyCache: return "empty cache";
        case ErrorCode::EmptyInput: return "empty input";
        case ErrorCode::InvalidArgument: return "invalid argument";
        case ErrorCode::BadMagic: return "bad magic";
        case ErrorCode::UnsupportedVersion: return "unsupported version";
        case ErrorCode::Truncated: return "truncated";
        case ErrorCode::TrailingData: return "trailing data";
        case ErrorCode::RowMismatch: return "row mismatch";
        case ErrorCode::Io: return "io error";
        case ErrorCode::ManifestParse: return "manifest parse error";
    }
    return "unknown error";
}

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(detail.empty() ? std::string(to_string(code))
                                        : std::string(to_string(code)) + ": " + detail),
      code_(code) {}

}  // namespace tipcache
