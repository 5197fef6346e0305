#pragma once

#include <stdexcept>
#include <string>

namespace tipcache {

enum class ErrorCode {
    DimensionMismatch,
    LabelOutOfRange,
    NotNormalized,
    EmptyCache,
    EmptyInput,
    InvalidArgument,
    BadMagic,
    UnsupportedVersion,
    Truncated,
    TrailingData,
    RowMismatch,
    Io,
    ManifestParse,
};

const char* to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI exit-code mapping) can tell structural problems apart.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& detail);

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace tipcache
