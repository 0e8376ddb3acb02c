#pragma once

#include <stdexcept>
#include <string>

namespace mmqss {

/// Base class for every error raised by the library. `code()` is a stable
/// CamelCase identifier used by the CLI for machine-parsable error lines.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

#define MMQSS_DEFINE_ERROR(Name)                                              \
    class Name : public Error {                                               \
    public:                                                                   \
        explicit Name(const std::string& message) : Error(#Name, message) {}  \
    }

MMQSS_DEFINE_ERROR(InvalidParameters);
MMQSS_DEFINE_ERROR(DomainError);
MMQSS_DEFINE_ERROR(StepUnderflow);
MMQSS_DEFINE_ERROR(NegativeState);
MMQSS_DEFINE_ERROR(NoTransient);
MMQSS_DEFINE_ERROR(NoTranscriticalPoint);
MMQSS_DEFINE_ERROR(DegenerateBound);
MMQSS_DEFINE_ERROR(QuantityUnavailable);
MMQSS_DEFINE_ERROR(WindowTooShort);
MMQSS_DEFINE_ERROR(InsufficientSignal);
MMQSS_DEFINE_ERROR(GridTooLarge);
MMQSS_DEFINE_ERROR(IoError);

#undef MMQSS_DEFINE_ERROR

}  // namespace mmqss
