#pragma once

#include <stdexcept>
#include <string>

namespace powerem {

enum class ErrorCode {
    invalid_input,
    validation_failed,
    numerical_failure,
    not_found,
    corrupt_data,
    version_mismatch,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

// Process exit status used by the command-line tools.
// 0 success, 2 validation failure, 3 input error, 4 numerical failure.
int exit_code(ErrorCode code) noexcept;

const char* to_string(ErrorCode code) noexcept;

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
    throw Error(code, what);
}

} // namespace powerem
