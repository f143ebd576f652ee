#pragma once

#include <stdexcept>
#include <string>

namespace tgsr {

/// Base of every error raised by the library. `code()` is a stable
/// machine-readable tag used by the CLI and the HTTP service.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

#define TGSR_DEFINE_ERROR(Name, tag)                                      \
    class Name : public Error {                                           \
    public:                                                               \
        explicit Name(const std::string& message) : Error(tag, message) {} \
    }

TGSR_DEFINE_ERROR(ConfigError, "config_error");
TGSR_DEFINE_ERROR(ShapeError, "shape_error");
TGSR_DEFINE_ERROR(IoError, "io_error");
TGSR_DEFINE_ERROR(LookupError, "lookup_error");
TGSR_DEFINE_ERROR(EmptyCaptionError, "empty_caption");
TGSR_DEFINE_ERROR(EmptyBatchError, "empty_batch");
TGSR_DEFINE_ERROR(TrainingError, "training_error");
TGSR_DEFINE_ERROR(ChecksumError, "checksum_error");
TGSR_DEFINE_ERROR(IncompatibleError, "incompatible");
TGSR_DEFINE_ERROR(ProbeDefinitionError, "probe_definition");

#undef TGSR_DEFINE_ERROR

}  // namespace tgsr
