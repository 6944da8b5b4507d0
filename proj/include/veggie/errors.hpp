// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace veggie {

/// Base for all recoverable domain errors; the CLI maps these to exit code 1.
class DomainError : public std::runtime_error {
public:
    DomainError(std::string kind, const std::string& msg)
        : std::runtime_error(kind + ": " + msg), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

#define VEGGIE_ERROR(Name)                                               \
    class Name : public DomainError {                                    \
    public:                                                              \
        explicit Name(const std::string& msg) : DomainError(#Name, msg) {} \
    }

VEGGIE_ERROR(MissingFrame);
VEGGIE_ERROR(DimensionMismatch);
VEGGIE_ERROR(InvalidSampleCount);
VEGGIE_ERROR(IoError);
VEGGIE_ERROR(EmptyCondition);
VEGGIE_ERROR(ShapeError);
VEGGIE_ERROR(AlreadyAdapted);
VEGGIE_ERROR(InsufficientData);
VEGGIE_ERROR(AlreadyInflated);
VEGGIE_ERROR(TimestepError);
VEGGIE_ERROR(MissingTarget);
VEGGIE_ERROR(MissingPrerequisite);
VEGGIE_ERROR(NotInitialized);
VEGGIE_ERROR(GenerationError);
VEGGIE_ERROR(StageError);
VEGGIE_ERROR(BackendError);
VEGGIE_ERROR(JudgeParseError);
VEGGIE_ERROR(MissingOutput);
VEGGIE_ERROR(ManifestError);
VEGGIE_ERROR(ConfigError);

#undef VEGGIE_ERROR

}  // namespace veggie
