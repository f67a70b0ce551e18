#pragma once

#include <stdexcept>
#include <string>

namespace tutor {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Data ingestion and schema problems.
struct MissingColumn : Error { using Error::Error; };
struct UnknownCategoryLevel : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct ResultTooSmall : Error { using Error::Error; };
struct InvalidCompression : Error { using Error::Error; };

// Numerics.
struct CholeskyFailure : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };
struct NonFiniteLoss : Error { using Error::Error; };

// Experiment orchestration.
struct ConfigError : Error { using Error::Error; };
struct TestLeakage : ConfigError { using ConfigError::ConfigError; };

// A stage failure carries the name of the pipeline stage that raised it.
struct StageError : Error {
    StageError(const std::string& stage, const std::string& what)
        : Error("[" + stage + "] " + what), stage_name(stage) {}
    std::string stage_name;
};

}  // namespace tutor
