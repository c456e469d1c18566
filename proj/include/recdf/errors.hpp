#pragma once

#include <stdexcept>
#include <string>

namespace recdf {

// Error taxonomy. The CLI maps these onto exit codes: configuration and
// input-validation problems exit 2, replicate-failure thresholds exit 3.

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ArgumentError : std::runtime_error {
  explicit ArgumentError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SamplingError : std::runtime_error {
  explicit SamplingError(const std::string& msg) : std::runtime_error(msg) {}
};

struct EstimationError : std::runtime_error {
  explicit EstimationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SimulationError : std::runtime_error {
  explicit SimulationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UndefinedRatioError : std::runtime_error {
  explicit UndefinedRatioError(const std::string& msg) : std::runtime_error(msg) {}
};

inline constexpr const char* kSchemaVersion = "1";

}  // namespace recdf
