#pragma once

#include <stdexcept>
#include <string>

namespace srl {

// Rejected input: shapes, domains, out-of-range queries.
struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct ValueError : std::invalid_argument {
  explicit ValueError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Bad configuration (unknown key, invalid axis value, inconsistent dims).
struct ConfigError : std::invalid_argument {
  explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

// File problems: unreadable, truncated, wrong magic, unwritable path.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training-step failures (non-finite loss/gradients). Halts the run.
struct TrainError : std::runtime_error {
  explicit TrainError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace srl
