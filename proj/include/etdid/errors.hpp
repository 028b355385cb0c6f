// Exception hierarchy shared across the library.
//
// The split mirrors the CLI exit codes: input/validation problems,
// estimation problems (empty cells, separation, rank deficiency), and
// inference problems (degenerate influence).
#pragma once

#include <stdexcept>
#include <string>

namespace etdid {

// Malformed or inconsistent input data (CSV, schema, config). CLI exit 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// A cell or nuisance fit cannot be computed. CLI exit 3.
class EstimationError : public std::runtime_error {
 public:
  explicit EstimationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bootstrap/inference failure (degenerate influence, bad B/alpha). CLI exit 4.
class InferenceError : public std::runtime_error {
 public:
  explicit InferenceError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace etdid
