#pragma once

#include <stdexcept>
#include <string>

namespace sketchgen {

// Bad input data: malformed grammar files, corpora, model files.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Violated internal invariant; indicates a bug, not bad input.
struct InternalError : std::logic_error {
  explicit InternalError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace sketchgen
