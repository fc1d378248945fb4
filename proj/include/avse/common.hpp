// Copyright 2026 The AVSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <stdexcept>
#include <string>

namespace avse {

// Error taxonomy. The CLI maps each family to a distinct exit code, so
// everything thrown across a module boundary should derive from one of these.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/arithmetic mismatches (tensor dims, frame counts, bin counts).
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad or inconsistent data content (corrupt manifest, NaN audio, empty batch).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem and serialization failures.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check_config(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}
inline void check_dims(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}
inline void check_data(bool ok, const std::string& msg) {
  if (!ok) throw DataError(msg);
}
inline void check_io(bool ok, const std::string& msg) {
  if (!ok) throw IoError(msg);
}

}  // namespace avse
