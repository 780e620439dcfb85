#pragma once

#include <stdexcept>
#include <string>

namespace uavkit {

// Bad inputs: violated preconditions, malformed configs, inconsistent shapes.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// A point at or behind the camera plane cannot be projected.
class NotVisibleError : public std::runtime_error {
 public:
  explicit NotVisibleError(const std::string& what) : std::runtime_error(what) {}
};

// Requested backdrop or sprite is not present in the asset directory.
class AssetNotFoundError : public std::runtime_error {
 public:
  explicit AssetNotFoundError(const std::string& what) : std::runtime_error(what) {}
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

// I/O failures: unreadable files, unwritable output paths.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace uavkit
