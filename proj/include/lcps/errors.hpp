#pragma once

#include <stdexcept>
#include <string>

namespace lcps {

/// Base class for all errors raised by this library.
class error : public std::runtime_error {
 public:
  explicit error(const std::string& what) : std::runtime_error(what) {}
};

/// Tensor/matrix shapes or channel widths do not line up.
class dimension_error : public error {
 public:
  explicit dimension_error(const std::string& what) : error(what) {}
};

/// A class label is outside the valid range.
class label_error : public error {
 public:
  explicit label_error(const std::string& what) : error(what) {}
};

/// Inconsistent run configuration (mismatched rig/pose lists, bad grid spec, ...).
class config_error : public error {
 public:
  explicit config_error(const std::string& what) : error(what) {}
};

/// Malformed or inconsistent input data (files, non-finite values, ...).
class data_error : public error {
 public:
  explicit data_error(const std::string& what) : error(what) {}
};

/// A pose or extrinsic matrix is singular or not a rigid transform.
class degenerate_transform_error : public error {
 public:
  explicit degenerate_transform_error(const std::string& what) : error(what) {}
};

/// Scene synthesis could not satisfy placement constraints.
class generation_error : public error {
 public:
  explicit generation_error(const std::string& what) : error(what) {}
};

}  // namespace lcps
