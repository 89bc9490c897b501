#ifndef MERMIX_ERRORS_HPP
#define MERMIX_ERRORS_HPP

#include <stdexcept>

namespace mermix {

// Incompatible tensor shapes, or a fully masked attention row.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class LabelError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed MEF1 / checkpoint bytes.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mermix

#endif  // MERMIX_ERRORS_HPP
