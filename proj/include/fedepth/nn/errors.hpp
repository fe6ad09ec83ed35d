#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedepth {

/// Shapes or plans that do not compose.
class StructuralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values in activations or gradients.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::size_t block) : std::runtime_error(what), block_(block) {}
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
  std::size_t block() const { return block_; }

 private:
  std::size_t block_ = static_cast<std::size_t>(-1);
};

/// API misuse: bad arguments, wrong call order.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file was readable but its contents fail validation.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Memory budget cannot accommodate a required training unit.
class BudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid experiment configuration. key() names the offending entry.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

}  // namespace fedepth
