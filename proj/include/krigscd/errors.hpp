#pragma once

#include <stdexcept>
#include <string>

namespace krigscd {

// Exit-code families. The numeric values are the CLI process exit codes.
enum class ErrorKind : int {
  config = 2,
  data = 3,
  numeric = 4,
  denoiser = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string module, const std::string& what)
      : std::runtime_error(module + ": " + what), kind_(kind), module_(std::move(module)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& module() const noexcept { return module_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
  std::string module_;
};

struct ConfigError : Error {
  ConfigError(std::string module, const std::string& what)
      : Error(ErrorKind::config, std::move(module), what) {}
};

// Requested mask cannot be realized on the grid.
struct GeometryError : ConfigError {
  using ConfigError::ConfigError;
};

struct DataError : Error {
  DataError(std::string module, const std::string& what)
      : Error(ErrorKind::data, std::move(module), what) {}
};

struct FormatError : DataError {
  using DataError::DataError;
};

struct IoError : DataError {
  using DataError::DataError;
};

struct InsufficientDataError : DataError {
  using DataError::DataError;
};

struct NumericError : Error {
  NumericError(std::string module, const std::string& what)
      : Error(ErrorKind::numeric, std::move(module), what) {}
};

// Raised by the variogram fit when every bin has zero semivariance.
struct DegenerateFitError : NumericError {
  using NumericError::NumericError;
};

struct DegenerateInputError : NumericError {
  using NumericError::NumericError;
};

struct DenoiserError : Error {
  explicit DenoiserError(const std::string& what) : Error(ErrorKind::denoiser, "denoiser", what) {}
};

struct ProtocolError : DenoiserError {
  using DenoiserError::DenoiserError;
};

}  // namespace krigscd
