#pragma once

#include <stdexcept>
#include <string>

namespace cloudmamba {

// Every failure surfaced by the library carries a stable class name so the
// CLI can print a single machine-parsable line.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& m) : Error("ShapeError", m) {}
};

struct InvalidParameter : Error {
  explicit InvalidParameter(const std::string& m) : Error("InvalidParameter", m) {}
};

struct DomainError : Error {
  explicit DomainError(const std::string& m) : Error("DomainError", m) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("ConfigError", m) {}
};

struct DatasetError : Error {
  explicit DatasetError(const std::string& m) : Error("DatasetError", m) {}

 protected:
  DatasetError(std::string kind, const std::string& m) : Error(std::move(kind), m) {}
};

// An image id without a mask file.
struct MissingMask : DatasetError {
  explicit MissingMask(const std::string& m) : DatasetError("MissingMask", m) {}
};

// A file that exists but cannot be decoded or has the wrong format.
struct CorruptFile : DatasetError {
  explicit CorruptFile(const std::string& m) : DatasetError("CorruptFile", m) {}
};

// The manifest and the files on disk disagree.
struct ManifestMismatch : DatasetError {
  explicit ManifestMismatch(const std::string& m) : DatasetError("ManifestMismatch", m) {}
};

struct IoError : Error {
  explicit IoError(const std::string& m) : Error("IoError", m) {}
};

struct CheckpointMismatch : Error {
  explicit CheckpointMismatch(const std::string& m) : Error("CheckpointMismatch", m) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& m) : Error("NumericalError", m) {}
};

}  // namespace cloudmamba
