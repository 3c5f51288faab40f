#pragma once

#include <stdexcept>
#include <string>

namespace genz3d {

// Error categories double as CLI exit codes.
enum class ErrorKind {
  kUsage = 1,
  kConfig = 2,
  kData = 3,
  kTraining = 4,
  kEvaluation = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

// Raised whenever a training stage that must only see seen-class data is
// handed a sample labeled with a class outside its allowed set.
class InductiveViolation : public Error {
 public:
  explicit InductiveViolation(const std::string& what)
      : Error(ErrorKind::kTraining, "inductive violation: " + what) {}
};

// Wraps a failure inside one pipeline stage so callers can report which
// stage aborted.
class StageError : public Error {
 public:
  StageError(std::string stage, ErrorKind kind, const std::string& what)
      : Error(kind, stage + ": " + what), stage_(std::move(stage)) {}

  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace genz3d
