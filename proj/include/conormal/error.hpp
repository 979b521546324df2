#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace conormal {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SyntaxError : public Error {
 public:
  SyntaxError(std::size_t offset, const std::string& what)
      : Error("syntax error at offset " + std::to_string(offset) + ": " + what), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class UnknownIdentifier : public Error {
 public:
  explicit UnknownIdentifier(std::string name)
      : Error("unknown identifier '" + name + "'"), name_(std::move(name)) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

// Singular primitive hit during evaluation (log of nonpositive, division by zero, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class RankDeficient : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class CancellationFailed : public Error {
 public:
  using Error::Error;
};

class FiberSolveFailed : public Error {
 public:
  using Error::Error;
};

class NotHorizontal : public Error {
 public:
  using Error::Error;
};

class NotCritical : public Error {
 public:
  using Error::Error;
};

class NotTransverse : public Error {
 public:
  using Error::Error;
};

class DegenerateChoice : public Error {
 public:
  using Error::Error;
};

class QuadraturePanelOverflow : public Error {
 public:
  QuadraturePanelOverflow(std::size_t required, std::size_t budget)
      : Error("quadrature panel budget exceeded: " + std::to_string(required) +
              " panels required, budget " + std::to_string(budget)),
        required_(required),
        budget_(budget) {}
  std::size_t required() const { return required_; }
  std::size_t budget() const { return budget_; }

 private:
  std::size_t required_;
  std::size_t budget_;
};

class GridMismatch : public Error {
 public:
  using Error::Error;
};

class FitFailed : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  SchemaError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class TaskError : public Error {
 public:
  TaskError(std::string task, const std::string& what)
      : Error("task '" + task + "': " + what), task_(std::move(task)) {}
  const std::string& task() const { return task_; }

 private:
  std::string task_;
};

}  // namespace conormal
