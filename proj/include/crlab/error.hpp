#ifndef CRLAB_ERROR_HPP_
#define CRLAB_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace crlab {

// Precondition / contract violations. The CLI maps these to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what)
      : std::invalid_argument(what) {}
};

// Failures while doing work on valid inputs. The CLI maps these to exit 2.
class RuntimeError : public std::runtime_error {
 public:
  explicit RuntimeError(const std::string& what) : std::runtime_error(what) {}
};

class ParseError : public ValidationError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : ValidationError("line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace crlab

#endif  // CRLAB_ERROR_HPP_
