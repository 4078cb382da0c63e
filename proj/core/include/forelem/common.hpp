#ifndef FORELEM_COMMON_HPP
#define FORELEM_COMMON_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace forelem {

/// Source text error with position, reported as "file:line:col: message".
class ParseError : public std::runtime_error {
public:
  ParseError(int line, int col, const std::string& msg)
      : std::runtime_error(msg), line_(line), col_(col) {}
  int line() const { return line_; }
  int col() const { return col_; }

private:
  int line_, col_;
};

/// Bad input data (files, operands, flags). Maps to CLI exit code 2.
class InputError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A violated internal invariant. Maps to CLI exit code 3.
class InternalError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

// Expected-or-error result used by transformation passes: an inapplicable
// pass refuses with a reason instead of mangling the program.
template <typename T>
class Expected {
public:
  Expected(T value) : value_(std::move(value)), ok_(true) {}
  static Expected failure(std::string reason) {
    Expected e;
    e.reason_ = std::move(reason);
    return e;
  }

  explicit operator bool() const { return ok_; }
  const T& operator*() const& { return value_; }
  T& operator*() & { return value_; }
  const T* operator->() const { return &value_; }
  T* operator->() { return &value_; }
  const std::string& error() const { return reason_; }

private:
  Expected() = default;
  T value_{};
  bool ok_ = false;
  std::string reason_;
};

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex_id(uint64_t h);

} // namespace forelem

#endif // FORELEM_COMMON_HPP
