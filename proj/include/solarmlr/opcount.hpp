#pragma once

#include <cstdint>

namespace solarmlr::ops {

// Arithmetic operation accounting. A multiply-accumulate is one op, as are a
// lone multiply, add, divide or square root. Counts accumulate per thread.

namespace detail {
inline std::uint64_t& counter() {
  thread_local std::uint64_t value = 0;
  return value;
}
}  // namespace detail

inline void add(std::uint64_t n) { detail::counter() += n; }
inline std::uint64_t total() { return detail::counter(); }

/// Counts the ops executed on this thread while the scope is alive.
class Scope {
 public:
  Scope() : start_(total()) {}
  std::uint64_t count() const { return total() - start_; }

 private:
  std::uint64_t start_;
};

}  // namespace solarmlr::ops
