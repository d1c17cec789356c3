#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace patternkv {

// Caller violated a precondition (bad argument, bad flag, wrong shape).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input data is malformed or inconsistent (non-finite values, corrupt
// packing, truncated trace). Carries a byte offset when one is meaningful.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what,
                     std::optional<std::uint64_t> offset = std::nullopt)
      : std::runtime_error(offset ? what + " (at byte offset " +
                                        std::to_string(*offset) + ")"
                                  : what),
        offset_(offset) {}

  std::optional<std::uint64_t> offset() const noexcept { return offset_; }

 private:
  std::optional<std::uint64_t> offset_;
};

}  // namespace patternkv
