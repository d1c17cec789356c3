#pragma once

// Asymmetric n-bit min/max group quantization and code packing.
//
//   zero_point = min(x),  scale = (max(x) - min(x)) / (2^n - 1)
//   code_i     = clamp(round((x_i - zero_point) / scale), 0, 2^n - 1)
//   x_i'       = scale * code_i + zero_point
//
// A zero-range group (max == min) gets scale 0 and all-zero codes.
// Rounding is half away from zero (std::round).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "patternkv/error.hpp"

namespace patternkv {

enum class Layout : std::uint8_t { kPerChannel = 0, kPerToken = 1 };

inline const char* to_string(Layout layout) {
  return layout == Layout::kPerChannel ? "per-channel" : "per-token";
}

inline bool valid_bits(int bits) { return bits == 2 || bits == 4 || bits == 8; }

inline void require_valid_bits(int bits) {
  if (!valid_bits(bits)) {
    throw UsageError("bits must be one of {2,4,8}, got " + std::to_string(bits));
  }
}

inline std::uint32_t max_code(int bits) { return (1u << bits) - 1u; }

struct QuantParams {
  double scale = 0.0;
  double zero_point = 0.0;
  int bits = 2;

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

inline std::size_t packed_size(std::size_t length, int bits) {
  return (length * static_cast<std::size_t>(bits) + 7) / 8;
}

// Codes in ascending index order, little-endian within each byte: code 0
// occupies the lowest-order bits of byte 0.
inline std::vector<std::uint8_t> pack_codes(std::span<const std::uint32_t> codes,
                                            int bits) {
  require_valid_bits(bits);
  const std::uint32_t limit = max_code(bits);
  std::vector<std::uint8_t> out(packed_size(codes.size(), bits), 0);
  const int per_byte = 8 / bits;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] > limit) {
      throw UsageError("pack_codes: code " + std::to_string(codes[i]) +
                       " at index " + std::to_string(i) + " does not fit in " +
                       std::to_string(bits) + " bits");
    }
    const std::size_t byte = i / per_byte;
    const int shift = static_cast<int>(i % per_byte) * bits;
    out[byte] = static_cast<std::uint8_t>(out[byte] | (codes[i] << shift));
  }
  return out;
}

inline std::vector<std::uint32_t> unpack_codes(std::span<const std::uint8_t> bytes,
                                               std::size_t length, int bits) {
  require_valid_bits(bits);
  if (bytes.size() != packed_size(length, bits)) {
    throw DataError("unpack_codes: expected " +
                    std::to_string(packed_size(length, bits)) +
                    " packed bytes for " + std::to_string(length) +
                    " codes, got " + std::to_string(bytes.size()));
  }
  const std::uint32_t mask = max_code(bits);
  const int per_byte = 8 / bits;
  std::vector<std::uint32_t> out(length);
  for (std::size_t i = 0; i < length; ++i) {
    const int shift = static_cast<int>(i % per_byte) * bits;
    out[i] = (bytes[i / per_byte] >> shift) & mask;
  }
  return out;
}

struct QuantizedGroup {
  QuantParams params;
  std::vector<std::uint8_t> packed;
  std::size_t length = 0;
  Layout layout = Layout::kPerToken;

  std::vector<std::uint32_t> codes() const {
    return unpack_codes(packed, length, params.bits);
  }

  friend bool operator==(const QuantizedGroup&, const QuantizedGroup&) = default;
};

inline QuantizedGroup quantize_group(std::span<const double> values, int bits,
                                     Layout layout = Layout::kPerToken) {
  if (values.empty()) throw UsageError("quantize_group: empty group");
  require_valid_bits(bits);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw DataError("quantize_group: non-finite value at index " +
                      std::to_string(i));
    }
  }
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const std::uint32_t top = max_code(bits);

  QuantizedGroup group;
  group.length = values.size();
  group.layout = layout;
  group.params.bits = bits;
  group.params.zero_point = *lo;
  group.params.scale = (*hi - *lo) / static_cast<double>(top);

  std::vector<std::uint32_t> codes(values.size(), 0);
  if (group.params.scale > 0.0) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double q = std::round((values[i] - group.params.zero_point) /
                                  group.params.scale);
      codes[i] = static_cast<std::uint32_t>(
          std::clamp(q, 0.0, static_cast<double>(top)));
    }
  } else {
    group.params.scale = 0.0;
  }
  group.packed = pack_codes(codes, bits);
  return group;
}

inline std::vector<double> dequantize_group(const QuantizedGroup& group) {
  const auto codes = group.codes();
  std::vector<double> out(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    out[i] = group.params.scale * static_cast<double>(codes[i]) +
             group.params.zero_point;
  }
  return out;
}

// Quantization range max(x) - min(x).
inline double value_range(std::span<const double> values) {
  if (values.empty()) return 0.0;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  return *hi - *lo;
}

}  // namespace patternkv
