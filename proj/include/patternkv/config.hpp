#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "patternkv/error.hpp"
#include "patternkv/gate.hpp"
#include "patternkv/quant.hpp"

namespace patternkv {

enum class CacheKind : std::uint8_t { kKey = 0, kValue = 1 };

inline const char* to_string(CacheKind kind) {
  return kind == CacheKind::kKey ? "K" : "V";
}

struct EngineConfig {
  int bits = 2;
  std::size_t pattern_count = 32;
  std::size_t group_size = 128;       // tokens per flush / per-channel block
  std::size_t residual_window = 128;  // full-precision tail retained
  double alpha = 0.05;
  Layout k_layout = Layout::kPerChannel;
  Layout v_layout = Layout::kPerToken;

  // Ablation toggles.
  bool use_k_patterns = true;
  bool use_v_patterns = true;
  bool generate_new_patterns = true;
  bool use_v_gate = true;
  bool use_k_gate = false;

  std::uint64_t seed = 0;

  bool uses_patterns(CacheKind kind) const {
    return kind == CacheKind::kKey ? use_k_patterns : use_v_patterns;
  }
  bool uses_gate(CacheKind kind) const {
    return kind == CacheKind::kKey ? use_k_gate : use_v_gate;
  }
  Layout layout(CacheKind kind) const {
    return kind == CacheKind::kKey ? k_layout : v_layout;
  }

  // The no-pattern reference: per-channel K / per-token V plain quantization.
  EngineConfig as_raw_baseline() const {
    EngineConfig raw = *this;
    raw.use_k_patterns = false;
    raw.use_v_patterns = false;
    raw.generate_new_patterns = false;
    raw.use_v_gate = false;
    raw.use_k_gate = false;
    return raw;
  }

  void validate() const {
    require_valid_bits(bits);
    if (group_size < 1) throw UsageError("group_size must be >= 1");
    if (pattern_count < 1) throw UsageError("pattern_count must be >= 1");
    require_valid_alpha(alpha);
  }

  friend bool operator==(const EngineConfig&, const EngineConfig&) = default;
};

}  // namespace patternkv
