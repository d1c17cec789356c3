#pragma once

// Per-head KV cache lifecycle.
//
//   prefill   mine K and V pattern sets (KMeans), keep the most recent
//             tokens at full precision, commit everything older in whole
//             blocks of group_size tokens.
//   decode    append to the full-precision window; once it holds
//             residual_window + group_size tokens the oldest group_size are
//             flushed. A flush first appends the window's Chebyshev center to
//             each pattern set, then commits the block.
//   commit    every token is matched to its nearest pattern (min-max
//             distance), V tokens pass the flattening gate, and the residual
//             (or the raw vector for gated-off tokens) is quantized: K per
//             channel across the block, V per token across dimensions.
//
// Token order is committed blocks first, then the window.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "patternkv/config.hpp"
#include "patternkv/error.hpp"
#include "patternkv/gate.hpp"
#include "patternkv/matrix.hpp"
#include "patternkv/patterns.hpp"
#include "patternkv/quant.hpp"
#include "patternkv/rng.hpp"

namespace patternkv {

// Pattern index stored for tokens quantized without a pattern.
inline constexpr std::uint16_t kNoPattern = 0xFFFF;
inline constexpr int kPatternIndexBits = 16;
inline constexpr int kGroupParamBits = 32;  // 16-bit scale + 16-bit zero point
inline constexpr int kPatternElementBits = 16;

struct CommittedBlock {
  // Per-channel layout: one group per dimension spanning the block's tokens.
  // Per-token layout: one group per token spanning the dimensions.
  std::vector<QuantizedGroup> groups;
  std::vector<std::uint16_t> pattern_index;  // per token
  std::vector<GateDecision> decisions;       // per token

  std::size_t tokens() const noexcept { return pattern_index.size(); }

  friend bool operator==(const CommittedBlock&, const CommittedBlock&) = default;
};

struct CacheState {
  PatternSet patterns;
  std::vector<CommittedBlock> blocks;
  std::deque<std::vector<double>> window;

  friend bool operator==(const CacheState&, const CacheState&) = default;
};

struct HeadCacheState {
  std::size_t head_dim = 0;
  std::size_t token_count = 0;
  std::size_t committed_tokens = 0;
  std::size_t flushes = 0;  // decode-time flushes
  std::size_t prefill_pattern_count_k = 0;
  std::size_t prefill_pattern_count_v = 0;
  CacheState k;
  CacheState v;

  const CacheState& cache(CacheKind kind) const { return kind == CacheKind::kKey ? k : v; }
  CacheState& cache(CacheKind kind) { return kind == CacheKind::kKey ? k : v; }

  friend bool operator==(const HeadCacheState&, const HeadCacheState&) = default;
};

struct TokenKV {
  std::vector<double> k;
  std::vector<double> v;
};

namespace detail {

inline std::uint32_t code_at(const QuantizedGroup& group, std::size_t i) {
  const int bits = group.params.bits;
  const int per_byte = 8 / bits;
  const int shift = static_cast<int>(i % per_byte) * bits;
  return (group.packed[i / per_byte] >> shift) & max_code(bits);
}

inline double dequantize_at(const QuantizedGroup& group, std::size_t i) {
  return group.params.scale * static_cast<double>(code_at(group, i)) + group.params.zero_point;
}

// Quantizes a block (tokens x dims) under the given layout.
inline std::vector<QuantizedGroup> quantize_block(const Matrix& block, int bits,
                                                  Layout layout) {
  std::vector<QuantizedGroup> groups;
  if (layout == Layout::kPerToken) {
    groups.reserve(block.rows());
    for (std::size_t t = 0; t < block.rows(); ++t) {
      groups.push_back(quantize_group(block.row(t), bits, layout));
    }
  } else {
    groups.reserve(block.cols());
    std::vector<double> column(block.rows());
    for (std::size_t c = 0; c < block.cols(); ++c) {
      for (std::size_t t = 0; t < block.rows(); ++t) column[t] = block(t, c);
      groups.push_back(quantize_group(column, bits, layout));
    }
  }
  return groups;
}

// Dequantized (pre-pattern) value of token t within a block.
inline std::vector<double> dequantize_token(const CommittedBlock& block, std::size_t t,
                                            std::size_t dim) {
  std::vector<double> out(dim);
  if (block.groups.empty()) return out;
  if (block.groups.front().layout == Layout::kPerToken) {
    const QuantizedGroup& g = block.groups[t];
    for (std::size_t c = 0; c < dim; ++c) out[c] = dequantize_at(g, c);
  } else {
    for (std::size_t c = 0; c < dim; ++c) out[c] = dequantize_at(block.groups[c], t);
  }
  return out;
}

}  // namespace detail

class HeadCache {
 public:
  HeadCache(const EngineConfig& config, std::size_t head_dim)
      : config_(config) {
    config_.validate();
    if (head_dim < 1) throw UsageError("HeadCache: head_dim must be >= 1");
    gate_ = GateConfig::make(static_cast<int>(head_dim), config_.alpha);
    state_.head_dim = head_dim;
    state_.k.patterns = PatternSet(head_dim, config_.pattern_count);
    state_.v.patterns = PatternSet(head_dim, config_.pattern_count);
  }

  HeadCache(const EngineConfig& config, HeadCacheState state)
      : HeadCache(config, state.head_dim) {
    state_ = std::move(state);
  }

  const EngineConfig& config() const noexcept { return config_; }
  const GateConfig& gate() const noexcept { return gate_; }
  const HeadCacheState& state() const noexcept { return state_; }
  std::size_t head_dim() const noexcept { return state_.head_dim; }
  std::size_t token_count() const noexcept { return state_.token_count; }

  void prefill(const Matrix& keys, const Matrix& values) {
    if (prefilled_ || state_.token_count != 0) {
      throw UsageError("prefill: cache already initialized");
    }
    if (keys.rows() == 0) throw UsageError("prefill: empty prefill");
    if (keys.rows() != values.rows()) {
      throw UsageError("prefill: K and V token counts differ");
    }
    if (keys.cols() != head_dim() || values.cols() != head_dim()) {
      throw UsageError("prefill: tensor dimension does not match head_dim " +
                       std::to_string(head_dim()));
    }
    require_finite(keys.data(), "prefill K");
    require_finite(values.data(), "prefill V");

    if (config_.use_k_patterns) {
      state_.k.patterns =
          mine_prefill_patterns(keys, config_.pattern_count, derive_seed(config_.seed, 0));
    }
    if (config_.use_v_patterns) {
      state_.v.patterns =
          mine_prefill_patterns(values, config_.pattern_count, derive_seed(config_.seed, 1));
    }
    state_.prefill_pattern_count_k = state_.k.patterns.size();
    state_.prefill_pattern_count_v = state_.v.patterns.size();

    const std::size_t tokens = keys.rows();
    const std::size_t g = config_.group_size;
    const std::size_t older =
        tokens > config_.residual_window ? tokens - config_.residual_window : 0;
    const std::size_t committed = (older / g) * g;
    for (std::size_t start = 0; start < committed; start += g) {
      commit(CacheKind::kKey, keys.slice_rows(start, start + g));
      commit(CacheKind::kValue, values.slice_rows(start, start + g));
      state_.committed_tokens += g;
    }
    for (std::size_t t = committed; t < tokens; ++t) {
      state_.k.window.emplace_back(keys.row(t).begin(), keys.row(t).end());
      state_.v.window.emplace_back(values.row(t).begin(), values.row(t).end());
    }
    state_.token_count = tokens;
    prefilled_ = true;
  }

  void append(std::span<const double> key, std::span<const double> value) {
    if (!prefilled_) throw UsageError("append: cache not initialized by prefill");
    if (key.size() != head_dim() || value.size() != head_dim()) {
      throw UsageError("append: vector dimension does not match head_dim");
    }
    require_finite(key, "decode K");
    require_finite(value, "decode V");
    state_.k.window.emplace_back(key.begin(), key.end());
    state_.v.window.emplace_back(value.begin(), value.end());
    ++state_.token_count;
    if (state_.k.window.size() >= config_.residual_window + config_.group_size) {
      flush();
    }
  }

  TokenKV reconstruct_token(std::size_t token_index) const {
    if (token_index >= state_.token_count) {
      throw UsageError("reconstruct_token: index " + std::to_string(token_index) +
                       " >= token count " + std::to_string(state_.token_count));
    }
    return {reconstruct(CacheKind::kKey, token_index),
            reconstruct(CacheKind::kValue, token_index)};
  }

  std::vector<double> reconstruct(CacheKind kind, std::size_t token_index) const {
    const CacheState& cache = state_.cache(kind);
    if (token_index >= state_.committed_tokens) {
      return cache.window.at(token_index - state_.committed_tokens);
    }
    const std::size_t g = config_.group_size;
    const CommittedBlock& block = cache.blocks[token_index / g];
    const std::size_t t = token_index % g;
    std::vector<double> deq = detail::dequantize_token(block, t, head_dim());
    const std::uint16_t index = block.pattern_index[t];
    if (index == kNoPattern) return deq;
    return patternkv::reconstruct(index, cache.patterns, deq);
  }

  // Storage of committed tokens for one cache, in bits. Codes count at n bits
  // each, every group carries a 16-bit scale and zero point, pattern-using
  // caches add a 16-bit index per token and 16 bits per pattern element.
  std::uint64_t committed_bits(CacheKind kind) const {
    const CacheState& cache = state_.cache(kind);
    std::uint64_t total = 0;
    for (const CommittedBlock& block : cache.blocks) {
      for (const QuantizedGroup& group : block.groups) {
        total += group.length * static_cast<std::uint64_t>(group.params.bits);
        total += kGroupParamBits;
      }
    }
    if (config_.uses_patterns(kind)) {
      total += state_.committed_tokens * static_cast<std::uint64_t>(kPatternIndexBits);
      total += cache.patterns.size() * head_dim() * static_cast<std::uint64_t>(kPatternElementBits);
    }
    return total;
  }

  double bits_per_token(CacheKind kind) const {
    if (state_.committed_tokens == 0) return 0.0;
    return static_cast<double>(committed_bits(kind)) /
           static_cast<double>(state_.committed_tokens);
  }

 private:
  void flush() {
    const std::size_t g = config_.group_size;
    for (CacheKind kind : {CacheKind::kKey, CacheKind::kValue}) {
      CacheState& cache = state_.cache(kind);
      Matrix block(g, head_dim());
      for (std::size_t t = 0; t < g; ++t) {
        std::copy(cache.window[t].begin(), cache.window[t].end(), block.row(t).begin());
      }
      if (config_.generate_new_patterns && config_.uses_patterns(kind)) {
        cache.patterns.append(generate_decode_pattern(block), PatternOrigin::kDecode);
      }
      commit(kind, block);
      cache.window.erase(cache.window.begin(), cache.window.begin() + static_cast<std::ptrdiff_t>(g));
    }
    state_.committed_tokens += g;
    ++state_.flushes;
  }

  void commit(CacheKind kind, const Matrix& block) {
    CacheState& cache = state_.cache(kind);
    CommittedBlock out;
    out.pattern_index.assign(block.rows(), kNoPattern);
    out.decisions.resize(block.rows());
    Matrix target = block;
    const bool use_patterns = config_.uses_patterns(kind) && !cache.patterns.empty();
    if (use_patterns && cache.patterns.size() > kNoPattern) {
      throw DataError("pattern set exceeds 16-bit index space");
    }
    for (std::size_t t = 0; t < block.rows(); ++t) {
      const auto x = block.row(t);
      const double r_raw = value_range(x);
      GateDecision& decision = out.decisions[t];
      if (!use_patterns) {
        decision = GateDecision{false, r_raw > 0.0 ? 1.0 : 0.0, r_raw, r_raw};
        continue;
      }
      PatternAssignment match = match_pattern(x, cache.patterns);
      if (config_.uses_gate(kind)) {
        decision = decide(r_raw, match.mm_distance, gate_);
      } else {
        decision.flatten = true;
        decision.r_raw = r_raw;
        decision.r_flat = match.mm_distance;
        decision.rho = r_raw > 0.0 ? match.mm_distance / r_raw : 0.0;
      }
      if (decision.flatten) {
        out.pattern_index[t] = static_cast<std::uint16_t>(match.pattern_index);
        std::copy(match.residual.begin(), match.residual.end(), target.row(t).begin());
      }
    }
    out.groups = detail::quantize_block(target, config_.bits, config_.layout(kind));
    cache.blocks.push_back(std::move(out));
  }

  EngineConfig config_;
  GateConfig gate_;
  HeadCacheState state_;
  bool prefilled_ = false;

  friend HeadCache restore_head_cache(const EngineConfig&, HeadCacheState);
};

inline HeadCache restore_head_cache(const EngineConfig& config, HeadCacheState state) {
  HeadCache cache(config, std::move(state));
  cache.prefilled_ = true;
  return cache;
}

// Free-function forms of the lifecycle operations.
inline HeadCache prefill(const Matrix& keys, const Matrix& values, const EngineConfig& config) {
  HeadCache cache(config, keys.cols());
  cache.prefill(keys, values);
  return cache;
}

inline void append_decode_token(std::span<const double> key, std::span<const double> value,
                                HeadCache& cache) {
  cache.append(key, value);
}

inline TokenKV reconstruct_token(const HeadCache& cache, std::size_t token_index) {
  return cache.reconstruct_token(token_index);
}

}  // namespace patternkv
