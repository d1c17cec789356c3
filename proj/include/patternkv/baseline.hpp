#pragma once

// No-pattern reference quantizer: per-channel K / per-token V plain
// quantization of exactly the tokens the engine would have committed. It
// shares only the group kernel with the engine, so it serves as the
// reference the pattern toggles must reduce to.

#include <cstddef>

#include "patternkv/config.hpp"
#include "patternkv/matrix.hpp"
#include "patternkv/quant.hpp"

namespace patternkv {

// Tokens committed after `prefill_len` prefill tokens and `decode_len`
// decode appends.
inline std::size_t committed_token_count(std::size_t prefill_len, std::size_t decode_len,
                                         std::size_t group_size, std::size_t residual_window) {
  const std::size_t older = prefill_len > residual_window ? prefill_len - residual_window : 0;
  std::size_t committed = (older / group_size) * group_size;
  std::size_t window = prefill_len - committed;
  for (std::size_t i = 0; i < decode_len; ++i) {
    ++window;
    if (window >= residual_window + group_size) {
      window -= group_size;
      committed += group_size;
    }
  }
  return committed;
}

struct RawReconstruction {
  Matrix keys;    // committed tokens x d
  Matrix values;  // committed tokens x d
};

// `keys` / `values` hold the whole stream (prefill rows then decode rows).
inline RawReconstruction raw_baseline_reconstruction(const Matrix& keys, const Matrix& values,
                                                     std::size_t prefill_len,
                                                     const EngineConfig& config) {
  config.validate();
  const std::size_t total = keys.rows();
  const std::size_t committed = committed_token_count(
      prefill_len, total - prefill_len, config.group_size, config.residual_window);
  const std::size_t d = keys.cols();
  const std::size_t g = config.group_size;

  auto run = [&](const Matrix& x, Layout layout) {
    Matrix out(committed, d);
    if (layout == Layout::kPerToken) {
      for (std::size_t t = 0; t < committed; ++t) {
        const auto deq = dequantize_group(quantize_group(x.row(t), config.bits, layout));
        std::copy(deq.begin(), deq.end(), out.row(t).begin());
      }
    } else {
      std::vector<double> column(g);
      for (std::size_t start = 0; start < committed; start += g) {
        for (std::size_t c = 0; c < d; ++c) {
          for (std::size_t t = 0; t < g; ++t) column[t] = x(start + t, c);
          const auto deq = dequantize_group(quantize_group(column, config.bits, layout));
          for (std::size_t t = 0; t < g; ++t) out(start + t, c) = deq[t];
        }
      }
    }
    return out;
  };
  return {run(keys, config.k_layout), run(values, config.v_layout)};
}

}  // namespace patternkv
