#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "patternkv/error.hpp"
#include "patternkv/matrix.hpp"

namespace patternkv {

// Prefill and decode K/V for one (layer, head). Rows are tokens.
struct HeadStream {
  Matrix prefill_k;
  Matrix prefill_v;
  Matrix decode_k;
  Matrix decode_v;
  // Ground-truth V cluster per token (synthetic streams only).
  std::vector<std::uint32_t> v_cluster_ids;

  friend bool operator==(const HeadStream&, const HeadStream&) = default;
};

// A full K/V token stream for every layer and KV head.
struct KvStream {
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t head_dim = 0;
  std::size_t prefill_len = 0;
  std::size_t decode_len = 0;
  std::vector<HeadStream> data;  // layer-major
  // Token id per position (synthetic streams only).
  std::vector<std::uint32_t> token_ids;

  HeadStream& at(std::size_t layer, std::size_t head) { return data[layer * heads + head]; }
  const HeadStream& at(std::size_t layer, std::size_t head) const {
    return data[layer * heads + head];
  }

  std::size_t total_tokens() const noexcept { return prefill_len + decode_len; }

  void allocate() {
    data.assign(layers * heads, HeadStream{});
    for (HeadStream& h : data) {
      h.prefill_k = Matrix(prefill_len, head_dim);
      h.prefill_v = Matrix(prefill_len, head_dim);
      h.decode_k = Matrix(decode_len, head_dim);
      h.decode_v = Matrix(decode_len, head_dim);
    }
  }

  void validate() const {
    if (layers == 0 || heads == 0 || head_dim == 0) {
      throw UsageError("KvStream: layers, heads and head_dim must be >= 1");
    }
    if (prefill_len == 0) throw UsageError("KvStream: prefill_len must be >= 1");
    if (data.size() != layers * heads) throw UsageError("KvStream: head count mismatch");
    for (const HeadStream& h : data) {
      if (h.prefill_k.rows() != prefill_len || h.prefill_v.rows() != prefill_len ||
          h.decode_k.rows() != decode_len || h.decode_v.rows() != decode_len ||
          h.prefill_k.cols() != head_dim || h.prefill_v.cols() != head_dim ||
          (decode_len > 0 && (h.decode_k.cols() != head_dim || h.decode_v.cols() != head_dim))) {
        throw UsageError("KvStream: tensor shape mismatch");
      }
    }
  }

  friend bool operator==(const KvStream&, const KvStream&) = default;
};

}  // namespace patternkv
