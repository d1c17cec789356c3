#pragma once

// PKVS cache snapshots. Layout is documented in docs/snapshot_format.md.

#include <cstdint>
#include <string>
#include <vector>

#include "patternkv/binary_io.hpp"
#include "patternkv/config.hpp"
#include "patternkv/engine.hpp"
#include "patternkv/error.hpp"

namespace patternkv {

inline constexpr std::uint32_t kSnapshotVersion = 1;

struct Snapshot {
  EngineConfig config;
  std::vector<HeadCacheState> heads;
};

namespace detail {

inline std::uint8_t pack_flags(const EngineConfig& c) {
  return static_cast<std::uint8_t>((c.use_k_patterns ? 1 : 0) | (c.use_v_patterns ? 2 : 0) |
                                   (c.generate_new_patterns ? 4 : 0) | (c.use_v_gate ? 8 : 0) |
                                   (c.use_k_gate ? 16 : 0));
}

inline void write_cache(io::ByteWriter& out, const CacheState& cache, std::size_t dim) {
  out.u32(static_cast<std::uint32_t>(cache.patterns.size()));
  for (std::size_t p = 0; p < cache.patterns.size(); ++p) {
    out.u8(static_cast<std::uint8_t>(cache.patterns.origin(p)));
    for (double v : cache.patterns[p]) out.f64(v);
  }
  out.u32(static_cast<std::uint32_t>(cache.blocks.size()));
  for (const CommittedBlock& block : cache.blocks) {
    out.u32(static_cast<std::uint32_t>(block.tokens()));
    out.u32(static_cast<std::uint32_t>(block.groups.size()));
    for (const QuantizedGroup& g : block.groups) {
      out.u8(static_cast<std::uint8_t>(g.layout));
      out.u8(static_cast<std::uint8_t>(g.params.bits));
      out.u32(static_cast<std::uint32_t>(g.length));
      out.f64(g.params.scale);
      out.f64(g.params.zero_point);
      out.bytes(g.packed);
    }
    for (std::uint16_t idx : block.pattern_index) out.u16(idx);
    for (const GateDecision& gd : block.decisions) {
      out.u8(gd.flatten ? 1 : 0);
      out.f64(gd.rho);
      out.f64(gd.r_raw);
      out.f64(gd.r_flat);
    }
  }
  out.u32(static_cast<std::uint32_t>(cache.window.size()));
  for (const auto& row : cache.window) {
    if (row.size() != dim) throw UsageError("snapshot: window row dimension mismatch");
    for (double v : row) out.f64(v);
  }
}

inline CacheState read_cache(io::ByteReader& in, std::size_t dim) {
  CacheState cache;
  cache.patterns = PatternSet(dim);
  const std::uint32_t patterns = in.u32();
  for (std::uint32_t p = 0; p < patterns; ++p) {
    const std::uint64_t at = in.offset();
    const std::uint8_t origin = in.u8();
    if (origin > 1) throw DataError("snapshot: bad pattern origin", at);
    std::vector<double> values(dim);
    for (double& v : values) v = in.f64();
    cache.patterns.append(values, static_cast<PatternOrigin>(origin));
  }
  const std::uint32_t blocks = in.u32();
  for (std::uint32_t b = 0; b < blocks; ++b) {
    CommittedBlock block;
    const std::uint32_t tokens = in.u32();
    const std::uint32_t groups = in.u32();
    for (std::uint32_t gi = 0; gi < groups; ++gi) {
      QuantizedGroup g;
      const std::uint64_t at = in.offset();
      const std::uint8_t layout = in.u8();
      if (layout > 1) throw DataError("snapshot: bad group layout", at);
      g.layout = static_cast<Layout>(layout);
      g.params.bits = in.u8();
      if (!valid_bits(g.params.bits)) throw DataError("snapshot: bad group bit width", at + 1);
      g.length = in.u32();
      g.params.scale = in.f64();
      g.params.zero_point = in.f64();
      g.packed = in.bytes(packed_size(g.length, g.params.bits));
      block.groups.push_back(std::move(g));
    }
    block.pattern_index.resize(tokens);
    for (auto& idx : block.pattern_index) idx = in.u16();
    block.decisions.resize(tokens);
    for (auto& gd : block.decisions) {
      gd.flatten = in.u8() != 0;
      gd.rho = in.f64();
      gd.r_raw = in.f64();
      gd.r_flat = in.f64();
    }
    cache.blocks.push_back(std::move(block));
  }
  const std::uint32_t window = in.u32();
  for (std::uint32_t t = 0; t < window; ++t) {
    std::vector<double> row(dim);
    for (double& v : row) v = in.f64();
    cache.window.push_back(std::move(row));
  }
  return cache;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_snapshot(const Snapshot& snap) {
  io::ByteWriter out;
  out.tag("PKVS");
  out.u32(kSnapshotVersion);
  const EngineConfig& c = snap.config;
  out.u8(static_cast<std::uint8_t>(c.bits));
  out.u8(static_cast<std::uint8_t>(c.k_layout));
  out.u8(static_cast<std::uint8_t>(c.v_layout));
  out.u8(detail::pack_flags(c));
  out.u32(static_cast<std::uint32_t>(c.pattern_count));
  out.u32(static_cast<std::uint32_t>(c.group_size));
  out.u32(static_cast<std::uint32_t>(c.residual_window));
  out.f64(c.alpha);
  out.u64(c.seed);
  out.u32(static_cast<std::uint32_t>(snap.heads.size()));
  for (const HeadCacheState& h : snap.heads) {
    out.u32(static_cast<std::uint32_t>(h.head_dim));
    out.u64(h.token_count);
    out.u64(h.committed_tokens);
    out.u64(h.flushes);
    out.u32(static_cast<std::uint32_t>(h.prefill_pattern_count_k));
    out.u32(static_cast<std::uint32_t>(h.prefill_pattern_count_v));
    detail::write_cache(out, h.k, h.head_dim);
    detail::write_cache(out, h.v, h.head_dim);
  }
  return out.take();
}

inline Snapshot decode_snapshot(std::span<const std::uint8_t> bytes) {
  io::ByteReader in(bytes);
  in.expect_tag("PKVS", "snapshot");
  const std::uint64_t version_at = in.offset();
  const std::uint32_t version = in.u32();
  if (version != kSnapshotVersion) {
    throw DataError("snapshot version mismatch: expected " + std::to_string(kSnapshotVersion) +
                        ", found " + std::to_string(version),
                    version_at);
  }
  Snapshot snap;
  EngineConfig& c = snap.config;
  c.bits = in.u8();
  c.k_layout = static_cast<Layout>(in.u8());
  c.v_layout = static_cast<Layout>(in.u8());
  const std::uint8_t flags = in.u8();
  c.use_k_patterns = flags & 1;
  c.use_v_patterns = flags & 2;
  c.generate_new_patterns = flags & 4;
  c.use_v_gate = flags & 8;
  c.use_k_gate = flags & 16;
  c.pattern_count = in.u32();
  c.group_size = in.u32();
  c.residual_window = in.u32();
  c.alpha = in.f64();
  c.seed = in.u64();
  try {
    c.validate();
  } catch (const UsageError& e) {
    throw DataError(std::string("snapshot config invalid: ") + e.what(), 8);
  }
  const std::uint32_t heads = in.u32();
  for (std::uint32_t i = 0; i < heads; ++i) {
    HeadCacheState h;
    h.head_dim = in.u32();
    h.token_count = in.u64();
    h.committed_tokens = in.u64();
    h.flushes = in.u64();
    h.prefill_pattern_count_k = in.u32();
    h.prefill_pattern_count_v = in.u32();
    h.k = detail::read_cache(in, h.head_dim);
    h.v = detail::read_cache(in, h.head_dim);
    snap.heads.push_back(std::move(h));
  }
  if (in.remaining() != 0) {
    throw DataError("snapshot has " + std::to_string(in.remaining()) + " trailing bytes",
                    in.offset());
  }
  return snap;
}

}  // namespace patternkv
