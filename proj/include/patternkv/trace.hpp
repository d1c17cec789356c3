#pragma once

// KVTR trace files: recorded post-RoPE K and per-token V.
//
//   offset  size  field
//   0       4     magic "KVTR"
//   4       4     version (u32) = 1
//   8       4     num_layers (u32)
//   12      4     num_kv_heads (u32)
//   16      4     head_dim (u32)
//   20      1     dtype (u8): 1 = IEEE binary16, 2 = IEEE binary32
//   21      4     prefill_len (u32)
//   25      4     decode_steps (u32)
//   29            body
//
// Body, all little-endian, row-major:
//   for each layer: K [heads x prefill_len x head_dim], then V (same shape)
//   for each decode step, for each layer: K [heads x head_dim], then V
//
// The body length must equal the header-implied length exactly. Values are
// widened to double on load.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "patternkv/binary_io.hpp"
#include "patternkv/error.hpp"
#include "patternkv/stream.hpp"

namespace patternkv {

inline constexpr char kTraceMagic[] = "KVTR";
inline constexpr std::uint32_t kTraceVersion = 1;
inline constexpr std::size_t kTraceHeaderSize = 29;

enum class TraceDtype : std::uint8_t { kFloat16 = 1, kFloat32 = 2 };

inline std::size_t dtype_size(TraceDtype dtype) {
  return dtype == TraceDtype::kFloat16 ? 2 : 4;
}

struct TraceHeader {
  std::uint32_t version = kTraceVersion;
  std::uint32_t num_layers = 0;
  std::uint32_t num_kv_heads = 0;
  std::uint32_t head_dim = 0;
  TraceDtype dtype = TraceDtype::kFloat32;
  std::uint32_t prefill_len = 0;
  std::uint32_t decode_steps = 0;

  std::uint64_t body_size() const {
    const std::uint64_t per_token =
        2ull * num_layers * num_kv_heads * head_dim * dtype_size(dtype);
    return per_token * (static_cast<std::uint64_t>(prefill_len) + decode_steps);
  }

  friend bool operator==(const TraceHeader&, const TraceHeader&) = default;
};

struct TraceFile {
  TraceHeader header;
  KvStream stream;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot open output file: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path);
}

inline TraceHeader parse_trace_header(io::ByteReader& in) {
  in.expect_tag("KVTR", "trace");
  TraceHeader h;
  const std::uint64_t version_offset = in.offset();
  h.version = in.u32();
  if (h.version != kTraceVersion) {
    throw DataError("trace version mismatch: expected " + std::to_string(kTraceVersion) +
                        ", found " + std::to_string(h.version),
                    version_offset);
  }
  h.num_layers = in.u32();
  h.num_kv_heads = in.u32();
  h.head_dim = in.u32();
  const std::uint64_t dtype_offset = in.offset();
  const std::uint8_t dtype = in.u8();
  if (dtype != 1 && dtype != 2) {
    throw DataError("trace dtype must be 1 (float16) or 2 (float32), found " +
                        std::to_string(dtype),
                    dtype_offset);
  }
  h.dtype = static_cast<TraceDtype>(dtype);
  h.prefill_len = in.u32();
  h.decode_steps = in.u32();
  if (h.num_layers == 0 || h.num_kv_heads == 0 || h.head_dim == 0) {
    throw DataError("trace header: layers, heads and head_dim must be non-zero", 8);
  }
  return h;
}

inline TraceFile parse_trace(std::span<const std::uint8_t> bytes) {
  io::ByteReader in(bytes);
  TraceFile trace;
  trace.header = parse_trace_header(in);
  const TraceHeader& h = trace.header;
  if (in.remaining() != h.body_size()) {
    throw DataError("trace body is " + std::to_string(in.remaining()) +
                        " bytes, header implies " + std::to_string(h.body_size()),
                    in.offset() + std::min<std::uint64_t>(in.remaining(), h.body_size()));
  }

  KvStream& s = trace.stream;
  s.layers = h.num_layers;
  s.heads = h.num_kv_heads;
  s.head_dim = h.head_dim;
  s.prefill_len = h.prefill_len;
  s.decode_len = h.decode_steps;
  s.allocate();

  auto read_value = [&](const char* what, std::size_t layer, std::size_t head,
                        std::size_t step, std::size_t dim) {
    const std::uint64_t offset = in.offset();
    const double v = h.dtype == TraceDtype::kFloat16 ? io::half_to_double(in.u16())
                                                     : static_cast<double>(in.f32());
    if (!std::isfinite(v)) {
      throw DataError(std::string("non-finite ") + what + " value at layer " +
                          std::to_string(layer) + ", head " + std::to_string(head) +
                          ", token " + std::to_string(step) + ", dim " + std::to_string(dim),
                      offset);
    }
    return v;
  };

  for (std::size_t l = 0; l < s.layers; ++l) {
    for (int which = 0; which < 2; ++which) {
      for (std::size_t hd = 0; hd < s.heads; ++hd) {
        Matrix& m = which == 0 ? s.at(l, hd).prefill_k : s.at(l, hd).prefill_v;
        for (std::size_t t = 0; t < s.prefill_len; ++t) {
          for (std::size_t c = 0; c < s.head_dim; ++c) {
            m(t, c) = read_value(which == 0 ? "K" : "V", l, hd, t, c);
          }
        }
      }
    }
  }
  for (std::size_t step = 0; step < s.decode_len; ++step) {
    for (std::size_t l = 0; l < s.layers; ++l) {
      for (int which = 0; which < 2; ++which) {
        for (std::size_t hd = 0; hd < s.heads; ++hd) {
          Matrix& m = which == 0 ? s.at(l, hd).decode_k : s.at(l, hd).decode_v;
          for (std::size_t c = 0; c < s.head_dim; ++c) {
            m(step, c) = read_value(which == 0 ? "K" : "V", l, hd, s.prefill_len + step, c);
          }
        }
      }
    }
  }
  return trace;
}

inline TraceFile read_trace(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return parse_trace(bytes);
}

inline std::vector<std::uint8_t> encode_trace(const KvStream& s, TraceDtype dtype) {
  s.validate();
  io::ByteWriter out;
  out.tag("KVTR");
  out.u32(kTraceVersion);
  out.u32(static_cast<std::uint32_t>(s.layers));
  out.u32(static_cast<std::uint32_t>(s.heads));
  out.u32(static_cast<std::uint32_t>(s.head_dim));
  out.u8(static_cast<std::uint8_t>(dtype));
  out.u32(static_cast<std::uint32_t>(s.prefill_len));
  out.u32(static_cast<std::uint32_t>(s.decode_len));

  auto put = [&](double v) {
    if (dtype == TraceDtype::kFloat16) {
      out.u16(io::float_to_half(static_cast<float>(v)));
    } else {
      out.f32(static_cast<float>(v));
    }
  };
  for (std::size_t l = 0; l < s.layers; ++l) {
    for (int which = 0; which < 2; ++which) {
      for (std::size_t hd = 0; hd < s.heads; ++hd) {
        const Matrix& m = which == 0 ? s.at(l, hd).prefill_k : s.at(l, hd).prefill_v;
        for (double v : m.data()) put(v);
      }
    }
  }
  for (std::size_t step = 0; step < s.decode_len; ++step) {
    for (std::size_t l = 0; l < s.layers; ++l) {
      for (int which = 0; which < 2; ++which) {
        for (std::size_t hd = 0; hd < s.heads; ++hd) {
          const Matrix& m = which == 0 ? s.at(l, hd).decode_k : s.at(l, hd).decode_v;
          for (double v : m.row(step)) put(v);
        }
      }
    }
  }
  return out.take();
}

inline void write_trace(const std::string& path, const KvStream& s, TraceDtype dtype) {
  write_file_bytes(path, encode_trace(s, dtype));
}

// Per-channel statistics of one layer's K or V across heads and tokens.
struct ChannelStats {
  std::vector<double> mean_abs;  // per channel
  std::vector<double> range;     // max - min per channel
  std::vector<std::size_t> outliers;
  double median_mean_abs = 0.0;
};

inline ChannelStats channel_statistics(const KvStream& s, std::size_t layer, bool keys,
                                       double outlier_factor) {
  ChannelStats st;
  const std::size_t d = s.head_dim;
  st.mean_abs.assign(d, 0.0);
  std::vector<double> lo(d, INFINITY), hi(d, -INFINITY);
  std::size_t count = 0;
  for (std::size_t hd = 0; hd < s.heads; ++hd) {
    const HeadStream& h = s.at(layer, hd);
    for (const Matrix* m : {keys ? &h.prefill_k : &h.prefill_v, keys ? &h.decode_k : &h.decode_v}) {
      for (std::size_t t = 0; t < m->rows(); ++t) {
        for (std::size_t c = 0; c < d; ++c) {
          const double v = (*m)(t, c);
          st.mean_abs[c] += std::abs(v);
          lo[c] = std::min(lo[c], v);
          hi[c] = std::max(hi[c], v);
        }
        ++count;
      }
    }
  }
  st.range.resize(d);
  for (std::size_t c = 0; c < d; ++c) {
    st.mean_abs[c] /= static_cast<double>(std::max<std::size_t>(count, 1));
    st.range[c] = count ? hi[c] - lo[c] : 0.0;
  }
  std::vector<double> sorted = st.mean_abs;
  std::sort(sorted.begin(), sorted.end());
  st.median_mean_abs = sorted.size() % 2 ? sorted[sorted.size() / 2]
                                         : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);
  for (std::size_t c = 0; c < d; ++c) {
    if (st.mean_abs[c] > outlier_factor * st.median_mean_abs) st.outliers.push_back(c);
  }
  return st;
}

}  // namespace patternkv
