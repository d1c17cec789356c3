#pragma once

// Replays one K/V stream through several cache schemes and collects
// per-scheme reconstruction and footprint metrics.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "patternkv/analysis.hpp"
#include "patternkv/baseline.hpp"
#include "patternkv/config.hpp"
#include "patternkv/engine.hpp"
#include "patternkv/error.hpp"
#include "patternkv/rng.hpp"
#include "patternkv/stream.hpp"

namespace patternkv {

enum class SchemeKind : std::uint8_t { kRaw = 0, kPatternKV = 1 };

inline const char* to_string(SchemeKind kind) {
  return kind == SchemeKind::kRaw ? "raw" : "patternkv";
}

struct Scheme {
  std::string name;
  SchemeKind kind = SchemeKind::kPatternKV;
  EngineConfig config;
};

struct Distribution {
  double mean = 0.0;
  double p50 = 0.0;
  double p90 = 0.0;
  double max = 0.0;
  std::size_t count = 0;

  static Distribution of(std::vector<double> values) {
    Distribution d;
    d.count = values.size();
    if (values.empty()) return d;
    std::sort(values.begin(), values.end());
    double sum = 0.0;
    for (double v : values) sum += v;
    d.mean = sum / static_cast<double>(values.size());
    auto rank = [&](double q) {
      const auto i = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
      return values[std::clamp<std::size_t>(i, 1, values.size()) - 1];
    };
    d.p50 = rank(0.5);
    d.p90 = rank(0.9);
    d.max = values.back();
    return d;
  }

  friend bool operator==(const Distribution&, const Distribution&) = default;
};

// Per-(layer, head) replay results. Per-token vectors cover committed
// tokens in order.
struct HeadMetrics {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t committed_tokens = 0;
  double sse_k = 0.0;
  double sse_v = 0.0;
  std::vector<double> token_mse_k;
  std::vector<double> token_mse_v;
  std::vector<double> r_raw_k, r_flat_k;
  std::vector<double> r_raw_v, r_flat_v, rho_v;
  std::size_t v_flattened = 0;
  std::size_t k_patterns = 0;
  std::size_t v_patterns = 0;
  std::uint64_t bits_k = 0;
  std::uint64_t bits_v = 0;

  friend bool operator==(const HeadMetrics&, const HeadMetrics&) = default;
};

struct CacheMetrics {
  std::string scheme;
  SchemeKind kind = SchemeKind::kPatternKV;
  EngineConfig config;
  std::size_t committed_tokens = 0;  // summed over heads
  double mse_k = 0.0;                // per committed element
  double mse_v = 0.0;
  double mse = 0.0;                  // K and V elements pooled
  Distribution r_raw_k, r_flat_k, r_raw_v, r_flat_v, rho_v;
  double v_gate_acceptance_rate = 0.0;
  double bits_per_token_k = 0.0;     // per head, averaged over heads
  double bits_per_token_v = 0.0;
  double bits_per_token = 0.0;       // K + V
  std::vector<HeadMetrics> heads;

  friend bool operator==(const CacheMetrics&, const CacheMetrics&) = default;
};

namespace detail {

inline Matrix concat_rows(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() + b.rows(), a.cols());
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(),
            out.data().begin() + static_cast<std::ptrdiff_t>(a.data().size()));
  return out;
}

inline double row_sse(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double e = a[i] - b[i];
    s += e * e;
  }
  return s;
}

inline HeadMetrics replay_head(const KvStream& stream, std::size_t layer, std::size_t head,
                               const Scheme& scheme) {
  const HeadStream& hs = stream.at(layer, head);
  const std::size_t d = stream.head_dim;
  const Matrix keys = concat_rows(hs.prefill_k, hs.decode_k);
  const Matrix values = concat_rows(hs.prefill_v, hs.decode_v);

  HeadMetrics m;
  m.layer = layer;
  m.head = head;

  if (scheme.kind == SchemeKind::kRaw) {
    const EngineConfig cfg = scheme.config.as_raw_baseline();
    const RawReconstruction raw =
        raw_baseline_reconstruction(keys, values, stream.prefill_len, cfg);
    m.committed_tokens = raw.keys.rows();
    for (std::size_t t = 0; t < m.committed_tokens; ++t) {
      const double ek = row_sse(raw.keys.row(t), keys.row(t));
      const double ev = row_sse(raw.values.row(t), values.row(t));
      m.sse_k += ek;
      m.sse_v += ev;
      m.token_mse_k.push_back(ek / static_cast<double>(d));
      m.token_mse_v.push_back(ev / static_cast<double>(d));
      const double rk = value_range(keys.row(t));
      const double rv = value_range(values.row(t));
      m.r_raw_k.push_back(rk);
      m.r_flat_k.push_back(rk);
      m.r_raw_v.push_back(rv);
      m.r_flat_v.push_back(rv);
      m.rho_v.push_back(rv > 0.0 ? 1.0 : 0.0);
    }
    if (m.committed_tokens > 0) {
      m.bits_k = total_bits(footprint(cfg, CacheKind::kKey, d), 0, m.committed_tokens);
      m.bits_v = total_bits(footprint(cfg, CacheKind::kValue, d), 0, m.committed_tokens);
    }
    return m;
  }

  EngineConfig cfg = scheme.config;
  cfg.seed = derive_seed(scheme.config.seed, layer, head);
  HeadCache cache(cfg, d);
  cache.prefill(hs.prefill_k, hs.prefill_v);
  for (std::size_t t = 0; t < hs.decode_k.rows(); ++t) {
    cache.append(hs.decode_k.row(t), hs.decode_v.row(t));
  }
  const HeadCacheState& st = cache.state();
  m.committed_tokens = st.committed_tokens;
  for (std::size_t t = 0; t < m.committed_tokens; ++t) {
    const TokenKV rec = cache.reconstruct_token(t);
    const double ek = row_sse(rec.k, keys.row(t));
    const double ev = row_sse(rec.v, values.row(t));
    m.sse_k += ek;
    m.sse_v += ev;
    m.token_mse_k.push_back(ek / static_cast<double>(d));
    m.token_mse_v.push_back(ev / static_cast<double>(d));
  }
  for (const CommittedBlock& block : st.k.blocks) {
    for (const GateDecision& gd : block.decisions) {
      m.r_raw_k.push_back(gd.r_raw);
      m.r_flat_k.push_back(gd.flatten ? gd.r_flat : gd.r_raw);
    }
  }
  for (const CommittedBlock& block : st.v.blocks) {
    for (const GateDecision& gd : block.decisions) {
      m.r_raw_v.push_back(gd.r_raw);
      m.r_flat_v.push_back(gd.flatten ? gd.r_flat : gd.r_raw);
      m.rho_v.push_back(gd.rho);
      if (gd.flatten) ++m.v_flattened;
    }
  }
  m.k_patterns = st.k.patterns.size();
  m.v_patterns = st.v.patterns.size();
  m.bits_k = cache.committed_bits(CacheKind::kKey);
  m.bits_v = cache.committed_bits(CacheKind::kValue);
  return m;
}

inline CacheMetrics aggregate(const Scheme& scheme, std::vector<HeadMetrics> heads,
                              std::size_t head_dim) {
  CacheMetrics out;
  out.scheme = scheme.name;
  out.kind = scheme.kind;
  out.config = scheme.kind == SchemeKind::kRaw ? scheme.config.as_raw_baseline() : scheme.config;
  double sse_k = 0.0, sse_v = 0.0;
  std::size_t flattened = 0;
  std::vector<double> rrk, rfk, rrv, rfv, rho;
  double bpt_k = 0.0, bpt_v = 0.0;
  std::size_t heads_with_tokens = 0;
  for (const HeadMetrics& h : heads) {
    out.committed_tokens += h.committed_tokens;
    sse_k += h.sse_k;
    sse_v += h.sse_v;
    flattened += h.v_flattened;
    rrk.insert(rrk.end(), h.r_raw_k.begin(), h.r_raw_k.end());
    rfk.insert(rfk.end(), h.r_flat_k.begin(), h.r_flat_k.end());
    rrv.insert(rrv.end(), h.r_raw_v.begin(), h.r_raw_v.end());
    rfv.insert(rfv.end(), h.r_flat_v.begin(), h.r_flat_v.end());
    rho.insert(rho.end(), h.rho_v.begin(), h.rho_v.end());
    if (h.committed_tokens > 0) {
      bpt_k += static_cast<double>(h.bits_k) / static_cast<double>(h.committed_tokens);
      bpt_v += static_cast<double>(h.bits_v) / static_cast<double>(h.committed_tokens);
      ++heads_with_tokens;
    }
  }
  const double elements = static_cast<double>(out.committed_tokens * head_dim);
  if (out.committed_tokens > 0) {
    out.mse_k = sse_k / elements;
    out.mse_v = sse_v / elements;
    out.mse = (sse_k + sse_v) / (2.0 * elements);
    out.v_gate_acceptance_rate =
        static_cast<double>(flattened) / static_cast<double>(out.committed_tokens);
  }
  if (heads_with_tokens > 0) {
    out.bits_per_token_k = bpt_k / static_cast<double>(heads_with_tokens);
    out.bits_per_token_v = bpt_v / static_cast<double>(heads_with_tokens);
    out.bits_per_token = out.bits_per_token_k + out.bits_per_token_v;
  }
  out.r_raw_k = Distribution::of(std::move(rrk));
  out.r_flat_k = Distribution::of(std::move(rfk));
  out.r_raw_v = Distribution::of(std::move(rrv));
  out.r_flat_v = Distribution::of(std::move(rfv));
  out.rho_v = Distribution::of(std::move(rho));
  out.heads = std::move(heads);
  return out;
}

}  // namespace detail

// Runs every scheme on the stream. A raw baseline named "raw" is appended
// unless one is already present. Work fans out over (scheme, layer, head)
// tasks; results are merged in canonical order, so output does not depend
// on the thread count.
inline std::vector<CacheMetrics> run_scheme_comparison(const KvStream& stream,
                                                       std::vector<Scheme> schemes,
                                                       unsigned threads = 1) {
  stream.validate();
  if (schemes.empty()) throw UsageError("run_scheme_comparison: no schemes");
  for (const Scheme& s : schemes) s.config.validate();
  const bool has_raw = std::any_of(schemes.begin(), schemes.end(),
                                   [](const Scheme& s) { return s.kind == SchemeKind::kRaw; });
  if (!has_raw) schemes.push_back(Scheme{"raw", SchemeKind::kRaw, schemes.front().config});

  const std::size_t per_scheme = stream.layers * stream.heads;
  const std::size_t tasks = schemes.size() * per_scheme;
  std::vector<HeadMetrics> results(tasks);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks && !failed; i = next++) {
      try {
        const std::size_t s = i / per_scheme;
        const std::size_t lh = i % per_scheme;
        results[i] = detail::replay_head(stream, lh / stream.heads, lh % stream.heads, schemes[s]);
      } catch (...) {
        if (!failed.exchange(true)) failure = std::current_exception();
      }
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(tasks)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<CacheMetrics> out;
  for (std::size_t s = 0; s < schemes.size(); ++s) {
    std::vector<HeadMetrics> heads(
        std::make_move_iterator(results.begin() + static_cast<std::ptrdiff_t>(s * per_scheme)),
        std::make_move_iterator(results.begin() + static_cast<std::ptrdiff_t>((s + 1) * per_scheme)));
    out.push_back(detail::aggregate(schemes[s], std::move(heads), stream.head_dim));
  }
  return out;
}

}  // namespace patternkv
