#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "patternkv/analysis.hpp"
#include "patternkv/baseline.hpp"
#include "patternkv/engine.hpp"
#include "patternkv/snapshot.hpp"
#include "patternkv/synthetic.hpp"
#include "test_streams.hpp"

using namespace patternkv;

namespace {

Matrix random_matrix(std::uint64_t seed, std::size_t rows, std::size_t cols, double lo = -2,
                     double hi = 2) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = dist(rng);
  return m;
}

EngineConfig small_config() {
  EngineConfig c;
  c.bits = 2;
  c.pattern_count = 8;
  c.group_size = 16;
  c.residual_window = 16;
  return c;
}

HeadCache replay(const HeadStream& h, const EngineConfig& config) {
  HeadCache cache(config, h.prefill_k.cols());
  cache.prefill(h.prefill_k, h.prefill_v);
  for (std::size_t t = 0; t < h.decode_k.rows(); ++t) cache.append(h.decode_k.row(t), h.decode_v.row(t));
  return cache;
}

double committed_v_mse(const HeadCache& cache, const Matrix& values) {
  double sse = 0.0;
  const std::size_t n = cache.state().committed_tokens;
  for (std::size_t t = 0; t < n; ++t) {
    const auto v = cache.reconstruct(CacheKind::kValue, t);
    for (std::size_t c = 0; c < v.size(); ++c) sse += (v[c] - values(t, c)) * (v[c] - values(t, c));
  }
  return sse / static_cast<double>(n * values.cols());
}

Matrix stacked(const Matrix& a, const Matrix& b) {
  Matrix out = a;
  for (std::size_t r = 0; r < b.rows(); ++r) out.append_row(b.row(r));
  return out;
}

}  // namespace

TEST(Prefill, ShortPrefillStaysInWindow) {
  const EngineConfig cfg;  // window 128
  const Matrix k = random_matrix(1, 100, 32);
  const Matrix v = random_matrix(2, 100, 32);
  const HeadCache cache = prefill(k, v, cfg);
  EXPECT_EQ(cache.state().committed_tokens, 0u);
  EXPECT_TRUE(cache.state().k.blocks.empty());
  EXPECT_EQ(cache.state().k.window.size(), 100u);
  EXPECT_EQ(cache.state().k.patterns.size(), 32u);
  EXPECT_EQ(cache.state().v.patterns.size(), 32u);
  EXPECT_EQ(cache.token_count(), 100u);
}

TEST(Prefill, DefaultGeometryCommitsOneBlock) {
  const EngineConfig cfg;
  const Matrix k = random_matrix(3, 256, 64);
  const Matrix v = random_matrix(4, 256, 64);
  const HeadCache cache = prefill(k, v, cfg);
  const HeadCacheState& st = cache.state();
  ASSERT_EQ(st.k.blocks.size(), 1u);
  ASSERT_EQ(st.v.blocks.size(), 1u);
  EXPECT_EQ(st.k.blocks[0].groups.size(), 64u);   // one per channel
  EXPECT_EQ(st.k.blocks[0].groups[0].length, 128u);
  EXPECT_EQ(st.k.blocks[0].groups[0].layout, Layout::kPerChannel);
  EXPECT_EQ(st.v.blocks[0].groups.size(), 128u);  // one per token
  EXPECT_EQ(st.v.blocks[0].groups[0].length, 64u);
  EXPECT_EQ(st.v.blocks[0].groups[0].layout, Layout::kPerToken);
  EXPECT_EQ(st.k.window.size(), 128u);
  EXPECT_EQ(st.committed_tokens, 128u);
}

TEST(Prefill, PartialGroupsStayInWindow) {
  EngineConfig cfg = small_config();
  const HeadCache cache = prefill(random_matrix(5, 70, 8), random_matrix(6, 70, 8), cfg);
  // 70 - 16 = 54 older tokens -> 3 full groups of 16.
  EXPECT_EQ(cache.state().committed_tokens, 48u);
  EXPECT_EQ(cache.state().v.window.size(), 22u);
}

TEST(Prefill, VectorsOnPatternsReconstructExactly) {
  // Integer-valued prototypes, so cluster means are exact.
  const std::vector<std::vector<double>> protos = {
      {1, 5, -3, 2}, {7, 0, 0, -4}, {-2, -2, 6, 1}, {3, 3, 3, 9}};
  Matrix k(64, 4), v(64, 4);
  for (std::size_t t = 0; t < 64; ++t) {
    const auto& p = protos[t % 4];
    const auto& q = protos[(t / 4) % 4];
    std::copy(p.begin(), p.end(), k.row(t).begin());
    std::copy(q.begin(), q.end(), v.row(t).begin());
  }
  EngineConfig cfg = small_config();
  cfg.pattern_count = 4;
  const HeadCache cache = prefill(k, v, cfg);
  ASSERT_EQ(cache.state().committed_tokens, 48u);
  for (std::size_t t = 0; t < 48; ++t) {
    const TokenKV rec = cache.reconstruct_token(t);
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_EQ(rec.k[c], k(t, c));
      EXPECT_EQ(rec.v[c], v(t, c));
    }
  }
}

TEST(Prefill, Errors) {
  const EngineConfig cfg = small_config();
  HeadCache cache(cfg, 8);
  EXPECT_THROW(cache.prefill(random_matrix(1, 10, 7), random_matrix(2, 10, 7)), UsageError);
  EXPECT_THROW(cache.prefill(random_matrix(1, 10, 8), random_matrix(2, 9, 8)), UsageError);
  EXPECT_THROW(cache.prefill(Matrix(0, 8), Matrix(0, 8)), UsageError);
  Matrix bad = random_matrix(1, 10, 8);
  bad(3, 2) = NAN;
  EXPECT_THROW(cache.prefill(bad, random_matrix(2, 10, 8)), DataError);
  EXPECT_THROW(cache.append(std::vector<double>(8, 0.0), std::vector<double>(8, 0.0)), UsageError);
}

TEST(AppendDecodeToken, FlushArithmetic) {
  const EngineConfig cfg;  // G = W = 128
  const Matrix k = random_matrix(7, 256 + 128, 16);
  const Matrix v = random_matrix(8, 256 + 128, 16);
  HeadCache cache = prefill(k.slice_rows(0, 256), v.slice_rows(0, 256), cfg);
  const std::size_t pk = cache.state().k.patterns.size();
  const std::size_t pv = cache.state().v.patterns.size();
  for (std::size_t t = 256; t < 256 + 127; ++t) cache.append(k.row(t), v.row(t));
  EXPECT_EQ(cache.state().flushes, 0u);
  EXPECT_EQ(cache.state().committed_tokens, 128u);
  EXPECT_EQ(cache.state().k.window.size(), 255u);
  cache.append(k.row(383), v.row(383));
  EXPECT_EQ(cache.state().flushes, 1u);
  EXPECT_EQ(cache.state().committed_tokens, 256u);
  EXPECT_EQ(cache.state().k.window.size(), 128u);
  EXPECT_EQ(cache.state().k.patterns.size(), pk + 1);
  EXPECT_EQ(cache.state().v.patterns.size(), pv + 1);
  EXPECT_EQ(cache.state().k.patterns.origin(pk), PatternOrigin::kDecode);
  EXPECT_EQ(cache.token_count(), 384u);
}

TEST(AppendDecodeToken, NewPatternIsChebyshevCenterOfFlushedWindow) {
  const EngineConfig cfg = small_config();
  const Matrix k = random_matrix(9, 48, 8);
  const Matrix v = random_matrix(10, 48, 8);
  HeadCache cache = prefill(k.slice_rows(0, 16), v.slice_rows(0, 16), cfg);
  for (std::size_t t = 16; t < 32; ++t) cache.append(k.row(t), v.row(t));
  ASSERT_EQ(cache.state().flushes, 1u);
  // The flushed window is the 16 prefill tokens.
  const auto expected_k = generate_decode_pattern(k.slice_rows(0, 16));
  const auto expected_v = generate_decode_pattern(v.slice_rows(0, 16));
  const auto& ks = cache.state().k.patterns;
  const auto& vs = cache.state().v.patterns;
  EXPECT_TRUE(std::equal(expected_k.begin(), expected_k.end(), ks[ks.size() - 1].begin()));
  EXPECT_TRUE(std::equal(expected_v.begin(), expected_v.end(), vs[vs.size() - 1].begin()));
}

TEST(AppendDecodeToken, NoGenerationWhenToggledOff) {
  EngineConfig cfg = small_config();
  cfg.generate_new_patterns = false;
  const Matrix k = random_matrix(11, 128, 8);
  const Matrix v = random_matrix(12, 128, 8);
  HeadCache cache = prefill(k.slice_rows(0, 32), v.slice_rows(0, 32), cfg);
  const std::size_t before = cache.state().v.patterns.size();
  for (std::size_t t = 32; t < 128; ++t) cache.append(k.row(t), v.row(t));
  EXPECT_GT(cache.state().flushes, 0u);
  EXPECT_EQ(cache.state().v.patterns.size(), before);
}

TEST(AppendDecodeToken, NonFiniteInputIsDataError) {
  const EngineConfig cfg = small_config();
  HeadCache cache = prefill(random_matrix(1, 8, 4), random_matrix(2, 8, 4), cfg);
  std::vector<double> bad = {0, 1, INFINITY, 2};
  std::vector<double> ok = {0, 1, 2, 3};
  EXPECT_THROW(cache.append(bad, ok), DataError);
  EXPECT_THROW(cache.append(ok, bad), DataError);
  EXPECT_THROW(cache.append(std::vector<double>{1, 2}, ok), UsageError);
}

TEST(Engine, ConservationGrowthAndCausality) {
  const auto stream = generate_synthetic_stream(test_streams::clustered_spec(16, 100, 300, 5));
  const HeadStream& h = stream.at(0, 0);
  const EngineConfig cfg = small_config();
  const HeadCache cache = replay(h, cfg);
  const HeadCacheState& st = cache.state();
  EXPECT_EQ(st.token_count, 400u);
  EXPECT_EQ(st.committed_tokens + st.k.window.size(), 400u);
  EXPECT_EQ(st.committed_tokens,
            committed_token_count(100, 300, cfg.group_size, cfg.residual_window));
  EXPECT_EQ(st.k.patterns.size(), st.prefill_pattern_count_k + st.flushes);
  EXPECT_EQ(st.v.patterns.size(), st.prefill_pattern_count_v + st.flushes);
  // Blocks committed at prefill only reference prefill-mined patterns.
  const std::size_t prefill_blocks = (100 - cfg.residual_window) / cfg.group_size;
  for (std::size_t b = 0; b < prefill_blocks; ++b) {
    for (std::uint16_t idx : st.v.blocks[b].pattern_index) {
      EXPECT_TRUE(idx == kNoPattern || idx < st.prefill_pattern_count_v);
    }
  }
  // Every token reconstructs.
  for (std::size_t t = 0; t < st.token_count; ++t) EXPECT_NO_THROW(cache.reconstruct_token(t));
  EXPECT_THROW(cache.reconstruct_token(400), UsageError);
}

TEST(Engine, GateSafetyFromRecordedDecisions) {
  const auto stream = generate_synthetic_stream(test_streams::clustered_spec(32, 256, 512, 6));
  const HeadCache cache = replay(stream.at(0, 0), small_config());
  const double rho_star = cache.gate().rho_star;
  std::size_t flattened = 0;
  for (const CommittedBlock& b : cache.state().v.blocks) {
    for (std::size_t t = 0; t < b.tokens(); ++t) {
      const GateDecision& g = b.decisions[t];
      EXPECT_EQ(g.flatten, b.pattern_index[t] != kNoPattern);
      if (g.flatten) {
        ++flattened;
        EXPECT_LE(g.r_flat, rho_star * g.r_raw);
      }
    }
  }
  EXPECT_GT(flattened, 0u);
}

TEST(ReconstructToken, WindowTokensAreExact) {
  const EngineConfig cfg = small_config();
  const Matrix k = random_matrix(13, 40, 8);
  const Matrix v = random_matrix(14, 40, 8);
  const HeadCache cache = prefill(k, v, cfg);
  for (std::size_t t = cache.state().committed_tokens; t < 40; ++t) {
    const TokenKV rec = cache.reconstruct_token(t);
    EXPECT_TRUE(std::equal(rec.k.begin(), rec.k.end(), k.row(t).begin()));
    EXPECT_TRUE(std::equal(rec.v.begin(), rec.v.end(), v.row(t).begin()));
  }
}

TEST(ReconstructToken, EightBitCommittedBound) {
  EngineConfig cfg = small_config();
  cfg.bits = 8;
  const auto stream = generate_synthetic_stream(test_streams::clustered_spec(16, 64, 128, 2));
  const HeadStream& h = stream.at(0, 0);
  const HeadCache cache = replay(h, cfg);
  const Matrix keys = stacked(h.prefill_k, h.decode_k);
  const Matrix values = stacked(h.prefill_v, h.decode_v);
  const std::size_t g = cfg.group_size;
  for (std::size_t t = 0; t < cache.state().committed_tokens; ++t) {
    const CommittedBlock& vb = cache.state().v.blocks[t / g];
    const CommittedBlock& kb = cache.state().k.blocks[t / g];
    const auto v = cache.reconstruct(CacheKind::kValue, t);
    const auto k = cache.reconstruct(CacheKind::kKey, t);
    for (std::size_t c = 0; c < 16; ++c) {
      EXPECT_LE(std::abs(v[c] - values(t, c)), vb.groups[t % g].params.scale / 2 + 1e-12);
      EXPECT_LE(std::abs(k[c] - keys(t, c)), kb.groups[c].params.scale / 2 + 1e-12);
    }
  }
}

TEST(ReconstructToken, GatedOffValueEqualsPlainQuantization) {
  const auto stream = test_streams::adversarial_v_stream(32, 64, 256, 3);
  const HeadStream& h = stream.at(0, 0);
  const HeadCache cache = replay(h, small_config());
  const Matrix values = stacked(h.prefill_v, h.decode_v);
  std::size_t checked = 0;
  const std::size_t g = small_config().group_size;
  for (std::size_t t = 0; t < cache.state().committed_tokens; ++t) {
    if (cache.state().v.blocks[t / g].pattern_index[t % g] != kNoPattern) continue;
    const auto expected = dequantize_group(quantize_group(values.row(t), 2));
    EXPECT_EQ(cache.reconstruct(CacheKind::kValue, t), expected);
    ++checked;
  }
  EXPECT_GT(checked, 100u);
}

TEST(Engine, GateOffFailureModeOnAdversarialValues) {
  const auto stream = test_streams::adversarial_v_stream(64, 256, 1024, 17);
  const HeadStream& h = stream.at(0, 0);
  const Matrix keys = stacked(h.prefill_k, h.decode_k);
  const Matrix values = stacked(h.prefill_v, h.decode_v);
  EngineConfig gated;
  EngineConfig ungated;
  ungated.use_v_gate = false;
  const RawReconstruction raw = raw_baseline_reconstruction(keys, values, 256, gated);
  double raw_sse = 0.0;
  for (std::size_t t = 0; t < raw.values.rows(); ++t)
    for (std::size_t c = 0; c < 64; ++c)
      raw_sse += std::pow(raw.values(t, c) - values(t, c), 2);
  const double raw_mse = raw_sse / static_cast<double>(raw.values.rows() * 64);
  const double mse_gated = committed_v_mse(replay(h, gated), values);
  const double mse_ungated = committed_v_mse(replay(h, ungated), values);
  EXPECT_GT(mse_ungated, raw_mse);
  EXPECT_LE(mse_gated, raw_mse);
}

TEST(Engine, AblationCoherenceIsBitIdentical) {
  const auto stream = generate_synthetic_stream(test_streams::clustered_spec(16, 200, 300, 8));
  const HeadStream& h = stream.at(0, 0);
  EngineConfig cfg = small_config();
  cfg.use_k_patterns = false;
  cfg.use_v_patterns = false;
  const HeadCache cache = replay(h, cfg);
  const Matrix keys = stacked(h.prefill_k, h.decode_k);
  const Matrix values = stacked(h.prefill_v, h.decode_v);
  const RawReconstruction raw = raw_baseline_reconstruction(keys, values, 200, cfg);
  ASSERT_EQ(raw.keys.rows(), cache.state().committed_tokens);
  for (std::size_t t = 0; t < raw.keys.rows(); ++t) {
    const TokenKV rec = cache.reconstruct_token(t);
    ASSERT_TRUE(std::equal(rec.k.begin(), rec.k.end(), raw.keys.row(t).begin()));
    ASSERT_TRUE(std::equal(rec.v.begin(), rec.v.end(), raw.values.row(t).begin()));
  }
}

TEST(Engine, ReplayDeterminism) {
  const auto stream = generate_synthetic_stream(test_streams::clustered_spec(16, 150, 250, 9));
  const EngineConfig cfg = small_config();
  EXPECT_EQ(replay(stream.at(0, 0), cfg).state(), replay(stream.at(0, 0), cfg).state());
}

TEST(Engine, CommittedBitsMatchClosedForm) {
  const auto stream = generate_synthetic_stream(test_streams::clustered_spec(32, 300, 700, 10));
  for (bool patterns : {true, false}) {
    EngineConfig cfg = small_config();
    cfg.use_k_patterns = cfg.use_v_patterns = patterns;
    const HeadCache cache = replay(stream.at(0, 0), cfg);
    const HeadCacheState& st = cache.state();
    for (CacheKind kind : {CacheKind::kKey, CacheKind::kValue}) {
      EXPECT_EQ(cache.bits_per_token(kind),
                bits_per_token(cfg, kind, 32, st.cache(kind).patterns.size(), st.committed_tokens));
    }
  }
}

TEST(Engine, KGateAblationRecordsRawTokens) {
  // With the K gate on, K tokens whose contraction is insufficient are
  // committed without a pattern.
  const auto stream = test_streams::adversarial_v_stream(16, 64, 128, 4);
  HeadStream h = stream.at(0, 0);
  h.prefill_k = h.prefill_v;
  h.decode_k = h.decode_v;
  EngineConfig cfg = small_config();
  cfg.use_k_gate = true;
  const HeadCache cache = replay(h, cfg);
  std::size_t raw_tokens = 0;
  for (const CommittedBlock& b : cache.state().k.blocks)
    for (std::uint16_t idx : b.pattern_index) raw_tokens += idx == kNoPattern;
  EXPECT_GT(raw_tokens, 0u);
}

TEST(Snapshot, RoundTripAndResume) {
  const auto stream = generate_synthetic_stream(test_streams::clustered_spec(16, 120, 200, 12));
  const HeadStream& h = stream.at(0, 0);
  const EngineConfig cfg = small_config();
  HeadCache cache = prefill(h.prefill_k, h.prefill_v, cfg);
  for (std::size_t t = 0; t < 100; ++t) cache.append(h.decode_k.row(t), h.decode_v.row(t));

  const auto bytes = encode_snapshot(Snapshot{cfg, {cache.state()}});
  ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "PKVS");
  const Snapshot back = decode_snapshot(bytes);
  EXPECT_EQ(back.config, cfg);
  ASSERT_EQ(back.heads.size(), 1u);
  EXPECT_EQ(back.heads[0], cache.state());

  HeadCache resumed = restore_head_cache(back.config, back.heads[0]);
  for (std::size_t t = 100; t < 200; ++t) {
    cache.append(h.decode_k.row(t), h.decode_v.row(t));
    resumed.append(h.decode_k.row(t), h.decode_v.row(t));
  }
  EXPECT_EQ(resumed.state(), cache.state());
}

TEST(Snapshot, RejectsCorruption) {
  const EngineConfig cfg = small_config();
  const HeadCache cache = prefill(random_matrix(1, 40, 4), random_matrix(2, 40, 4), cfg);
  auto bytes = encode_snapshot(Snapshot{cfg, {cache.state()}});
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_snapshot(truncated), DataError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_snapshot(bad_magic), DataError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(decode_snapshot(bad_version), DataError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_snapshot(trailing), DataError);
}
