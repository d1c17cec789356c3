#include <gtest/gtest.h>

#include <string>

#include "patternkv/compare.hpp"
#include "patternkv/report.hpp"
#include "test_streams.hpp"

using namespace patternkv;

namespace {

KvStream clustered(std::size_t heads = 1, std::uint64_t seed = 3) {
  SyntheticStreamSpec spec = test_streams::clustered_spec(64, 512, 1536, seed);
  spec.heads = heads;
  return generate_synthetic_stream(spec);
}

std::string dump(const std::vector<CacheMetrics>& ms) {
  std::string out;
  for (const CacheMetrics& m : ms) out += to_json(m).dump();
  return out;
}

const CacheMetrics& find(const std::vector<CacheMetrics>& ms, const std::string& name) {
  for (const CacheMetrics& m : ms)
    if (m.scheme == name) return m;
  throw std::runtime_error("missing scheme " + name);
}

}  // namespace

TEST(RunSchemeComparison, AppendsRawBaseline) {
  const auto ms = run_scheme_comparison(clustered(), {Scheme{"pkv", SchemeKind::kPatternKV, {}}});
  ASSERT_EQ(ms.size(), 2u);
  EXPECT_EQ(ms[0].scheme, "pkv");
  EXPECT_EQ(ms[1].scheme, "raw");
  EXPECT_EQ(ms[1].kind, SchemeKind::kRaw);
  EXPECT_EQ(ms[0].committed_tokens, ms[1].committed_tokens);
  EXPECT_EQ(ms[0].committed_tokens, committed_token_count(512, 1536, 128, 128));
}

TEST(RunSchemeComparison, DeterministicAndThreadInvariant) {
  const KvStream s = clustered(4);
  const std::vector<Scheme> schemes = {Scheme{"pkv", SchemeKind::kPatternKV, {}}};
  const std::string one = dump(run_scheme_comparison(s, schemes, 1));
  EXPECT_EQ(one, dump(run_scheme_comparison(s, schemes, 1)));
  EXPECT_EQ(one, dump(run_scheme_comparison(s, schemes, 3)));
  EXPECT_EQ(one, dump(run_scheme_comparison(s, schemes, 16)));
}

TEST(RunSchemeComparison, ClusteredValuesBeatRawAtTwoBits) {
  const auto ms = run_scheme_comparison(clustered(), {Scheme{"pkv", SchemeKind::kPatternKV, {}}});
  EXPECT_LT(find(ms, "pkv").mse_v, 0.5 * find(ms, "raw").mse_v);
  EXPECT_GT(find(ms, "pkv").v_gate_acceptance_rate, 0.5);
}

TEST(RunSchemeComparison, EightBitErrorsWithinHalfStep) {
  EngineConfig cfg;
  cfg.bits = 8;
  const auto ms = run_scheme_comparison(clustered(), {Scheme{"pkv", SchemeKind::kPatternKV, cfg}});
  for (const CacheMetrics& m : ms) {
    // A half step of the widest V group is an upper bound on every error.
    const double bound = m.r_flat_v.max / 255.0 / 2.0;
    for (const HeadMetrics& h : m.heads)
      for (double e : h.token_mse_v) EXPECT_LE(e, bound * bound * (1 + 1e-9));
  }
}

TEST(RunSchemeComparison, AblationMatchesRawExactly) {
  EngineConfig cfg;
  cfg.use_k_patterns = false;
  cfg.use_v_patterns = false;
  const auto ms = run_scheme_comparison(clustered(2), {Scheme{"off", SchemeKind::kPatternKV, cfg}});
  const CacheMetrics& off = find(ms, "off");
  const CacheMetrics& raw = find(ms, "raw");
  EXPECT_EQ(off.mse, raw.mse);
  EXPECT_EQ(off.mse_k, raw.mse_k);
  EXPECT_EQ(off.mse_v, raw.mse_v);
  EXPECT_EQ(off.bits_per_token, raw.bits_per_token);
  for (std::size_t h = 0; h < off.heads.size(); ++h) {
    EXPECT_EQ(off.heads[h].token_mse_k, raw.heads[h].token_mse_k);
    EXPECT_EQ(off.heads[h].token_mse_v, raw.heads[h].token_mse_v);
  }
}

TEST(RunSchemeComparison, GateOffHurtsAdversarialValues) {
  const KvStream s = test_streams::adversarial_v_stream(64, 256, 1024, 17);
  EngineConfig ungated;
  ungated.use_v_gate = false;
  const auto ms = run_scheme_comparison(s, {Scheme{"gated", SchemeKind::kPatternKV, {}},
                                            Scheme{"ungated", SchemeKind::kPatternKV, ungated}});
  EXPECT_GT(find(ms, "ungated").mse_v, find(ms, "raw").mse_v);
  EXPECT_LE(find(ms, "gated").mse_v, find(ms, "raw").mse_v);
}

TEST(RunSchemeComparison, RejectsBadInput) {
  EXPECT_THROW(run_scheme_comparison(clustered(), {}), UsageError);
  EngineConfig bad;
  bad.bits = 3;
  EXPECT_THROW(run_scheme_comparison(clustered(), {Scheme{"x", SchemeKind::kPatternKV, bad}}),
               UsageError);
}

TEST(Report, RoundTripIgnoresUnknownFields) {
  RunReport r;
  r.seed = 9;
  r.input.source = "synthetic";
  r.schemes = run_scheme_comparison(clustered(), {Scheme{"pkv", SchemeKind::kPatternKV, {}}});
  auto j = to_json(r);
  j["future_field"] = {{"nested", 1}};
  j["schemes"][0]["extra"] = "ignored";
  const ReportSummary s = read_report(j.dump(2));
  EXPECT_EQ(s.schema_version, kReportSchemaVersion);
  EXPECT_EQ(s.seed, 9u);
  ASSERT_EQ(s.schemes.size(), 2u);
  EXPECT_EQ(s.schemes[0].name, "pkv");
  EXPECT_EQ(s.schemes[0].config, r.schemes[0].config);
  EXPECT_EQ(s.schemes[0].mse, r.schemes[0].mse);
  EXPECT_EQ(s.schemes[1].kind, "raw");
  EXPECT_EQ(s.schemes[0].committed_tokens, r.schemes[0].committed_tokens);
}

TEST(Distribution, Percentiles) {
  const Distribution d = Distribution::of({5, 1, 4, 2, 3, 6, 7, 8, 9, 10});
  EXPECT_EQ(d.count, 10u);
  EXPECT_DOUBLE_EQ(d.mean, 5.5);
  EXPECT_EQ(d.p50, 5.0);
  EXPECT_EQ(d.p90, 9.0);
  EXPECT_EQ(d.max, 10.0);
  EXPECT_EQ(Distribution::of({}).count, 0u);
}
