#pragma once

// Run reports as JSON. Readers look up known keys only, so fields added by
// later schema versions are ignored.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "patternkv/compare.hpp"
#include "patternkv/config.hpp"
#include "patternkv/synthetic.hpp"

namespace patternkv {

inline constexpr int kReportSchemaVersion = 1;

inline nlohmann::ordered_json to_json(const EngineConfig& c) {
  return {{"bits", c.bits},
          {"pattern_count", c.pattern_count},
          {"group_size", c.group_size},
          {"residual_window", c.residual_window},
          {"alpha", c.alpha},
          {"k_layout", to_string(c.k_layout)},
          {"v_layout", to_string(c.v_layout)},
          {"use_k_patterns", c.use_k_patterns},
          {"use_v_patterns", c.use_v_patterns},
          {"generate_new_patterns", c.generate_new_patterns},
          {"use_v_gate", c.use_v_gate},
          {"use_k_gate", c.use_k_gate},
          {"seed", c.seed}};
}

inline EngineConfig engine_config_from_json(const nlohmann::json& j) {
  EngineConfig c;
  c.bits = j.value("bits", c.bits);
  c.pattern_count = j.value("pattern_count", c.pattern_count);
  c.group_size = j.value("group_size", c.group_size);
  c.residual_window = j.value("residual_window", c.residual_window);
  c.alpha = j.value("alpha", c.alpha);
  c.k_layout = j.value("k_layout", std::string("per-channel")) == "per-token" ? Layout::kPerToken
                                                                              : Layout::kPerChannel;
  c.v_layout = j.value("v_layout", std::string("per-token")) == "per-channel" ? Layout::kPerChannel
                                                                              : Layout::kPerToken;
  c.use_k_patterns = j.value("use_k_patterns", c.use_k_patterns);
  c.use_v_patterns = j.value("use_v_patterns", c.use_v_patterns);
  c.generate_new_patterns = j.value("generate_new_patterns", c.generate_new_patterns);
  c.use_v_gate = j.value("use_v_gate", c.use_v_gate);
  c.use_k_gate = j.value("use_k_gate", c.use_k_gate);
  c.seed = j.value("seed", c.seed);
  return c;
}

inline nlohmann::ordered_json to_json(const Distribution& d) {
  return {{"mean", d.mean}, {"p50", d.p50}, {"p90", d.p90}, {"max", d.max}, {"count", d.count}};
}

inline nlohmann::ordered_json to_json(const CacheMetrics& m) {
  nlohmann::ordered_json heads = nlohmann::ordered_json::array();
  for (const HeadMetrics& h : m.heads) {
    const double elements = static_cast<double>(h.committed_tokens);
    const double per = elements > 0 ? 1.0 / elements : 0.0;
    double mse_k = 0.0, mse_v = 0.0;
    for (double v : h.token_mse_k) mse_k += v;
    for (double v : h.token_mse_v) mse_v += v;
    heads.push_back({{"layer", h.layer},
                     {"head", h.head},
                     {"committed_tokens", h.committed_tokens},
                     {"mse_k", mse_k * per},
                     {"mse_v", mse_v * per},
                     {"v_flattened", h.v_flattened},
                     {"k_patterns", h.k_patterns},
                     {"v_patterns", h.v_patterns},
                     {"bits_per_token_k", h.committed_tokens ? static_cast<double>(h.bits_k) * per : 0.0},
                     {"bits_per_token_v", h.committed_tokens ? static_cast<double>(h.bits_v) * per : 0.0}});
  }
  return {{"name", m.scheme},
          {"kind", to_string(m.kind)},
          {"config", to_json(m.config)},
          {"committed_tokens", m.committed_tokens},
          {"mse", m.mse},
          {"mse_k", m.mse_k},
          {"mse_v", m.mse_v},
          {"r_raw_k", to_json(m.r_raw_k)},
          {"r_flat_k", to_json(m.r_flat_k)},
          {"r_raw_v", to_json(m.r_raw_v)},
          {"r_flat_v", to_json(m.r_flat_v)},
          {"rho_v", to_json(m.rho_v)},
          {"v_gate_acceptance_rate", m.v_gate_acceptance_rate},
          {"bits_per_token_k", m.bits_per_token_k},
          {"bits_per_token_v", m.bits_per_token_v},
          {"bits_per_token", m.bits_per_token},
          {"heads", std::move(heads)}};
}

struct InputDescription {
  std::string source;  // "trace" or "synthetic"
  std::string path;    // trace path, spec path, or "default"
  std::size_t layers = 0, heads = 0, head_dim = 0, prefill_len = 0, decode_len = 0;
  std::string synthetic_spec;  // spec text for synthetic runs
};

struct RunReport {
  int schema_version = kReportSchemaVersion;
  std::uint64_t seed = 0;
  InputDescription input;
  std::vector<CacheMetrics> schemes;
  double wall_clock_seconds = 0.0;
};

inline nlohmann::ordered_json to_json(const RunReport& r) {
  nlohmann::ordered_json schemes = nlohmann::ordered_json::array();
  for (const CacheMetrics& m : r.schemes) schemes.push_back(to_json(m));
  return {{"schema_version", r.schema_version},
          {"tool", "patternkv"},
          {"seed", r.seed},
          {"input",
           {{"source", r.input.source},
            {"path", r.input.path},
            {"layers", r.input.layers},
            {"heads", r.input.heads},
            {"head_dim", r.input.head_dim},
            {"prefill_len", r.input.prefill_len},
            {"decode_len", r.input.decode_len},
            {"synthetic_spec", r.input.synthetic_spec}}},
          {"schemes", std::move(schemes)},
          {"wall_clock_seconds", r.wall_clock_seconds}};
}

// Summary view of a report as read back from disk.
struct ReportSummary {
  int schema_version = 0;
  std::uint64_t seed = 0;
  struct Scheme {
    std::string name;
    std::string kind;
    EngineConfig config;
    double mse = 0.0, mse_k = 0.0, mse_v = 0.0;
    double v_gate_acceptance_rate = 0.0;
    double bits_per_token = 0.0;
    std::size_t committed_tokens = 0;
  };
  std::vector<Scheme> schemes;
};

inline ReportSummary read_report(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  ReportSummary s;
  s.schema_version = j.value("schema_version", 0);
  s.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("schemes")) {
    for (const auto& js : j.at("schemes")) {
      ReportSummary::Scheme sc;
      sc.name = js.value("name", std::string());
      sc.kind = js.value("kind", std::string());
      if (js.contains("config")) sc.config = engine_config_from_json(js.at("config"));
      sc.mse = js.value("mse", 0.0);
      sc.mse_k = js.value("mse_k", 0.0);
      sc.mse_v = js.value("mse_v", 0.0);
      sc.v_gate_acceptance_rate = js.value("v_gate_acceptance_rate", 0.0);
      sc.bits_per_token = js.value("bits_per_token", 0.0);
      sc.committed_tokens = js.value("committed_tokens", std::size_t{0});
      s.schemes.push_back(std::move(sc));
    }
  }
  return s;
}

}  // namespace patternkv
