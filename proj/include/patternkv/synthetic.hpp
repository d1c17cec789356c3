#pragma once

// Synthetic K/V streams with the structure pattern-aligned quantization
// exploits:
//   K  per-head channel profile with designated outlier channels, drifting
//      linearly from one random profile to another (weight
//      min(1, drift_rate * t)), plus i.i.d. Gaussian noise.
//   V  per-head cluster centers; every position carries a token id, each
//      token id has a home cluster per head that is used with probability
//      `v_consistency` (otherwise a uniformly random cluster), and the
//      emitted vector is center + Gaussian noise.
//
// Spec files are flat `key = value` text, one pair per line, `#` comments.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "patternkv/error.hpp"
#include "patternkv/rng.hpp"
#include "patternkv/stream.hpp"

namespace patternkv {

struct SyntheticStreamSpec {
  std::size_t layers = 1;
  std::size_t heads = 2;
  std::size_t head_dim = 64;
  std::size_t prefill_len = 2048;
  std::size_t decode_len = 2048;

  std::vector<std::size_t> k_outlier_channels = {7};
  std::vector<double> k_outlier_multipliers = {10.0};
  double k_drift_rate = 1.0 / 4096.0;
  double k_noise_std = 0.1;

  std::size_t v_clusters = 8;
  double v_center_spread = 10.0;
  double v_cluster_std = 0.1;
  double v_consistency = 0.9;
  std::size_t v_vocab_size = 512;

  std::uint64_t seed = 0;

  void validate() const {
    if (layers < 1 || heads < 1 || head_dim < 1 || prefill_len < 1) {
      throw UsageError("synthetic spec: layers, heads, head_dim, prefill_len must be >= 1");
    }
    if (v_clusters < 1 || v_vocab_size < 1) {
      throw UsageError("synthetic spec: v_clusters and v_vocab_size must be >= 1");
    }
    if (!(v_consistency >= 0.0 && v_consistency <= 1.0)) {
      throw UsageError("synthetic spec: v_consistency must lie in [0, 1]");
    }
    if (k_outlier_channels.size() != k_outlier_multipliers.size()) {
      throw UsageError("synthetic spec: k_outlier_channels and k_outlier_multipliers differ in length");
    }
    for (std::size_t c : k_outlier_channels) {
      if (c >= head_dim) throw UsageError("synthetic spec: outlier channel out of range");
    }
    if (k_drift_rate < 0.0 || k_noise_std < 0.0 || v_cluster_std < 0.0 || v_center_spread < 0.0) {
      throw UsageError("synthetic spec: rates, spreads and deviations must be non-negative");
    }
  }
};

namespace detail {

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::string& key) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    std::istringstream is(item);
    T value{};
    if (!(is >> value) || !is.eof()) {
      throw UsageError("synthetic spec: bad list value '" + item + "' for key " + key);
    }
    out.push_back(value);
  }
  return out;
}

template <typename T>
T parse_scalar(const std::string& text, const std::string& key) {
  std::istringstream is(text);
  T value{};
  if (!(is >> value) || !(is >> std::ws).eof()) {
    throw UsageError("synthetic spec: bad value '" + text + "' for key " + key);
  }
  return value;
}

}  // namespace detail

inline SyntheticStreamSpec parse_synthetic_spec(const std::string& text) {
  SyntheticStreamSpec spec;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line.erase(0, line.find_first_not_of(" \t\r"));
    line.erase(line.find_last_not_of(" \t\r") + 1);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("synthetic spec line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    key.erase(key.find_last_not_of(" \t") + 1);
    value.erase(0, value.find_first_not_of(" \t"));

    using detail::parse_list;
    using detail::parse_scalar;
    if (key == "layers") spec.layers = parse_scalar<std::size_t>(value, key);
    else if (key == "heads") spec.heads = parse_scalar<std::size_t>(value, key);
    else if (key == "head_dim") spec.head_dim = parse_scalar<std::size_t>(value, key);
    else if (key == "prefill_len") spec.prefill_len = parse_scalar<std::size_t>(value, key);
    else if (key == "decode_len") spec.decode_len = parse_scalar<std::size_t>(value, key);
    else if (key == "k_outlier_channels") spec.k_outlier_channels = parse_list<std::size_t>(value, key);
    else if (key == "k_outlier_multipliers") spec.k_outlier_multipliers = parse_list<double>(value, key);
    else if (key == "k_drift_rate") spec.k_drift_rate = parse_scalar<double>(value, key);
    else if (key == "k_noise_std") spec.k_noise_std = parse_scalar<double>(value, key);
    else if (key == "v_clusters") spec.v_clusters = parse_scalar<std::size_t>(value, key);
    else if (key == "v_center_spread") spec.v_center_spread = parse_scalar<double>(value, key);
    else if (key == "v_cluster_std") spec.v_cluster_std = parse_scalar<double>(value, key);
    else if (key == "v_consistency") spec.v_consistency = parse_scalar<double>(value, key);
    else if (key == "v_vocab_size") spec.v_vocab_size = parse_scalar<std::size_t>(value, key);
    else if (key == "seed") spec.seed = parse_scalar<std::uint64_t>(value, key);
    else throw UsageError("synthetic spec line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
  spec.validate();
  return spec;
}

inline SyntheticStreamSpec load_synthetic_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open synthetic spec file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_synthetic_spec(ss.str());
}

inline std::string format_synthetic_spec(const SyntheticStreamSpec& spec) {
  auto join = [](const auto& values) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < values.size(); ++i) os << (i ? "," : "") << values[i];
    return os.str();
  };
  std::ostringstream os;
  os.precision(17);
  os << "layers = " << spec.layers << "\n"
     << "heads = " << spec.heads << "\n"
     << "head_dim = " << spec.head_dim << "\n"
     << "prefill_len = " << spec.prefill_len << "\n"
     << "decode_len = " << spec.decode_len << "\n"
     << "k_outlier_channels = " << join(spec.k_outlier_channels) << "\n"
     << "k_outlier_multipliers = " << join(spec.k_outlier_multipliers) << "\n"
     << "k_drift_rate = " << spec.k_drift_rate << "\n"
     << "k_noise_std = " << spec.k_noise_std << "\n"
     << "v_clusters = " << spec.v_clusters << "\n"
     << "v_center_spread = " << spec.v_center_spread << "\n"
     << "v_cluster_std = " << spec.v_cluster_std << "\n"
     << "v_consistency = " << spec.v_consistency << "\n"
     << "v_vocab_size = " << spec.v_vocab_size << "\n"
     << "seed = " << spec.seed << "\n";
  return os.str();
}

inline KvStream generate_synthetic_stream(const SyntheticStreamSpec& spec) {
  spec.validate();
  KvStream stream;
  stream.layers = spec.layers;
  stream.heads = spec.heads;
  stream.head_dim = spec.head_dim;
  stream.prefill_len = spec.prefill_len;
  stream.decode_len = spec.decode_len;
  stream.allocate();

  const std::size_t total = spec.prefill_len + spec.decode_len;
  const std::size_t d = spec.head_dim;

  Rng token_rng(derive_seed(spec.seed, 0xC0FFEE));
  stream.token_ids.resize(total);
  for (auto& id : stream.token_ids) {
    id = static_cast<std::uint32_t>(token_rng.below(spec.v_vocab_size));
  }

  std::vector<double> multiplier(d, 1.0);
  std::vector<bool> is_outlier(d, false);
  for (std::size_t i = 0; i < spec.k_outlier_channels.size(); ++i) {
    multiplier[spec.k_outlier_channels[i]] = spec.k_outlier_multipliers[i];
    is_outlier[spec.k_outlier_channels[i]] = true;
  }

  for (std::size_t layer = 0; layer < spec.layers; ++layer) {
    for (std::size_t head = 0; head < spec.heads; ++head) {
      HeadStream& hs = stream.at(layer, head);
      Rng rng(derive_seed(spec.seed, layer, head));

      // K profiles. Outlier channels keep their sign along the drift.
      std::vector<double> from(d), to(d);
      for (std::size_t c = 0; c < d; ++c) {
        if (is_outlier[c]) {
          const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
          from[c] = sign * multiplier[c] * rng.uniform(0.9, 1.1);
          to[c] = sign * multiplier[c] * rng.uniform(0.9, 1.1);
        } else {
          from[c] = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.25, 1.25);
          to[c] = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.25, 1.25);
        }
      }

      // V clusters and per-token home cluster.
      Matrix centers(spec.v_clusters, d);
      for (double& v : centers.data()) {
        v = rng.uniform(-0.5 * spec.v_center_spread, 0.5 * spec.v_center_spread);
      }
      std::vector<std::uint32_t> home(spec.v_vocab_size);
      for (auto& h : home) h = static_cast<std::uint32_t>(rng.below(spec.v_clusters));

      hs.v_cluster_ids.resize(total);
      for (std::size_t t = 0; t < total; ++t) {
        const double w = std::min(1.0, spec.k_drift_rate * static_cast<double>(t));
        std::span<double> k = t < spec.prefill_len ? hs.prefill_k.row(t)
                                                   : hs.decode_k.row(t - spec.prefill_len);
        for (std::size_t c = 0; c < d; ++c) {
          k[c] = (1.0 - w) * from[c] + w * to[c] + spec.k_noise_std * rng.normal();
        }

        std::uint32_t cluster = home[stream.token_ids[t]];
        if (rng.uniform() >= spec.v_consistency) {
          cluster = static_cast<std::uint32_t>(rng.below(spec.v_clusters));
        }
        hs.v_cluster_ids[t] = cluster;
        std::span<double> v = t < spec.prefill_len ? hs.prefill_v.row(t)
                                                   : hs.decode_v.row(t - spec.prefill_len);
        const auto center = centers.row(cluster);
        for (std::size_t c = 0; c < d; ++c) {
          v[c] = center[c] + spec.v_cluster_std * rng.normal();
        }
      }
    }
  }
  return stream;
}

}  // namespace patternkv
