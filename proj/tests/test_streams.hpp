#pragma once

// Stream builders shared by the engine, comparison and acceptance tests.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "patternkv/rng.hpp"
#include "patternkv/stream.hpp"
#include "patternkv/synthetic.hpp"

namespace patternkv::test_streams {

// Clustered V (8 clusters, std 0.1, spread 10) with drifting K, one head.
inline SyntheticStreamSpec clustered_spec(std::size_t head_dim, std::size_t prefill_len,
                                          std::size_t decode_len, std::uint64_t seed) {
  SyntheticStreamSpec spec;
  spec.layers = 1;
  spec.heads = 1;
  spec.head_dim = head_dim;
  spec.prefill_len = prefill_len;
  spec.decode_len = decode_len;
  spec.k_outlier_channels = {};
  spec.k_outlier_multipliers = {};
  spec.v_clusters = 8;
  spec.v_center_spread = 10.0;
  spec.v_cluster_std = 0.1;
  spec.v_consistency = 0.9;
  spec.seed = seed;
  return spec;
}

// V stream far from every pattern. Prefill V repeats a few integer +-5
// prototypes, so it quantizes losslessly with or without a pattern and the
// mined patterns are wide. Decode V is a random offset along the all-ones
// direction (invisible to the min-max distance) plus small Gaussian noise:
// a narrow raw range that any of those patterns, or a Chebyshev center of
// such tokens, can only widen.
inline KvStream adversarial_v_stream(std::size_t head_dim, std::size_t prefill_len,
                                     std::size_t decode_len, std::uint64_t seed) {
  KvStream s = generate_synthetic_stream(clustered_spec(head_dim, prefill_len, decode_len, seed));
  Rng rng(derive_seed(seed, 0xAD));
  for (HeadStream& h : s.data) {
    std::vector<std::vector<double>> protos(4, std::vector<double>(head_dim));
    for (auto& p : protos)
      for (double& v : p) v = rng.uniform() < 0.5 ? -5.0 : 5.0;
    for (std::size_t t = 0; t < h.prefill_v.rows(); ++t) {
      const auto& p = protos[rng.below(protos.size())];
      std::copy(p.begin(), p.end(), h.prefill_v.row(t).begin());
    }
    for (std::size_t t = 0; t < h.decode_v.rows(); ++t) {
      const double offset = rng.uniform(-20.0, 20.0);
      for (double& v : h.decode_v.row(t)) v = offset + 0.1 * rng.normal();
    }
  }
  return s;
}

}  // namespace patternkv::test_streams
