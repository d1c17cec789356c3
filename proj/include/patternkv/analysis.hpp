#pragma once

// Diagnostics: variance decomposition over a pattern partition, cluster
// consistency of repeated tokens, the covering-net worst-case bound, and
// closed-form memory accounting.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "patternkv/config.hpp"
#include "patternkv/engine.hpp"
#include "patternkv/error.hpp"
#include "patternkv/matrix.hpp"
#include "patternkv/patterns.hpp"
#include "patternkv/quant.hpp"

namespace patternkv {

// ---------------------------------------------------------------------------
// Law of total variance over a partition. Population variances throughout:
//   Var(Z) = E[Var(Z | M)] + Var(E[Z | M])

struct VarianceReport {
  std::vector<double> total_var;      // per dimension
  std::vector<double> intra_pattern;  // E[Var(Z|M)] per dimension
  std::vector<double> inter_pattern;  // Var(E[Z|M]) per dimension
  double total = 0.0;                 // summed over dimensions
  double intra = 0.0;
  double inter = 0.0;

  double relative_error() const {
    const double scale = std::max(std::abs(total), std::numeric_limits<double>::min());
    return std::abs(total - (intra + inter)) / scale;
  }
};

inline VarianceReport variance_decomposition(const Matrix& vectors,
                                             std::span<const std::size_t> assignment,
                                             std::size_t pattern_count) {
  if (assignment.size() != vectors.rows()) {
    throw UsageError("variance_decomposition: assignment length != vector count");
  }
  if (vectors.rows() == 0) throw UsageError("variance_decomposition: no vectors");
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] >= pattern_count) {
      throw UsageError("variance_decomposition: pattern index " +
                       std::to_string(assignment[i]) + " out of range at vector " +
                       std::to_string(i));
    }
  }
  const std::size_t n = vectors.rows();
  const std::size_t d = vectors.cols();
  const double inv_n = 1.0 / static_cast<double>(n);

  std::vector<double> mean(d, 0.0);
  Matrix group_mean(pattern_count, d, 0.0);
  std::vector<std::size_t> group_size(pattern_count, 0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto x = vectors.row(r);
    auto gm = group_mean.row(assignment[r]);
    for (std::size_t c = 0; c < d; ++c) {
      mean[c] += x[c];
      gm[c] += x[c];
    }
    ++group_size[assignment[r]];
  }
  for (double& m : mean) m *= inv_n;
  for (std::size_t j = 0; j < pattern_count; ++j) {
    if (group_size[j] == 0) continue;
    for (double& v : group_mean.row(j)) v /= static_cast<double>(group_size[j]);
  }

  VarianceReport rep;
  rep.total_var.assign(d, 0.0);
  rep.intra_pattern.assign(d, 0.0);
  rep.inter_pattern.assign(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto x = vectors.row(r);
    const auto gm = group_mean.row(assignment[r]);
    for (std::size_t c = 0; c < d; ++c) {
      const double dt = x[c] - mean[c];
      const double dw = x[c] - gm[c];
      const double db = gm[c] - mean[c];
      rep.total_var[c] += dt * dt;
      rep.intra_pattern[c] += dw * dw;
      rep.inter_pattern[c] += db * db;
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    rep.total_var[c] *= inv_n;
    rep.intra_pattern[c] *= inv_n;
    rep.inter_pattern[c] *= inv_n;
    rep.total += rep.total_var[c];
    rep.intra += rep.intra_pattern[c];
    rep.inter += rep.inter_pattern[c];
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Cluster consistency of repeated tokens: C_t = max_k n_{t,k} / sum_k n_{t,k}.

struct ConsistencyReport {
  std::map<std::uint32_t, double> per_token;  // tokens appearing >= 2 times
  double aggregate = 0.0;                      // mean of per_token
};

inline ConsistencyReport consistency_metric(std::span<const std::uint32_t> token_ids,
                                            std::span<const std::uint32_t> cluster_ids) {
  if (token_ids.size() != cluster_ids.size()) {
    throw UsageError("consistency_metric: token and cluster sequences differ in length");
  }
  std::map<std::uint32_t, std::unordered_map<std::uint32_t, std::size_t>> counts;
  for (std::size_t i = 0; i < token_ids.size(); ++i) {
    ++counts[token_ids[i]][cluster_ids[i]];
  }
  ConsistencyReport rep;
  double sum = 0.0;
  for (const auto& [token, per_cluster] : counts) {
    std::size_t total = 0;
    std::size_t best = 0;
    for (const auto& [cluster, n] : per_cluster) {
      total += n;
      best = std::max(best, n);
    }
    if (total < 2) continue;
    const double c = static_cast<double>(best) / static_cast<double>(total);
    rep.per_token[token] = c;
    sum += c;
  }
  if (!rep.per_token.empty()) rep.aggregate = sum / static_cast<double>(rep.per_token.size());
  return rep;
}

// ---------------------------------------------------------------------------
// Covering-net worst-case bound.
//
// w(z) = max_i z_i - min_i z_i. The width radius R_w is half the largest
// width of x - c over the set at the per-dimension midpoint center c. An
// axis-aligned grid with l-infinity spacing 2*eps, eps = rho * R_w, puts
// every point within eps of a net point p(x), so w(x - p(x)) <= 2 * eps and
// the residual worst-case bound is at most rho times the direct one.

struct CoveringReport {
  double width_radius = 0.0;   // R_w
  double epsilon = 0.0;
  double linf_radius = 0.0;    // R_inf = sup ||x||_inf
  std::uint64_t epsilon_net_size = 0;
  double covering_estimate = 0.0;  // (1 + 2 R_inf / eps)^d
  double max_net_distance = 0.0;   // sup ||x - p(x)||_inf
  double u_raw = 0.0;
  double u_res = 0.0;
  bool bound_holds = false;
};

inline CoveringReport covering_bound_check(const Matrix& points, double rho, int bits) {
  if (!(rho > 0.0 && rho < 1.0)) {
    throw UsageError("covering_bound_check: rho must lie in (0, 1)");
  }
  if (bits < 1 || bits > 16) throw UsageError("covering_bound_check: bits must be in [1, 16]");
  if (points.rows() == 0) throw UsageError("covering_bound_check: empty point set");
  require_finite(points.data(), "covering_bound_check");

  const std::size_t d = points.cols();
  const double levels = std::ldexp(1.0, bits) - 1.0;
  const double group_factor = std::sqrt(static_cast<double>(d)) / 2.0;

  std::vector<double> lo(points.row(0).begin(), points.row(0).end());
  std::vector<double> hi = lo;
  CoveringReport rep;
  for (std::size_t r = 0; r < points.rows(); ++r) {
    const auto x = points.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      lo[c] = std::min(lo[c], x[c]);
      hi[c] = std::max(hi[c], x[c]);
      rep.linf_radius = std::max(rep.linf_radius, std::abs(x[c]));
    }
  }
  std::vector<double> center(d);
  for (std::size_t c = 0; c < d; ++c) center[c] = 0.5 * (lo[c] + hi[c]);

  double max_width = 0.0;
  for (std::size_t r = 0; r < points.rows(); ++r) {
    max_width = std::max(max_width, mm_distance(points.row(r), center));
  }
  rep.width_radius = 0.5 * max_width;
  rep.epsilon = rho * rep.width_radius;
  rep.u_raw = group_factor * (2.0 * rep.width_radius) / levels;

  // Per-dimension grid coordinates. A zero radius uses the center alone.
  std::vector<std::vector<double>> axis(d);
  for (std::size_t c = 0; c < d; ++c) {
    if (rep.epsilon <= 0.0) {
      axis[c] = {center[c]};
      continue;
    }
    const double extent = hi[c] - lo[c];
    const auto cells = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(extent / (2.0 * rep.epsilon))));
    axis[c].resize(cells);
    for (std::size_t k = 0; k < cells; ++k) {
      axis[c][k] = std::min(hi[c], lo[c] + rep.epsilon * static_cast<double>(2 * k + 1));
    }
  }
  rep.epsilon_net_size = 1;
  for (const auto& a : axis) {
    const std::uint64_t n = a.size();
    rep.epsilon_net_size = rep.epsilon_net_size > std::numeric_limits<std::uint64_t>::max() / n
                               ? std::numeric_limits<std::uint64_t>::max()
                               : rep.epsilon_net_size * n;
  }
  rep.covering_estimate =
      rep.epsilon > 0.0
          ? std::pow(1.0 + 2.0 * rep.linf_radius / rep.epsilon, static_cast<double>(d))
          : 1.0;

  // The l-infinity nearest net point is the per-dimension nearest coordinate.
  std::vector<double> nearest(d);
  double max_res_width = 0.0;
  for (std::size_t r = 0; r < points.rows(); ++r) {
    const auto x = points.row(r);
    double linf = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const auto& a = axis[c];
      const auto it = std::lower_bound(a.begin(), a.end(), x[c]);
      double best = std::numeric_limits<double>::infinity();
      if (it != a.end()) best = *it;
      if (it != a.begin() && std::abs(*(it - 1) - x[c]) <= std::abs(best - x[c])) {
        best = *(it - 1);
      }
      nearest[c] = best;
      linf = std::max(linf, std::abs(x[c] - best));
    }
    rep.max_net_distance = std::max(rep.max_net_distance, linf);
    max_res_width = std::max(max_res_width, mm_distance(x, nearest));
  }
  rep.u_res = group_factor * max_res_width / levels;
  // Slack of a few ulps for the grid coordinate arithmetic.
  const double slack = 1e-12 * std::max(1.0, rep.u_raw);
  rep.bound_holds = rep.u_res <= rho * rep.u_raw + slack;
  return rep;
}

// ---------------------------------------------------------------------------
// Memory accounting.
//
// For T committed tokens of one cache with head dimension d:
//   total bits = T * n * d                                    codes
//              + 32 * groups(T)                               scale + zero point
//              + (patterns ? 16 * T + 16 * |M| * d : 0)        indices + patterns
//   groups(T)  = T (per-token) or d * ceil(T / G) (per-channel)
// bits_per_token = total / T. With n >= 16 the cache is an unquantized fp16
// reference costing exactly 16 * d per token.

struct CacheFootprint {
  int bits = 2;
  std::size_t head_dim = 128;
  Layout layout = Layout::kPerToken;
  std::size_t group_size = 128;
  bool uses_patterns = true;
};

inline std::uint64_t total_bits(const CacheFootprint& fp, std::size_t pattern_set_size,
                                std::size_t token_count) {
  const std::uint64_t t = token_count;
  const std::uint64_t d = fp.head_dim;
  if (fp.bits >= 16) return t * 16 * d;
  std::uint64_t bits = t * static_cast<std::uint64_t>(fp.bits) * d;
  const std::uint64_t groups =
      fp.layout == Layout::kPerToken ? t : d * ((t + fp.group_size - 1) / fp.group_size);
  bits += kGroupParamBits * groups;
  if (fp.uses_patterns) {
    bits += kPatternIndexBits * t;
    bits += static_cast<std::uint64_t>(kPatternElementBits) * pattern_set_size * d;
  }
  return bits;
}

inline double bits_per_token(const CacheFootprint& fp, std::size_t pattern_set_size,
                             std::size_t token_count) {
  if (token_count == 0) throw UsageError("bits_per_token: token_count must be >= 1");
  return static_cast<double>(total_bits(fp, pattern_set_size, token_count)) /
         static_cast<double>(token_count);
}

inline CacheFootprint footprint(const EngineConfig& config, CacheKind kind,
                                std::size_t head_dim) {
  return CacheFootprint{config.bits, head_dim, config.layout(kind), config.group_size,
                        config.uses_patterns(kind)};
}

inline double bits_per_token(const EngineConfig& config, CacheKind kind, std::size_t head_dim,
                             std::size_t pattern_set_size, std::size_t token_count) {
  return bits_per_token(footprint(config, kind, head_dim), pattern_set_size, token_count);
}

}  // namespace patternkv
