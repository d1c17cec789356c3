#pragma once

// Pattern mining and pattern-aligned residualization.
//
// Prefill patterns are KMeans centroids (Euclidean, Lloyd iterations from
// farthest-point seeding). Decode patterns are per-dimension Chebyshev
// centers of a flushed window. Vectors are matched to the pattern that
// minimizes the min-max distance, which is exactly the asymmetric
// quantization range of the residual.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "patternkv/error.hpp"
#include "patternkv/matrix.hpp"
#include "patternkv/rng.hpp"

namespace patternkv {

enum class PatternOrigin : std::uint8_t { kPrefill = 0, kDecode = 1 };

// Append-only set of equal-dimension pattern vectors. Storage is a deque so
// references to existing patterns survive later appends.
class PatternSet {
 public:
  PatternSet() = default;
  explicit PatternSet(std::size_t dim, std::size_t capacity_hint = 0)
      : dim_(dim), capacity_hint_(capacity_hint) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return patterns_.size(); }
  bool empty() const noexcept { return patterns_.empty(); }
  std::size_t capacity_hint() const noexcept { return capacity_hint_; }

  std::span<const double> operator[](std::size_t i) const {
    return patterns_[i];
  }
  PatternOrigin origin(std::size_t i) const { return origins_[i]; }

  std::size_t count(PatternOrigin origin) const {
    return static_cast<std::size_t>(
        std::count(origins_.begin(), origins_.end(), origin));
  }

  std::size_t append(std::span<const double> pattern, PatternOrigin origin) {
    if (patterns_.empty() && dim_ == 0) dim_ = pattern.size();
    if (pattern.size() != dim_) {
      throw UsageError("PatternSet::append: pattern has dimension " +
                       std::to_string(pattern.size()) + ", set has " +
                       std::to_string(dim_));
    }
    patterns_.emplace_back(pattern.begin(), pattern.end());
    origins_.push_back(origin);
    return patterns_.size() - 1;
  }

  friend bool operator==(const PatternSet& a, const PatternSet& b) {
    return a.dim_ == b.dim_ && a.patterns_ == b.patterns_ &&
           a.origins_ == b.origins_;
  }

 private:
  std::size_t dim_ = 0;
  std::size_t capacity_hint_ = 0;
  std::deque<std::vector<double>> patterns_;
  std::deque<PatternOrigin> origins_;
};

// d_mm(x, m) = max_i(x_i - m_i) - min_j(x_j - m_j)
inline double mm_distance(std::span<const double> x, std::span<const double> m) {
  if (x.size() != m.size()) {
    throw UsageError("mm_distance: dimension mismatch (" +
                     std::to_string(x.size()) + " vs " +
                     std::to_string(m.size()) + ")");
  }
  if (x.empty()) return 0.0;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = x[i] - m[i];
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  return hi - lo;
}

struct PatternAssignment {
  std::size_t pattern_index = 0;
  std::vector<double> residual;
  double mm_distance = 0.0;
};

// Nearest pattern under d_mm; ties go to the lowest index.
inline PatternAssignment match_pattern(std::span<const double> x,
                                       const PatternSet& set) {
  if (set.empty()) throw UsageError("match_pattern: empty pattern set");
  if (x.size() != set.dim()) {
    throw UsageError("match_pattern: vector dimension " +
                     std::to_string(x.size()) + " != pattern dimension " +
                     std::to_string(set.dim()));
  }
  std::size_t best = 0;
  double best_distance = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < set.size(); ++p) {
    const double dist = mm_distance(x, set[p]);
    if (dist < best_distance) {
      best_distance = dist;
      best = p;
    }
  }
  PatternAssignment out;
  out.pattern_index = best;
  out.mm_distance = best_distance;
  out.residual.resize(x.size());
  const auto pattern = set[best];
  for (std::size_t i = 0; i < x.size(); ++i) out.residual[i] = x[i] - pattern[i];
  return out;
}

inline std::vector<double> reconstruct(std::size_t pattern_index,
                                       const PatternSet& set,
                                       std::span<const double> dequantized_residual) {
  if (pattern_index >= set.size()) {
    throw DataError("reconstruct: pattern index " +
                    std::to_string(pattern_index) + " out of range for set of " +
                    std::to_string(set.size()));
  }
  const auto pattern = set[pattern_index];
  if (pattern.size() != dequantized_residual.size()) {
    throw UsageError("reconstruct: residual dimension mismatch");
  }
  std::vector<double> out(pattern.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = pattern[i] + dequantized_residual[i];
  }
  return out;
}

inline std::vector<double> reconstruct(const PatternAssignment& assignment,
                                       const PatternSet& set,
                                       std::span<const double> dequantized_residual) {
  return reconstruct(assignment.pattern_index, set, dequantized_residual);
}

// Per-dimension midpoint of the window's min and max: the l-infinity
// Chebyshev center.
inline std::vector<double> generate_decode_pattern(const Matrix& window) {
  if (window.rows() == 0) {
    throw UsageError("generate_decode_pattern: empty window");
  }
  std::vector<double> lo(window.row(0).begin(), window.row(0).end());
  std::vector<double> hi = lo;
  for (std::size_t r = 1; r < window.rows(); ++r) {
    const auto row = window.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      lo[c] = std::min(lo[c], row[c]);
      hi[c] = std::max(hi[c], row[c]);
    }
  }
  std::vector<double> center(lo.size());
  for (std::size_t c = 0; c < center.size(); ++c) {
    center[c] = 0.5 * (lo[c] + hi[c]);
  }
  return center;
}

// ---------------------------------------------------------------------------
// KMeans

struct KMeansOptions {
  std::size_t max_iterations = 25;
  double relative_tolerance = 1e-6;
};

struct KMeansResult {
  Matrix centroids;                  // k_eff x d
  std::vector<std::size_t> labels;   // per input row
  // Within-cluster sum of squares of each successive partition, starting
  // with the partition induced by the seed centers.
  std::vector<double> objective_history;
  std::size_t iterations = 0;

  double objective() const {
    return objective_history.empty() ? 0.0 : objective_history.back();
  }
};

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

inline std::size_t count_distinct_rows(const Matrix& x) {
  std::vector<std::size_t> order(x.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto less = [&](std::size_t a, std::size_t b) {
    const auto ra = x.row(a);
    const auto rb = x.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  };
  std::sort(order.begin(), order.end(), less);
  std::size_t distinct = order.empty() ? 0 : 1;
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (less(order[i - 1], order[i])) ++distinct;
  }
  return distinct;
}

inline std::size_t nearest_centroid(std::span<const double> x, const Matrix& centroids) {
  std::size_t best = 0;
  double best_distance = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    const double dist = squared_distance(x, centroids.row(c));
    if (dist < best_distance) {
      best_distance = dist;
      best = c;
    }
  }
  return best;
}

inline Matrix cluster_means(const Matrix& x, std::span<const std::size_t> labels,
                            std::size_t k, std::vector<std::size_t>& sizes) {
  Matrix means(k, x.cols(), 0.0);
  sizes.assign(k, 0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto dst = means.row(labels[r]);
    const auto src = x.row(r);
    for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    ++sizes[labels[r]];
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (sizes[j] == 0) continue;
    for (double& v : means.row(j)) v /= static_cast<double>(sizes[j]);
  }
  return means;
}

inline double within_ss(const Matrix& x, std::span<const std::size_t> labels,
                        const Matrix& means) {
  double total = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    total += squared_distance(x.row(r), means.row(labels[r]));
  }
  return total;
}

// Moves the point farthest from its centroid into each empty cluster.
// Removing a point from a cluster of size >= 2 never increases the within
// sum of squares, and a singleton contributes zero.
inline void repair_empty_clusters(const Matrix& x, std::vector<std::size_t>& labels,
                                  Matrix& means, std::vector<std::size_t>& sizes) {
  const std::size_t k = means.rows();
  for (std::size_t j = 0; j < k; ++j) {
    if (sizes[j] != 0) continue;
    std::size_t far = x.rows();
    double far_distance = -1.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      if (sizes[labels[r]] < 2) continue;
      const double dist = squared_distance(x.row(r), means.row(labels[r]));
      if (dist > far_distance) {
        far_distance = dist;
        far = r;
      }
    }
    if (far == x.rows()) break;
    labels[far] = j;
    means = cluster_means(x, labels, k, sizes);
  }
}

}  // namespace detail

// Lloyd's algorithm with deterministic farthest-point seeding. The first
// seed is row splitmix64(seed) mod T; each following seed is the row with
// the largest squared distance to its closest chosen seed (lowest index on
// ties). k is capped at the number of distinct rows.
inline KMeansResult kmeans(const Matrix& x, std::size_t k, std::uint64_t seed,
                           const KMeansOptions& options = {}) {
  if (x.rows() == 0) throw UsageError("kmeans: no input vectors");
  if (k == 0) throw UsageError("kmeans: k must be >= 1");
  if (x.cols() == 0) throw UsageError("kmeans: zero-dimensional vectors");
  require_finite(x.data(), "kmeans input");

  const std::size_t n = x.rows();
  const std::size_t k_eff = std::min(k, detail::count_distinct_rows(x));

  Matrix seeds(k_eff, x.cols());
  std::vector<double> closest(n, std::numeric_limits<double>::infinity());
  std::size_t pick = static_cast<std::size_t>(splitmix64(seed) % n);
  for (std::size_t j = 0; j < k_eff; ++j) {
    std::copy(x.row(pick).begin(), x.row(pick).end(), seeds.row(j).begin());
    for (std::size_t r = 0; r < n; ++r) {
      closest[r] = std::min(closest[r], detail::squared_distance(x.row(r), seeds.row(j)));
    }
    double far_distance = -1.0;
    for (std::size_t r = 0; r < n; ++r) {
      if (closest[r] > far_distance) {
        far_distance = closest[r];
        pick = r;
      }
    }
  }

  KMeansResult result;
  result.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    result.labels[r] = detail::nearest_centroid(x.row(r), seeds);
  }
  std::vector<std::size_t> sizes;
  Matrix means = detail::cluster_means(x, result.labels, k_eff, sizes);
  detail::repair_empty_clusters(x, result.labels, means, sizes);
  result.objective_history.push_back(detail::within_ss(x, result.labels, means));

  for (std::size_t iter = 0; iter < options.max_iterations; ++iter) {
    std::vector<std::size_t> next(n);
    for (std::size_t r = 0; r < n; ++r) {
      next[r] = detail::nearest_centroid(x.row(r), means);
    }
    if (next == result.labels) break;
    result.labels = std::move(next);
    means = detail::cluster_means(x, result.labels, k_eff, sizes);
    detail::repair_empty_clusters(x, result.labels, means, sizes);
    const double previous = result.objective_history.back();
    const double current = detail::within_ss(x, result.labels, means);
    result.objective_history.push_back(current);
    result.iterations = iter + 1;
    if (previous <= 0.0 || (previous - current) / previous < options.relative_tolerance) {
      break;
    }
  }
  result.centroids = std::move(means);
  return result;
}

inline PatternSet mine_prefill_patterns(const Matrix& vectors, std::size_t k,
                                        std::uint64_t seed,
                                        const KMeansOptions& options = {}) {
  if (vectors.rows() == 0) {
    throw UsageError("mine_prefill_patterns: no prefill vectors");
  }
  const KMeansResult km = kmeans(vectors, k, seed, options);
  PatternSet set(vectors.cols(), k);
  for (std::size_t j = 0; j < km.centroids.rows(); ++j) {
    set.append(km.centroids.row(j), PatternOrigin::kPrefill);
  }
  return set;
}

}  // namespace patternkv
