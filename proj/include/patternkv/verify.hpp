#pragma once

// Property suites over fresh random instances. Each failure carries the
// suite seed and instance number, which regenerate the instance exactly.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "patternkv/analysis.hpp"
#include "patternkv/gate.hpp"
#include "patternkv/matrix.hpp"
#include "patternkv/patterns.hpp"
#include "patternkv/quant.hpp"
#include "patternkv/rng.hpp"

namespace patternkv {

struct VerifyResult {
  std::string suite;
  std::uint64_t seed = 0;
  std::size_t checks = 0;
  std::vector<std::string> failures;

  bool passed() const { return failures.empty(); }
};

inline const std::vector<std::string>& verify_suite_names() {
  static const std::vector<std::string> names = {"quant", "patterns", "gate", "variance",
                                                 "covering"};
  return names;
}

namespace detail {

class SuiteRecorder {
 public:
  SuiteRecorder(std::string suite, std::uint64_t seed) {
    result_.suite = std::move(suite);
    result_.seed = seed;
  }

  void check(bool ok, std::size_t instance, const std::string& what) {
    ++result_.checks;
    if (!ok && result_.failures.size() < 20) {
      std::ostringstream os;
      os.precision(17);
      os << result_.suite << ": " << what << " [reproduce: --suite " << result_.suite
         << " --seed " << result_.seed << ", instance " << instance << "]";
      result_.failures.push_back(os.str());
    }
  }

  VerifyResult take() { return std::move(result_); }

 private:
  VerifyResult result_;
};

inline Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

inline VerifyResult verify_quant(std::uint64_t seed) {
  SuiteRecorder rec("quant", seed);
  constexpr double eps = std::numeric_limits<double>::epsilon();
  std::size_t instance = 0;
  for (int bits : {2, 4, 8}) {
    for (int i = 0; i < 2000; ++i, ++instance) {
      Rng rng(derive_seed(seed, 1, instance));
      const std::size_t n = 1 + rng.below(256);
      const double scale = std::pow(10.0, rng.uniform(-3.0, 3.0));
      std::vector<double> values(n);
      // Every fifth instance is a constant group.
      const bool constant = i % 5 == 0;
      const double base = rng.uniform(-scale, scale);
      for (double& v : values) v = constant ? base : rng.uniform(-scale, scale);
      const QuantizedGroup g = quantize_group(values, bits);
      const auto deq = dequantize_group(g);
      const double range = value_range(values);
      double worst = 0.0;
      for (std::size_t k = 0; k < n; ++k) worst = std::max(worst, std::abs(deq[k] - values[k]));
      std::ostringstream what;
      what << "round-trip error " << worst << " exceeds scale/2 + 4 eps range (bits " << bits
           << ", n " << n << ")";
      rec.check(worst <= g.params.scale / 2 + 4 * eps * range, instance, what.str());
      const auto codes = g.codes();
      std::vector<std::pair<double, std::uint32_t>> order(n);
      for (std::size_t k = 0; k < n; ++k) order[k] = {values[k], codes[k]};
      std::sort(order.begin(), order.end());
      bool monotone = true;
      for (std::size_t k = 1; k < n; ++k) monotone = monotone && order[k - 1].second <= order[k].second;
      rec.check(monotone, instance, "code assignment not monotone");
      if (constant) {
        bool zero = g.params.scale == 0.0;
        for (auto c : codes) zero = zero && c == 0;
        rec.check(zero, instance, "constant group did not take the zero-range path");
      }
      const auto packed = pack_codes(codes, bits);
      rec.check(unpack_codes(packed, n, bits) == codes, instance, "pack/unpack mismatch");
    }
  }
  return rec.take();
}

inline VerifyResult verify_patterns(std::uint64_t seed) {
  SuiteRecorder rec("patterns", seed);
  for (std::size_t instance = 0; instance < 100; ++instance) {
    Rng rng(derive_seed(seed, 2, instance));
    const std::size_t n = 2 + rng.below(200);
    const std::size_t d = 1 + rng.below(8);
    const std::size_t k = 1 + rng.below(10);
    const Matrix x = random_matrix(rng, n, d, -5.0, 5.0);
    const KMeansResult km = kmeans(x, k, rng.next());
    bool monotone = true;
    for (std::size_t i = 1; i < km.objective_history.size(); ++i) {
      monotone = monotone && km.objective_history[i] <= km.objective_history[i - 1];
    }
    rec.check(monotone, instance, "KMeans objective increased between iterations");
    const std::vector<std::size_t> single(n, 0);
    std::vector<double> mean(d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) mean[c] += x(r, c) / static_cast<double>(n);
    double single_ss = 0.0;
    for (std::size_t r = 0; r < n; ++r) single_ss += detail::squared_distance(x.row(r), mean);
    rec.check(km.objective() <= single_ss * (1 + 1e-12), instance,
              "KMeans objective above single-mean objective");

    // Chebyshev optimality against random alternative centers.
    const Matrix window = random_matrix(rng, 1 + rng.below(64), d, -3.0, 3.0);
    const auto center = generate_decode_pattern(window);
    for (int alt = 0; alt < 50; ++alt) {
      std::vector<double> m(d);
      for (double& v : m) v = rng.uniform(-3.0, 3.0);
      for (std::size_t c = 0; c < d; ++c) {
        double dev_center = 0.0, dev_alt = 0.0;
        for (std::size_t r = 0; r < window.rows(); ++r) {
          dev_center = std::max(dev_center, std::abs(window(r, c) - center[c]));
          dev_alt = std::max(dev_alt, std::abs(window(r, c) - m[c]));
        }
        rec.check(dev_center <= dev_alt, instance, "Chebyshev center beaten by alternative");
      }
    }

    // match_pattern equals the exhaustive argmin.
    PatternSet set(d);
    const std::size_t patterns = 1 + rng.below(16);
    for (std::size_t p = 0; p < patterns; ++p) {
      std::vector<double> v(d);
      for (double& e : v) e = rng.uniform(-5.0, 5.0);
      set.append(v, PatternOrigin::kPrefill);
    }
    std::vector<double> probe(d);
    for (double& e : probe) e = rng.uniform(-5.0, 5.0);
    const PatternAssignment got = match_pattern(probe, set);
    std::size_t best = 0;
    for (std::size_t p = 1; p < set.size(); ++p) {
      if (mm_distance(probe, set[p]) < mm_distance(probe, set[best])) best = p;
    }
    rec.check(got.pattern_index == best, instance, "match_pattern disagrees with exhaustive argmin");

    // Shift covariance of the min-max distance.
    const double shift = rng.uniform(-100.0, 100.0);
    std::vector<double> shifted = probe;
    for (double& e : shifted) e += shift;
    const double a = mm_distance(probe, set[0]);
    const double b = mm_distance(shifted, set[0]);
    rec.check(std::abs(a - b) <= 1e-9 * (1.0 + std::abs(shift)), instance,
              "mm_distance not invariant to constant shifts");
  }
  return rec.take();
}

inline VerifyResult verify_gate(std::uint64_t seed) {
  SuiteRecorder rec("gate", seed);
  const std::array<int, 5> dims = {16, 32, 64, 128, 256};
  const std::array<double, 4> alphas = {0.01, 0.05, 0.1, 0.5};
  std::size_t instance = 0;
  for (double alpha : alphas) {
    for (std::size_t i = 1; i < dims.size(); ++i, ++instance) {
      rec.check(solve_rho_star(dims[i], alpha) >= solve_rho_star(dims[i - 1], alpha), instance,
                "rho* decreased with head_dim");
    }
  }
  for (int d : dims) {
    for (std::size_t i = 1; i < alphas.size(); ++i, ++instance) {
      rec.check(solve_rho_star(d, alphas[i]) >= solve_rho_star(d, alphas[i - 1]), instance,
                "rho* decreased with alpha");
    }
  }
  for (int i = 0; i < 10000; ++i, ++instance) {
    Rng rng(derive_seed(seed, 3, instance));
    const int d = dims[rng.below(dims.size())];
    const double alpha = alphas[rng.below(alphas.size() - 1)];
    const int bits = std::array<int, 3>{2, 4, 8}[rng.below(3)];
    const GateConfig cfg = GateConfig::make(d, alpha);
    const double r_raw = rng.uniform(1e-3, 10.0);
    const double r_flat = rng.uniform(0.0, 1.5) * r_raw;
    const bool gate = decide(r_raw, r_flat, cfg).flatten;
    const bool z_test = z_test_rejects_null(r_raw, r_flat, bits, d, alpha);
    rec.check(gate == z_test, instance, "decide() disagrees with the z-test rejection region");
    const double c = std::pow(10.0, rng.uniform(-3.0, 3.0));
    rec.check(decide(c * r_raw, c * r_flat, cfg).flatten == gate, instance,
              "decide() not scale invariant");
  }
  return rec.take();
}

inline VerifyResult verify_variance(std::uint64_t seed) {
  SuiteRecorder rec("variance", seed);
  for (std::size_t instance = 0; instance < 1000; ++instance) {
    Rng rng(derive_seed(seed, 4, instance));
    const std::size_t n = 1 + rng.below(300);
    const std::size_t d = 1 + rng.below(16);
    const std::size_t k = 1 + rng.below(12);
    const double offset = rng.uniform(-50.0, 50.0);
    const Matrix x = random_matrix(rng, n, d, offset - 5.0, offset + 5.0);
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = rng.below(k);
    const VarianceReport rep = variance_decomposition(x, labels, k);
    rec.check(rep.relative_error() <= 1e-9, instance, "variance identity violated");
  }
  return rec.take();
}

inline VerifyResult verify_covering(std::uint64_t seed) {
  SuiteRecorder rec("covering", seed);
  std::size_t instance = 0;
  for (int set = 0; set < 20; ++set) {
    for (double rho : {0.25, 0.5, 0.75}) {
      Rng rng(derive_seed(seed, 5, static_cast<std::uint64_t>(set)));
      const std::size_t n = 1 + rng.below(500);
      const std::size_t d = 1 + rng.below(4);
      const double radius = rng.uniform(0.1, 10.0);
      const Matrix points = random_matrix(rng, n, d, -radius, radius);
      const int bits = std::array<int, 3>{2, 4, 8}[rng.below(3)];
      const CoveringReport rep = covering_bound_check(points, rho, bits);
      std::ostringstream what;
      what << "U_res " << rep.u_res << " > rho * U_raw " << rho * rep.u_raw << " (rho " << rho
           << ")";
      rec.check(rep.bound_holds, instance++, what.str());
    }
  }
  return rec.take();
}

}  // namespace detail

inline VerifyResult run_verify_suite(const std::string& name, std::uint64_t seed) {
  if (name == "quant") return detail::verify_quant(seed);
  if (name == "patterns") return detail::verify_patterns(seed);
  if (name == "gate") return detail::verify_gate(seed);
  if (name == "variance") return detail::verify_variance(seed);
  if (name == "covering") return detail::verify_covering(seed);
  throw UsageError("unknown verify suite '" + name + "'");
}

}  // namespace patternkv
