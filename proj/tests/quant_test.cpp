#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "patternkv/quant.hpp"

using namespace patternkv;

namespace {
constexpr double kEps = std::numeric_limits<double>::epsilon();
}

TEST(QuantizeGroup, TwoBitRamp) {
  const std::vector<double> x = {0, 1, 2, 3};
  const QuantizedGroup g = quantize_group(x, 2);
  EXPECT_DOUBLE_EQ(g.params.scale, 1.0);
  EXPECT_DOUBLE_EQ(g.params.zero_point, 0.0);
  EXPECT_EQ(g.codes(), (std::vector<std::uint32_t>{0, 1, 2, 3}));
}

TEST(QuantizeGroup, ConstantGroupHasZeroScale) {
  const std::vector<double> x = {5, 5, 5};
  const QuantizedGroup g = quantize_group(x, 2);
  EXPECT_EQ(g.params.scale, 0.0);
  EXPECT_EQ(g.params.zero_point, 5.0);
  EXPECT_EQ(g.codes(), (std::vector<std::uint32_t>{0, 0, 0}));
  EXPECT_EQ(dequantize_group(g), x);
}

TEST(QuantizeGroup, SymmetricPair) {
  const std::vector<double> x = {-1, 1};
  const QuantizedGroup g = quantize_group(x, 2);
  EXPECT_DOUBLE_EQ(g.params.scale, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(g.params.zero_point, -1.0);
  EXPECT_EQ(g.codes(), (std::vector<std::uint32_t>{0, 3}));
  const auto deq = dequantize_group(g);
  EXPECT_NEAR(deq[0], -1.0, 2 * kEps);
  EXPECT_NEAR(deq[1], 1.0, 2 * kEps);
}

TEST(QuantizeGroup, TiesRoundAwayFromZero) {
  // (x - z) / s = 0.5 and 1.5 with s = 1.
  const std::vector<double> x = {0.0, 0.5, 1.5, 3.0};
  EXPECT_EQ(quantize_group(x, 2).codes(), (std::vector<std::uint32_t>{0, 1, 2, 3}));
}

TEST(QuantizeGroup, Errors) {
  EXPECT_THROW(quantize_group(std::vector<double>{}, 2), UsageError);
  EXPECT_THROW(quantize_group(std::vector<double>{1, 2}, 3), UsageError);
  try {
    quantize_group(std::vector<double>{1, NAN, 2}, 4);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("index 1"), std::string::npos);
  }
  EXPECT_THROW(quantize_group(std::vector<double>{INFINITY}, 4), DataError);
}

TEST(DequantizeGroup, CorruptPackingIsDataError) {
  QuantizedGroup g = quantize_group(std::vector<double>{0, 1, 2, 3, 4}, 4);
  g.packed.pop_back();
  EXPECT_THROW(dequantize_group(g), DataError);
}

TEST(DequantizeGroup, UniformRoundTripFourBit) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(-10.0, 10.0);
  std::vector<double> x(1000);
  for (double& v : x) v = dist(rng);
  const QuantizedGroup g = quantize_group(x, 4);
  const auto deq = dequantize_group(g);
  const double range = value_range(x);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(deq[i] - x[i]));
  EXPECT_LE(worst, g.params.scale / 2 + 4 * kEps * range);
  EXPECT_LE(worst, (20.0 / 15.0) / 2 + 1e-12);
}

TEST(DequantizeGroup, RoundTripPropertiesAcrossBitWidths) {
  std::mt19937_64 rng(11);
  for (int bits : {2, 4, 8}) {
    for (int trial = 0; trial < 500; ++trial) {
      const std::size_t n = 1 + rng() % 200;
      const double spread = std::pow(10.0, std::uniform_real_distribution<double>(-4, 4)(rng));
      std::uniform_real_distribution<double> dist(-spread, spread);
      std::vector<double> x(n);
      for (double& v : x) v = dist(rng);
      const QuantizedGroup g = quantize_group(x, bits);
      const auto deq = dequantize_group(g);
      const auto codes = g.codes();
      const double range = value_range(x);
      const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
      for (std::size_t i = 0; i < n; ++i) {
        ASSERT_LE(codes[i], max_code(bits));
        ASSERT_LE(std::abs(deq[i] - x[i]), g.params.scale / 2 + 4 * kEps * range);
        // Endpoints take codes 0 and 2^n - 1 and reconstruct nearly exactly.
        if (x[i] == *lo) {
          ASSERT_EQ(codes[i], 0u);
          ASSERT_LE(std::abs(deq[i] - x[i]), 2 * kEps * range);
        }
        if (x[i] == *hi && range > 0) {
          ASSERT_EQ(codes[i], max_code(bits));
          ASSERT_LE(std::abs(deq[i] - x[i]), 2 * kEps * range);
        }
        for (std::size_t j = 0; j < n; ++j) {
          if (x[i] <= x[j]) { ASSERT_LE(codes[i], codes[j]); }
        }
      }
    }
  }
}

TEST(PackCodes, BitLayout) {
  const std::vector<std::uint32_t> codes = {1, 2, 3, 0};
  const auto bytes = pack_codes(codes, 2);
  ASSERT_EQ(bytes.size(), 1u);
  EXPECT_EQ(bytes[0], 0b00111001);
  EXPECT_EQ(pack_codes(std::vector<std::uint32_t>{0xA, 0x5}, 4),
            (std::vector<std::uint8_t>{0x5A}));
}

TEST(PackCodes, EmptyInput) {
  EXPECT_TRUE(pack_codes(std::vector<std::uint32_t>{}, 4).empty());
  EXPECT_TRUE(unpack_codes({}, 0, 4).empty());
}

TEST(PackCodes, OutOfRangeCode) {
  EXPECT_THROW(pack_codes(std::vector<std::uint32_t>{4}, 2), UsageError);
  EXPECT_THROW(pack_codes(std::vector<std::uint32_t>{256}, 8), UsageError);
}

TEST(PackCodes, PackedLengthIsCeil) {
  for (int bits : {2, 4, 8}) {
    for (std::size_t n = 0; n < 20; ++n) {
      std::vector<std::uint32_t> codes(n, max_code(bits));
      EXPECT_EQ(pack_codes(codes, bits).size(), (n * bits + 7) / 8);
    }
  }
}

TEST(PackCodes, RandomRoundTripIsExact) {
  std::mt19937_64 rng(3);
  for (int bits : {2, 4, 8}) {
    const std::size_t n = bits == 2 ? 10000 : 1 + rng() % 5000;
    std::vector<std::uint32_t> codes(n);
    for (auto& c : codes) c = static_cast<std::uint32_t>(rng() & max_code(bits));
    EXPECT_EQ(unpack_codes(pack_codes(codes, bits), n, bits), codes);
  }
}
