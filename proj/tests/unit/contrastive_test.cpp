#include <gtest/gtest.h>

#include <limits>

#include "oracles.hpp"

using namespace corerank;
using namespace corerank::testing;

TEST(CoreScore, UniformScoresGiveOneOverNPlusOne) {
  const std::vector<double> negs = {0.5, 0.5, 0.5};
  for (double t : {1e-6, 0.001, 0.1, 1.0, 1e6}) EXPECT_NEAR(core_score(0.5, negs, t), 0.25, 1e-12);
}

TEST(CoreScore, SharpTemperatureLimit) {
  const std::vector<double> negs(49, 0.1);
  EXPECT_NEAR(core_score(0.9, negs, 0.001), 1.0, 1e-10);
}

TEST(CoreScore, WorkedValueMatchesExtendedPrecisionOracle) {
  const std::vector<double> negs = {0.4, 0.1};
  const double got = core_score(0.2, negs, 0.1);
  EXPECT_NEAR(got, naive_core_score(0.2, negs, 0.1), 1e-14);
  EXPECT_NEAR(got, 0.11419, 1e-5);
}

TEST(CoreScore, RandomInputsMatchOracle) {
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> negs(pick(rng, 1, 60));
    for (auto& n : negs) n = uniform(rng, 0, 1);
    const double pos = uniform(rng, 0, 1);
    const double t = std::pow(10.0, uniform(rng, -1.5, 1));
    EXPECT_NEAR(core_score(pos, negs, t), naive_core_score(pos, negs, t), 1e-12);
  }
}

TEST(CoreScore, ShiftInvariance) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> negs(pick(rng, 1, 49));
    for (auto& n : negs) n = uniform(rng, 0, 1);
    const double pos = uniform(rng, 0, 1);
    const double c = uniform(rng, -1e3, 1e3);
    std::vector<double> shifted = negs;
    for (auto& n : shifted) n += c;
    for (double t : {0.001, 0.1}) {
      const double a = core_score(pos, negs, t);
      const double b = core_score(pos + c, shifted, t);
      EXPECT_TRUE(std::isfinite(b));
      EXPECT_NEAR(a, b, 1e-9) << "c=" << c << " t=" << t;
    }
  }
}

TEST(CoreScore, MonotoneInPositiveAndNegatives) {
  Rng rng(7);
  const double eps = 1e-4, t = 0.1;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> negs(pick(rng, 1, 10));
    for (auto& n : negs) n = uniform(rng, 0, 1);
    const double pos = uniform(rng, 0, 1);
    const double base = core_score(pos, negs, t);
    EXPECT_GT(core_score(pos + eps, negs, t), base);
    const std::size_t k = pick(rng, 0, negs.size() - 1);
    auto bumped = negs;
    bumped[k] += eps;
    EXPECT_LT(core_score(pos, bumped, t), base);
  }
}

TEST(CoreScore, HighTemperatureLimit) {
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> negs(pick(rng, 1, 49));
    for (auto& n : negs) n = uniform(rng, 0, 1);
    EXPECT_NEAR(core_score(uniform(rng, 0, 1), negs, 1e6), 1.0 / (1.0 + negs.size()), 1e-6);
  }
}

TEST(CoreScore, FiniteForTinyTemperatures) {
  const std::vector<double> negs = {0.3, 0.7, 0.2};
  for (double t : {1e-6, 1e-5, 1e-4}) {
    EXPECT_TRUE(std::isfinite(core_score(0.5, negs, t)));
    EXPECT_NEAR(core_score(0.9, negs, t), 1.0, 1e-12);
    EXPECT_NEAR(core_score(0.1, negs, t), 0.0, 1e-12);
  }
}

TEST(CoreScore, Errors) {
  const std::vector<double> negs = {0.1};
  auto code = [](auto fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::unsupported;
  };
  EXPECT_EQ(code([&] { core_score(0.5, negs, 0.0); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code([&] { core_score(0.5, negs, -1.0); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code([&] { core_score(0.5, {}, 0.1); }), ErrorCode::empty_input);
  EXPECT_EQ(code([&] { core_score(std::nan(""), negs, 0.1); }), ErrorCode::invalid_argument);
  const std::vector<double> inf = {std::numeric_limits<double>::infinity()};
  EXPECT_EQ(code([&] { core_score(0.5, inf, 0.1); }), ErrorCode::invalid_argument);
}

TEST(CoreScore, TemperaturePresets) {
  EXPECT_EQ(temperature_sharp, 0.001);
  EXPECT_EQ(temperature_soft, 0.1);
}
