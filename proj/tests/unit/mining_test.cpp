#include <gtest/gtest.h>

#include <set>

#include "oracles.hpp"

using namespace corerank;
using namespace corerank::testing;

namespace {

std::vector<ScoredCandidate> candidates(const std::vector<double>& sims) {
  std::vector<ScoredCandidate> out;
  for (std::size_t i = 0; i < sims.size(); ++i) out.push_back({"c" + std::to_string(i), "text " + std::to_string(i), sims[i]});
  return out;
}

const Document gold{"gold", "gold text"};

}  // namespace

TEST(MineHardNegatives, DiscardsCandidatesMoreSimilarThanGold) {
  MiningConfig config;
  config.n_neg = 2;
  const auto negs = mine_hard_negatives(gold, candidates({0.9, 0.7, 0.6}), 0.8, config);
  ASSERT_EQ(negs.size(), 2u);
  EXPECT_EQ(negs[0].id, "c1");
  EXPECT_EQ(negs[1].id, "c2");
  EXPECT_EQ(negs[0].text, "text 1");
}

TEST(MineHardNegatives, EqualSimilarityIsKept) {
  MiningConfig config;
  config.n_neg = 1;
  EXPECT_EQ(mine_hard_negatives(gold, candidates({0.8}), 0.8, config)[0].id, "c0");
}

TEST(MineHardNegatives, AllAboveGoldIsInsufficient) {
  MiningConfig config;
  config.n_neg = 1;
  try {
    mine_hard_negatives(gold, candidates({0.95, 0.9, 0.85}), 0.8, config);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::insufficient_survivors);
    EXPECT_NE(std::string(e.what()).find("0 candidates survive"), std::string::npos) << e.what();
  }
}

TEST(MineHardNegatives, SeededSamplingFromSurvivorsIsReproducible) {
  std::vector<double> sims;
  for (int i = 0; i < 100; ++i) sims.push_back(1.0 - i * 0.005);  // 30 above gold
  const double gold_sim = sims[29] - 0.001;
  MiningConfig config;
  config.seed = 1234;
  const auto pool = candidates(sims);
  const auto a = mine_hard_negatives(gold, pool, gold_sim, config);
  const auto b = mine_hard_negatives(gold, pool, gold_sim, config);
  ASSERT_EQ(a.size(), 49u);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].id, b[i].id);
    ids.insert(a[i].id);
    const int index = std::stoi(a[i].id.substr(1));
    EXPECT_GE(index, 30);
  }
  EXPECT_EQ(ids.size(), 49u);
  config.seed = 99;
  const auto c = mine_hard_negatives(gold, pool, gold_sim, config);
  bool differs = false;
  for (std::size_t i = 0; i < c.size(); ++i) differs = differs || c[i].id != a[i].id;
  EXPECT_TRUE(differs);
}

TEST(MineHardNegatives, PoolIsRestrictedToTopN) {
  std::vector<double> sims(150);
  for (std::size_t i = 0; i < sims.size(); ++i) sims[i] = 0.5 - i * 0.001;
  MiningConfig config;
  config.seed = 5;
  for (int rep = 0; rep < 20; ++rep) {
    config.seed = rep;
    for (const auto& n : mine_hard_negatives(gold, candidates(sims), 0.9, config))
      EXPECT_LT(std::stoi(n.id.substr(1)), 100);
  }
  config.top_n = 40;
  try {
    mine_hard_negatives(gold, candidates(sims), 0.9, config);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::insufficient_survivors);
  }
}

TEST(MineHardNegatives, SamplingIsRoughlyUniform) {
  std::vector<double> sims(10, 0.5);
  std::vector<int> hits(10, 0);
  MiningConfig config;
  config.n_neg = 3;
  for (int seed = 0; seed < 3000; ++seed) {
    config.seed = static_cast<std::uint64_t>(seed);
    for (const auto& n : mine_hard_negatives(gold, candidates(sims), 0.5, config)) ++hits[std::stoi(n.id.substr(1))];
  }
  for (int h : hits) EXPECT_NEAR(h, 900, 120);
}

TEST(MineHardNegatives, InputErrors) {
  MiningConfig config;
  config.n_neg = 1;
  try {
    mine_hard_negatives(gold, candidates({0.1, 0.5}), 0.8, config);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::unsorted_input);
  }
  auto with_gold = candidates({0.5});
  with_gold[0].id = "gold";
  EXPECT_THROW(mine_hard_negatives(gold, with_gold, 0.8, config), Error);
}

TEST(MiningDefaults, MatchPublishedConfiguration) {
  MiningConfig config;
  EXPECT_EQ(config.top_n, 100u);
  EXPECT_EQ(config.n_neg, 49u);
}
