#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "corerank/detail/hash.hpp"
#include "corerank/error.hpp"
#include "corerank/prompt.hpp"

namespace corerank {

struct ScoredCandidate {
  std::string id;
  std::string text;
  double similarity = 0.0;
};

struct MiningConfig {
  std::size_t top_n = 100;
  std::size_t n_neg = 49;
  std::uint64_t seed = 0;
};

/// Samples hard negatives from the top_n most similar candidates after
/// discarding any candidate more similar to the query than the gold passage.
/// Candidates must arrive sorted by descending similarity without the gold.
/// Returned negatives keep candidate order.
inline std::vector<Document> mine_hard_negatives(const Document& gold, const std::vector<ScoredCandidate>& candidates,
                                                 double gold_similarity, const MiningConfig& config) {
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    require(candidates[i].id != gold.id, ErrorCode::invalid_argument,
            "gold document '" + gold.id + "' appears among the candidates");
    if (i > 0)
      require(candidates[i].similarity <= candidates[i - 1].similarity, ErrorCode::unsorted_input,
              "candidate " + std::to_string(i) + " is more similar than its predecessor");
  }
  std::vector<const ScoredCandidate*> survivors;
  const std::size_t pool = std::min(config.top_n, candidates.size());
  for (std::size_t i = 0; i < pool; ++i)
    if (!(candidates[i].similarity > gold_similarity)) survivors.push_back(&candidates[i]);
  require(survivors.size() >= config.n_neg, ErrorCode::insufficient_survivors,
          std::to_string(survivors.size()) + " candidates survive the false-negative filter, " +
              std::to_string(config.n_neg) + " negatives requested");

  // Partial Fisher-Yates over survivor indices.
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(survivors.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = 0; i < config.n_neg; ++i) {
    const std::size_t j = i + detail::uniform_index(rng, order.size() - i);
    std::swap(order[i], order[j]);
  }
  order.resize(config.n_neg);
  std::sort(order.begin(), order.end());

  std::vector<Document> out;
  out.reserve(order.size());
  for (std::size_t i : order) out.push_back({survivors[i]->id, survivors[i]->text});
  return out;
}

}  // namespace corerank
