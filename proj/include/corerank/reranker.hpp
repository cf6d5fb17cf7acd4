#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "corerank/aggregation.hpp"
#include "corerank/attention.hpp"
#include "corerank/detection.hpp"
#include "corerank/error.hpp"
#include "corerank/prompt.hpp"

namespace corerank {

enum class Strategy { all_heads, head_set };

inline std::string to_string(Strategy s) { return s == Strategy::all_heads ? "all_heads" : "head_set"; }

struct RerankConfig {
  std::string name = "icr";
  Strategy strategy = Strategy::all_heads;
  OutputHeadSet head_set;
  bool calibrate = true;
  OutlierPolicy outlier_policy;
  std::optional<std::size_t> layer_limit;
  PromptTemplate prompt_template;

  static RerankConfig all_heads(std::string name = "icr") {
    RerankConfig c;
    c.name = std::move(name);
    return c;
  }

  static RerankConfig with_heads(OutputHeadSet heads, std::string name) {
    RerankConfig c;
    c.name = std::move(name);
    c.strategy = Strategy::head_set;
    c.head_set = std::move(heads);
    return c;
  }

  /// Checks the configuration against a model before any forward pass.
  void validate(const ModelDescriptor& model) const {
    if (strategy == Strategy::head_set) {
      require(!head_set.empty(), ErrorCode::config, "head-set strategy requires a non-empty head set");
      for (const auto& r : head_set.ranked)
        require(model.contains(r.head), ErrorCode::head_out_of_range,
                "head " + to_string(r.head) + " outside model grid " + std::to_string(model.num_layers) + "x" +
                    std::to_string(model.num_heads));
    }
    if (!layer_limit) return;
    require(*layer_limit >= 1 && *layer_limit <= model.num_layers, ErrorCode::config,
            "layer_limit " + std::to_string(*layer_limit) + " outside [1, " + std::to_string(model.num_layers) + "]");
    if (strategy == Strategy::all_heads) {
      require(*layer_limit == model.num_layers, ErrorCode::config,
              "all-heads re-ranking needs every layer, layer_limit is " + std::to_string(*layer_limit));
    }
    for (const auto& r : head_set.ranked)
      require(r.head.layer < *layer_limit, ErrorCode::config,
              "head " + to_string(r.head) + " lies beyond layer_limit " + std::to_string(*layer_limit));
  }

  HeadSelection selection() const {
    return strategy == Strategy::all_heads ? HeadSelection::all() : HeadSelection::of(head_set.heads());
  }
};

struct RankedDoc {
  std::string doc_id;
  double score = 0.0;
};

struct DocDiagnostics {
  std::string doc_id;
  std::size_t tokens = 0;
  std::size_t dropped_tokens = 0;
};

struct RankingResult {
  std::vector<RankedDoc> ranking;
  std::vector<DocDiagnostics> diagnostics;  // input order
  std::size_t layer_limit = 0;

  std::size_t dropped_tokens() const {
    std::size_t n = 0;
    for (const auto& d : diagnostics) n += d.dropped_tokens;
    return n;
  }

  std::vector<std::string> order() const {
    std::vector<std::string> ids;
    for (const auto& r : ranking) ids.push_back(r.doc_id);
    return ids;
  }

  std::optional<double> score_of(std::string_view doc_id) const {
    for (const auto& r : ranking)
      if (r.doc_id == doc_id) return r.score;
    return std::nullopt;
  }
};

/// Sorts by descending score; exact ties keep input order.
inline std::vector<RankedDoc> sort_ranking(std::vector<RankedDoc> docs) {
  std::stable_sort(docs.begin(), docs.end(), [](const RankedDoc& a, const RankedDoc& b) { return a.score > b.score; });
  return docs;
}

namespace detail {

inline AttendedPrompt attend_prompt(Prompt& prompt, const AttentionProvider& provider, std::size_t limit) {
  prompt.layout.model = provider.descriptor().name;
  AttendedPrompt attended = provider.attend({prompt.tokens, prompt.layout, limit});
  check_consistent(attended.slice, attended.layout);
  require(attended.slice.layer_limit() >= limit, ErrorCode::provider_failure,
          "provider returned " + std::to_string(attended.slice.layer_limit()) + " layers, " + std::to_string(limit) +
              " requested");
  return attended;
}

}  // namespace detail

/// Ranks documents for one query from the attention of the configured heads.
/// With calibration on, a second prompt carrying the content-free query is
/// scored and subtracted token by token, then negative outlier tokens are
/// dropped before the per-document sums.
inline RankingResult rerank(std::string_view query, const std::vector<Document>& docs,
                            const AttentionProvider& provider, const Tokenizer& tokenizer,
                            const RerankConfig& config) {
  const auto& model = provider.descriptor();
  config.validate(model);
  const std::size_t limit = config.layer_limit.value_or(model.num_layers);
  require(limit == model.num_layers || provider.supports_layer_limit(), ErrorCode::unsupported,
          "provider '" + model.name + "' cannot stop at layer " + std::to_string(limit));

  const HeadSelection selection = config.selection();
  Prompt prompt = build_prompt(docs, query, config.prompt_template, tokenizer);
  const AttendedPrompt real = detail::attend_prompt(prompt, provider, limit);
  DocTokenScores scores = token_relevance(real.slice, real.layout, selection);

  std::vector<std::size_t> kept(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) kept[i] = scores[i].scores.size();
  if (config.calibrate) {
    Prompt cf_prompt = build_calibration_prompt(docs, config.prompt_template, tokenizer);
    const AttendedPrompt cf = detail::attend_prompt(cf_prompt, provider, limit);
    scores = filter_outlier_tokens(calibrate(scores, token_relevance(cf.slice, cf.layout, selection)),
                                   config.outlier_policy);
  }

  RankingResult result;
  result.layer_limit = limit;
  std::vector<RankedDoc> ranked;
  for (const auto& doc : docs) {
    const TokenScoreVector* v = find_doc(scores, doc.id);
    require(v != nullptr, ErrorCode::provider_failure, "provider layout lacks document '" + doc.id + "'");
    const std::size_t total = kept[static_cast<std::size_t>(v - scores.data())];
    ranked.push_back({doc.id, doc_relevance(*v)});
    result.diagnostics.push_back({doc.id, total, total - v->scores.size()});
  }
  result.ranking = sort_ranking(std::move(ranked));
  return result;
}

/// Smallest number of layers whose computation covers every head.
inline std::size_t pruning_cutoff(const OutputHeadSet& heads) {
  require(!heads.empty(), ErrorCode::empty_input, "cannot prune for an empty head set");
  std::uint32_t deepest = 0;
  for (const auto& r : heads.ranked) deepest = std::max(deepest, r.head.layer);
  return static_cast<std::size_t>(deepest) + 1;
}

struct PruningReport {
  std::size_t full_layers = 0;
  std::size_t cutoff = 0;
  double max_abs_diff = 0.0;
  bool same_order = false;
  RankingResult full;
  RankingResult pruned;
};

/// Re-ranks at full depth and at the pruning cutoff and compares the two.
inline PruningReport rerank_pruned_equivalence_check(std::string_view query, const std::vector<Document>& docs,
                                                     const AttentionProvider& provider, const Tokenizer& tokenizer,
                                                     RerankConfig config) {
  const auto& model = provider.descriptor();
  require(provider.supports_layer_limit(), ErrorCode::unsupported,
          "provider '" + model.name + "' does not support layer limits");
  config.validate(model);
  PruningReport report;
  report.full_layers = model.num_layers;
  report.cutoff = config.strategy == Strategy::all_heads ? model.num_layers : pruning_cutoff(config.head_set);

  config.layer_limit = model.num_layers;
  report.full = rerank(query, docs, provider, tokenizer, config);
  config.layer_limit = report.cutoff;
  report.pruned = rerank(query, docs, provider, tokenizer, config);

  report.same_order = report.full.order() == report.pruned.order();
  for (const auto& r : report.full.ranking)
    report.max_abs_diff = std::max(report.max_abs_diff, std::abs(r.score - *report.pruned.score_of(r.doc_id)));
  return report;
}

inline nlohmann::json head_list_json(const OutputHeadSet& heads) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : heads.ranked) out.push_back({{"layer", r.head.layer}, {"head", r.head.head}});
  return out;
}

/// One line of a run file.
inline nlohmann::json run_record(std::string_view query_id, const RankingResult& result, const RerankConfig& config) {
  nlohmann::json ranking = nlohmann::json::array();
  for (std::size_t i = 0; i < result.ranking.size(); ++i)
    ranking.push_back({{"doc_id", result.ranking[i].doc_id}, {"score", result.ranking[i].score}, {"rank", i + 1}});
  return {{"query_id", query_id},
          {"ranking", ranking},
          {"strategy", to_string(config.strategy)},
          {"head_set", config.strategy == Strategy::head_set ? head_list_json(config.head_set) : nlohmann::json(nullptr)},
          {"layer_limit", result.layer_limit},
          {"dropped_tokens", result.dropped_tokens()}};
}

}  // namespace corerank
