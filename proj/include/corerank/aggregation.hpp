#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "corerank/attention.hpp"
#include "corerank/error.hpp"
#include "corerank/layout.hpp"

namespace corerank {

struct TokenScore {
  std::size_t index = 0;
  double score = 0.0;
  friend bool operator==(const TokenScore&, const TokenScore&) = default;
};

/// Per-token relevance for one document. Indices lie in the document span.
struct TokenScoreVector {
  std::string doc_id;
  std::vector<TokenScore> scores;
  bool calibrated = false;
};

/// Token scores for every document of a prompt, in prompt order.
using DocTokenScores = std::vector<TokenScoreVector>;

struct HeadDocScore {
  HeadId head;
  std::string doc_id;
  double score = 0.0;
};

/// Either every head of the model or an explicit subset.
class HeadSelection {
 public:
  static HeadSelection all() { return HeadSelection(); }
  static HeadSelection of(std::vector<HeadId> heads) { return HeadSelection(std::move(heads)); }

  bool is_all() const noexcept { return !heads_.has_value(); }
  const std::vector<HeadId>& subset() const { return *heads_; }

  /// Resolves to a canonical, duplicate-free list checked against the slice.
  std::vector<HeadId> resolve(const AttentionSlice& slice) const {
    std::vector<HeadId> heads = is_all() ? all_heads(slice.dims().layers, slice.dims().heads) : *heads_;
    require(!heads.empty(), ErrorCode::empty_input, "head set is empty");
    std::sort(heads.begin(), heads.end());
    require(std::adjacent_find(heads.begin(), heads.end()) == heads.end(), ErrorCode::invalid_argument,
            "head set contains duplicates");
    for (const auto& h : heads) slice.check_head(h);
    return heads;
  }

 private:
  HeadSelection() = default;
  explicit HeadSelection(std::vector<HeadId> heads) : heads_(std::move(heads)) {}

  std::optional<std::vector<HeadId>> heads_;
};

/// Query-to-token relevance summed over the selected heads and averaged over
/// the query tokens. With every head selected this is the full-model score.
inline DocTokenScores token_relevance(const AttentionSlice& slice, const PromptLayout& layout,
                                      const HeadSelection& selection) {
  check_consistent(slice, layout);
  const auto heads = selection.resolve(slice);
  const std::size_t q = slice.dims().query_tokens;
  require(q > 0, ErrorCode::dim_layout_mismatch, "query span is empty");

  DocTokenScores out;
  out.reserve(layout.doc_spans.size());
  std::vector<double> acc;
  for (const auto& doc : layout.doc_spans) {
    const Span span = doc.span;
    acc.assign(span.size(), 0.0);
    for (const auto& h : heads) {
      for (std::size_t t = 0; t < q; ++t) {
        auto row = slice.row(h, t);
        for (std::size_t j = span.start; j < span.end; ++j) acc[j - span.start] += row[j];
      }
    }
    TokenScoreVector v{doc.doc_id, {}, false};
    v.scores.reserve(span.size());
    for (std::size_t j = span.start; j < span.end; ++j)
      v.scores.push_back({j, acc[j - span.start] / static_cast<double>(q)});
    out.push_back(std::move(v));
  }
  return out;
}

/// Attention mass one head pays to one document, averaged over query rows.
inline HeadDocScore head_doc_score(const AttentionSlice& slice, const PromptLayout& layout, const HeadId& head,
                                   std::string_view doc_id) {
  check_consistent(slice, layout);
  slice.check_head(head);
  const Span span = layout.at(doc_id).span;
  const std::size_t q = slice.dims().query_tokens;
  double sum = 0.0;
  for (std::size_t t = 0; t < q; ++t) {
    auto row = slice.row(head, t);
    for (std::size_t j = span.start; j < span.end; ++j) sum += row[j];
  }
  return {head, std::string(doc_id), sum / static_cast<double>(q)};
}

inline const TokenScoreVector* find_doc(const DocTokenScores& scores, std::string_view doc_id) {
  auto it = std::find_if(scores.begin(), scores.end(), [&](const auto& v) { return v.doc_id == doc_id; });
  return it == scores.end() ? nullptr : &*it;
}

/// Subtracts content-free-query token scores from real-query token scores.
inline DocTokenScores calibrate(const DocTokenScores& real, const DocTokenScores& content_free) {
  require(real.size() == content_free.size(), ErrorCode::mismatch,
          "real prompt has " + std::to_string(real.size()) + " documents, calibration prompt has " +
              std::to_string(content_free.size()));
  DocTokenScores out;
  out.reserve(real.size());
  for (const auto& r : real) {
    const TokenScoreVector* c = find_doc(content_free, r.doc_id);
    require(c != nullptr, ErrorCode::mismatch, "document '" + r.doc_id + "' missing from calibration scores");
    require(!r.calibrated && !c->calibrated, ErrorCode::invalid_argument,
            "document '" + r.doc_id + "' is already calibrated");
    require(r.scores.size() == c->scores.size(), ErrorCode::mismatch,
            "document '" + r.doc_id + "' token counts differ between prompts");
    TokenScoreVector v{r.doc_id, {}, true};
    v.scores.reserve(r.scores.size());
    for (std::size_t i = 0; i < r.scores.size(); ++i) {
      require(r.scores[i].index == c->scores[i].index, ErrorCode::mismatch,
              "document '" + r.doc_id + "' token indices differ between prompts");
      v.scores.push_back({r.scores[i].index, r.scores[i].score - c->scores[i].score});
    }
    out.push_back(std::move(v));
  }
  return out;
}

/// Threshold k for the mean - k*sigma rule. Infinity disables filtering.
struct OutlierPolicy {
  double k = 3.0;

  static OutlierPolicy disabled() { return {std::numeric_limits<double>::infinity()}; }
  bool enabled() const noexcept { return std::isfinite(k); }
};

struct OutlierStats {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t count = 0;
};

/// Population mean and standard deviation over every token of the prompt.
inline OutlierStats pooled_stats(const DocTokenScores& scores) {
  OutlierStats s;
  for (const auto& v : scores) {
    for (const auto& t : v.scores) s.mean += t.score;
    s.count += v.scores.size();
  }
  if (s.count == 0) return s;
  s.mean /= static_cast<double>(s.count);
  double var = 0.0;
  for (const auto& v : scores)
    for (const auto& t : v.scores) var += (t.score - s.mean) * (t.score - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(s.count));
  return s;
}

/// Drops negative tokens scoring strictly below mean - k*sigma.
inline TokenScoreVector filter_outlier_tokens(const TokenScoreVector& scores, const OutlierPolicy& policy,
                                              const OutlierStats& stats) {
  require(scores.calibrated, ErrorCode::invalid_argument,
          "outlier filtering applies to calibrated scores only (document '" + scores.doc_id + "')");
  if (!policy.enabled()) return scores;
  const double threshold = stats.mean - policy.k * stats.stddev;
  TokenScoreVector out{scores.doc_id, {}, true};
  for (const auto& t : scores.scores)
    if (!(t.score < threshold && t.score < 0.0)) out.scores.push_back(t);
  return out;
}

/// Filters every document against statistics pooled over the whole prompt.
inline DocTokenScores filter_outlier_tokens(const DocTokenScores& scores, const OutlierPolicy& policy) {
  const OutlierStats stats = pooled_stats(scores);
  DocTokenScores out;
  out.reserve(scores.size());
  for (const auto& v : scores) out.push_back(filter_outlier_tokens(v, policy, stats));
  return out;
}

inline double doc_relevance(const TokenScoreVector& scores) {
  double sum = 0.0;
  for (const auto& t : scores.scores) sum += t.score;
  return sum;
}

}  // namespace corerank
