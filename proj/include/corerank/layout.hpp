#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "corerank/error.hpp"

namespace corerank {

using TokenId = std::uint32_t;

/// Half-open token range [start, end).
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;

  constexpr std::size_t size() const noexcept { return end > start ? end - start : 0; }
  constexpr bool empty() const noexcept { return end <= start; }
  constexpr bool contains(std::size_t index) const noexcept { return index >= start && index < end; }
  friend constexpr bool operator==(const Span&, const Span&) = default;
};

struct DocSpan {
  std::string doc_id;
  Span span;
  friend bool operator==(const DocSpan&, const DocSpan&) = default;
};

/// Token-span bookkeeping for one tokenized prompt. Instruction spans cover
/// the wrapper, preamble, document markers, separators and the query prefix.
struct PromptLayout {
  std::string model;
  std::string query;
  std::vector<DocSpan> doc_spans;
  Span query_span;
  std::vector<Span> instruction_spans;
  std::size_t total_tokens = 0;

  const DocSpan* find(std::string_view doc_id) const noexcept {
    auto it = std::find_if(doc_spans.begin(), doc_spans.end(),
                           [&](const DocSpan& d) { return d.doc_id == doc_id; });
    return it == doc_spans.end() ? nullptr : &*it;
  }

  const DocSpan& at(std::string_view doc_id) const {
    const DocSpan* d = find(doc_id);
    if (d == nullptr) fail(ErrorCode::unknown_document, "document '" + std::string(doc_id) + "' not in layout");
    return *d;
  }

  std::vector<std::string> doc_ids() const {
    std::vector<std::string> ids;
    ids.reserve(doc_spans.size());
    for (const auto& d : doc_spans) ids.push_back(d.doc_id);
    return ids;
  }

  friend bool operator==(const PromptLayout&, const PromptLayout&) = default;
};

/// Returns a description of the first broken layout invariant, if any.
inline std::optional<std::string> layout_violation(const PromptLayout& layout) {
  std::vector<std::pair<Span, std::string>> spans;
  for (const auto& d : layout.doc_spans) spans.emplace_back(d.span, "document '" + d.doc_id + "'");
  spans.emplace_back(layout.query_span, "query");
  for (const auto& s : layout.instruction_spans) spans.emplace_back(s, "instruction");

  for (const auto& [span, name] : spans) {
    if (span.empty()) return name + " span is empty";
    if (span.end > layout.total_tokens) return name + " span exceeds total_tokens";
  }
  std::sort(spans.begin(), spans.end(),
            [](const auto& a, const auto& b) { return a.first.start < b.first.start; });
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (spans[i].first.start < spans[i - 1].first.end)
      return spans[i - 1].second + " and " + spans[i].second + " spans overlap";
  }
  for (std::size_t i = 0; i < layout.doc_spans.size(); ++i) {
    for (std::size_t j = i + 1; j < layout.doc_spans.size(); ++j) {
      if (layout.doc_spans[i].doc_id == layout.doc_spans[j].doc_id)
        return "duplicate document id '" + layout.doc_spans[i].doc_id + "'";
    }
  }
  return std::nullopt;
}

inline void validate_layout(const PromptLayout& layout) {
  if (auto why = layout_violation(layout)) fail(ErrorCode::dim_layout_mismatch, *why);
}

inline nlohmann::json to_json(const PromptLayout& layout) {
  nlohmann::json docs = nlohmann::json::array();
  for (const auto& d : layout.doc_spans)
    docs.push_back({{"id", d.doc_id}, {"start", d.span.start}, {"end", d.span.end}});
  nlohmann::json instructions = nlohmann::json::array();
  for (const auto& s : layout.instruction_spans) instructions.push_back({s.start, s.end});
  return {{"model", layout.model},
          {"query", layout.query},
          {"total_tokens", layout.total_tokens},
          {"query_span", {layout.query_span.start, layout.query_span.end}},
          {"doc_spans", docs},
          {"instruction_spans", instructions}};
}

inline PromptLayout layout_from_json(const nlohmann::json& j) {
  try {
    PromptLayout layout;
    layout.model = j.value("model", "");
    layout.query = j.value("query", "");
    layout.total_tokens = j.at("total_tokens").get<std::size_t>();
    const auto& q = j.at("query_span");
    layout.query_span = {q.at(0).get<std::size_t>(), q.at(1).get<std::size_t>()};
    for (const auto& d : j.at("doc_spans")) {
      layout.doc_spans.push_back(
          {d.at("id").get<std::string>(), {d.at("start").get<std::size_t>(), d.at("end").get<std::size_t>()}});
    }
    if (j.contains("instruction_spans")) {
      for (const auto& s : j.at("instruction_spans"))
        layout.instruction_spans.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
    }
    return layout;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, std::string("malformed prompt layout: ") + e.what());
  }
}

}  // namespace corerank
