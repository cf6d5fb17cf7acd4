#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "corerank/error.hpp"
#include "corerank/layout.hpp"
#include "corerank/tokenizer.hpp"

namespace corerank {

struct Document {
  std::string id;
  std::string text;
};

/// List-wise prompt text. Rendered order is fixed:
///   start_token, preamble, documents (each behind its marker), query_prefix,
///   query, end_token.
/// `{n}` in doc_marker is replaced with the 1-based document number.
struct PromptTemplate {
  std::string preamble = "Here are some paragraphs:";
  std::string doc_separator = "\n\n";
  std::string doc_marker = "[document {n}] ";
  std::string query_prefix =
      "Please find information that are relevant to the following query in the paragraphs above.\n\nQuery: ";
  std::string content_free_query = "N/A";
  std::string start_token = "[INST]";
  std::string end_token = "[/INST]";
  std::size_t max_tokens = 8192;

  /// Duplicate-question retrieval variant (Quora-style datasets).
  static PromptTemplate duplicate_question() {
    PromptTemplate t;
    t.query_prefix = "Please identify question that has the exact same meaning with the following query.\n\nQuery: ";
    return t;
  }
};

inline PromptTemplate template_from_json(const nlohmann::json& j, PromptTemplate base = {}) {
  try {
    base.preamble = j.value("preamble", base.preamble);
    base.doc_separator = j.value("doc_separator", base.doc_separator);
    base.doc_marker = j.value("doc_marker", base.doc_marker);
    base.query_prefix = j.value("query_prefix", base.query_prefix);
    base.content_free_query = j.value("content_free_query", base.content_free_query);
    base.start_token = j.value("start_token", base.start_token);
    base.end_token = j.value("end_token", base.end_token);
    base.max_tokens = j.value("max_tokens", base.max_tokens);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, std::string("prompt template: ") + e.what());
  }
  require(base.max_tokens > 0, ErrorCode::config, "max_tokens must be positive");
  return base;
}

inline nlohmann::json to_json(const PromptTemplate& t) {
  return {{"preamble", t.preamble},         {"doc_separator", t.doc_separator},
          {"doc_marker", t.doc_marker},     {"query_prefix", t.query_prefix},
          {"content_free_query", t.content_free_query},
          {"start_token", t.start_token},   {"end_token", t.end_token},
          {"max_tokens", t.max_tokens}};
}

/// A rendered, tokenized prompt. offsets[i] is the character range of
/// tokens[i] within text.
struct Prompt {
  std::string text;
  std::vector<TokenId> tokens;
  std::vector<std::pair<std::size_t, std::size_t>> offsets;
  PromptLayout layout;

  /// Source text covered by a token span.
  std::string_view text_of(const Span& span) const {
    if (span.empty()) return {};
    const auto begin = offsets[span.start].first;
    const auto end = offsets[span.end - 1].second;
    return std::string_view(text).substr(begin, end - begin);
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::string render_marker(const std::string& marker, std::size_t number) {
  std::string out = marker;
  if (auto pos = out.find("{n}"); pos != std::string::npos) out.replace(pos, 3, std::to_string(number));
  return out;
}

// Prompts are tokenized segment by segment, so every span boundary falls on
// a segment boundary regardless of how the tokenizer treats the joins.
class PromptAssembler {
 public:
  explicit PromptAssembler(const Tokenizer& tokenizer) : tokenizer_(tokenizer) {}

  Span append(std::string_view segment) {
    const std::size_t base = prompt_.text.size();
    const std::size_t first = prompt_.tokens.size();
    prompt_.text.append(segment);
    for (const auto& piece : tokenizer_.tokenize(segment)) {
      prompt_.tokens.push_back(piece.id);
      prompt_.offsets.emplace_back(base + piece.begin, base + piece.end);
    }
    return {first, prompt_.tokens.size()};
  }

  void instruction(std::string_view segment) {
    Span s = append(segment);
    if (s.empty()) return;
    auto& spans = prompt_.layout.instruction_spans;
    if (!spans.empty() && spans.back().end == s.start)
      spans.back().end = s.end;
    else
      spans.push_back(s);
  }

  Prompt finish() {
    prompt_.layout.total_tokens = prompt_.tokens.size();
    return std::move(prompt_);
  }

  PromptLayout& layout() { return prompt_.layout; }

 private:
  const Tokenizer& tokenizer_;
  Prompt prompt_;
};

}  // namespace detail

/// Renders documents and query into a list-wise prompt and records the
/// token span of every document and of the raw query text.
inline Prompt build_prompt(const std::vector<Document>& docs, std::string_view query,
                           const PromptTemplate& tmpl, const Tokenizer& tokenizer) {
  require(!docs.empty(), ErrorCode::empty_input, "document list is empty");
  const std::string_view q = detail::trim(query);
  require(!q.empty(), ErrorCode::empty_input, "query is empty");

  detail::PromptAssembler a(tokenizer);
  a.layout().query = std::string(q);
  if (!tmpl.start_token.empty()) a.instruction(tmpl.start_token + " ");
  a.instruction(tmpl.preamble);
  a.instruction(tmpl.doc_separator);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto& doc = docs[i];
    const std::string label = "document " + std::to_string(i + 1) + " of " + std::to_string(docs.size()) +
                              " (id '" + doc.id + "')";
    const std::string_view text = detail::trim(doc.text);
    require(!text.empty(), ErrorCode::empty_input, label + " is empty");
    require(a.layout().find(doc.id) == nullptr, ErrorCode::invalid_argument, label + " repeats an id");
    a.instruction(detail::render_marker(tmpl.doc_marker, i + 1));
    Span span = a.append(text);
    require(!span.empty(), ErrorCode::empty_input, label + " produced no tokens");
    a.layout().doc_spans.push_back({doc.id, span});
    a.instruction(tmpl.doc_separator);
  }
  a.instruction(tmpl.query_prefix);
  Span qspan = a.append(q);
  require(!qspan.empty(), ErrorCode::empty_input, "query produced no tokens");
  a.layout().query_span = qspan;
  a.instruction(tmpl.end_token);

  Prompt prompt = a.finish();
  require(prompt.tokens.size() <= tmpl.max_tokens, ErrorCode::budget_exceeded,
          "prompt needs " + std::to_string(prompt.tokens.size()) + " tokens, budget is " +
              std::to_string(tmpl.max_tokens));
  return prompt;
}

/// Same documents, with the query replaced by the content-free string.
inline Prompt build_calibration_prompt(const std::vector<Document>& docs, const PromptTemplate& tmpl,
                                       const Tokenizer& tokenizer) {
  return build_prompt(docs, tmpl.content_free_query, tmpl, tokenizer);
}

}  // namespace corerank
