#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "corerank/attention.hpp"
#include "corerank/detail/hash.hpp"
#include "corerank/dump.hpp"
#include "corerank/error.hpp"
#include "corerank/eval.hpp"
#include "corerank/io.hpp"
#include "corerank/prompt.hpp"

namespace corerank {

/// Identity of a prompt independent of tokenization: query text plus the
/// ordered document ids.
inline std::string prompt_key(const PromptLayout& layout) {
  std::string key = layout.query;
  for (const auto& d : layout.doc_spans) {
    key += '\x1f';
    key += d.doc_id;
  }
  return key;
}

inline std::string dump_file_name(const PromptLayout& layout) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(detail::fnv1a(prompt_key(layout))));
  return std::string(buf) + ".cora";
}

/// Serves attention from a directory of dump files, matched to requests by
/// query text and document order. The stored layout is returned, so spans
/// come from whatever tokenizer produced the dumps. Layer limits are served
/// by truncation.
class DumpProvider final : public AttentionProvider {
 public:
  explicit DumpProvider(const std::filesystem::path& dir) {
    require(std::filesystem::is_directory(dir), ErrorCode::io, "dump directory '" + dir.string() + "' not found");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
      if (entry.is_regular_file() && entry.path().extension() == ".cora") files.push_back(entry.path());
    require(!files.empty(), ErrorCode::io, "no .cora dumps in '" + dir.string() + "'");
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const DumpHeader h = read_dump_header(f);
      if (index_.empty()) {
        descriptor_ = {h.layout.model.empty() ? "dumps" : h.layout.model, h.dims.layers, h.dims.heads, "external"};
      }
      require(h.dims.layers == descriptor_.num_layers && h.dims.heads == descriptor_.num_heads, ErrorCode::mismatch,
              f.string() + ": model grid differs from the other dumps");
      require(index_.emplace(prompt_key(h.layout), f).second, ErrorCode::mismatch,
              f.string() + ": duplicate prompt");
    }
  }

  const ModelDescriptor& descriptor() const override { return descriptor_; }
  bool supports_layer_limit() const override { return true; }
  std::size_t size() const noexcept { return index_.size(); }

  AttendedPrompt attend(const AttentionRequest& request) const override {
    auto it = index_.find(prompt_key(request.layout));
    require(it != index_.end(), ErrorCode::provider_failure,
            "no dump for query '" + request.layout.query + "' with " + std::to_string(request.layout.doc_spans.size()) +
                " documents");
    auto [slice, layout] = read_dump(it->second);
    require(slice.layer_limit() >= request.layer_limit, ErrorCode::provider_failure,
            it->second.string() + " stores " + std::to_string(slice.layer_limit()) + " layers, " +
                std::to_string(request.layer_limit) + " requested");
    if (slice.layer_limit() > request.layer_limit) {
      const auto& d = slice.dims();
      const auto vals = slice.values().first(request.layer_limit * d.heads * d.query_tokens * d.context);
      slice = AttentionSlice(d, request.layer_limit, std::vector<float>(vals.begin(), vals.end()));
    }
    return {std::move(slice), std::move(layout)};
  }

 private:
  ModelDescriptor descriptor_;
  std::map<std::string, std::filesystem::path> index_;
};

/// One line of a prompts file: the documents and query of a prompt to be
/// rendered with the shared template. Calibration prompts carry the
/// content-free query and the suffix "#cf" on their id.
struct PromptRequest {
  std::string query_id;
  std::string query;
  std::vector<Document> docs;
};

inline nlohmann::json to_json(const PromptRequest& r) {
  nlohmann::json docs = nlohmann::json::array();
  for (const auto& d : r.docs) docs.push_back({{"id", d.id}, {"text", d.text}});
  return {{"query_id", r.query_id}, {"query", r.query}, {"docs", docs}};
}

inline PromptRequest prompt_request_from_json(const nlohmann::json& j) {
  PromptRequest r{j.at("query_id").get<std::string>(), j.at("query").get<std::string>(), {}};
  for (const auto& d : j.at("docs")) r.docs.push_back({d.at("id").get<std::string>(), d.at("text").get<std::string>()});
  return r;
}

inline std::vector<PromptRequest> load_prompt_requests(const std::filesystem::path& path) {
  std::vector<PromptRequest> out;
  io::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t) { out.push_back(prompt_request_from_json(j)); });
  return out;
}

/// Every prompt re-ranking the dataset will request, in candidate order.
inline std::vector<PromptRequest> dataset_prompts(const Dataset& dataset, const PromptTemplate& tmpl,
                                                  bool with_calibration) {
  std::vector<PromptRequest> out;
  for (const auto& list : dataset.candidates) {
    auto docs = dataset.documents(list);
    out.push_back({list.query_id, dataset.query(list.query_id).text, docs});
    if (with_calibration) out.push_back({list.query_id + "#cf", tmpl.content_free_query, std::move(docs)});
  }
  return out;
}

/// Renders a prompt, runs it through a provider and writes the dump into
/// dir under its content-derived name. Returns the file path.
inline std::filesystem::path export_dump(const PromptRequest& request, const AttentionProvider& provider,
                                         const Tokenizer& tokenizer, const PromptTemplate& tmpl,
                                         const std::filesystem::path& dir, std::size_t layer_limit) {
  Prompt prompt = build_prompt(request.docs, request.query, tmpl, tokenizer);
  prompt.layout.model = provider.descriptor().name;
  AttendedPrompt attended = provider.attend({prompt.tokens, prompt.layout, layer_limit});
  const auto path = dir / dump_file_name(attended.layout);
  write_dump(attended.slice, attended.layout, path);
  return path;
}

}  // namespace corerank
