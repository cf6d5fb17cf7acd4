#pragma once

#include <regex>
#include <string>
#include <string_view>

#include <json.hpp>

#include "corerank/detection.hpp"
#include "corerank/error.hpp"

namespace corerank {

inline nlohmann::json to_json(const OutputHeadSet& set) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : set.ranked)
    out.push_back({{"layer", r.head.layer}, {"head", r.head.head}, {"mean_score", r.mean_score}});
  return out;
}

/// Compact "(L-H), (L-H), ..." form.
inline std::string to_compact(const OutputHeadSet& set) {
  std::string out;
  for (const auto& r : set.ranked) {
    if (!out.empty()) out += ", ";
    out += to_string(r.head);
  }
  return out;
}

/// Accepts a JSON array of {layer, head[, mean_score]} or the compact
/// "(L-H)" list. Order is preserved; compact entries get mean_score 0.
inline OutputHeadSet parse_head_list(std::string_view text) {
  OutputHeadSet set;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string_view::npos && text[first] == '[') {
    try {
      for (const auto& e : nlohmann::json::parse(text)) {
        set.ranked.push_back({{e.at("layer").get<std::uint32_t>(), e.at("head").get<std::uint32_t>()},
                              e.value("mean_score", 0.0)});
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::parse, std::string("head list: ") + e.what());
    }
  } else {
    static const std::regex entry(R"(\(\s*(\d+)\s*-\s*(\d+)\s*\))");
    const std::string s(text);
    for (auto it = std::sregex_iterator(s.begin(), s.end(), entry); it != std::sregex_iterator(); ++it) {
      set.ranked.push_back({{static_cast<std::uint32_t>(std::stoul((*it)[1].str())),
                             static_cast<std::uint32_t>(std::stoul((*it)[2].str()))},
                            0.0});
    }
  }
  require(!set.empty(), ErrorCode::parse, "head list contains no heads");
  for (std::size_t i = 0; i < set.ranked.size(); ++i)
    for (std::size_t j = i + 1; j < set.ranked.size(); ++j)
      require(set.ranked[i].head != set.ranked[j].head, ErrorCode::parse,
              "head list repeats " + to_string(set.ranked[i].head));
  return set;
}

}  // namespace corerank
