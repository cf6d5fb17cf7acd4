#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "corerank/error.hpp"
#include "corerank/io.hpp"
#include "corerank/prompt.hpp"
#include "corerank/reranker.hpp"

namespace corerank {

/// Relevance grades for one query; absent documents have grade 0.
using QueryJudgments = std::map<std::string, int, std::less<>>;
using Qrels = std::map<std::string, QueryJudgments, std::less<>>;

struct Candidate {
  std::string doc_id;
  double score = 0.0;
};

struct CandidateList {
  std::string query_id;
  std::vector<Candidate> candidates;
};

inline constexpr std::size_t default_depth = 40;
inline constexpr std::size_t default_ndcg_k = 10;

/// nDCG@k with gain 2^grade - 1 and discount log2(rank + 1). The ideal DCG
/// ranks every judged document of the query by grade; 0 when it vanishes.
inline double ndcg_at_k(const std::vector<std::string>& ranking, const QueryJudgments& judged, std::size_t k) {
  require(k >= 1, ErrorCode::invalid_argument, "k must be at least 1");
  auto gain = [](int grade) { return std::exp2(static_cast<double>(grade)) - 1.0; };
  double dcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i) {
    auto it = judged.find(ranking[i]);
    if (it != judged.end() && it->second > 0) dcg += gain(it->second) / std::log2(static_cast<double>(i) + 2.0);
  }
  std::vector<int> grades;
  for (const auto& [doc, grade] : judged)
    if (grade > 0) grades.push_back(grade);
  std::sort(grades.begin(), grades.end(), std::greater<>());
  double idcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, grades.size()); ++i)
    idcg += gain(grades[i]) / std::log2(static_cast<double>(i) + 2.0);
  return idcg > 0.0 ? dcg / idcg : 0.0;
}

/// query-id TAB doc-id TAB grade; a non-numeric first line is a header.
inline Qrels load_qrels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open '" + path.string() + "'");
  Qrels qrels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string col; std::getline(ss, col, '\t');) cols.push_back(col);
    if (cols.size() == 4) cols.erase(cols.begin() + 1);  // TREC "qid iter docid grade"
    const std::string where = path.string() + ":" + std::to_string(line_no);
    require(cols.size() == 3, ErrorCode::parse, where + ": expected 3 tab-separated columns");
    int grade = 0;
    try {
      std::size_t used = 0;
      grade = std::stoi(cols[2], &used);
      require(used == cols[2].size(), ErrorCode::parse, where + ": grade is not an integer");
    } catch (const std::logic_error&) {
      if (line_no == 1) continue;
      fail(ErrorCode::parse, where + ": grade is not an integer");
    }
    require(grade >= 0, ErrorCode::parse, where + ": negative grade");
    qrels[cols[0]][cols[1]] = grade;
  }
  return qrels;
}

/// BEIR corpus.jsonl ({_id, title, text}); title and text are joined.
inline std::unordered_map<std::string, Document> load_corpus(const std::filesystem::path& path) {
  std::unordered_map<std::string, Document> corpus;
  io::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    Document d{j.at("_id").get<std::string>(), j.value("text", "")};
    const std::string title = j.value("title", "");
    if (!title.empty()) d.text = d.text.empty() ? title : title + " " + d.text;
    require(corpus.emplace(d.id, d).second, ErrorCode::parse,
            path.string() + ":" + std::to_string(line) + ": duplicate document id '" + d.id + "'");
  });
  return corpus;
}

struct Query {
  std::string id;
  std::string text;
};

inline std::vector<Query> load_queries(const std::filesystem::path& path) {
  std::vector<Query> out;
  io::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t) {
    out.push_back({j.at("_id").get<std::string>(), j.at("text").get<std::string>()});
  });
  return out;
}

/// candidates.jsonl ({query_id, candidates: [{doc_id, score}]}), truncated to
/// depth. Lists must be sorted by descending score without duplicates.
inline std::vector<CandidateList> load_candidates(const std::filesystem::path& path, std::size_t depth = default_depth) {
  std::vector<CandidateList> out;
  io::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    const std::string where = path.string() + ":" + std::to_string(line);
    CandidateList list{j.at("query_id").get<std::string>(), {}};
    std::set<std::string> seen;
    for (const auto& c : j.at("candidates")) {
      Candidate cand{c.at("doc_id").get<std::string>(), c.value("score", 0.0)};
      require(seen.insert(cand.doc_id).second, ErrorCode::parse, where + ": duplicate candidate '" + cand.doc_id + "'");
      if (!list.candidates.empty())
        require(cand.score <= list.candidates.back().score, ErrorCode::unsorted_input,
                where + ": candidates not sorted by descending score");
      list.candidates.push_back(std::move(cand));
    }
    if (list.candidates.size() > depth) list.candidates.resize(depth);
    out.push_back(std::move(list));
  });
  return out;
}

struct Dataset {
  std::string name;
  std::unordered_map<std::string, Document> corpus;
  std::vector<Query> queries;
  Qrels qrels;
  std::vector<CandidateList> candidates;

  const Query& query(std::string_view id) const {
    for (const auto& q : queries)
      if (q.id == id) return q;
    fail(ErrorCode::unknown_document, "query '" + std::string(id) + "' not in queries file");
  }

  std::vector<Document> documents(const CandidateList& list) const {
    std::vector<Document> docs;
    for (const auto& c : list.candidates) docs.push_back(corpus.at(c.doc_id));
    return docs;
  }

  /// Every candidate query and document must resolve; names the first miss.
  void check_integrity() const {
    std::set<std::string, std::less<>> ids;
    for (const auto& q : queries) ids.insert(q.id);
    for (const auto& list : candidates) {
      require(ids.count(list.query_id) == 1, ErrorCode::unknown_document,
              "candidate query '" + list.query_id + "' missing from queries");
      for (const auto& c : list.candidates)
        require(corpus.count(c.doc_id) == 1, ErrorCode::unknown_document,
                "candidate document '" + c.doc_id + "' (query '" + list.query_id + "') missing from corpus");
    }
  }
};

/// Loads corpus.jsonl, queries.jsonl, qrels.tsv (or qrels/test.tsv) and
/// candidates.jsonl from a dataset directory.
inline Dataset load_dataset(const std::filesystem::path& dir, std::optional<std::filesystem::path> candidates = {},
                            std::size_t depth = default_depth) {
  Dataset d;
  d.name = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
  d.corpus = load_corpus(dir / "corpus.jsonl");
  d.queries = load_queries(dir / "queries.jsonl");
  const auto qrels = std::filesystem::exists(dir / "qrels.tsv") ? dir / "qrels.tsv" : dir / "qrels" / "test.tsv";
  d.qrels = load_qrels(qrels);
  d.candidates = load_candidates(candidates.value_or(dir / "candidates.jsonl"), depth);
  d.check_integrity();
  return d;
}

/// Ordered document ids per query for one system.
using RunRankings = std::map<std::string, std::vector<std::string>, std::less<>>;

inline RunRankings baseline_rankings(const std::vector<CandidateList>& candidates) {
  RunRankings out;
  for (const auto& list : candidates) {
    auto& ids = out[list.query_id];
    for (const auto& c : list.candidates) ids.push_back(c.doc_id);
  }
  return out;
}

inline RunRankings load_run(const std::filesystem::path& path) {
  RunRankings out;
  io::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t) {
    auto& ids = out[j.at("query_id").get<std::string>()];
    for (const auto& r : j.at("ranking")) ids.push_back(r.at("doc_id").get<std::string>());
  });
  return out;
}

struct EvalRow {
  std::string dataset;
  std::string config;
  double mean_ndcg = 0.0;
  std::size_t queries = 0;
};

struct QueryScore {
  std::string config;
  std::string query_id;
  double ndcg = 0.0;
  bool gold_retrieved = true;
};

struct EvalReport {
  std::size_t k = default_ndcg_k;
  std::vector<EvalRow> rows;
  std::vector<QueryScore> per_query;

  const EvalRow& row(std::string_view config) const {
    for (const auto& r : rows)
      if (r.config == config) return r;
    fail(ErrorCode::invalid_argument, "no report row for '" + std::string(config) + "'");
  }

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "dataset,config,ndcg@" << k << ",queries\n";
    for (const auto& r : rows) os << r.dataset << ',' << r.config << ',' << r.mean_ndcg << ',' << r.queries << '\n';
    return os.str();
  }

  std::string to_jsonl() const {
    std::string out;
    for (const auto& q : per_query) {
      out += nlohmann::json{{"config", q.config}, {"query_id", q.query_id}, {"ndcg", q.ndcg},
                            {"gold_in_candidates", q.gold_retrieved}}
                 .dump();
      out += '\n';
    }
    return out;
  }
};

/// Scores named runs (plus the "baseline" row when given) over the queries
/// of the baseline or, without one, of each run.
inline EvalReport evaluate_rankings(const std::string& dataset, const Qrels& qrels,
                                    const std::optional<RunRankings>& baseline,
                                    const std::vector<std::pair<std::string, RunRankings>>& runs,
                                    std::size_t k = default_ndcg_k) {
  EvalReport report;
  report.k = k;
  static const QueryJudgments none;
  auto score = [&](const std::string& name, const RunRankings& run) {
    EvalRow row{dataset, name, 0.0, 0};
    const RunRankings& universe = baseline ? *baseline : run;
    for (const auto& [qid, base_ids] : universe) {
      auto it = run.find(qid);
      require(it != run.end(), ErrorCode::mismatch, "run '" + name + "' has no ranking for query '" + qid + "'");
      auto jt = qrels.find(qid);
      const QueryJudgments& judged = jt == qrels.end() ? none : jt->second;
      const double v = ndcg_at_k(it->second, judged, k);
      bool retrieved = false;
      for (const auto& id : base_ids) {
        auto g = judged.find(id);
        retrieved = retrieved || (g != judged.end() && g->second > 0);
      }
      report.per_query.push_back({name, qid, v, retrieved});
      row.mean_ndcg += v;
      ++row.queries;
    }
    if (row.queries > 0) row.mean_ndcg /= static_cast<double>(row.queries);
    report.rows.push_back(row);
  };
  if (baseline) score("baseline", *baseline);
  for (const auto& [name, run] : runs) score(name, run);
  return report;
}

struct RunOutput {
  std::string config;
  std::vector<nlohmann::json> records;  // candidate order
  RunRankings rankings;
};

/// Re-ranks every candidate list under each configuration. Queries run on
/// up to `threads` workers; output order follows the candidate file.
inline std::vector<RunOutput> rerank_dataset(const Dataset& dataset, const AttentionProvider& provider,
                                             const Tokenizer& tokenizer, const std::vector<RerankConfig>& configs,
                                             std::size_t threads = 1) {
  for (const auto& c : configs) c.validate(provider.descriptor());
  std::vector<RunOutput> outputs;
  for (const auto& config : configs) {
    const std::size_t n = dataset.candidates.size();
    std::vector<RankingResult> results(n);
    std::atomic<std::size_t> next{0};
    std::mutex m;
    std::exception_ptr failure;
    auto worker = [&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          const auto& list = dataset.candidates[i];
          results[i] = rerank(dataset.query(list.query_id).text, dataset.documents(list), provider, tokenizer, config);
        } catch (...) {
          std::lock_guard lock(m);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    };
    const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
    if (workers == 1) {
      worker();
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);

    RunOutput out{config.name, {}, {}};
    for (std::size_t i = 0; i < n; ++i) {
      const auto& qid = dataset.candidates[i].query_id;
      out.records.push_back(run_record(qid, results[i], config));
      out.rankings[qid] = results[i].order();
    }
    outputs.push_back(std::move(out));
  }
  return outputs;
}

/// Re-ranks the dataset under every configuration and reports mean nDCG@k
/// next to the unmodified retriever order.
inline EvalReport evaluate_run(const Dataset& dataset, const AttentionProvider& provider, const Tokenizer& tokenizer,
                               const std::vector<RerankConfig>& configs, std::size_t k = default_ndcg_k,
                               std::size_t threads = 1) {
  std::vector<std::pair<std::string, RunRankings>> runs;
  for (auto& out : rerank_dataset(dataset, provider, tokenizer, configs, threads))
    runs.emplace_back(out.config, std::move(out.rankings));
  return evaluate_rankings(dataset.name, dataset.qrels, baseline_rankings(dataset.candidates), runs, k);
}

}  // namespace corerank
