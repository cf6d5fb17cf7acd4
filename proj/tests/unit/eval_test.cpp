#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace corerank;
using namespace corerank::testing;

namespace {

std::map<std::string, int> as_map(const QueryJudgments& j) { return {j.begin(), j.end()}; }

void write(const std::filesystem::path& p, const std::string& text) { io::write_file_atomic(p, text); }

/// Small dataset directory: 3 queries with 4 candidates each.
void write_tiny_dataset(const TempDir& dir) {
  std::string corpus;
  for (int i = 0; i < 12; ++i)
    corpus += nlohmann::json{{"_id", "d" + std::to_string(i)}, {"title", i % 2 ? "Title" : ""},
                             {"text", "text of " + std::to_string(i)}}
                  .dump() +
              "\n";
  write(dir / "corpus.jsonl", corpus);
  write(dir / "queries.jsonl",
        R"({"_id": "q0", "text": "first"})"
        "\n"
        R"({"_id": "q1", "text": "second"})"
        "\n"
        R"({"_id": "q2", "text": "third"})"
        "\n");
  write(dir / "qrels.tsv", "query-id\tcorpus-id\tscore\nq0\td2\t1\nq1\td4\t2\nq1\td7\t1\nq2\td99\t1\n");
  std::string cands;
  for (int q = 0; q < 3; ++q) {
    nlohmann::json arr = nlohmann::json::array();
    for (int r = 0; r < 4; ++r) arr.push_back({{"doc_id", "d" + std::to_string(q * 4 + r)}, {"score", 10.0 - r}});
    cands += nlohmann::json{{"query_id", "q" + std::to_string(q)}, {"candidates", arr}}.dump() + "\n";
  }
  write(dir / "candidates.jsonl", cands);
}

}  // namespace

TEST(Ndcg, WorkedValues) {
  const QueryJudgments judged{{"a", 1}};
  EXPECT_DOUBLE_EQ(ndcg_at_k({"a", "b", "c"}, judged, 10), 1.0);
  EXPECT_NEAR(ndcg_at_k({"b", "a", "c"}, judged, 10), 0.63093, 1e-5);
  EXPECT_EQ(ndcg_at_k({"b", "c"}, judged, 10), 0.0);
  EXPECT_EQ(ndcg_at_k({"b", "c", "a"}, judged, 2), 0.0);
  EXPECT_EQ(ndcg_at_k({"a"}, {}, 10), 0.0);
  EXPECT_EQ(ndcg_at_k({"a"}, QueryJudgments{{"a", 0}}, 10), 0.0);
  EXPECT_EQ(error_code([&] { ndcg_at_k({"a"}, judged, 0); }), ErrorCode::invalid_argument);
}

TEST(Ndcg, GradedGainUsesExponential) {
  const QueryJudgments judged{{"a", 2}, {"b", 1}};
  const double ideal = 3.0 + 1.0 / std::log2(3.0);
  EXPECT_NEAR(ndcg_at_k({"b", "a"}, judged, 10), (1.0 + 3.0 / std::log2(3.0)) / ideal, 1e-12);
}

TEST(Ndcg, IdealIncludesJudgedDocumentsOutsideTheRanking) {
  const QueryJudgments judged{{"a", 1}, {"missing", 1}};
  EXPECT_NEAR(ndcg_at_k({"a", "x"}, judged, 10), 1.0 / (1.0 + 1.0 / std::log2(3.0)), 1e-12);
}

TEST(Ndcg, MatchesNaiveOracleOnRandomCases) {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = pick(rng, 1, 30);
    std::vector<std::string> ranking;
    for (std::size_t i = 0; i < n; ++i) ranking.push_back("d" + std::to_string(i));
    std::shuffle(ranking.begin(), ranking.end(), rng);
    QueryJudgments judged;
    for (std::size_t i = 0; i < n + 5; ++i)
      if (rng() % 3 == 0) judged["d" + std::to_string(i)] = static_cast<int>(pick(rng, 0, 3));
    const std::size_t k = pick(rng, 1, 40);
    EXPECT_NEAR(ndcg_at_k(ranking, judged, k), naive_ndcg(ranking, as_map(judged), k), 1e-12);
  }
}

TEST(Ndcg, BoundedAndPerfectForIdealOrder) {
  Rng rng(19);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = pick(rng, 1, 25);
    std::vector<std::pair<std::string, int>> docs;
    QueryJudgments judged;
    for (std::size_t i = 0; i < n; ++i) {
      const int g = static_cast<int>(pick(rng, 0, 3));
      docs.emplace_back("d" + std::to_string(i), g);
      judged["d" + std::to_string(i)] = g;
    }
    std::vector<std::string> ranking;
    for (const auto& [id, g] : docs) ranking.push_back(id);
    std::shuffle(ranking.begin(), ranking.end(), rng);
    const std::size_t k = pick(rng, 1, 30);
    const double v = ndcg_at_k(ranking, judged, k);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0 + 1e-12);
    std::stable_sort(docs.begin(), docs.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> ideal;
    for (const auto& [id, g] : docs) ideal.push_back(id);
    const bool any = std::any_of(docs.begin(), docs.end(), [](const auto& d) { return d.second > 0; });
    EXPECT_NEAR(ndcg_at_k(ideal, judged, k), any ? 1.0 : 0.0, 1e-12);
  }
}

TEST(Ndcg, PromotingRelevantDocumentNeverHurts) {
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = pick(rng, 2, 20);
    std::vector<std::string> ranking;
    QueryJudgments judged;
    for (std::size_t i = 0; i < n; ++i) {
      ranking.push_back("d" + std::to_string(i));
      judged[ranking.back()] = static_cast<int>(pick(rng, 0, 2));
    }
    const std::size_t i = pick(rng, 1, n - 1);
    if (judged[ranking[i]] < judged[ranking[i - 1]]) continue;
    auto swapped = ranking;
    std::swap(swapped[i], swapped[i - 1]);
    const std::size_t k = pick(rng, 1, n);
    EXPECT_GE(ndcg_at_k(swapped, judged, k) + 1e-12, ndcg_at_k(ranking, judged, k));
  }
}

TEST(Ndcg, OnlyTopKMatters) {
  const QueryJudgments judged{{"a", 1}, {"z", 3}};
  const std::vector<std::string> head = {"a", "b", "c"};
  auto one = head, two = head;
  one.push_back("z");
  two.push_back("y");
  EXPECT_EQ(ndcg_at_k(one, judged, 3), ndcg_at_k(two, judged, 3));
  EXPECT_GT(ndcg_at_k(one, judged, 4), ndcg_at_k(two, judged, 4));
}

TEST(Loaders, QrelsFormats) {
  TempDir dir;
  write(dir / "a.tsv", "query-id\tcorpus-id\tscore\nq1\td1\t1\nq1\td2\t0\r\n\nq2\td3\t2\n");
  const auto a = load_qrels(dir / "a.tsv");
  EXPECT_EQ(a.size(), 2u);
  EXPECT_EQ(a.at("q1").at("d2"), 0);
  EXPECT_EQ(a.at("q2").at("d3"), 2);
  write(dir / "b.tsv", "q1\t0\td1\t3\n");
  EXPECT_EQ(load_qrels(dir / "b.tsv").at("q1").at("d1"), 3);
  write(dir / "c.tsv", "q1\td1\t1\nq1\td2\tx\n");
  EXPECT_EQ(error_code([&] { load_qrels(dir / "c.tsv"); }), ErrorCode::parse);
  write(dir / "d.tsv", "q1 d1 1\n");
  EXPECT_EQ(error_code([&] { load_qrels(dir / "d.tsv"); }), ErrorCode::parse);
  write(dir / "e.tsv", "q1\td1\t-1\n");
  EXPECT_EQ(error_code([&] { load_qrels(dir / "e.tsv"); }), ErrorCode::parse);
  EXPECT_EQ(error_code([&] { load_qrels(dir / "missing.tsv"); }), ErrorCode::io);
}

TEST(Loaders, CandidatesAreTruncatedAndChecked) {
  TempDir dir;
  write(dir / "c.jsonl",
        R"({"query_id": "q", "candidates": [{"doc_id": "a", "score": 3}, {"doc_id": "b", "score": 2}, {"doc_id": "c", "score": 2}]})"
        "\n");
  EXPECT_EQ(load_candidates(dir / "c.jsonl").at(0).candidates.size(), 3u);
  EXPECT_EQ(load_candidates(dir / "c.jsonl", 2).at(0).candidates.size(), 2u);
  write(dir / "u.jsonl", R"({"query_id": "q", "candidates": [{"doc_id": "a", "score": 1}, {"doc_id": "b", "score": 2}]})"
                         "\n");
  EXPECT_EQ(error_code([&] { load_candidates(dir / "u.jsonl"); }), ErrorCode::unsorted_input);
  write(dir / "d.jsonl", R"({"query_id": "q", "candidates": [{"doc_id": "a"}, {"doc_id": "a"}]})"
                         "\n");
  EXPECT_EQ(error_code([&] { load_candidates(dir / "d.jsonl"); }), ErrorCode::parse);
  write(dir / "bad.jsonl", "{not json}\n");
  EXPECT_EQ(error_code([&] { load_candidates(dir / "bad.jsonl"); }), ErrorCode::parse);
}

TEST(Loaders, DatasetDirectory) {
  TempDir dir;
  write_tiny_dataset(dir);
  const auto d = load_dataset(dir.path());
  EXPECT_EQ(d.queries.size(), 3u);
  EXPECT_EQ(d.corpus.size(), 12u);
  EXPECT_EQ(d.corpus.at("d1").text, "Title text of 1");
  EXPECT_EQ(d.corpus.at("d2").text, "text of 2");
  EXPECT_EQ(d.candidates.size(), 3u);
  EXPECT_EQ(d.documents(d.candidates[1]).at(0).id, "d4");
  EXPECT_EQ(d.query("q2").text, "third");
  EXPECT_EQ(error_code([&] { d.query("nope"); }), ErrorCode::unknown_document);
  EXPECT_EQ(load_dataset(dir.path(), std::nullopt, 2).candidates[0].candidates.size(), 2u);
}

TEST(Loaders, DatasetIntegrityNamesTheMissingDocument) {
  TempDir dir;
  write_tiny_dataset(dir);
  write(dir / "candidates.jsonl", R"({"query_id": "q0", "candidates": [{"doc_id": "ghost", "score": 1}]})"
                                  "\n");
  try {
    load_dataset(dir.path());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::unknown_document);
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
  }
  write(dir / "candidates.jsonl", R"({"query_id": "q9", "candidates": [{"doc_id": "d1", "score": 1}]})"
                                  "\n");
  EXPECT_EQ(error_code([&] { load_dataset(dir.path()); }), ErrorCode::unknown_document);
}

TEST(Evaluate, BaselineOnlyReport) {
  TempDir dir;
  write_tiny_dataset(dir);
  const auto d = load_dataset(dir.path());
  PlantedSpec spec;
  spec.layers = 2;
  spec.heads = 2;
  SyntheticProvider provider(spec, {});
  const auto report = evaluate_run(d, provider, WhitespaceTokenizer(), {});
  ASSERT_EQ(report.rows.size(), 1u);
  const auto& row = report.row("baseline");
  EXPECT_EQ(row.queries, 3u);
  const double q0 = naive_ndcg({"d0", "d1", "d2", "d3"}, {{"d2", 1}}, 10);
  const double q1 = naive_ndcg({"d4", "d5", "d6", "d7"}, {{"d4", 2}, {"d7", 1}}, 10);
  EXPECT_NEAR(row.mean_ndcg, (q0 + q1 + 0.0) / 3.0, 1e-12);
  ASSERT_EQ(report.per_query.size(), 3u);
  EXPECT_FALSE(report.per_query[2].gold_retrieved);
  EXPECT_TRUE(report.per_query[0].gold_retrieved);
  EXPECT_NE(report.to_csv().find("dataset,config,ndcg@10,queries\n"), std::string::npos);
  EXPECT_NE(report.to_jsonl().find("\"gold_in_candidates\":false"), std::string::npos);
  EXPECT_EQ(error_code([&] { report.row("other"); }), ErrorCode::invalid_argument);
}

TEST(Evaluate, UniformAttentionKeepsBaselineOrder) {
  TempDir dir;
  write_tiny_dataset(dir);
  auto d = load_dataset(dir.path());
  // Equal-length documents and uniform attention give exact ties.
  for (auto& [id, doc] : d.corpus) doc.text = "same length text";
  PlantedSpec spec;
  spec.layers = 2;
  spec.heads = 2;
  spec.noise = NoiseModel::uniform;
  SyntheticProvider provider(spec, {});
  const auto outputs = rerank_dataset(d, provider, WhitespaceTokenizer(), {RerankConfig::all_heads()});
  EXPECT_EQ(outputs.at(0).rankings, baseline_rankings(d.candidates));
  const auto report = evaluate_run(d, provider, WhitespaceTokenizer(), {RerankConfig::all_heads()});
  EXPECT_EQ(report.row("icr").mean_ndcg, report.row("baseline").mean_ndcg);
}

TEST(Evaluate, OracleAttentionIsPerfectOnRetrievedQueries) {
  TempDir dir;
  write_tiny_dataset(dir);
  const auto d = load_dataset(dir.path());
  PlantedSpec spec;
  spec.layers = 2;
  spec.heads = 2;
  spec.planted = {{{0, 0}, 1.0}, {{0, 1}, 1.0}, {{1, 0}, 1.0}, {{1, 1}, 1.0}};
  SyntheticProvider provider(spec, {{"first", {"d2"}}, {"second", {"d4"}}});
  auto config = RerankConfig::all_heads();
  config.calibrate = false;
  const auto report = evaluate_run(d, provider, WhitespaceTokenizer(), {config});
  std::map<std::string, double> per;
  for (const auto& q : report.per_query)
    if (q.config == "icr") per[q.query_id] = q.ndcg;
  EXPECT_DOUBLE_EQ(per.at("q0"), 1.0);
  EXPECT_EQ(per.at("q2"), 0.0);
}

TEST(Evaluate, RunFilesRoundTripAndThreadsAgree) {
  TempDir dir;
  write_tiny_dataset(dir);
  const auto d = load_dataset(dir.path());
  PlantedSpec spec;
  spec.layers = 2;
  spec.heads = 3;
  spec.seed = 4;
  SyntheticProvider provider(spec, targets_from_qrels(d.queries, d.qrels));
  const std::vector<RerankConfig> configs = {RerankConfig::all_heads(),
                                             RerankConfig::with_heads(parse_head_list("(1-2)"), "one")};
  const auto serial = rerank_dataset(d, provider, WhitespaceTokenizer(), configs, 1);
  const auto parallel = rerank_dataset(d, provider, WhitespaceTokenizer(), configs, 3);
  ASSERT_EQ(serial.size(), 2u);
  for (std::size_t c = 0; c < serial.size(); ++c) {
    EXPECT_EQ(serial[c].rankings, parallel[c].rankings);
    std::string text;
    for (const auto& r : serial[c].records) text += r.dump() + "\n";
    write(dir / (serial[c].config + ".jsonl"), text);
    EXPECT_EQ(load_run(dir / (serial[c].config + ".jsonl")), serial[c].rankings);
  }
  EXPECT_EQ(serial[0].records[1].at("query_id"), "q1");

  RunRankings partial = serial[0].rankings;
  partial.erase("q1");
  EXPECT_EQ(error_code([&] { evaluate_rankings("x", d.qrels, baseline_rankings(d.candidates), {{"p", partial}}); }),
            ErrorCode::mismatch);
}

TEST(Evaluate, ProviderErrorsPropagateFromWorkers) {
  TempDir dir;
  write_tiny_dataset(dir);
  const auto d = load_dataset(dir.path());
  LambdaProvider provider({"m", 1, 1, "t"}, [](const PromptLayout& layout, std::size_t) -> AttentionSlice {
    if (layout.query == "second") fail(ErrorCode::provider_failure, "model crashed");
    return make_slice({1, 1, layout.query_span.size(), layout.total_tokens},
                      [&](auto, auto, auto, auto) { return 1.0f / static_cast<float>(layout.total_tokens); });
  });
  for (std::size_t threads : {1u, 2u})
    EXPECT_EQ(error_code([&] { rerank_dataset(d, provider, WhitespaceTokenizer(), {RerankConfig::all_heads()}, threads); }),
              ErrorCode::provider_failure);
}

TEST(EvalDefaults, DepthAndCutoff) {
  EXPECT_EQ(default_depth, 40u);
  EXPECT_EQ(default_ndcg_k, 10u);
}
