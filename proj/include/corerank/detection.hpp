#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "corerank/aggregation.hpp"
#include "corerank/attention.hpp"
#include "corerank/contrastive.hpp"
#include "corerank/error.hpp"
#include "corerank/prompt.hpp"

namespace corerank {

/// One detection instance: a query, its gold document and hard negatives.
/// gold_position is the slot the gold document occupies in the prompt.
struct DetectionSample {
  std::string query_id;
  std::string query;
  Document gold;
  std::vector<Document> negatives;
  std::size_t gold_position = 0;
  std::optional<double> gold_similarity;

  std::size_t document_count() const noexcept { return negatives.size() + 1; }

  void validate() const {
    require(!negatives.empty(), ErrorCode::empty_input, "sample '" + query_id + "' has no negatives");
    for (std::size_t i = 0; i < negatives.size(); ++i) {
      require(negatives[i].id != gold.id, ErrorCode::invalid_argument,
              "sample '" + query_id + "' lists the gold document among its negatives");
      for (std::size_t j = i + 1; j < negatives.size(); ++j)
        require(negatives[i].id != negatives[j].id, ErrorCode::invalid_argument,
                "sample '" + query_id + "' repeats negative '" + negatives[i].id + "'");
    }
    require(gold_position < document_count(), ErrorCode::invalid_argument,
            "sample '" + query_id + "' gold position " + std::to_string(gold_position) + " beyond " +
                std::to_string(document_count()) + " documents");
  }

  /// Prompt document order: negatives in order, gold inserted at position.
  std::vector<Document> documents() const {
    std::vector<Document> docs = negatives;
    docs.insert(docs.begin() + static_cast<std::ptrdiff_t>(gold_position), gold);
    return docs;
  }

  DetectionSample at_position(std::size_t position) const {
    DetectionSample s = *this;
    s.gold_position = position;
    return s;
  }
};

struct RankedHead {
  HeadId head;
  double mean_score = 0.0;
};

/// Selected heads in descending mean score; ties go to the lower layer, then
/// the lower head index.
struct OutputHeadSet {
  std::vector<RankedHead> ranked;

  std::size_t size() const noexcept { return ranked.size(); }
  bool empty() const noexcept { return ranked.empty(); }

  std::vector<HeadId> heads() const {
    std::vector<HeadId> out;
    out.reserve(ranked.size());
    for (const auto& r : ranked) out.push_back(r.head);
    return out;
  }

  OutputHeadSet top(std::size_t k) const {
    OutputHeadSet out;
    out.ranked.assign(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(std::min(k, ranked.size())));
    return out;
  }
};

/// Per-head (sum, count) accumulators over an L x H grid. Tables built on
/// disjoint shards merge by addition.
class HeadScoreTable {
 public:
  HeadScoreTable() = default;
  HeadScoreTable(std::size_t layers, std::size_t heads, std::optional<double> temperature = std::nullopt)
      : layers_(layers), heads_(heads), temperature_(temperature), sum_(layers * heads, 0.0),
        count_(layers * heads, 0) {}

  std::size_t layers() const noexcept { return layers_; }
  std::size_t heads() const noexcept { return heads_; }
  std::optional<double> temperature() const noexcept { return temperature_; }

  void add(const HeadId& h, double value) {
    const std::size_t i = index(h);
    sum_[i] += value;
    ++count_[i];
  }

  /// Adds one value per head, given in canonical (layer, head) order.
  void add_all(std::span<const double> per_head) {
    require(per_head.size() == sum_.size(), ErrorCode::mismatch, "per-head score grid has the wrong size");
    for (std::size_t i = 0; i < per_head.size(); ++i) {
      sum_[i] += per_head[i];
      ++count_[i];
    }
  }

  void merge(const HeadScoreTable& other) {
    require(other.layers_ == layers_ && other.heads_ == heads_, ErrorCode::mismatch,
            "cannot merge head tables of different shapes");
    for (std::size_t i = 0; i < sum_.size(); ++i) {
      sum_[i] += other.sum_[i];
      count_[i] += other.count_[i];
    }
  }

  double sum(const HeadId& h) const { return sum_[index(h)]; }
  std::size_t count(const HeadId& h) const { return count_[index(h)]; }
  double mean(const HeadId& h) const {
    const std::size_t i = index(h);
    return count_[i] == 0 ? 0.0 : sum_[i] / static_cast<double>(count_[i]);
  }

  /// Every head ranked by mean score with the deterministic tie-break.
  OutputHeadSet ranking() const {
    OutputHeadSet out;
    for (const auto& h : all_heads(layers_, heads_)) out.ranked.push_back({h, mean(h)});
    std::stable_sort(out.ranked.begin(), out.ranked.end(),
                     [](const RankedHead& a, const RankedHead& b) { return a.mean_score > b.mean_score; });
    return out;
  }

  OutputHeadSet top_k(std::size_t k) const { return ranking().top(k); }

  /// CSV with columns layer, head, mean_score, count.
  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "layer,head,mean_score,count\n";
    for (const auto& h : all_heads(layers_, heads_))
      os << h.layer << ',' << h.head << ',' << mean(h) << ',' << count(h) << '\n';
    return os.str();
  }

 private:
  std::size_t index(const HeadId& h) const {
    require(h.layer < layers_ && h.head < heads_, ErrorCode::head_out_of_range,
            "head " + to_string(h) + " outside table");
    return h.layer * heads_ + h.head;
  }

  std::size_t layers_ = 0;
  std::size_t heads_ = 0;
  std::optional<double> temperature_;
  std::vector<double> sum_;
  std::vector<std::size_t> count_;
};

/// head_doc_score for every document of the layout, in layout order.
inline std::vector<double> head_doc_scores(const AttentionSlice& slice, const PromptLayout& layout,
                                           const HeadId& head) {
  slice.check_head(head);
  const std::size_t q = slice.dims().query_tokens;
  std::vector<double> out;
  out.reserve(layout.doc_spans.size());
  for (const auto& doc : layout.doc_spans) {
    double sum = 0.0;
    for (std::size_t t = 0; t < q; ++t) {
      auto row = slice.row(head, t);
      for (std::size_t j = doc.span.start; j < doc.span.end; ++j) sum += row[j];
    }
    out.push_back(sum / static_cast<double>(q));
  }
  return out;
}

/// Absolute attention mass on the gold document (the QR criterion).
inline double qr_score(const AttentionSlice& slice, const PromptLayout& layout, const HeadId& head,
                       std::string_view gold_doc_id) {
  return head_doc_score(slice, layout, head, gold_doc_id).score;
}

enum class DetectionCriterion { contrastive, qr };

namespace detail {

struct SampleIndices {
  std::size_t gold;
  std::vector<std::size_t> negatives;
};

inline SampleIndices locate(const PromptLayout& layout, const DetectionSample& sample) {
  auto index_of = [&](const std::string& id) {
    const DocSpan& d = layout.at(id);
    return static_cast<std::size_t>(&d - layout.doc_spans.data());
  };
  SampleIndices idx{index_of(sample.gold.id), {}};
  idx.negatives.reserve(sample.negatives.size());
  for (const auto& n : sample.negatives) idx.negatives.push_back(index_of(n.id));
  return idx;
}

inline std::vector<double> score_heads(const AttentionSlice& slice, const PromptLayout& layout,
                                       const DetectionSample& sample, DetectionCriterion criterion,
                                       double t) {
  check_consistent(slice, layout);
  require(layout.find(sample.gold.id) != nullptr, ErrorCode::unknown_document,
          "gold document '" + sample.gold.id + "' absent from prompt layout");
  const SampleIndices idx = locate(layout, sample);
  const auto& d = slice.dims();
  std::vector<double> out;
  out.reserve(d.layers * d.heads);
  std::vector<double> negs(idx.negatives.size());
  for (const auto& h : all_heads(d.layers, d.heads)) {
    const auto per_doc = head_doc_scores(slice, layout, h);
    if (criterion == DetectionCriterion::qr) {
      out.push_back(per_doc[idx.gold]);
      continue;
    }
    for (std::size_t i = 0; i < negs.size(); ++i) negs[i] = per_doc[idx.negatives[i]];
    out.push_back(core_score(per_doc[idx.gold], negs, t));
  }
  return out;
}

}  // namespace detail

/// Contrastive score of every head for one sample, in canonical
/// (layer, head) order. Instruction tokens never enter the document sums.
inline std::vector<double> score_sample(const AttentionSlice& slice, const PromptLayout& layout,
                                        const DetectionSample& sample, double t) {
  return detail::score_heads(slice, layout, sample, DetectionCriterion::contrastive, t);
}

inline std::vector<double> qr_score_sample(const AttentionSlice& slice, const PromptLayout& layout,
                                           const DetectionSample& sample) {
  return detail::score_heads(slice, layout, sample, DetectionCriterion::qr, 1.0);
}

struct DetectionConfig {
  DetectionCriterion criterion = DetectionCriterion::contrastive;
  std::optional<double> temperature;
  std::size_t top_k = 8;
  std::size_t positions = 5;
  PromptTemplate prompt_template;
  std::size_t threads = 1;
};

struct DetectionResult {
  OutputHeadSet heads;
  HeadScoreTable table;
};

/// Raised when a sample fails mid-detection; carries the table accumulated
/// from every (sample, position) pair that completed before the failure.
class DetectionAborted : public Error {
 public:
  DetectionAborted(ErrorCode code, const std::string& message, HeadScoreTable partial, std::size_t sample)
      : Error(code, message), partial_(std::move(partial)), sample_(sample) {}

  const HeadScoreTable& partial() const noexcept { return partial_; }
  std::size_t failed_sample() const noexcept { return sample_; }

 private:
  HeadScoreTable partial_;
  std::size_t sample_;
};

/// Scores every head on every (sample, gold position) pair and returns the
/// top_k heads by mean score. No contextual calibration is applied here.
inline DetectionResult detect_heads(const std::vector<DetectionSample>& samples, const AttentionProvider& provider,
                                    const Tokenizer& tokenizer, const DetectionConfig& config) {
  require(!samples.empty(), ErrorCode::empty_input, "no detection samples");
  require(config.positions >= 1, ErrorCode::config, "at least one gold position is required");
  const bool contrastive = config.criterion == DetectionCriterion::contrastive;
  require(!contrastive || config.temperature.has_value(), ErrorCode::config,
          "contrastive detection requires a temperature");
  const double t = contrastive ? *config.temperature : 1.0;
  require(t > 0.0, ErrorCode::config, "temperature must be positive");
  for (const auto& s : samples) {
    s.validate();
    require(config.positions <= s.document_count(), ErrorCode::config,
            "sample '" + s.query_id + "' has " + std::to_string(s.document_count()) + " documents, fewer than " +
                std::to_string(config.positions) + " gold positions");
  }

  const auto& model = provider.descriptor();
  const std::size_t tasks = samples.size() * config.positions;
  std::vector<std::vector<double>> results(tasks);
  std::vector<char> done(tasks, 0);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex failure_mutex;
  std::optional<std::size_t> failed_task;
  std::exception_ptr failure;

  auto worker = [&] {
    while (!stop.load()) {
      const std::size_t task = next.fetch_add(1);
      if (task >= tasks) return;
      try {
        const DetectionSample s = samples[task / config.positions].at_position(task % config.positions);
        Prompt prompt = build_prompt(s.documents(), s.query, config.prompt_template, tokenizer);
        prompt.layout.model = model.name;
        const AttendedPrompt attended =
            provider.attend({prompt.tokens, prompt.layout, model.num_layers});
        results[task] = detail::score_heads(attended.slice, attended.layout, s, config.criterion, t);
        done[task] = 1;
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failed_task || task < *failed_task) {
          failed_task = task;
          failure = std::current_exception();
        }
        stop = true;
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(config.threads, 1, tasks);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
  }

  // Reduce in task order so the means do not depend on scheduling.
  HeadScoreTable table(model.num_layers, model.num_heads,
                       contrastive ? std::optional<double>(t) : std::nullopt);
  for (std::size_t task = 0; task < tasks; ++task)
    if (done[task]) table.add_all(results[task]);

  if (failure) {
    const std::size_t sample = *failed_task / config.positions;
    try {
      std::rethrow_exception(failure);
    } catch (const Error& e) {
      throw DetectionAborted(e.code(), "sample " + std::to_string(sample) + ": " + e.what(), table, sample);
    } catch (const std::exception& e) {
      throw DetectionAborted(ErrorCode::provider_failure, "sample " + std::to_string(sample) + ": " + e.what(),
                             table, sample);
    }
  }
  return {table.top_k(config.top_k), std::move(table)};
}

}  // namespace corerank
