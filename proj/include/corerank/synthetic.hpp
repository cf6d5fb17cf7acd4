#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "corerank/attention.hpp"
#include "corerank/detail/hash.hpp"
#include "corerank/detection.hpp"
#include "corerank/error.hpp"
#include "corerank/eval.hpp"
#include "corerank/io.hpp"
#include "corerank/layout.hpp"

namespace corerank {

enum class NoiseModel { uniform, dirichlet };

struct PlantedHead {
  HeadId head;
  double fidelity = 1.0;  // expected share of each query row placed on the targets
};

/// A head that attends strongly to the target yet even more strongly to one
/// irrelevant "distractor" document.
struct AdversarialHead {
  HeadId head;
  double gold_mass = 0.45;
  double distractor_mass = 0.5;
};

/// Ground truth for the synthetic attention generator. `salience` scales a
/// query-dependent preference for arbitrary documents, shared by every
/// non-planted head; at 0 those heads carry pure noise.
struct PlantedSpec {
  std::size_t layers = 32;
  std::size_t heads = 32;
  std::vector<PlantedHead> planted;
  std::vector<AdversarialHead> adversarial;
  NoiseModel noise = NoiseModel::dirichlet;
  double alpha = 1.0;
  double salience = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    require(layers >= 1 && heads >= 1, ErrorCode::config, "planted grid must be at least 1x1");
    require(noise == NoiseModel::uniform || alpha > 0.0, ErrorCode::config, "Dirichlet alpha must be positive");
    require(salience >= 0.0 && std::isfinite(salience), ErrorCode::config, "salience must be finite and >= 0");
    std::vector<HeadId> seen;
    auto check = [&](const HeadId& h) {
      require(h.layer < layers && h.head < heads, ErrorCode::config, "planted head " + to_string(h) + " outside grid");
      require(std::find(seen.begin(), seen.end(), h) == seen.end(), ErrorCode::config,
              "head " + to_string(h) + " planted twice");
      seen.push_back(h);
    };
    for (const auto& p : planted) {
      check(p.head);
      require(p.fidelity > 0.0 && p.fidelity <= 1.0, ErrorCode::config,
              "fidelity of " + to_string(p.head) + " outside (0, 1]");
    }
    for (const auto& a : adversarial) {
      check(a.head);
      require(a.gold_mass >= 0.0 && a.distractor_mass >= 0.0 && a.gold_mass + a.distractor_mass <= 1.0,
              ErrorCode::config, "adversarial masses of " + to_string(a.head) + " must be >= 0 and sum to <= 1");
    }
  }

  std::vector<HeadId> planted_heads() const {
    std::vector<HeadId> out;
    for (const auto& p : planted) out.push_back(p.head);
    return out;
  }
};

inline nlohmann::json to_json(const PlantedSpec& s) {
  nlohmann::json planted = nlohmann::json::array();
  for (const auto& p : s.planted) planted.push_back({{"layer", p.head.layer}, {"head", p.head.head}, {"fidelity", p.fidelity}});
  nlohmann::json adversarial = nlohmann::json::array();
  for (const auto& a : s.adversarial)
    adversarial.push_back({{"layer", a.head.layer}, {"head", a.head.head}, {"gold_mass", a.gold_mass},
                           {"distractor_mass", a.distractor_mass}});
  return {{"layers", s.layers},
          {"heads", s.heads},
          {"planted", planted},
          {"adversarial", adversarial},
          {"noise", {{"model", s.noise == NoiseModel::uniform ? "uniform" : "dirichlet"}, {"alpha", s.alpha}}},
          {"salience", s.salience},
          {"seed", s.seed}};
}

inline PlantedSpec planted_spec_from_json(const nlohmann::json& j) {
  PlantedSpec s;
  try {
    s.layers = j.value("layers", s.layers);
    s.heads = j.value("heads", s.heads);
    for (const auto& p : j.value("planted", nlohmann::json::array()))
      s.planted.push_back({{p.at("layer").get<std::uint32_t>(), p.at("head").get<std::uint32_t>()},
                           p.value("fidelity", 1.0)});
    for (const auto& a : j.value("adversarial", nlohmann::json::array()))
      s.adversarial.push_back({{a.at("layer").get<std::uint32_t>(), a.at("head").get<std::uint32_t>()},
                               a.value("gold_mass", 0.45), a.value("distractor_mass", 0.5)});
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      const std::string model = n.value("model", "dirichlet");
      require(model == "uniform" || model == "dirichlet", ErrorCode::parse, "unknown noise model '" + model + "'");
      s.noise = model == "uniform" ? NoiseModel::uniform : NoiseModel::dirichlet;
      s.alpha = n.value("alpha", 1.0);
    }
    s.salience = j.value("salience", 0.0);
    s.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, std::string("planted spec: ") + e.what());
  }
  s.validate();
  return s;
}

namespace detail {

inline constexpr std::uint64_t non_document_tag = 0x6e6f6e646f63ULL;

inline double standard_normal(SplitMix64& rng) {
  const double u1 = rng.next_open01();
  const double u2 = rng.next_open01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

class NoiseSampler {
 public:
  explicit NoiseSampler(const PlantedSpec& spec) : spec_(spec) {}

  // Draws `n` unnormalized weights from a stream keyed by `key`.
  void fill(std::uint64_t key, double* out, std::size_t n) const {
    if (spec_.noise == NoiseModel::uniform) {
      std::fill(out, out + n, 1.0);
      return;
    }
    SplitMix64 rng(key);
    if (spec_.alpha == 1.0) {
      for (std::size_t i = 0; i < n; ++i) out[i] = -std::log(rng.next_open01());
      return;
    }
    std::gamma_distribution<double> gamma(spec_.alpha, 1.0);
    for (std::size_t i = 0; i < n; ++i) out[i] = std::max(gamma(rng), 1e-300);
  }

 private:
  const PlantedSpec& spec_;
};

}  // namespace detail

/// Generates attention for a prompt from the planted ground truth.
///
/// Noise weights for a document's tokens are keyed by (head, query row,
/// document id), so reordering documents moves their attention with them.
/// Planted heads put `fidelity` of every row uniformly on the target spans
/// and spread the rest over the other columns by the noise model. Without
/// targets (content-free queries, unjudged prompts) every head is a noise
/// head.
inline AttentionSlice synth_attention(const PlantedSpec& spec, const PromptLayout& layout,
                                      const std::vector<std::string>& targets, std::uint64_t query_key,
                                      std::size_t layer_limit) {
  spec.validate();
  require(layer_limit <= spec.layers, ErrorCode::config, "layer_limit beyond planted grid");
  if (auto why = layout_violation(layout)) fail(ErrorCode::dim_layout_mismatch, *why);
  const std::size_t C = layout.total_tokens;
  const std::size_t Q = layout.query_span.size();

  std::vector<char> is_target(C, 0);
  std::size_t target_width = 0;
  std::vector<std::uint64_t> doc_hash;
  for (const auto& d : layout.doc_spans) doc_hash.push_back(detail::fnv1a(d.doc_id));
  std::vector<std::size_t> target_docs;
  for (std::size_t i = 0; i < layout.doc_spans.size(); ++i) {
    if (std::find(targets.begin(), targets.end(), layout.doc_spans[i].doc_id) == targets.end()) continue;
    target_docs.push_back(i);
    for (std::size_t j = layout.doc_spans[i].span.start; j < layout.doc_spans[i].span.end; ++j) is_target[j] = 1;
    target_width += layout.doc_spans[i].span.size();
  }
  const bool has_targets = target_width > 0;

  // The distractor is a fixed pseudo-random non-target document per query.
  std::optional<std::size_t> distractor;
  std::uint64_t best = 0;
  for (std::size_t i = 0; has_targets && i < layout.doc_spans.size(); ++i) {
    if (std::find(target_docs.begin(), target_docs.end(), i) != target_docs.end()) continue;
    const std::uint64_t h = detail::combine(spec.seed, query_key, doc_hash[i], 0xd15ULL);
    if (!distractor || h < best) {
      distractor = i;
      best = h;
    }
  }

  // Shared per-document salience factors for this query.
  std::vector<double> salience(layout.doc_spans.size(), 1.0);
  if (spec.salience > 0.0) {
    for (std::size_t i = 0; i < salience.size(); ++i) {
      detail::SplitMix64 rng(detail::combine(spec.seed, query_key, doc_hash[i], 0x5a1ULL));
      salience[i] = std::exp(spec.salience * detail::standard_normal(rng));
    }
  }

  std::vector<std::size_t> other_columns;  // not inside any document
  {
    std::vector<char> in_doc(C, 0);
    for (const auto& d : layout.doc_spans)
      for (std::size_t j = d.span.start; j < d.span.end; ++j) in_doc[j] = 1;
    for (std::size_t j = 0; j < C; ++j)
      if (!in_doc[j]) other_columns.push_back(j);
  }

  const detail::NoiseSampler sampler(spec);
  std::vector<float> values(layer_limit * spec.heads * Q * C);
  std::vector<double> w(C), buf(C);

  for (std::uint32_t l = 0; l < layer_limit; ++l) {
    for (std::uint32_t h = 0; h < spec.heads; ++h) {
      const HeadId id{l, h};
      const PlantedHead* planted = nullptr;
      const AdversarialHead* adversarial = nullptr;
      for (const auto& p : spec.planted)
        if (p.head == id) planted = &p;
      for (const auto& a : spec.adversarial)
        if (a.head == id) adversarial = &a;
      const bool structured = has_targets && (planted || adversarial);
      const bool salient = !planted && !adversarial && spec.salience > 0.0;

      for (std::size_t t = 0; t < Q; ++t) {
        const std::uint64_t row_key = detail::combine(spec.seed, l, h, t);
        for (std::size_t i = 0; i < layout.doc_spans.size(); ++i) {
          const Span s = layout.doc_spans[i].span;
          sampler.fill(detail::combine(row_key, doc_hash[i]), w.data() + s.start, s.size());
          if (salient)
            for (std::size_t j = s.start; j < s.end; ++j) w[j] *= salience[i];
        }
        sampler.fill(detail::combine(row_key, detail::non_document_tag), buf.data(), other_columns.size());
        for (std::size_t k = 0; k < other_columns.size(); ++k) w[other_columns[k]] = buf[k];

        float* row = values.data() + ((static_cast<std::size_t>(l) * spec.heads + h) * Q + t) * C;
        if (!structured) {
          double total = 0.0;
          for (std::size_t j = 0; j < C; ++j) total += w[j];
          for (std::size_t j = 0; j < C; ++j) row[j] = static_cast<float>(w[j] / total);
          continue;
        }

        double gold_mass = planted ? planted->fidelity : adversarial->gold_mass;
        double distractor_mass = (adversarial && distractor) ? adversarial->distractor_mass : 0.0;
        std::vector<char> fixed(is_target.begin(), is_target.end());
        if (distractor_mass > 0.0)
          for (std::size_t j = layout.doc_spans[*distractor].span.start; j < layout.doc_spans[*distractor].span.end; ++j)
            fixed[j] = 2;
        double rest_total = 0.0;
        for (std::size_t j = 0; j < C; ++j)
          if (!fixed[j]) rest_total += w[j];
        const double rest_mass = 1.0 - gold_mass - distractor_mass;
        const double distractor_width =
            distractor_mass > 0.0 ? static_cast<double>(layout.doc_spans[*distractor].span.size()) : 1.0;
        for (std::size_t j = 0; j < C; ++j) {
          double v = 0.0;
          if (fixed[j] == 1)
            v = gold_mass / static_cast<double>(target_width);
          else if (fixed[j] == 2)
            v = distractor_mass / distractor_width;
          else if (rest_total > 0.0)
            v = rest_mass * w[j] / rest_total;
          row[j] = static_cast<float>(v);
        }
      }
    }
  }
  return AttentionSlice({spec.layers, spec.heads, Q, C}, layer_limit, std::move(values));
}

/// Single-gold convenience form.
inline AttentionSlice synth_attention(const PlantedSpec& spec, const PromptLayout& layout, const std::string& gold_doc_id,
                                      std::uint64_t query_key = 0) {
  require(layout.find(gold_doc_id) != nullptr, ErrorCode::unknown_document,
          "gold document '" + gold_doc_id + "' absent from layout");
  return synth_attention(spec, layout, {gold_doc_id}, query_key, spec.layers);
}

/// Attention provider backed by synth_attention. Targets are looked up by
/// the prompt's query text; unknown queries (including the content-free
/// query) get none.
class SyntheticProvider final : public AttentionProvider {
 public:
  using TargetMap = std::unordered_map<std::string, std::vector<std::string>>;

  SyntheticProvider(PlantedSpec spec, TargetMap targets)
      : spec_(std::move(spec)), targets_(std::move(targets)),
        descriptor_{"synthetic-planted", spec_.layers, spec_.heads, "any"} {
    spec_.validate();
  }

  const ModelDescriptor& descriptor() const override { return descriptor_; }
  bool supports_layer_limit() const override { return true; }
  const PlantedSpec& spec() const noexcept { return spec_; }

  AttendedPrompt attend(const AttentionRequest& request) const override {
    static const std::vector<std::string> none;
    auto it = targets_.find(request.layout.query);
    const auto& targets = it == targets_.end() ? none : it->second;
    return {synth_attention(spec_, request.layout, targets, detail::fnv1a(request.layout.query), request.layer_limit),
            request.layout};
  }

 private:
  PlantedSpec spec_;
  TargetMap targets_;
  ModelDescriptor descriptor_;
};

inline SyntheticProvider::TargetMap targets_from_samples(const std::vector<DetectionSample>& samples) {
  SyntheticProvider::TargetMap out;
  for (const auto& s : samples) out[s.query].push_back(s.gold.id);
  return out;
}

/// Relevant (grade > 0) documents of every judged query, keyed by query text.
inline SyntheticProvider::TargetMap targets_from_qrels(const std::vector<Query>& queries, const Qrels& qrels) {
  SyntheticProvider::TargetMap out;
  for (const auto& q : queries) {
    auto it = qrels.find(q.id);
    if (it == qrels.end()) continue;
    for (const auto& [doc, grade] : it->second)
      if (grade > 0) out[q.text].push_back(doc);
  }
  return out;
}

/// Heads published for Mistral-7B, used as the default planted set.
inline constexpr const char* mistral_core_heads = "(15-21), (15-1), (16-12), (15-7), (9-26), (12-11), (12-7), (18-0)";

struct SyntheticCorpusSpec {
  std::size_t queries = 200;
  std::size_t depth = 40;
  std::size_t detection_samples = 100;
  std::size_t negatives = 49;
  std::size_t doc_words = 6;
  std::size_t query_words = 3;
  std::size_t vocabulary = 5000;
  std::uint64_t seed = 7;
};

struct SyntheticBundle {
  Dataset dataset;
  std::vector<DetectionSample> detection;
};

/// Random-word BEIR-style dataset with one relevant document per query
/// (placed at a random candidate rank) plus disjoint detection samples.
inline SyntheticBundle make_synthetic_bundle(const SyntheticCorpusSpec& spec) {
  require(spec.depth >= 2 && spec.negatives >= 1 && spec.doc_words >= 1 && spec.query_words >= 1,
          ErrorCode::config, "synthetic corpus dimensions must be positive");
  detail::SplitMix64 rng(detail::combine(spec.seed, 0x5eedULL));
  std::unordered_set<std::string> used_texts;
  auto words = [&](std::size_t n) {
    for (;;) {
      std::string s;
      for (std::size_t i = 0; i < n; ++i) {
        if (i) s += ' ';
        s += "w" + std::to_string(detail::uniform_index(rng, spec.vocabulary));
      }
      if (used_texts.insert(s).second) return s;
    }
  };

  SyntheticBundle b;
  b.dataset.name = "synthetic";
  std::size_t doc_counter = 0;
  auto new_doc = [&] {
    Document d{"d" + std::to_string(doc_counter++), words(spec.doc_words)};
    b.dataset.corpus.emplace(d.id, d);
    return d;
  };

  for (std::size_t q = 0; q < spec.queries; ++q) {
    Query query{"q" + std::to_string(q), words(spec.query_words)};
    const std::size_t gold_rank = detail::uniform_index(rng, spec.depth);
    CandidateList list{query.id, {}};
    for (std::size_t r = 0; r < spec.depth; ++r) {
      Document d = new_doc();
      if (r == gold_rank) b.dataset.qrels[query.id][d.id] = 1;
      list.candidates.push_back({d.id, 1.0 - static_cast<double>(r) / static_cast<double>(spec.depth)});
    }
    b.dataset.queries.push_back(query);
    b.dataset.candidates.push_back(std::move(list));
  }
  for (std::size_t s = 0; s < spec.detection_samples; ++s) {
    DetectionSample sample;
    sample.query_id = "det" + std::to_string(s);
    sample.query = words(spec.query_words);
    sample.gold = new_doc();
    for (std::size_t n = 0; n < spec.negatives; ++n) sample.negatives.push_back(new_doc());
    b.detection.push_back(std::move(sample));
  }
  return b;
}

inline nlohmann::json sample_to_json(const DetectionSample& s) {
  nlohmann::json negs = nlohmann::json::array();
  for (const auto& n : s.negatives) negs.push_back({{"id", n.id}, {"text", n.text}});
  nlohmann::json j = {{"query_id", s.query_id}, {"query", s.query}, {"gold_id", s.gold.id},
                      {"gold_text", s.gold.text}, {"negatives", negs}};
  if (s.gold_similarity) j["gold_similarity"] = *s.gold_similarity;
  return j;
}

inline DetectionSample sample_from_json(const nlohmann::json& j) {
  DetectionSample s;
  s.query_id = j.value("query_id", "");
  s.query = j.at("query").get<std::string>();
  s.gold = {j.at("gold_id").get<std::string>(), j.at("gold_text").get<std::string>()};
  for (const auto& n : j.at("negatives")) s.negatives.push_back({n.at("id").get<std::string>(), n.at("text").get<std::string>()});
  if (j.contains("gold_similarity")) s.gold_similarity = j.at("gold_similarity").get<double>();
  return s;
}

inline std::vector<DetectionSample> load_samples(const std::filesystem::path& path) {
  std::vector<DetectionSample> out;
  io::for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    out.push_back(sample_from_json(j));
    if (out.back().query_id.empty()) out.back().query_id = "line" + std::to_string(line);
  });
  return out;
}

/// Writes corpus.jsonl, queries.jsonl, qrels.tsv and candidates.jsonl.
inline void write_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::vector<std::string> ids;
  for (const auto& [id, doc] : d.corpus) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  std::string corpus;
  for (const auto& id : ids)
    corpus += nlohmann::json{{"_id", id}, {"title", ""}, {"text", d.corpus.at(id).text}}.dump() + "\n";
  std::string queries;
  for (const auto& q : d.queries) queries += nlohmann::json{{"_id", q.id}, {"text", q.text}}.dump() + "\n";
  std::string qrels = "query-id\tcorpus-id\tscore\n";
  for (const auto& [qid, judged] : d.qrels)
    for (const auto& [doc, grade] : judged) qrels += qid + "\t" + doc + "\t" + std::to_string(grade) + "\n";
  std::string cands;
  for (const auto& list : d.candidates) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : list.candidates) arr.push_back({{"doc_id", c.doc_id}, {"score", c.score}});
    cands += nlohmann::json{{"query_id", list.query_id}, {"candidates", arr}}.dump() + "\n";
  }
  io::write_file_atomic(dir / "corpus.jsonl", corpus);
  io::write_file_atomic(dir / "queries.jsonl", queries);
  io::write_file_atomic(dir / "qrels.tsv", qrels);
  io::write_file_atomic(dir / "candidates.jsonl", cands);
}

}  // namespace corerank
