#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "corerank/corerank.hpp"

namespace {

using namespace corerank;
namespace fs = std::filesystem;
using json = nlohmann::json;

void log(const std::string& msg) { std::cerr << "corerank: " << msg << '\n'; }

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::config:
    case ErrorCode::head_out_of_range:
    case ErrorCode::layer_not_materialized:
    case ErrorCode::unsupported:
      return 2;
    case ErrorCode::provider_failure:
      return 3;
    default:
      return 1;
  }
}

std::size_t thread_budget() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CORE_RANK_THREADS")) {
    try {
      const long cap = std::stol(env);
      require(cap >= 1, ErrorCode::config, "CORE_RANK_THREADS must be at least 1");
      n = std::min(n, static_cast<std::size_t>(cap));
    } catch (const std::logic_error&) {
      fail(ErrorCode::config, std::string("CORE_RANK_THREADS is not a number: '") + env + "'");
    }
  }
  return n;
}

PlantedSpec default_planted(std::uint64_t seed) {
  PlantedSpec spec;
  for (const auto& r : parse_head_list(mistral_core_heads).ranked) spec.planted.push_back({r.head, 0.5});
  spec.seed = seed;
  return spec;
}

struct ProviderOptions {
  std::string provider = "synthetic";
  std::string planted;
  std::string tiny_spec;
};

void add_provider_options(CLI::App* sub, ProviderOptions& o) {
  sub->add_option("--provider", o.provider, "synthetic | tiny | dumps:DIR")->capture_default_str();
  sub->add_option("--planted", o.planted, "planted-head spec JSON for the synthetic provider");
  sub->add_option("--tiny-spec", o.tiny_spec, "tiny model spec JSON");
}

struct Backend {
  std::unique_ptr<AttentionProvider> provider;
  std::unique_ptr<Tokenizer> tokenizer;
  json description;
};

Backend make_backend(const ProviderOptions& o, SyntheticProvider::TargetMap targets) {
  Backend b;
  if (o.provider == "synthetic") {
    const PlantedSpec spec = o.planted.empty() ? default_planted(0) : planted_spec_from_json(io::read_json(o.planted));
    b.description = {{"provider", "synthetic"}, {"planted", to_json(spec)}};
    b.provider = std::make_unique<SyntheticProvider>(spec, std::move(targets));
    b.tokenizer = std::make_unique<WhitespaceTokenizer>();
  } else if (o.provider == "tiny") {
    const TinyModelSpec spec = o.tiny_spec.empty() ? TinyModelSpec{} : tiny_spec_from_json(io::read_json(o.tiny_spec));
    b.description = {{"provider", "tiny"}, {"tiny_spec", to_json(spec)}};
    b.provider = std::make_unique<TinyModelProvider>(spec);
    b.tokenizer = std::make_unique<WhitespaceTokenizer>(spec.vocab);
  } else if (o.provider.rfind("dumps:", 0) == 0) {
    const std::string dir = o.provider.substr(6);
    b.description = {{"provider", "dumps"}, {"dir", dir}};
    b.provider = std::make_unique<DumpProvider>(dir);
    b.tokenizer = std::make_unique<WhitespaceTokenizer>();
  } else {
    fail(ErrorCode::config, "unknown provider '" + o.provider + "' (expected synthetic, tiny or dumps:DIR)");
  }
  return b;
}

PromptTemplate load_template(const std::string& path) {
  return path.empty() ? PromptTemplate{} : template_from_json(io::read_json(path));
}

std::string join_lines(const std::vector<json>& lines) {
  std::string out;
  for (const auto& j : lines) out += j.dump() + "\n";
  return out;
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// Everything needed to rerun a command, written next to its outputs.
struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config;
  json settings = json::object();
  json seeds = json::object();
  json inputs = json::array();
  json outputs = json::array();
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  void write(const fs::path& path) const {
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    const json j = {{"command", command},        {"argv", argv},       {"cwd", fs::current_path().string()},
                    {"config", config},          {"settings", settings}, {"seeds", seeds},
                    {"inputs", inputs},          {"outputs", outputs}, {"version", corerank::version},
                    {"finished_at", utc_now()},  {"duration_seconds", seconds}};
    io::write_file_atomic(path, j.dump(2) + "\n");
  }
};

fs::path manifest_for_file(const fs::path& out) {
  fs::path p = out;
  p += ".manifest.json";
  return p;
}

// ---------------------------------------------------------------- mine

struct MineOptions {
  std::string queries, candidates, out;
  std::size_t top_n = 100, n_neg = 49;
  std::uint64_t seed = 0;
};

int cmd_mine(const MineOptions& o, Manifest& m) {
  std::unordered_map<std::string, std::string> query_text;
  for (const auto& q : load_queries(o.queries)) query_text[q.id] = q.text;

  std::vector<json> lines;
  std::size_t skipped = 0;
  io::for_each_jsonl(o.candidates, [&](const json& j, std::size_t line) {
    const std::string where = o.candidates + ":" + std::to_string(line);
    const std::string qid = j.at("query_id").get<std::string>();
    auto qt = query_text.find(qid);
    require(qt != query_text.end(), ErrorCode::unknown_document, where + ": query '" + qid + "' not in queries file");
    const auto& g = j.at("gold");
    DetectionSample sample;
    sample.query_id = qid;
    sample.query = qt->second;
    sample.gold = {g.at("id").get<std::string>(), g.at("text").get<std::string>()};
    const double gold_sim = g.at("similarity").get<double>();
    sample.gold_similarity = gold_sim;

    std::vector<ScoredCandidate> cands;
    for (const auto& c : j.at("candidates")) {
      ScoredCandidate sc{c.contains("id") ? c.at("id").get<std::string>() : c.at("doc_id").get<std::string>(),
                         c.at("text").get<std::string>(), c.at("similarity").get<double>()};
      if (sc.id != sample.gold.id) cands.push_back(std::move(sc));  // retrievers usually return the gold too
    }
    MiningConfig config{o.top_n, o.n_neg, detail::combine(o.seed, detail::fnv1a(qid))};
    try {
      sample.negatives = mine_hard_negatives(sample.gold, cands, gold_sim, config);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::insufficient_survivors) fail(e.code(), where + ": " + e.what());
      log("skipping query '" + qid + "' (" + where + "): " + e.what());
      ++skipped;
      return;
    }
    lines.push_back(sample_to_json(sample));
  });
  io::write_file_atomic(o.out, join_lines(lines));
  log("wrote " + std::to_string(lines.size()) + " samples to " + o.out + ", skipped " + std::to_string(skipped));
  m.settings = {{"top_n", o.top_n}, {"n_neg", o.n_neg}, {"samples", lines.size()}, {"skipped", skipped}};
  m.seeds = {{"seed", o.seed}};
  m.inputs = {o.queries, o.candidates};
  m.outputs = {o.out};
  m.write(manifest_for_file(o.out));
  return 0;
}

// ---------------------------------------------------------------- detect

struct DetectOptions {
  std::string samples, out, table, criterion = "core", prompt_template;
  ProviderOptions provider;
  double temperature = temperature_sharp;
  std::size_t top_k = 8, positions = 5;
};

int cmd_detect(const DetectOptions& o, Manifest& m) {
  const auto samples = load_samples(o.samples);
  Backend b = make_backend(o.provider, targets_from_samples(samples));
  DetectionConfig config;
  require(o.criterion == "core" || o.criterion == "qr", ErrorCode::config,
          "unknown criterion '" + o.criterion + "' (expected core or qr)");
  config.criterion = o.criterion == "core" ? DetectionCriterion::contrastive : DetectionCriterion::qr;
  if (config.criterion == DetectionCriterion::contrastive) config.temperature = o.temperature;
  config.top_k = o.top_k;
  config.positions = o.positions;
  config.prompt_template = load_template(o.prompt_template);
  config.threads = thread_budget();

  fs::path table_path = o.table;
  if (table_path.empty()) table_path = fs::path(o.out).replace_extension(".csv");
  m.settings = {{"criterion", o.criterion}, {"top_k", o.top_k}, {"positions", o.positions},
                {"backend", b.description}, {"samples", samples.size()}};
  if (config.temperature) m.settings["temperature"] = *config.temperature;
  m.inputs = {o.samples};
  m.outputs = {o.out, table_path.string()};
  if (b.description.contains("planted")) m.seeds = {{"planted", b.description["planted"]["seed"]}};
  if (b.description.contains("tiny_spec")) m.seeds = {{"tiny_model", b.description["tiny_spec"]["seed"]}};

  DetectionResult result;
  try {
    result = detect_heads(samples, *b.provider, *b.tokenizer, config);
  } catch (const DetectionAborted& e) {
    fs::path partial = table_path;
    partial += ".partial";
    io::write_file_atomic(partial, e.partial().to_csv());
    log("detection aborted at sample " + std::to_string(e.failed_sample()) + "; partial table in " + partial.string());
    throw;
  }
  io::write_file_atomic(o.out, to_json(result.heads).dump(2) + "\n");
  io::write_file_atomic(table_path, result.table.to_csv());
  std::cout << to_compact(result.heads) << '\n';
  m.write(manifest_for_file(o.out));
  return 0;
}

// ---------------------------------------------------------------- rerank

struct RerankOptions {
  std::string dataset, candidates, heads, out, prune = "off", name, prompt_template;
  ProviderOptions provider;
  bool all_heads = false, no_calibrate = false;
  std::size_t depth = default_depth;
};

int cmd_rerank(const RerankOptions& o, Manifest& m) {
  const Dataset dataset = load_dataset(o.dataset, o.candidates.empty() ? std::nullopt : std::optional<fs::path>(o.candidates),
                                       o.depth);
  Backend b = make_backend(o.provider, targets_from_qrels(dataset.queries, dataset.qrels));
  const auto& model = b.provider->descriptor();

  RerankConfig config = o.all_heads ? RerankConfig::all_heads()
                                    : RerankConfig::with_heads(parse_head_list(io::read_file(o.heads)),
                                                               fs::path(o.heads).stem().string());
  if (!o.name.empty()) config.name = o.name;
  config.calibrate = !o.no_calibrate;
  config.prompt_template = load_template(o.prompt_template);
  if (o.prune == "auto") {
    config.layer_limit = o.all_heads ? model.num_layers : pruning_cutoff(config.head_set);
  } else if (o.prune.rfind("layers:", 0) == 0) {
    try {
      config.layer_limit = std::stoul(o.prune.substr(7));
    } catch (const std::logic_error&) {
      fail(ErrorCode::config, "bad --prune value '" + o.prune + "'");
    }
  } else {
    require(o.prune == "off", ErrorCode::config, "--prune expects off, auto or layers:N, got '" + o.prune + "'");
  }
  config.validate(model);

  const std::size_t layer_limit = config.layer_limit.value_or(model.num_layers);
  m.settings = {{"name", config.name},
                {"strategy", to_string(config.strategy)},
                {"head_set", config.strategy == Strategy::head_set ? head_list_json(config.head_set) : json(nullptr)},
                {"calibrate", config.calibrate},
                {"prune", o.prune},
                {"layer_limit", layer_limit},
                {"model_layers", model.num_layers},
                {"depth", o.depth},
                {"backend", b.description}};
  if (b.description.contains("planted")) m.seeds = {{"planted", b.description["planted"]["seed"]}};
  if (b.description.contains("tiny_spec")) m.seeds = {{"tiny_model", b.description["tiny_spec"]["seed"]}};
  m.inputs = {o.dataset};
  if (!o.candidates.empty()) m.inputs.push_back(o.candidates);
  if (!o.heads.empty()) m.inputs.push_back(o.heads);
  m.outputs = {o.out};

  const auto outputs = rerank_dataset(dataset, *b.provider, *b.tokenizer, {config}, thread_budget());
  io::write_file_atomic(o.out, join_lines(outputs.at(0).records));
  log("re-ranked " + std::to_string(outputs.at(0).records.size()) + " queries with " + config.name + " (layer_limit " +
      std::to_string(layer_limit) + ")");
  m.write(manifest_for_file(o.out));
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
  std::vector<std::string> runs;
  std::string qrels, candidates, out, per_query, dataset_name;
  std::size_t k = default_ndcg_k, depth = default_depth;
};

int cmd_eval(const EvalOptions& o, Manifest& m) {
  const Qrels qrels = load_qrels(o.qrels);
  std::optional<RunRankings> baseline;
  if (!o.candidates.empty()) baseline = baseline_rankings(load_candidates(o.candidates, o.depth));
  require(baseline || !o.runs.empty(), ErrorCode::empty_input, "nothing to evaluate: no run files and no candidates");
  std::vector<std::pair<std::string, RunRankings>> runs;
  for (const auto& r : o.runs) runs.emplace_back(fs::path(r).stem().string(), load_run(r));
  std::string name = o.dataset_name;
  if (name.empty()) {
    const fs::path parent = fs::absolute(o.qrels).parent_path();
    name = parent.filename() == "qrels" ? parent.parent_path().filename().string() : parent.filename().string();
  }
  const EvalReport report = evaluate_rankings(name, qrels, baseline, runs, o.k);
  io::write_file_atomic(o.out, report.to_csv());
  if (!o.per_query.empty()) io::write_file_atomic(o.per_query, report.to_jsonl());
  std::cout << report.to_csv();

  m.settings = {{"k", o.k}, {"depth", o.depth}, {"dataset", name}};
  m.inputs = json(o.runs);
  m.inputs.push_back(o.qrels);
  if (!o.candidates.empty()) m.inputs.push_back(o.candidates);
  m.outputs = {o.out};
  if (!o.per_query.empty()) m.outputs.push_back(o.per_query);
  m.write(manifest_for_file(o.out));
  return 0;
}

// ---------------------------------------------------------------- inspect

int cmd_inspect(const std::string& path, std::size_t show) {
  const auto [slice, layout] = read_dump(path);
  const auto& d = slice.dims();
  const auto violations = validate_slice(slice);
  json out = {{"file", path},
              {"model", layout.model},
              {"query", layout.query},
              {"layers", d.layers},
              {"heads", d.heads},
              {"query_tokens", d.query_tokens},
              {"context", d.context},
              {"layer_limit", slice.layer_limit()},
              {"documents", layout.doc_spans.size()},
              {"violations", violations.size()}};
  json first = json::array();
  for (std::size_t i = 0; i < std::min(show, violations.size()); ++i) first.push_back(violations[i].describe());
  if (!violations.empty()) out["first_violations"] = first;
  std::cout << out.dump(2) << '\n';
  return violations.empty() ? 0 : 1;
}

// ---------------------------------------------------------------- prompts

struct PromptsOptions {
  std::string dataset, candidates, out, prompt_template, template_out;
  std::size_t depth = default_depth;
  bool no_calibrate = false;
};

int cmd_prompts(const PromptsOptions& o, Manifest& m) {
  const Dataset dataset = load_dataset(o.dataset, o.candidates.empty() ? std::nullopt : std::optional<fs::path>(o.candidates),
                                       o.depth);
  const PromptTemplate tmpl = load_template(o.prompt_template);
  std::vector<json> lines;
  for (const auto& r : dataset_prompts(dataset, tmpl, !o.no_calibrate)) lines.push_back(to_json(r));
  io::write_file_atomic(o.out, join_lines(lines));
  m.outputs = {o.out};
  if (!o.template_out.empty()) {
    io::write_file_atomic(o.template_out, to_json(tmpl).dump(2) + "\n");
    m.outputs.push_back(o.template_out);
  }
  m.settings = {{"depth", o.depth}, {"calibration_prompts", !o.no_calibrate}, {"prompts", lines.size()}};
  m.inputs = {o.dataset};
  m.write(manifest_for_file(o.out));
  return 0;
}

// ---------------------------------------------------------------- synth

struct SynthOptions {
  std::string out;
  SyntheticCorpusSpec spec;
};

int cmd_synth(const SynthOptions& o, Manifest& m) {
  const auto bundle = make_synthetic_bundle(o.spec);
  const fs::path dir = o.out;
  write_dataset(bundle.dataset, dir);
  std::vector<json> samples;
  for (const auto& s : bundle.detection) samples.push_back(sample_to_json(s));
  io::write_file_atomic(dir / "detection.jsonl", join_lines(samples));
  io::write_file_atomic(dir / "planted.json", to_json(default_planted(o.spec.seed)).dump(2) + "\n");
  m.settings = {{"queries", o.spec.queries},   {"depth", o.spec.depth},         {"detection_samples", o.spec.detection_samples},
                {"negatives", o.spec.negatives}, {"doc_words", o.spec.doc_words}, {"query_words", o.spec.query_words},
                {"vocabulary", o.spec.vocabulary}};
  m.seeds = {{"seed", o.spec.seed}};
  m.outputs = {dir.string()};
  m.write(dir / "manifest.json");
  return 0;
}

// ---------------------------------------------------------------- export

struct ExportOptions {
  std::string prompts, out, dataset, prompt_template;
  ProviderOptions provider{"tiny", "", ""};
  std::optional<std::size_t> layer_limit;
};

int cmd_export(const ExportOptions& o, Manifest& m) {
  require(o.provider.provider == "tiny" || o.provider.provider == "synthetic", ErrorCode::config,
          "export supports the tiny and synthetic providers");
  SyntheticProvider::TargetMap targets;
  if (!o.dataset.empty()) {
    const Dataset d = load_dataset(o.dataset);
    targets = targets_from_qrels(d.queries, d.qrels);
  }
  Backend b = make_backend(o.provider, std::move(targets));
  const PromptTemplate tmpl = load_template(o.prompt_template);
  const std::size_t limit = o.layer_limit.value_or(b.provider->descriptor().num_layers);
  require(limit >= 1 && limit <= b.provider->descriptor().num_layers, ErrorCode::config,
          "--layer-limit " + std::to_string(limit) + " outside the model's layers");
  const auto requests = load_prompt_requests(o.prompts);
  for (const auto& r : requests) export_dump(r, *b.provider, *b.tokenizer, tmpl, o.out, limit);
  log("exported " + std::to_string(requests.size()) + " dumps to " + o.out);
  m.settings = {{"layer_limit", limit}, {"backend", b.description}, {"prompts", requests.size()}};
  m.inputs = {o.prompts};
  m.outputs = {o.out};
  m.write(fs::path(o.out) / "manifest.json");
  return 0;
}

int run(const std::vector<std::string>& args);

int cmd_replay(const std::string& path) {
  const json j = io::read_json(path);
  const auto argv = j.at("argv").get<std::vector<std::string>>();
  require(!argv.empty() && argv.front() != "replay", ErrorCode::parse, path + ": manifest holds no replayable command");
  if (j.value("version", "") != corerank::version)
    log("manifest written by version " + j.value("version", "?") + ", replaying with " + corerank::version);
  const fs::path previous = fs::current_path();
  fs::current_path(j.at("cwd").get<std::string>());
  const int code = run(argv);
  fs::current_path(previous);
  return code;
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"List-wise document re-ranking from LLM attention heads"};
  app.set_version_flag("--version", std::string(corerank::version));
  app.set_config("--config", "", "TOML/INI file with option defaults; explicit flags win");
  app.require_subcommand(1);

  MineOptions mine;
  auto* s_mine = app.add_subcommand("mine", "Sample hard negatives into detection samples");
  s_mine->add_option("--queries", mine.queries, "queries JSONL ({_id, text})")->required()->check(CLI::ExistingFile);
  s_mine->add_option("--candidates-with-sims", mine.candidates,
                     "JSONL of {query_id, gold: {id, text, similarity}, candidates: [{id, text, similarity}]}")
      ->required()
      ->check(CLI::ExistingFile);
  s_mine->add_option("--out", mine.out, "detection samples JSONL")->required();
  s_mine->add_option("--top-n", mine.top_n, "mining pool size")->capture_default_str();
  s_mine->add_option("--n-neg", mine.n_neg, "negatives per sample")->capture_default_str();
  s_mine->add_option("--seed", mine.seed, "sampling seed")->capture_default_str();

  DetectOptions detect;
  auto* s_detect = app.add_subcommand("detect", "Score every head and select the top-k");
  s_detect->add_option("--samples", detect.samples, "detection samples JSONL")->required()->check(CLI::ExistingFile);
  add_provider_options(s_detect, detect.provider);
  s_detect->add_option("--criterion", detect.criterion, "core | qr")->capture_default_str();
  s_detect->add_option("--temperature", detect.temperature, "contrastive temperature")->capture_default_str();
  s_detect->add_option("--top-k", detect.top_k, "heads to select")->capture_default_str();
  s_detect->add_option("--positions", detect.positions, "gold positions per sample")->capture_default_str();
  s_detect->add_option("--template", detect.prompt_template, "prompt template JSON");
  s_detect->add_option("--out", detect.out, "head list JSON")->required();
  s_detect->add_option("--table", detect.table, "full score table CSV (default: --out with .csv)");

  RerankOptions rr;
  auto* s_rerank = app.add_subcommand("rerank", "Re-rank every candidate list of a dataset");
  s_rerank->add_option("--dataset", rr.dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
  s_rerank->add_option("--candidates", rr.candidates, "candidates JSONL (default: dataset/candidates.jsonl)");
  s_rerank->add_option("--depth", rr.depth, "candidates re-ranked per query")->capture_default_str();
  auto* heads_opt = s_rerank->add_option("--heads", rr.heads, "head list (JSON or compact)")->check(CLI::ExistingFile);
  auto* all_opt = s_rerank->add_flag("--all-heads", rr.all_heads, "aggregate every head");
  heads_opt->excludes(all_opt);
  s_rerank->add_flag("--no-calibrate", rr.no_calibrate, "skip content-free calibration");
  s_rerank->add_option("--prune", rr.prune, "off | auto | layers:N")->capture_default_str();
  s_rerank->add_option("--name", rr.name, "configuration name in run records");
  s_rerank->add_option("--template", rr.prompt_template, "prompt template JSON");
  add_provider_options(s_rerank, rr.provider);
  s_rerank->add_option("--out", rr.out, "run JSONL")->required();

  EvalOptions ev;
  auto* s_eval = app.add_subcommand("eval", "nDCG@k report over run files");
  s_eval->add_option("--run", ev.runs, "run JSONL files; names come from the file stems");
  s_eval->add_option("--qrels", ev.qrels, "qrels TSV")->required()->check(CLI::ExistingFile);
  s_eval->add_option("--candidates", ev.candidates, "candidates JSONL for the baseline row");
  s_eval->add_option("--depth", ev.depth, "baseline candidate depth")->capture_default_str();
  s_eval->add_option("--k", ev.k, "nDCG cutoff")->capture_default_str();
  s_eval->add_option("--dataset-name", ev.dataset_name, "dataset column (default: qrels directory name)");
  s_eval->add_option("--per-query", ev.per_query, "per-query JSONL");
  s_eval->add_option("--out", ev.out, "report CSV")->required();

  std::string inspect_path;
  std::size_t inspect_show = 10;
  auto* s_inspect = app.add_subcommand("inspect", "Print a dump header and validate its attention");
  s_inspect->add_option("dump", inspect_path, "dump file")->required()->check(CLI::ExistingFile);
  s_inspect->add_option("--show", inspect_show, "violations to list")->capture_default_str();

  PromptsOptions pr;
  auto* s_prompts = app.add_subcommand("prompts", "Write the prompts an external exporter must dump");
  s_prompts->add_option("--dataset", pr.dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
  s_prompts->add_option("--candidates", pr.candidates, "candidates JSONL");
  s_prompts->add_option("--depth", pr.depth, "candidates per query")->capture_default_str();
  s_prompts->add_option("--template", pr.prompt_template, "prompt template JSON");
  s_prompts->add_option("--template-out", pr.template_out, "write the effective template JSON here");
  s_prompts->add_flag("--no-calibrate", pr.no_calibrate, "omit content-free prompts");
  s_prompts->add_option("--out", pr.out, "prompts JSONL")->required();

  SynthOptions sy;
  auto* s_synth = app.add_subcommand("synth", "Generate a synthetic dataset and detection samples");
  s_synth->add_option("--out", sy.out, "output directory")->required();
  s_synth->add_option("--queries", sy.spec.queries)->capture_default_str();
  s_synth->add_option("--depth", sy.spec.depth)->capture_default_str();
  s_synth->add_option("--samples", sy.spec.detection_samples)->capture_default_str();
  s_synth->add_option("--negatives", sy.spec.negatives)->capture_default_str();
  s_synth->add_option("--seed", sy.spec.seed)->capture_default_str();

  ExportOptions ex;
  std::size_t export_limit = 0;
  auto* s_export = app.add_subcommand("export", "Dump attention for a prompts file with a built-in model");
  s_export->add_option("--prompts", ex.prompts, "prompts JSONL ({query_id, query, docs})")->required()->check(CLI::ExistingFile);
  add_provider_options(s_export, ex.provider);
  s_export->add_option("--dataset", ex.dataset, "dataset whose qrels drive the synthetic provider");
  s_export->add_option("--template", ex.prompt_template, "prompt template JSON");
  auto* limit_opt = s_export->add_option("--layer-limit", export_limit, "layers to compute");
  s_export->add_option("--out", ex.out, "dump directory")->required();

  std::string replay_path;
  auto* s_replay = app.add_subcommand("replay", "Rerun a command from its manifest");
  s_replay->add_option("manifest", replay_path, "manifest JSON")->required()->check(CLI::ExistingFile);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ValidationError& e) {
    app.exit(e);  // missing or unreadable input paths
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  Manifest manifest;
  manifest.argv = args;
  manifest.config = app.config_to_str(true, false);
  try {
    if (s_mine->parsed()) {
      manifest.command = "mine";
      return cmd_mine(mine, manifest);
    }
    if (s_detect->parsed()) {
      manifest.command = "detect";
      return cmd_detect(detect, manifest);
    }
    if (s_rerank->parsed()) {
      manifest.command = "rerank";
      require(rr.all_heads || !rr.heads.empty(), ErrorCode::config, "rerank needs --heads FILE or --all-heads");
      return cmd_rerank(rr, manifest);
    }
    if (s_eval->parsed()) {
      manifest.command = "eval";
      return cmd_eval(ev, manifest);
    }
    if (s_inspect->parsed()) return cmd_inspect(inspect_path, inspect_show);
    if (s_prompts->parsed()) {
      manifest.command = "prompts";
      return cmd_prompts(pr, manifest);
    }
    if (s_synth->parsed()) {
      manifest.command = "synth";
      return cmd_synth(sy, manifest);
    }
    if (s_export->parsed()) {
      manifest.command = "export";
      if (limit_opt->count() > 0) ex.layer_limit = export_limit;
      return cmd_export(ex, manifest);
    }
    if (s_replay->parsed()) return cmd_replay(replay_path);
  } catch (const Error& e) {
    log(e.what());
    return exit_code(e.code());
  } catch (const std::exception& e) {
    log(e.what());
    return 1;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args);
}
