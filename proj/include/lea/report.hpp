#pragma once

// Report assembly. Every report is built once as JSON; the markdown view is
// rendered from that JSON so both always carry the same numbers.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "lea/attribution.hpp"
#include "lea/corpus.hpp"
#include "lea/dump.hpp"
#include "lea/evaluation.hpp"
#include "lea/filtering.hpp"
#include "lea/io.hpp"

namespace lea {

inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr int kReportSchemaVersion = 1;

struct AttributionConfig {
  int layer = 0;
  FlagMode mode = FlagMode::sequential;
  ToleranceConfig tol;
  bool filter = true;        // stop-word + Δp filtering
  bool delta_filter = true;  // expert override: false keeps Δp <= 0 tokens
  const StopWordList* stopwords = &StopWordList::builtin();
};

inline nlohmann::json config_json(const AttributionConfig& c) {
  return {{"layer", c.layer},
          {"mode", to_string(c.mode)},
          {"tolerance", {{"relative_residual", c.tol.relative_residual}, {"absolute_floor", c.tol.absolute_floor}}},
          {"filter",
           {{"enabled", c.filter},
            {"delta_p", c.filter && c.delta_filter},
            {"stopwords", {{"version", c.stopwords->version()}, {"sha256", c.stopwords->sha256()}}}}}};
}

inline std::string fixed(double x, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

struct TokenRow {
  std::string text;
  Bucket bucket = Bucket::filtered;
  DropReason reason = DropReason::kept;
  std::optional<double> delta_p;
  bool delta_xy = false;
  bool delta_xthetay = false;
};

struct AttributionReport {
  std::string cve_id;
  std::string scenario;
  std::string model_id;
  bool degenerate = false;
  bool delta_filter_applied = false;
  AttributionConfig config;
  PairFlags flags;
  FilterMask mask;
  std::vector<TokenRow> tokens;
  LeaDistribution lea;
};

/// Flags, filter mask and LEA for one dump. Δp filtering needs probability
/// records and a non-degenerate pair; otherwise only stop words are removed.
inline AttributionReport attribute(const StateDump& dump, const AttributionConfig& cfg) {
  cfg.tol.validate();
  AttributionReport r;
  r.config = cfg;
  r.cve_id = dump.manifest.cve_id;
  r.scenario = dump.manifest.scenario;
  r.model_id = dump.manifest.model_id;
  const SequencePair pair = build_pair(dump, cfg.layer);
  r.degenerate = pair.degenerate();
  r.flags = pair_flags(pair, cfg.mode, cfg.tol);

  const auto texts = response_texts(pair.xy);
  const auto& probs = dump.manifest.probabilities;
  r.mask = FilterMask::all_kept(texts.size());
  if (cfg.filter) {
    r.mask = stopword_mask(texts, *cfg.stopwords);
    if (cfg.delta_filter && !r.degenerate && !probs.empty()) {
      r.mask = combine_masks(r.mask, delta_p_mask(probs));
      r.delta_filter_applied = true;
    }
  }
  r.lea = lea(r.flags.xy, r.flags.xthetay, r.mask.keep);

  std::vector<std::optional<double>> deltas(texts.size());
  for (const auto& p : probs)
    if (p.response_index < deltas.size()) deltas[p.response_index] = p.delta_p;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    TokenRow row{texts[i], Bucket::filtered, r.mask.reasons[i], deltas[i], r.flags.xy.flags[i] != 0,
                 r.flags.xthetay.flags[i] != 0};
    if (r.mask.keep[i]) row.bucket = classify_token(row.delta_xy, row.delta_xthetay);
    r.tokens.push_back(std::move(row));
  }
  return r;
}

inline nlohmann::json lea_json(const LeaDistribution& l) {
  return {{"counts", {{"fnd", l.n_fnd}, {"rag", l.n_rag}, {"q", l.n_q}, {"inconsistent", l.n_inconsistent}}},
          {"denominator", l.denominator},
          {"empty", l.empty()},
          {"fractions", {{"fnd", l.a_fnd}, {"rag", l.a_rag}, {"q", l.a_q}, {"inconsistent", l.a_inconsistent}}},
          {"percent",
           {{"fnd", round_percent(l.a_fnd)},
            {"rag", round_percent(l.a_rag)},
            {"q", round_percent(l.a_q)},
            {"inconsistent", round_percent(l.a_inconsistent)}}}};
}

inline nlohmann::json report_json(const AttributionReport& r) {
  nlohmann::json tokens = nlohmann::json::array();
  for (std::size_t i = 0; i < r.tokens.size(); ++i) {
    const TokenRow& t = r.tokens[i];
    tokens.push_back({{"index", i},
                      {"text", t.text},
                      {"bucket", to_string(t.bucket)},
                      {"reason", to_string(t.reason)},
                      {"delta_p", t.delta_p ? nlohmann::json(*t.delta_p) : nlohmann::json(nullptr)},
                      {"delta_xy", t.delta_xy ? 1 : 0},
                      {"delta_xthetay", t.delta_xthetay ? 1 : 0}});
  }
  nlohmann::json cfg = config_json(r.config);
  cfg["filter"]["delta_p_applied"] = r.delta_filter_applied;
  return {{"schema_version", kReportSchemaVersion},
          {"kind", "attribution"},
          {"cve_id", r.cve_id},
          {"scenario", r.scenario},
          {"model_id", r.model_id},
          {"degenerate_pair", r.degenerate},
          {"config", std::move(cfg)},
          {"lea", lea_json(r.lea)},
          {"health", {{"a_inconsistent", r.lea.a_inconsistent}, {"bound", kInconsistencyBound}, {"healthy", r.lea.healthy()}}},
          {"tokens", std::move(tokens)}};
}

namespace detail {
inline std::string md_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '|' || c == '`' || c == '*' || c == '_') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out;
}

inline std::string lea_triple_md(const nlohmann::json& lea) {
  const auto& p = lea.at("percent");
  std::ostringstream os;
  os << "LEA = (" << p.at("fnd").get<long>() << "%; " << p.at("rag").get<long>() << "%; " << p.at("q").get<long>() << "%)";
  return os.str();
}
}  // namespace detail

inline std::string attribution_markdown(const nlohmann::json& j) {
  std::ostringstream os;
  const std::string title = j.at("cve_id").get<std::string>().empty() ? "dump" : j.at("cve_id").get<std::string>();
  os << "# LEA attribution: " << title;
  if (!j.at("scenario").get<std::string>().empty()) os << " (" << j.at("scenario").get<std::string>() << ")";
  os << "\n\n";
  const auto& lea = j.at("lea");
  os << "**" << detail::lea_triple_md(lea) << "** as (A_fnd; A_rag; A_q)\n\n";
  const auto& c = lea.at("counts");
  os << "| bucket | tokens | percent |\n|---|---|---|\n";
  for (const char* k : {"fnd", "rag", "q", "inconsistent"})
    os << "| " << k << " | " << c.at(k).get<std::size_t>() << " | " << lea.at("percent").at(k).get<long>() << "% |\n";
  os << "| kept | " << lea.at("denominator").get<std::size_t>() << " | |\n\n";
  if (!j.at("health").at("healthy").get<bool>())
    os << "> WARNING: a_inconsistent = " << lea.at("percent").at("inconsistent").get<long>()
       << "% exceeds the 1% numerical-health bound.\n\n";
  if (lea.at("empty").get<bool>()) os << "> NOTE: every response token was filtered out; the distribution is empty.\n\n";
  const auto& cfg = j.at("config");
  os << "Config: layer " << cfg.at("layer").get<int>() << ", mode " << cfg.at("mode").get<std::string>()
     << ", relative tolerance " << cfg.at("tolerance").at("relative_residual").get<double>() << ", filter "
     << (cfg.at("filter").at("enabled").get<bool>() ? "on" : "off") << " (stop words "
     << cfg.at("filter").at("stopwords").at("version").get<std::string>() << ", delta-p "
     << (cfg.at("filter").at("delta_p_applied").get<bool>() ? "applied" : "not applied") << ")\n\n";
  os << "| # | token | bucket | delta_p | xy | xthetay |\n|---|---|---|---|---|---|\n";
  for (const auto& t : j.at("tokens")) {
    os << "| " << t.at("index").get<std::size_t>() << " | `" << detail::md_escape(t.at("text").get<std::string>()) << "` | ["
       << t.at("bucket").get<std::string>() << "] | "
       << (t.at("delta_p").is_null() ? std::string("-") : fixed(t.at("delta_p").get<double>(), 3)) << " | "
       << t.at("delta_xy").get<int>() << " | " << t.at("delta_xthetay").get<int>() << " |\n";
  }
  return os.str();
}

inline nlohmann::json rank_evolution_json(const std::vector<RankEvolutionRow>& rows, const StateDumpManifest& m,
                                          const ToleranceConfig& tol) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows)
    out.push_back({{"layer", r.layer},
                   {"rank_xthetay", r.rank_xthetay},
                   {"tokens_xthetay", r.tokens_xthetay},
                   {"percent_xthetay", r.percent_xthetay()},
                   {"percent_xthetay_rounded", std::lround(r.percent_xthetay())},
                   {"rank_xy", r.rank_xy},
                   {"tokens_xy", r.tokens_xy},
                   {"percent_xy", r.percent_xy()},
                   {"percent_xy_rounded", std::lround(r.percent_xy())}});
  return {{"schema_version", kReportSchemaVersion},
          {"kind", "rank_evolution"},
          {"model_id", m.model_id},
          {"cve_id", m.cve_id},
          {"tolerance", {{"relative_residual", tol.relative_residual}, {"absolute_floor", tol.absolute_floor}}},
          {"layers", std::move(out)}};
}

inline std::string rank_evolution_markdown(const nlohmann::json& j) {
  std::ostringstream os;
  os << "# Layer-by-layer rank evolution";
  if (!j.at("cve_id").get<std::string>().empty()) os << ": " << j.at("cve_id").get<std::string>();
  os << "\n\nModel: " << j.at("model_id").get<std::string>() << "\n\n";
  os << "| layer | rank xthetay | rank xy |\n|---|---|---|\n";
  for (const auto& r : j.at("layers"))
    os << "| " << r.at("layer").get<int>() << " | " << r.at("percent_xthetay_rounded").get<long>() << "% | "
       << r.at("percent_xy_rounded").get<long>() << "% |\n";
  return os.str();
}

/// One line of a corpus directory's samples.jsonl index.
struct CorpusEntry {
  std::filesystem::path dump;
  std::string cve_id;
  int year = 0;
  std::string model;
  Scenario scenario = Scenario::valid;
};

inline std::vector<CorpusEntry> load_corpus_index(const std::filesystem::path& dir) {
  const auto path = dir / "samples.jsonl";
  std::istringstream in(io::read_text(path));
  std::vector<CorpusEntry> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(n);
    try {
      const auto j = nlohmann::json::parse(line);
      CorpusEntry e{dir / j.at("dump").get<std::string>(), j.at("cve_id").get<std::string>(), j.value("year", 0),
                    j.value("model", std::string("unknown")), parse_scenario(j.at("scenario").get<std::string>())};
      if (e.year == 0)
        if (auto id = parse_cve_id(e.cve_id)) e.year = id->year;
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& e) {
      throw schema_error(std::string("malformed index line: ") + e.what(), where);
    }
  }
  if (out.empty()) throw validation_error("corpus index is empty", path.string());
  return out;
}

struct EvaluationRun {
  std::vector<LabeledSample> samples;
  std::vector<std::filesystem::path> inputs;
  ThresholdReport threshold;
  IncorrectAudit audit;
  std::size_t unhealthy = 0;
};

/// Attributes every indexed dump (in parallel, results kept in index
/// order), then splits, fits the threshold and audits INCORRECT samples.
inline EvaluationRun evaluate_corpus(const std::filesystem::path& dir, const AttributionConfig& cfg, std::uint64_t seed,
                                     double ratio = 0.8, unsigned jobs = 0) {
  const auto index = load_corpus_index(dir);
  EvaluationRun run;
  run.samples.resize(index.size());
  std::vector<std::exception_ptr> errors(index.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < index.size(); i = next++) {
      try {
        const auto rep = attribute(load_dump(index[i].dump), cfg);
        run.samples[i] = {index[i].cve_id, index[i].year, index[i].model, index[i].scenario, rep.lea.a_rag, rep.lea};
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < std::min<std::size_t>(jobs, index.size()); ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (const auto& e : index) {
    run.inputs.push_back(e.dump);
    run.inputs.push_back(sidecar_path(e.dump));
  }
  for (const auto& s : run.samples) run.unhealthy += s.lea.healthy() ? 0 : 1;
  run.threshold = evaluate_threshold(run.samples, ratio, seed);
  run.audit = incorrect_audit(run.samples);
  return run;
}

inline nlohmann::json metrics_json(const Metrics& m) {
  const Confusion& c = m.confusion;
  return {{"accuracy", m.accuracy},
          {"precision", m.precision},
          {"recall", m.recall},
          {"f1", m.f1},
          {"confusion", {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}}}};
}

inline nlohmann::json evaluation_json(const EvaluationRun& run, const AttributionConfig& cfg) {
  using nlohmann::json;
  json samples = json::array();
  for (const auto& s : run.samples)
    samples.push_back({{"cve_id", s.cve_id}, {"year", s.year}, {"model", s.model}, {"scenario", to_string(s.scenario)},
                       {"a_rag", s.a_rag}, {"lea", lea_json(s.lea)}});
  json summaries = json::object();
  for (auto [name, by] : {std::pair{"year", GroupBy::year}, {"model", GroupBy::model}, {"scenario", GroupBy::scenario}}) {
    json groups = json::array();
    for (const auto& g : summarize(run.samples, by))
      groups.push_back({{"key", g.key}, {"count", g.count}, {"empty", g.empty}, {"a_fnd", g.a_fnd}, {"a_rag", g.a_rag},
                        {"a_q", g.a_q}, {"a_inconsistent", g.a_inconsistent},
                        {"percent", {{"fnd", round_percent(g.a_fnd)}, {"rag", round_percent(g.a_rag)}, {"q", round_percent(g.a_q)}}}});
    summaries[name] = std::move(groups);
  }
  const ThresholdReport& t = run.threshold;
  return {{"schema_version", kReportSchemaVersion},
          {"kind", "evaluation"},
          {"config", config_json(cfg)},
          {"threshold",
           {{"value", t.threshold},
            {"percent", fixed(100.0 * t.threshold, 2)},
            {"split_seed", t.split_seed},
            {"split_ratio", t.split_ratio},
            {"train", metrics_json(t.train)},
            {"test", metrics_json(t.test)},
            {"train_auc", t.train_auc},
            {"test_auc", t.test_auc}}},
          {"incorrect_audit",
           {{"n_valid", run.audit.n_valid},
            {"n_incorrect", run.audit.n_incorrect},
            {"mean_a_rag_valid", run.audit.mean_valid},
            {"mean_a_rag_incorrect", run.audit.mean_incorrect},
            {"mean_difference", run.audit.mean_difference()}}},
          {"unhealthy_samples", run.unhealthy},
          {"summaries", std::move(summaries)},
          {"samples", std::move(samples)}};
}

inline std::string evaluation_markdown(const nlohmann::json& j) {
  std::ostringstream os;
  const auto& t = j.at("threshold");
  os << "# LEA evaluation: valid vs. generic/no retrieval\n\n";
  os << "| threshold (%) | train acc. | train F1 | test acc. | test F1 | train ROC AUC | test ROC AUC |\n"
        "|---|---|---|---|---|---|---|\n";
  os << "| " << t.at("percent").get<std::string>() << " | " << fixed(t.at("train").at("accuracy").get<double>(), 3) << " | "
     << fixed(t.at("train").at("f1").get<double>(), 3) << " | " << fixed(t.at("test").at("accuracy").get<double>(), 3)
     << " | " << fixed(t.at("test").at("f1").get<double>(), 3) << " | " << fixed(t.at("train_auc").get<double>(), 3)
     << " | " << fixed(t.at("test_auc").get<double>(), 3) << " |\n\n";
  os << "Split seed " << t.at("split_seed").get<std::uint64_t>() << ", ratio " << t.at("split_ratio").get<double>()
     << " (stratified).\n\n";
  for (const char* by : {"scenario", "year", "model"}) {
    os << "## Mean LEA by " << by << "\n\n| " << by << " | n | A_fnd | A_rag | A_q | empty |\n|---|---|---|---|---|---|\n";
    for (const auto& g : j.at("summaries").at(by))
      os << "| " << g.at("key").get<std::string>() << " | " << g.at("count").get<std::size_t>() << " | "
         << g.at("percent").at("fnd").get<long>() << "% | " << g.at("percent").at("rag").get<long>() << "% | "
         << g.at("percent").at("q").get<long>() << "% | " << g.at("empty").get<std::size_t>() << " |\n";
    os << "\n";
  }
  const auto& a = j.at("incorrect_audit");
  os << "## Incorrect-retrieval audit\n\n";
  os << "Mean A_rag: VALID " << fixed(a.at("mean_a_rag_valid").get<double>(), 3) << " (n=" << a.at("n_valid").get<std::size_t>()
     << "), INCORRECT " << fixed(a.at("mean_a_rag_incorrect").get<double>(), 3)
     << " (n=" << a.at("n_incorrect").get<std::size_t>() << "), difference "
     << fixed(a.at("mean_difference").get<double>(), 3) << ".\n";
  if (a.at("n_incorrect").get<std::size_t>() > 0 && a.at("n_valid").get<std::size_t>() > 0 &&
      a.at("mean_difference").get<double>() < 0.05)
    os << "\n> A_rag cannot tell a valid retrieval from a wrong CVE's description; verify retrieved context before trusting "
          "the response.\n";
  if (j.at("unhealthy_samples").get<std::size_t>() > 0)
    os << "\n> WARNING: " << j.at("unhealthy_samples").get<std::size_t>()
       << " samples exceed the 1% a_inconsistent bound.\n";
  return os.str();
}

/// Config, versions and checksums for every input and output of a run.
inline nlohmann::json run_manifest(std::string_view command, nlohmann::json config,
                                   const std::vector<std::filesystem::path>& inputs,
                                   const std::vector<std::filesystem::path>& outputs) {
  nlohmann::json in = nlohmann::json::array(), out = nlohmann::json::array();
  for (const auto& p : inputs) in.push_back({{"path", p.generic_string()}, {"sha256", io::file_sha256(p)}});
  for (const auto& p : outputs) out.push_back({{"path", p.generic_string()}, {"sha256", io::file_sha256(p)}});
  return {{"tool", "lea"},
          {"version", kToolVersion},
          {"report_schema_version", kReportSchemaVersion},
          {"dump_format_version", kDumpFormatVersion},
          {"command", command},
          {"config", std::move(config)},
          {"inputs", std::move(in)},
          {"outputs", std::move(out)}};
}

/// `report.json` -> `report.md`; anything else gets `.md` appended.
inline std::filesystem::path markdown_path(const std::filesystem::path& out) {
  if (out.extension() == ".json") {
    auto p = out;
    return p.replace_extension(".md");
  }
  auto p = out;
  p += ".md";
  return p;
}

inline std::filesystem::path run_manifest_path(const std::filesystem::path& out) {
  auto p = out;
  p += ".run.json";
  return p;
}

}  // namespace lea
