// lea: command-line front end for attribution, rank evolution, evaluation
// and fixture generation.
//
// Exit codes: 0 success, 1 I/O failure, 2 validation/usage error,
// 3 numerical-health failure (a_inconsistent above bound).

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "lea/lea.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitIo = 1;
constexpr int kExitValidation = 2;
constexpr int kExitHealth = 3;

void print_error(std::string_view kind, std::string_view message, std::string_view location = {}) {
  nlohmann::json err{{"error", {{"kind", kind}, {"message", message}}}};
  if (!location.empty()) err["error"]["location"] = location;
  std::cerr << err.dump() << "\n";
}

struct CommonOptions {
  double tol = lea::ToleranceConfig{}.relative_residual;
  std::string mode = "sequential";
  bool no_filter = false;
  bool keep_nonpositive_delta = false;
  std::string stopwords;
  int layer = 0;
};

struct ResolvedConfig {
  std::optional<lea::StopWordList> stopwords;
  lea::AttributionConfig cfg;
};

ResolvedConfig resolve(const CommonOptions& o) {
  ResolvedConfig r;
  r.cfg.layer = o.layer;
  r.cfg.mode = lea::parse_flag_mode(o.mode);
  r.cfg.tol.relative_residual = o.tol;
  r.cfg.tol.validate();
  r.cfg.filter = !o.no_filter;
  r.cfg.delta_filter = !o.keep_nonpositive_delta;
  if (!o.stopwords.empty()) r.stopwords = lea::StopWordList::load(o.stopwords);
  return r;
}

void write_report(const fs::path& out, const nlohmann::json& report, const std::string& markdown,
                  std::string_view command, const nlohmann::json& config, std::vector<fs::path> inputs) {
  const fs::path md = lea::markdown_path(out);
  lea::io::write_atomic(out, report.dump(1) + "\n");
  lea::io::write_atomic(md, markdown);
  const auto manifest = lea::run_manifest(command, config, inputs, {out, md});
  lea::io::write_atomic(lea::run_manifest_path(out), manifest.dump(1) + "\n");
}

int run_attribute(const fs::path& dump_path, const CommonOptions& o, const fs::path& out) {
  auto rc = resolve(o);
  if (rc.stopwords) rc.cfg.stopwords = &*rc.stopwords;
  const auto dump = lea::load_dump(dump_path);
  const auto report = lea::attribute(dump, rc.cfg);
  const auto j = lea::report_json(report);
  write_report(out, j, lea::attribution_markdown(j), "attribute", j.at("config"),
               {dump_path, lea::sidecar_path(dump_path)});
  if (!report.lea.healthy()) {
    std::cerr << "warning: a_inconsistent = " << report.lea.a_inconsistent << " exceeds bound " << lea::kInconsistencyBound
              << "\n";
    return kExitHealth;
  }
  return 0;
}

int run_rank_evolution(const fs::path& dump_path, double tol, const fs::path& out) {
  lea::ToleranceConfig t;
  t.relative_residual = tol;
  t.validate();
  const auto dump = lea::load_dump(dump_path);
  std::vector<lea::SequencePair> layers;
  for (int layer : dump.manifest.layers) layers.push_back(lea::build_pair(dump, layer));
  const auto j = lea::rank_evolution_json(lea::rank_evolution(layers, t), dump.manifest, t);
  write_report(out, j, lea::rank_evolution_markdown(j), "rank-evolution", j.at("tolerance"),
               {dump_path, lea::sidecar_path(dump_path)});
  return 0;
}

int run_evaluate(const fs::path& corpus, const CommonOptions& o, std::uint64_t seed, double ratio, unsigned jobs,
                 const fs::path& out) {
  auto rc = resolve(o);
  if (rc.stopwords) rc.cfg.stopwords = &*rc.stopwords;
  const auto run = lea::evaluate_corpus(corpus, rc.cfg, seed, ratio, jobs);
  const auto j = lea::evaluation_json(run, rc.cfg);
  nlohmann::json config = j.at("config");
  config["split_seed"] = seed;
  config["split_ratio"] = ratio;
  auto inputs = run.inputs;
  inputs.insert(inputs.begin(), corpus / "samples.jsonl");
  write_report(out, j, lea::evaluation_markdown(j), "evaluate", config, inputs);
  if (run.unhealthy > 0) {
    std::cerr << "warning: " << run.unhealthy << " samples exceed the a_inconsistent bound\n";
    return kExitHealth;
  }
  return 0;
}

int run_synth(const fs::path& spec_path, std::uint64_t seed, const fs::path& out_dir) {
  nlohmann::json spec;
  try {
    spec = nlohmann::json::parse(lea::io::read_text(spec_path));
  } catch (const nlohmann::json::exception& e) {
    throw lea::schema_error(std::string("synth spec is not JSON: ") + e.what(), spec_path.string());
  }
  lea::write_synth_output(spec, seed, out_dir);
  return 0;
}

int run_pair_incorrect(const fs::path& corpus, const fs::path& out) {
  const auto paired = lea::pair_incorrect(lea::load_corpus(corpus));
  lea::io::write_atomic(out, lea::corpus_to_jsonl(paired));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LEA: per-token attribution of LLM responses to query, retrieved context, or internal knowledge"};
  app.require_subcommand(1);

  CommonOptions common;
  fs::path dump_path, out_path, corpus_path, spec_path;
  std::uint64_t seed = 0;
  double ratio = 0.8;
  unsigned jobs = 0;

  auto add_attribution_flags = [&](CLI::App* sub) {
    sub->add_option("--mode", common.mode, "Flag mode: sequential | base-only")
        ->check(CLI::IsMember({"sequential", "base-only"}));
    sub->add_option("--tol", common.tol, "Relative residual tolerance");
    sub->add_flag("--no-filter", common.no_filter, "Attribute every response token");
    sub->add_flag("--keep-nonpositive-delta", common.keep_nonpositive_delta,
                  "Expert override: disable the delta-p > 0 filter, keep stop-word filtering");
    sub->add_option("--stopwords", common.stopwords, "Stop-word list file (checked against <file>.sha256)");
  };

  auto* attribute = app.add_subcommand("attribute", "LEA triple and per-token buckets for one dump");
  attribute->add_option("--dump", dump_path, "Dump manifest")->required();
  attribute->add_option("--layer", common.layer, "Hidden-state layer");
  add_attribution_flags(attribute);
  attribute->add_option("--out", out_path, "Report path (JSON; markdown and run manifest written alongside)")->required();

  auto* rank = app.add_subcommand("rank-evolution", "Per-layer rank percentages for xy and xthetay");
  rank->add_option("--dump", dump_path, "Dump manifest")->required();
  rank->add_option("--tol", common.tol, "Relative residual tolerance");
  rank->add_option("--out", out_path, "Report path")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Batch attribution, threshold fit and summaries over a corpus");
  evaluate->add_option("--corpus", corpus_path, "Directory holding samples.jsonl and its dumps")->required();
  evaluate->add_option("--split-seed", seed, "Train/test split seed")->required();
  evaluate->add_option("--ratio", ratio, "Train fraction");
  evaluate->add_option("--jobs", jobs, "Worker threads (0: hardware concurrency)");
  add_attribution_flags(evaluate);
  evaluate->add_option("--out", out_path, "Report path")->required();

  auto* synth = app.add_subcommand("synth", "Generate synthetic dumps with planted structure");
  synth->add_option("--spec", spec_path, "Spec file (JSON)")->required();
  synth->add_option("--seed", seed, "Generator seed")->required();
  synth->add_option("--out", out_path, "Output directory")->required();

  auto* pair = app.add_subcommand("pair-incorrect", "Fill incorrect-retrieval donors in a corpus");
  pair->add_option("--corpus", corpus_path, "Corpus file (JSONL)")->required();
  pair->add_option("--out", out_path, "Output corpus file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return kExitValidation;
  }

  try {
    if (*attribute) return run_attribute(dump_path, common, out_path);
    if (*rank) return run_rank_evolution(dump_path, common.tol, out_path);
    if (*evaluate) return run_evaluate(corpus_path, common, seed, ratio, jobs, out_path);
    if (*synth) return run_synth(spec_path, seed, out_path);
    if (*pair) return run_pair_incorrect(corpus_path, out_path);
  } catch (const lea::Error& e) {
    print_error(lea::to_string(e.kind()), e.message(), e.location());
    return e.kind() == lea::ErrorKind::io ? kExitIo : kExitValidation;
  } catch (const fs::filesystem_error& e) {
    print_error("io", e.what());
    return kExitIo;
  }
  return kExitValidation;
}
