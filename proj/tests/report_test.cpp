#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <regex>
#include <sstream>

#include "lea/report.hpp"
#include "lea/synth.hpp"
#include "support/corpus_fixture.hpp"

namespace lea {
namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path = fs::temp_directory_path() / ("lea_report_test_" + std::to_string(std::random_device{}()));
  TempDir() { fs::create_directories(path); }
  ~TempDir() { fs::remove_all(path); }
};

StateDump planted_dump(std::uint64_t seed = 3) {
  SynthSpec s;
  s.d = 40;
  s.query_len = 6;
  s.context_len = 8;
  s.response = plan_response(4, 3, 3, s.query_len, s.context_len, seed);
  return synth_dump(s, seed).dump;
}

TEST(Attribute, PlantedTriple) {
  const auto r = attribute(planted_dump(), {});
  EXPECT_EQ(round_percent(r.lea.a_fnd), 30);
  EXPECT_EQ(round_percent(r.lea.a_rag), 40);
  EXPECT_EQ(round_percent(r.lea.a_q), 30);
  EXPECT_TRUE(r.delta_filter_applied);
  EXPECT_FALSE(r.degenerate);
}

TEST(Attribute, BucketCountsReconcile) {
  auto dump = planted_dump(8);
  // Make some tokens fall to the filters.
  auto& xy = dump.manifest.sequences[0];
  auto& xty = dump.manifest.sequences[1];
  for (auto* e : {&xy, &xty}) e->tokens[e->response.begin + 1].text = "the";
  dump.manifest.probabilities[4] = TokenProbRecord::make(4, dump.manifest.probabilities[4].token_text, 0.2, 0.4);
  const auto r = attribute(dump, {});
  std::map<Bucket, std::size_t> counts;
  for (const auto& t : r.tokens) ++counts[t.bucket];
  EXPECT_EQ(r.tokens.size(), 10u);
  EXPECT_EQ(counts[Bucket::fnd], r.lea.n_fnd);
  EXPECT_EQ(counts[Bucket::rag], r.lea.n_rag);
  EXPECT_EQ(counts[Bucket::q], r.lea.n_q);
  EXPECT_EQ(counts[Bucket::inconsistent], r.lea.n_inconsistent);
  EXPECT_EQ(counts[Bucket::filtered], 2u);
  EXPECT_EQ(r.lea.denominator, 8u);
  EXPECT_EQ(r.tokens[1].reason, DropReason::stopword);
  EXPECT_EQ(r.tokens[4].reason, DropReason::nonpositive_delta);
}

TEST(Attribute, NoFilterAndExpertOverride) {
  auto dump = planted_dump(8);
  for (auto& p : dump.manifest.probabilities) p = TokenProbRecord::make(p.response_index, p.token_text, 0.5, 0.5);
  AttributionConfig cfg;
  EXPECT_TRUE(attribute(dump, cfg).lea.empty());
  cfg.delta_filter = false;
  EXPECT_EQ(attribute(dump, cfg).lea.denominator, 10u);
  cfg.delta_filter = true;
  cfg.filter = false;
  EXPECT_EQ(attribute(dump, cfg).lea.denominator, 10u);
}

TEST(Attribute, DegeneratePairSkipsDeltaFilter) {
  SynthSpec s;
  s.d = 24;
  s.query_len = 4;
  s.context_len = 0;
  s.response = plan_response(0, 2, 3, 4, 0, 1);
  const auto r = attribute(synth_dump(s, 1).dump, {});
  EXPECT_TRUE(r.degenerate);
  EXPECT_FALSE(r.delta_filter_applied);
  EXPECT_EQ(r.lea.a_rag, 0.0);
  EXPECT_EQ(r.lea.denominator, 5u);
}

std::map<std::string, std::pair<std::size_t, long>> bucket_table(const std::string& md) {
  std::map<std::string, std::pair<std::size_t, long>> out;
  static const std::regex row(R"(^\| (fnd|rag|q|inconsistent) \| (\d+) \| (\d+)% \|$)");
  std::istringstream in(md);
  for (std::string line; std::getline(in, line);) {
    std::smatch m;
    if (std::regex_match(line, m, row)) out[m[1]] = {std::stoul(m[2]), std::stol(m[3])};
  }
  return out;
}

TEST(Markdown, AttributionNumbersMatchJson) {
  const auto j = report_json(attribute(planted_dump(), {}));
  const std::string md = attribution_markdown(j);
  const auto table = bucket_table(md);
  ASSERT_EQ(table.size(), 4u);
  for (const auto& [k, v] : table) {
    EXPECT_EQ(v.first, j["lea"]["counts"][k].get<std::size_t>()) << k;
    EXPECT_EQ(v.second, j["lea"]["percent"][k].get<long>()) << k;
  }
  EXPECT_NE(md.find("LEA = (30%; 40%; 30%)"), std::string::npos);
  std::size_t token_rows = 0;
  std::istringstream in(md);
  for (std::string line; std::getline(in, line);)
    if (std::regex_search(line, std::regex(R"(^\| \d+ \| `)"))) ++token_rows;
  EXPECT_EQ(token_rows, j["tokens"].size());
}

TEST(Markdown, HealthWarning) {
  auto r = attribute(planted_dump(), {});
  r.lea = lea_from_counts(5, 0, 0, 1);
  const auto md = attribution_markdown(report_json(r));
  EXPECT_NE(md.find("WARNING"), std::string::npos);
}

TEST(Markdown, RankEvolution) {
  SynthSpec s;
  s.d = 64;
  s.query_len = 4;
  s.context_len = 2;
  s.response = plan_response(1, 1, 2, 4, 2, 5);
  s.extra_layers = {{1, 3}, {2, 0}};
  const auto dump = synth_dump(s, 5).dump;
  std::vector<SequencePair> pairs;
  for (int l : dump.manifest.layers) pairs.push_back(build_pair(dump, l));
  const auto j = rank_evolution_json(rank_evolution(pairs), dump.manifest, {});
  const auto md = rank_evolution_markdown(j);
  EXPECT_NE(md.find("| 1 | 70% | 63% |"), std::string::npos) << md;
  EXPECT_NE(md.find("| 2 | 100% | 100% |"), std::string::npos) << md;
  EXPECT_EQ(j["layers"][0]["layer"], 0);
}

TEST(Evaluation, CorpusRunAndMarkdownAgree) {
  TempDir tmp;
  write_synth_output(testing::scenario_corpus_spec(30, 4), 100, tmp.path);
  const auto run1 = evaluate_corpus(tmp.path, {}, 7, 0.8, 4);
  const auto run2 = evaluate_corpus(tmp.path, {}, 7, 0.8, 1);
  const auto j = evaluation_json(run1, {});
  EXPECT_EQ(j.dump(), evaluation_json(run2, {}).dump());
  EXPECT_EQ(run1.samples.size(), 120u);
  EXPECT_EQ(run1.unhealthy, 0u);
  EXPECT_EQ(j["threshold"]["train"]["confusion"]["tp"].get<std::size_t>() +
                j["threshold"]["train"]["confusion"]["fn"].get<std::size_t>() +
                j["threshold"]["test"]["confusion"]["tp"].get<std::size_t>() +
                j["threshold"]["test"]["confusion"]["fn"].get<std::size_t>(),
            30u);

  const auto md = evaluation_markdown(j);
  std::ostringstream row;
  const auto& t = j["threshold"];
  row << "| " << t["percent"].get<std::string>() << " | " << fixed(t["train"]["accuracy"], 3) << " | "
      << fixed(t["train"]["f1"], 3) << " | " << fixed(t["test"]["accuracy"], 3) << " | " << fixed(t["test"]["f1"], 3)
      << " | " << fixed(t["train_auc"], 3) << " | " << fixed(t["test_auc"], 3) << " |";
  EXPECT_NE(md.find(row.str()), std::string::npos) << md;

  // Scenario ordering of mean a_rag.
  std::map<std::string, double> by;
  for (const auto& g : j["summaries"]["scenario"]) by[g["key"]] = g["a_rag"];
  EXPECT_GT(by["VALID"], by["GENERIC"]);
  EXPECT_GT(by["GENERIC"], by["NONE"]);
  EXPECT_EQ(by["NONE"], 0.0);
  EXPECT_LT(j["incorrect_audit"]["mean_difference"].get<double>(), 0.05);
  EXPECT_NE(md.find("verify retrieved context"), std::string::npos);
}

TEST(Evaluation, CorpusIndexErrors) {
  TempDir tmp;
  EXPECT_THROW((void)load_corpus_index(tmp.path), Error);
  io::write_atomic(tmp.path / "samples.jsonl", std::string("\n"));
  EXPECT_THROW((void)load_corpus_index(tmp.path), Error);
  io::write_atomic(tmp.path / "samples.jsonl", std::string("{\"dump\": \"x.json\"}\n"));
  EXPECT_THROW((void)load_corpus_index(tmp.path), Error);
}

TEST(RunManifest, RecordsChecksumsAndVersions) {
  TempDir tmp;
  io::write_atomic(tmp.path / "in.txt", std::string("abc"));
  io::write_atomic(tmp.path / "out.txt", std::string(""));
  const auto m = run_manifest("attribute", {{"k", 1}}, {tmp.path / "in.txt"}, {tmp.path / "out.txt"});
  EXPECT_EQ(m["inputs"][0]["sha256"], "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(m["outputs"][0]["sha256"], "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(m["version"], std::string(kToolVersion));
  EXPECT_EQ(m["config"]["k"], 1);
}

TEST(OutputPaths, Derived) {
  EXPECT_EQ(markdown_path("r/report.json"), fs::path("r/report.md"));
  EXPECT_EQ(markdown_path("r/report"), fs::path("r/report.md"));
  EXPECT_EQ(markdown_path("r/report.txt"), fs::path("r/report.txt.md"));
  EXPECT_EQ(run_manifest_path("r/report.json"), fs::path("r/report.json.run.json"));
}

}  // namespace
}  // namespace lea
