#pragma once

// CVE scenario corpus: newline-delimited JSON records, the fixed generic
// context, the prompt template, and donor selection for the
// incorrect-retrieval scenario.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "lea/error.hpp"
#include "lea/io.hpp"

namespace lea {

enum class Scenario { valid, generic, none, incorrect };

inline std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::valid: return "VALID";
    case Scenario::generic: return "GENERIC";
    case Scenario::none: return "NONE";
    case Scenario::incorrect: return "INCORRECT";
  }
  return "?";
}

inline Scenario parse_scenario(std::string_view s) {
  if (s == "VALID") return Scenario::valid;
  if (s == "GENERIC") return Scenario::generic;
  if (s == "NONE") return Scenario::none;
  if (s == "INCORRECT") return Scenario::incorrect;
  throw schema_error("unknown scenario '" + std::string(s) + "'");
}

inline constexpr int kCorpusSchemaVersion = 1;
inline constexpr std::string_view kGenericContextVersion = "generic-cve-v1";
inline constexpr std::string_view kGenericContext =
    "CVE, short for Common Vulnerabilities and Exposures, is a list of publicly disclosed computer security flaws. "
    "When someone refers to a CVE, they mean a security flaw that's been assigned a CVE ID number.";

inline constexpr std::string_view kPromptTemplateVersion = "lea-prompt-v1";

inline std::string make_query(std::string_view cve_id) {
  return "You are a cybersecurity expert. How can an attacker exploit " + std::string(cve_id) +
         "? Do not be verbose and answer carefully.";
}

/// Full prompt text. The marker lines are template tokens and never belong
/// to an attributed span.
inline std::string render_prompt(std::string_view query, std::string_view context) {
  std::string p = "<<Query>>\n";
  p += query;
  p += "\n<</Query>>\n\n<<RAG>>\n";
  p += context;
  p += "\n<</RAG>>\n\n<<Response>>\n";
  return p;
}

struct CveId {
  int year = 0;
  std::string suffix;  // digits after the second hyphen
};

inline std::optional<CveId> parse_cve_id(std::string_view id) {
  static const std::regex re(R"(^CVE-(\d{4})-(\d{4,})$)");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_match(id.begin(), id.end(), m, re)) return std::nullopt;
  return CveId{std::stoi(m[1].str()), m[2].str()};
}

struct CveScenarioRecord {
  std::string cve_id;
  int year = 0;
  std::string query;
  std::string theta_valid;
  std::string theta_generic{kGenericContext};
  std::string theta_incorrect_source;
  std::map<Scenario, std::string> responses;
  double severity = 0.0;

  void validate() const {
    auto id = parse_cve_id(cve_id);
    if (!id) throw validation_error("malformed CVE id '" + cve_id + "'");
    if (theta_generic != kGenericContext) throw validation_error("generic context differs from " + std::string(kGenericContextVersion), cve_id);
    if (theta_incorrect_source == cve_id) throw validation_error("record donates to itself", cve_id);
    if (!(severity >= 0.0 && severity <= 10.0)) throw validation_error("CVSS score outside [0,10]", cve_id);
  }
};

inline nlohmann::json record_to_json(const CveScenarioRecord& r) {
  nlohmann::json responses = nlohmann::json::object();
  for (const auto& [s, text] : r.responses) responses[std::string(to_string(s))] = text;
  return {{"schema_version", kCorpusSchemaVersion},
          {"cve_id", r.cve_id},
          {"year", r.year},
          {"query", r.query},
          {"theta_valid", r.theta_valid},
          {"theta_generic", kGenericContextVersion},
          {"theta_incorrect_source",
           r.theta_incorrect_source.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.theta_incorrect_source)},
          {"responses", std::move(responses)},
          {"severity", r.severity}};
}

/// The generic context is stored as a version reference and resolved here.
inline CveScenarioRecord record_from_json(const nlohmann::json& j, const std::string& where) {
  try {
    if (j.value("schema_version", 0) != kCorpusSchemaVersion) throw schema_error("unsupported corpus schema_version", where);
    CveScenarioRecord r;
    r.cve_id = j.at("cve_id").get<std::string>();
    auto id = parse_cve_id(r.cve_id);
    if (!id) throw validation_error("malformed CVE id '" + r.cve_id + "'", where);
    r.year = j.contains("year") ? j.at("year").get<int>() : id->year;
    r.query = j.contains("query") ? j.at("query").get<std::string>() : make_query(r.cve_id);
    r.theta_valid = j.value("theta_valid", std::string());
    if (j.value("theta_generic", std::string(kGenericContextVersion)) != kGenericContextVersion)
      throw schema_error("unknown generic context version", where);
    if (auto it = j.find("theta_incorrect_source"); it != j.end() && !it->is_null())
      r.theta_incorrect_source = it->get<std::string>();
    if (auto it = j.find("responses"); it != j.end())
      for (const auto& [k, v] : it->items()) r.responses[parse_scenario(k)] = v.get<std::string>();
    r.severity = j.value("severity", 0.0);
    r.validate();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw schema_error(std::string("malformed corpus record: ") + e.what(), where);
  }
}

inline std::vector<CveScenarioRecord> parse_corpus(std::string_view text, const std::string& source = "corpus") {
  std::vector<CveScenarioRecord> out;
  std::set<std::string> ids;
  std::istringstream in{std::string(text)};
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(n);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw schema_error(std::string("corpus line is not JSON: ") + e.what(), where);
    }
    out.push_back(record_from_json(j, where));
    if (!ids.insert(out.back().cve_id).second) throw validation_error("duplicate CVE id " + out.back().cve_id, where);
  }
  return out;
}

inline std::vector<CveScenarioRecord> load_corpus(const std::filesystem::path& path) {
  return parse_corpus(io::read_text(path), path.string());
}

inline std::string corpus_to_jsonl(const std::vector<CveScenarioRecord>& corpus) {
  std::string out;
  for (const auto& r : corpus) out += record_to_json(r).dump() + "\n";
  return out;
}

inline std::size_t common_suffix_length(std::string_view a, std::string_view b) {
  std::size_t n = 0;
  while (n < a.size() && n < b.size() && a[a.size() - 1 - n] == b[b.size() - 1 - n]) ++n;
  return n;
}

/// Fills theta_incorrect_source for every record. Donor: a different record
/// with an identical numeric suffix and a different year; otherwise the
/// record with the longest common suffix ending. Ties go to the nearest
/// year, then the lexicographically smallest id.
inline std::vector<CveScenarioRecord> pair_incorrect(std::vector<CveScenarioRecord> corpus) {
  if (corpus.size() < 2) throw validation_error("incorrect-retrieval pairing needs at least 2 records");
  std::vector<CveId> ids;
  for (const auto& r : corpus) {
    auto id = parse_cve_id(r.cve_id);
    if (!id) throw validation_error("malformed CVE id '" + r.cve_id + "'");
    ids.push_back(*id);
  }
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    std::size_t best = i;
    std::tuple<int, long, int, std::string_view> best_key;
    for (std::size_t j = 0; j < corpus.size(); ++j) {
      if (j == i || corpus[j].cve_id == corpus[i].cve_id) continue;
      const bool exact = ids[j].suffix == ids[i].suffix && ids[j].year != ids[i].year;
      const auto key = std::tuple{exact ? 0 : 1, -static_cast<long>(common_suffix_length(ids[i].suffix, ids[j].suffix)),
                                  std::abs(ids[j].year - ids[i].year), std::string_view(corpus[j].cve_id)};
      if (best == i || key < best_key) {
        best = j;
        best_key = key;
      }
    }
    if (best == i) throw validation_error("no donor candidate", corpus[i].cve_id);
    corpus[i].theta_incorrect_source = corpus[best].cve_id;
  }
  return corpus;
}

}  // namespace lea
