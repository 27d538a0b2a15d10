#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lea/filtering.hpp"

namespace lea::testing {

inline std::filesystem::path fixture(const std::string& name) { return std::filesystem::path(LEA_FIXTURE_DIR) / name; }

/// Tab-separated rows; blank lines and lines starting with '#' are skipped.
inline std::vector<std::vector<std::string>> read_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open fixture " + path.string());
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, '\t');) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

struct LabeledToken {
  std::string text;
  bool stopword_keep;
  double p_xthetay;
  double p_xy;
  bool combined_keep;
};

inline std::vector<LabeledToken> labeled_sentence() {
  std::vector<LabeledToken> out;
  for (const auto& r : read_tsv(fixture("stopword_sentence.tsv")))
    out.push_back({r.at(0), r.at(1) == "1", std::stod(r.at(2)), std::stod(r.at(3)), r.at(4) == "1"});
  return out;
}

/// Table of token probability deltas keyed by response position.
inline std::vector<TokenProbRecord> token_delta_records() {
  std::vector<TokenProbRecord> out;
  const auto rows = read_tsv(fixture("token_deltas.tsv"));
  const std::size_t first = std::stoul(rows.at(0).at(0));
  for (const auto& r : rows)
    out.push_back(TokenProbRecord::make(std::stoul(r.at(0)) - first, r.at(1), std::stod(r.at(2)), std::stod(r.at(3))));
  return out;
}

}  // namespace lea::testing
