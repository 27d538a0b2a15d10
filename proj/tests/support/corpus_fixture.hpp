#pragma once

#include <random>
#include <string>

#include <nlohmann/json.hpp>

#include "lea/corpus.hpp"

namespace lea::testing {

/// Batch synth spec: for each CVE, one dump per scenario. VALID and
/// INCORRECT responses copy many context rows (the model follows whatever
/// context it gets); GENERIC copies few; NONE has no context at all.
inline nlohmann::json scenario_corpus_spec(std::size_t n_cves, std::uint64_t seed, bool with_incorrect = true,
                                           std::size_t d = 48) {
  std::mt19937_64 rng(seed);
  auto u = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  nlohmann::json dumps = nlohmann::json::array();
  const char* models[] = {"synthetic-a", "synthetic-b"};
  for (std::size_t k = 0; k < n_cves; ++k) {
    const int year = 2015 + static_cast<int>(k % 10);
    const std::string cve = "CVE-" + std::to_string(year) + "-" + std::to_string(30000 + k);
    const std::string model = models[k % 2];
    std::vector<Scenario> scenarios{Scenario::valid, Scenario::generic, Scenario::none};
    if (with_incorrect) scenarios.push_back(Scenario::incorrect);
    for (Scenario sc : scenarios) {
      nlohmann::json plan;
      std::size_t context_len = 10;
      switch (sc) {
        case Scenario::valid:
        case Scenario::incorrect:
          plan = {{"context_copies", u(4, 8)}, {"query_copies", u(1, 3)}, {"fresh", u(1, 4)}};
          break;
        case Scenario::generic:
          plan = {{"context_copies", u(0, 2)}, {"query_copies", u(1, 4)}, {"fresh", u(3, 7)}};
          break;
        case Scenario::none:
          context_len = 0;
          plan = {{"context_copies", 0}, {"query_copies", u(1, 4)}, {"fresh", u(3, 7)}};
          break;
      }
      const std::string name = cve + "_" + std::string(to_string(sc));
      dumps.push_back({{"name", name},
                       {"d", d},
                       {"query_len", 6},
                       {"context_len", context_len},
                       {"model_id", model},
                       {"response_plan", plan},
                       {"sample", {{"cve_id", cve}, {"year", year}, {"model", model}, {"scenario", std::string(to_string(sc))}}}});
    }
  }
  return {{"dumps", dumps}};
}

}  // namespace lea::testing
