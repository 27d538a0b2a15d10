#pragma once

#include <random>

#include "lea/synth.hpp"

namespace lea::testing {

/// Random planted structure in random_ortho mode: mixed copies of query,
/// context and earlier response rows (with scales) and fresh rows.
inline SynthSpec random_spec(std::mt19937_64& rng, double noise = 0.0) {
  std::uniform_int_distribution<std::size_t> len(1, 6), ly(1, 14), kind(0, 3);
  std::uniform_real_distribution<double> scale(-3.0, 3.0);
  SynthSpec s;
  s.query_len = len(rng);
  s.context_len = kind(rng) == 0 ? 0 : len(rng);
  s.noise = noise;
  const std::size_t n = ly(rng);
  for (std::size_t k = 0; k < n; ++k) {
    const auto kd = kind(rng);
    double c = scale(rng);
    if (std::abs(c) < 0.1) c = 1.0;
    if (kd == 0 && s.context_len > 0) {
      s.response.push_back(copy_of(Segment::context, std::uniform_int_distribution<std::size_t>(0, s.context_len - 1)(rng), c));
    } else if (kd == 1) {
      s.response.push_back(copy_of(Segment::query, std::uniform_int_distribution<std::size_t>(0, s.query_len - 1)(rng), c));
    } else if (kd == 2 && k > 0) {
      s.response.push_back(copy_of(Segment::response, std::uniform_int_distribution<std::size_t>(0, k - 1)(rng), c));
    } else {
      s.response.push_back({});
    }
  }
  std::uniform_int_distribution<std::size_t> extra(0, 40);
  s.d = s.query_len + s.context_len + n + extra(rng);
  return s;
}

}  // namespace lea::testing
