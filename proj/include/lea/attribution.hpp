#pragma once

// Per-token dependence flags for the query-only (xy) and query+context (xθy)
// configurations, the LEA bucket distribution, and layer-wise rank profiles.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lea/error.hpp"
#include "lea/linalg.hpp"

namespace lea {

enum class SequenceKey { xy, xthetay };

inline std::string_view to_string(SequenceKey k) { return k == SequenceKey::xy ? "XY" : "XTHETAY"; }

inline SequenceKey parse_sequence_key(std::string_view s) {
  if (s == "XY") return SequenceKey::xy;
  if (s == "XTHETAY") return SequenceKey::xthetay;
  throw schema_error("unknown sequence key '" + std::string(s) + "'");
}

enum class FlagMode { sequential, base_only };

inline std::string_view to_string(FlagMode m) { return m == FlagMode::sequential ? "sequential" : "base-only"; }

inline FlagMode parse_flag_mode(std::string_view s) {
  if (s == "sequential") return FlagMode::sequential;
  if (s == "base-only" || s == "base_only") return FlagMode::base_only;
  throw validation_error("unknown flag mode '" + std::string(s) + "'");
}

/// Half-open token index range.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  bool empty() const noexcept { return begin == end; }
  bool contains(std::size_t i) const noexcept { return i >= begin && i < end; }

  friend bool operator==(const Span&, const Span&) = default;
};

struct Token {
  std::int64_t id = 0;
  std::string text;

  friend bool operator==(const Token&, const Token&) = default;
};

/// Tokens of one prompt+response configuration with the query (x), context
/// (θ) and response (y) spans marked. Tokens outside every span (chat
/// template, prompt markers) are never attributed.
struct SegmentedSequence {
  SequenceKey key = SequenceKey::xy;
  std::vector<Token> tokens;
  Span query;
  Span context;
  Span response;
  HiddenStateMatrix states;

  std::size_t attributed_count() const noexcept { return query.size() + context.size() + response.size(); }

  void validate() const {
    const std::string where = std::string(to_string(key));
    for (const Span* s : {&query, &context, &response})
      if (s->begin > s->end || s->end > tokens.size()) throw schema_error("span out of range", where);
    if (key == SequenceKey::xy && !context.empty()) throw schema_error("XY sequence carries a context span", where);
    if (query.end > response.begin) throw schema_error("query span must precede response span", where);
    if (!context.empty() && (context.begin < query.end || context.end > response.begin))
      throw schema_error("context span must lie between query and response", where);
    if (response.empty()) throw schema_error("response span is empty", where);
    if (states.rows() != tokens.size())
      throw schema_error("states have " + std::to_string(states.rows()) + " rows for " +
                             std::to_string(tokens.size()) + " tokens",
                         where);
  }

  /// States of the attributed rows only, in order x, θ, y.
  HiddenStateMatrix attributed_states() const {
    std::vector<float> data;
    data.reserve(attributed_count() * states.dim());
    for (const Span* s : {&query, &context, &response})
      for (std::size_t i = s->begin; i < s->end; ++i) {
        auto r = states.row(i);
        data.insert(data.end(), r.begin(), r.end());
      }
    return {attributed_count(), states.dim(), std::move(data), states.layer_index()};
  }
};

struct SequencePair {
  SegmentedSequence xy;
  SegmentedSequence xthetay;

  /// No retrieved context: the xθy configuration degenerates to xy.
  bool degenerate() const noexcept { return xthetay.context.empty(); }
};

struct DependenceFlags {
  SequenceKey config = SequenceKey::xy;
  std::vector<std::uint8_t> flags;  // δ_i ∈ {0,1}, indexed by response position

  std::size_t size() const noexcept { return flags.size(); }
  friend bool operator==(const DependenceFlags&, const DependenceFlags&) = default;
};

/// δ_i = 1 iff response token i increases the rank of the base rows
/// (query for xy, query+context for xθy). In sequential mode every tested
/// response row joins the span afterwards; in base-only mode each row is
/// tested against the base alone.
inline DependenceFlags dependence_flags(const SegmentedSequence& seq, FlagMode mode = FlagMode::sequential,
                                        const ToleranceConfig& tol = {}) {
  seq.validate();
  tol.validate();
  OrthoBasis basis(seq.states.dim());
  for (const Span* s : {&seq.query, &seq.context})
    for (std::size_t i = s->begin; i < s->end; ++i) (void)basis.insert(seq.states.row(i), tol);

  DependenceFlags out{seq.key, {}};
  out.flags.reserve(seq.response.size());
  for (std::size_t i = seq.response.begin; i < seq.response.end; ++i) {
    const bool increased =
        mode == FlagMode::sequential ? basis.insert(seq.states.row(i), tol) : basis.independent(seq.states.row(i), tol);
    out.flags.push_back(increased ? 1 : 0);
  }
  return out;
}

struct PairFlags {
  DependenceFlags xy;
  DependenceFlags xthetay;
};

/// Flags for both configurations. A degenerate pair (empty context) reuses
/// the xy flags for xθy verbatim.
inline PairFlags pair_flags(const SequencePair& pair, FlagMode mode = FlagMode::sequential,
                            const ToleranceConfig& tol = {}) {
  PairFlags out;
  out.xy = dependence_flags(pair.xy, mode, tol);
  if (pair.degenerate()) {
    pair.xthetay.validate();
    out.xthetay = out.xy;
    out.xthetay.config = SequenceKey::xthetay;
  } else {
    out.xthetay = dependence_flags(pair.xthetay, mode, tol);
  }
  return out;
}

enum class Bucket { fnd, rag, q, inconsistent, filtered };

inline std::string_view to_string(Bucket b) {
  switch (b) {
    case Bucket::fnd: return "FND";
    case Bucket::rag: return "RAG";
    case Bucket::q: return "Q";
    case Bucket::inconsistent: return "INCONSISTENT";
    case Bucket::filtered: return "FILTERED";
  }
  return "?";
}

/// (δ_xy, δ_xθy): (1,1) fnd, (1,0) rag, (0,0) q, (0,1) inconsistent.
constexpr Bucket classify_token(bool independent_xy, bool independent_xthetay) noexcept {
  if (independent_xy) return independent_xthetay ? Bucket::fnd : Bucket::rag;
  return independent_xthetay ? Bucket::inconsistent : Bucket::q;
}

/// Fraction of tokens in a_inconsistent above which a run is unhealthy.
inline constexpr double kInconsistencyBound = 0.01;

struct LeaDistribution {
  std::size_t n_fnd = 0;
  std::size_t n_rag = 0;
  std::size_t n_q = 0;
  std::size_t n_inconsistent = 0;
  std::size_t denominator = 0;
  double a_fnd = 0.0;
  double a_rag = 0.0;
  double a_q = 0.0;
  double a_inconsistent = 0.0;

  bool empty() const noexcept { return denominator == 0; }
  bool healthy() const noexcept { return a_inconsistent <= kInconsistencyBound; }

  friend bool operator==(const LeaDistribution&, const LeaDistribution&) = default;
};

inline LeaDistribution lea_from_counts(std::size_t fnd, std::size_t rag, std::size_t q, std::size_t inconsistent) {
  LeaDistribution d{fnd, rag, q, inconsistent, fnd + rag + q + inconsistent};
  if (d.denominator > 0) {
    const auto n = static_cast<double>(d.denominator);
    d.a_fnd = static_cast<double>(fnd) / n;
    d.a_rag = static_cast<double>(rag) / n;
    d.a_q = static_cast<double>(q) / n;
    d.a_inconsistent = static_cast<double>(inconsistent) / n;
  }
  return d;
}

/// Buckets every kept response token. An all-false mask yields an empty
/// distribution rather than an error.
inline LeaDistribution lea(const DependenceFlags& flags_xy, const DependenceFlags& flags_xthetay,
                           const std::vector<bool>& keep) {
  if (flags_xy.size() != flags_xthetay.size())
    throw schema_error("flag lists differ in length: " + std::to_string(flags_xy.size()) + " vs " +
                       std::to_string(flags_xthetay.size()));
  if (keep.size() != flags_xy.size())
    throw schema_error("mask length " + std::to_string(keep.size()) + " does not match " +
                       std::to_string(flags_xy.size()) + " response tokens");
  std::size_t counts[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < flags_xy.size(); ++i) {
    if (!keep[i]) continue;
    ++counts[static_cast<int>(classify_token(flags_xy.flags[i] != 0, flags_xthetay.flags[i] != 0))];
  }
  return lea_from_counts(counts[0], counts[1], counts[2], counts[3]);
}

inline LeaDistribution lea(const DependenceFlags& flags_xy, const DependenceFlags& flags_xthetay) {
  return lea(flags_xy, flags_xthetay, std::vector<bool>(flags_xy.size(), true));
}

/// Rounds half away from zero; used for every human-facing percentage.
inline long round_percent(double fraction) { return std::lround(fraction * 100.0); }

struct RankEvolutionRow {
  int layer = 0;
  std::size_t rank_xthetay = 0;
  std::size_t tokens_xthetay = 0;
  std::size_t rank_xy = 0;
  std::size_t tokens_xy = 0;

  double percent_xthetay() const { return 100.0 * static_cast<double>(rank_xthetay) / static_cast<double>(tokens_xthetay); }
  double percent_xy() const { return 100.0 * static_cast<double>(rank_xy) / static_cast<double>(tokens_xy); }
};

/// Rank of the attributed rows (x, θ, y) as a share of their count, per
/// layer, ordered by layer index. Each pair must hold one layer of the same
/// prompt.
inline std::vector<RankEvolutionRow> rank_evolution(std::span<const SequencePair> layers,
                                                    const ToleranceConfig& tol = {}) {
  if (layers.empty()) throw validation_error("rank evolution needs at least one layer");
  std::map<int, RankEvolutionRow> rows;
  const std::size_t n_xy = layers.front().xy.attributed_count();
  const std::size_t n_xty = layers.front().xthetay.attributed_count();
  for (const SequencePair& p : layers) {
    p.xy.validate();
    p.xthetay.validate();
    const int layer = p.xy.states.layer_index();
    const std::string where = "layer " + std::to_string(layer);
    if (p.xthetay.states.layer_index() != layer) throw schema_error("pair mixes layers", where);
    if (p.xy.attributed_count() != n_xy || p.xthetay.attributed_count() != n_xty)
      throw schema_error("token counts differ across layers", where);
    if (rows.contains(layer)) throw schema_error("duplicate layer", where);
    RankEvolutionRow r;
    r.layer = layer;
    r.tokens_xy = n_xy;
    r.tokens_xthetay = n_xty;
    r.rank_xy = numerical_rank(p.xy.attributed_states(), tol);
    r.rank_xthetay = numerical_rank(p.xthetay.attributed_states(), tol);
    rows.emplace(layer, r);
  }
  std::vector<RankEvolutionRow> out;
  for (auto& [_, r] : rows) out.push_back(r);
  return out;
}

}  // namespace lea
