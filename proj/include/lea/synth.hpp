#pragma once

// Synthetic dumps with planted dependency structure and recorded ground
// truth, for oracle and end-to-end testing.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "lea/attribution.hpp"
#include "lea/corpus.hpp"
#include "lea/dump.hpp"
#include "lea/error.hpp"
#include "lea/filtering.hpp"
#include "lea/linalg.hpp"

namespace lea {

enum class EmbeddingMode {
  random_ortho,  // position-free rows built on orthonormal directions; ground truth exact
  sinusoidal_pe  // token embedding + additive sinusoidal position code
};

inline EmbeddingMode parse_embedding_mode(std::string_view s) {
  if (s == "random_ortho" || s == "RANDOM_ORTHO") return EmbeddingMode::random_ortho;
  if (s == "sinusoidal_pe" || s == "SINUSOIDAL_PE") return EmbeddingMode::sinusoidal_pe;
  throw validation_error("unknown embedding mode '" + std::string(s) + "'");
}

inline std::string_view to_string(EmbeddingMode m) {
  return m == EmbeddingMode::random_ortho ? "random_ortho" : "sinusoidal_pe";
}

enum class Segment { query, context, response };

inline Segment parse_segment(std::string_view s) {
  if (s == "query") return Segment::query;
  if (s == "context") return Segment::context;
  if (s == "response") return Segment::response;
  throw validation_error("unknown segment '" + std::string(s) + "'");
}

struct PlantedRow {
  bool fresh = true;
  Segment source = Segment::query;
  std::size_t row = 0;
  double scale = 1.0;
  std::string text;  // empty: generated or inherited from the source token
  std::optional<double> p_xthetay;
  std::optional<double> p_xy;
};

inline PlantedRow copy_of(Segment source, std::size_t row, double scale = 1.0) {
  PlantedRow r;
  r.fresh = false;
  r.source = source;
  r.row = row;
  r.scale = scale;
  return r;
}

struct LayerPlant {
  int index = 1;
  std::size_t duplicate_rows = 0;
};

struct SynthSpec {
  std::size_t d = 64;
  EmbeddingMode embedding = EmbeddingMode::random_ortho;
  std::size_t query_len = 4;
  std::size_t context_len = 4;
  std::vector<PlantedRow> response;
  double noise = 0.0;  // relative perturbation applied to copied rows
  bool template_tokens = true;
  std::vector<LayerPlant> extra_layers;
  std::string model_id = "synthetic";
  std::vector<std::string> query_texts;    // optional token texts
  std::vector<std::string> context_texts;  // optional token texts

  void validate() const {
    if (d == 0) throw validation_error("d must be >= 1", "synth spec");
    if (response.empty()) throw validation_error("response must plant at least one row", "synth spec");
    if (!(noise >= 0.0) || !std::isfinite(noise)) throw validation_error("noise must be finite and >= 0", "synth spec");
    if (!query_texts.empty() && query_texts.size() != query_len)
      throw validation_error("query_texts length differs from query_len", "synth spec");
    if (!context_texts.empty() && context_texts.size() != context_len)
      throw validation_error("context_texts length differs from context_len", "synth spec");
    std::size_t fresh = 0;
    for (std::size_t k = 0; k < response.size(); ++k) {
      const PlantedRow& r = response[k];
      const std::string where = "synth spec response[" + std::to_string(k) + "]";
      if (r.fresh) {
        ++fresh;
      } else {
        const std::size_t limit = r.source == Segment::query ? query_len : r.source == Segment::context ? context_len : k;
        if (r.row >= limit) throw validation_error("planted dependency references out-of-range row", where);
        if (r.scale == 0.0 || !std::isfinite(r.scale)) throw validation_error("copy scale must be finite and nonzero", where);
      }
      for (auto p : {r.p_xthetay, r.p_xy})
        if (p && !(*p >= 0.0 && *p <= 1.0)) throw validation_error("probability outside [0,1]", where);
    }
    if (embedding == EmbeddingMode::random_ortho && query_len + context_len + fresh > d)
      throw validation_error("d is too small for the planted orthogonal directions", "synth spec");
    std::set<int> layers{0};
    for (const LayerPlant& l : extra_layers)
      if (l.index <= 0 || !layers.insert(l.index).second)
        throw validation_error("extra layer indices must be distinct and > 0", "synth spec");
  }
};

/// Expands a count-based plan (θ copies, x copies, fresh rows) into planted
/// rows. Copies use distinct source rows; the order is shuffled by `seed`.
inline std::vector<PlantedRow> plan_response(std::size_t context_copies, std::size_t query_copies, std::size_t fresh,
                                             std::size_t query_len, std::size_t context_len, std::uint64_t seed) {
  if (context_copies > context_len || query_copies > query_len)
    throw validation_error("more planted copies than distinct source rows", "synth plan");
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(k);
    return idx;
  };
  std::vector<PlantedRow> rows;
  for (std::size_t r : pick(context_len, context_copies)) rows.push_back(copy_of(Segment::context, r));
  for (std::size_t r : pick(query_len, query_copies)) rows.push_back(copy_of(Segment::query, r));
  for (std::size_t k = 0; k < fresh; ++k) rows.push_back({});
  std::shuffle(rows.begin(), rows.end(), rng);
  return rows;
}

struct GroundTruth {
  bool available = false;  // exact only in random_ortho mode
  DependenceFlags sequential_xy, sequential_xthetay;
  DependenceFlags base_only_xy, base_only_xthetay;
  LeaDistribution sequential_lea, base_only_lea;
  std::vector<RankEvolutionRow> ranks;  // expected per-layer ranks for extra layers
};

struct SynthResult {
  StateDump dump;
  GroundTruth truth;
};

namespace detail {

inline std::vector<double> gaussian(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(d);
  for (double& x : v) x = n(rng);
  return v;
}

inline double l2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline std::vector<double> sinusoidal_position(std::size_t pos, std::size_t d) {
  std::vector<double> p(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double rate = std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / static_cast<double>(d));
    p[j] = j % 2 == 0 ? std::sin(static_cast<double>(pos) * rate) : std::cos(static_cast<double>(pos) * rate);
  }
  return p;
}

inline std::vector<double> token_embedding(std::uint64_t seed, std::int64_t id, std::size_t d) {
  std::mt19937_64 rng(seed ^ (static_cast<std::uint64_t>(id) * 0x9E3779B97F4A7C15ULL));
  return gaussian(rng, d);
}

// One prompt token before layout: where it belongs and how its row is built.
struct PlannedToken {
  Token token;
  int segment = -1;  // -1 template, 0 query, 1 context, 2 response
  std::vector<double> row;  // random_ortho mode: position-free row
  int direction = -1;       // random_ortho mode: planted direction id (-1: template)
};

}  // namespace detail

/// Deterministic for a fixed (spec, seed).
inline SynthResult synth_dump(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  using detail::PlannedToken;
  std::mt19937_64 rng(seed);
  const std::size_t d = spec.d;
  const bool ortho = spec.embedding == EmbeddingMode::random_ortho;

  std::size_t fresh_count = 0;
  for (const PlantedRow& r : spec.response) fresh_count += r.fresh ? 1 : 0;

  std::vector<std::vector<double>> directions;
  if (ortho) {
    const std::size_t need = spec.query_len + spec.context_len + fresh_count;
    OrthoBasis basis(d);
    const ToleranceConfig strict{1e-3, 1e-12};
    while (basis.rank() < need) (void)basis.insert(detail::gaussian(rng, d), strict);
    for (std::size_t k = 0; k < need; ++k) {
      auto q = basis.vector(k);
      directions.emplace_back(q.begin(), q.end());
    }
  }
  std::uniform_real_distribution<double> magnitude(0.5, 2.0);
  int next_dir = 0;
  auto base_token = [&](int segment, std::int64_t id, std::string text) {
    PlannedToken t{{id, std::move(text)}, segment, {}, -1};
    if (ortho) {
      t.direction = next_dir;
      const double m = magnitude(rng);
      for (double x : directions[static_cast<std::size_t>(next_dir)]) t.row.push_back(m * x);
      ++next_dir;
    }
    return t;
  };

  std::vector<PlannedToken> query, context, response;
  for (std::size_t i = 0; i < spec.query_len; ++i)
    query.push_back(base_token(0, 1000 + static_cast<std::int64_t>(i),
                               spec.query_texts.empty() ? "q" + std::to_string(i) : spec.query_texts[i]));
  for (std::size_t i = 0; i < spec.context_len; ++i)
    context.push_back(base_token(1, 100000 + static_cast<std::int64_t>(i),
                                 spec.context_texts.empty() ? "c" + std::to_string(i) : spec.context_texts[i]));
  std::int64_t fresh_id = 200000;
  for (std::size_t k = 0; k < spec.response.size(); ++k) {
    const PlantedRow& p = spec.response[k];
    PlannedToken t;
    if (p.fresh) {
      t = base_token(2, fresh_id++, "r" + std::to_string(k));
    } else {
      const auto& src = p.source == Segment::query ? query[p.row] : p.source == Segment::context ? context[p.row] : response[p.row];
      t = {src.token, 2, {}, src.direction};
      if (ortho) {
        for (double x : src.row) t.row.push_back(p.scale * x);
        if (spec.noise > 0.0) {
          auto u = detail::gaussian(rng, d);
          const double scale = spec.noise * detail::l2(t.row) / detail::l2(u);
          for (std::size_t j = 0; j < d; ++j) t.row[j] += scale * u[j];
        }
      }
    }
    if (!p.text.empty()) t.token.text = p.text;
    response.push_back(std::move(t));
  }

  // Template markers: the same tokens in both configurations.
  static constexpr std::string_view kMarkers[] = {"<<Query>>", "<</Query>>", "<<RAG>>", "<</RAG>>", "<<Response>>"};
  std::vector<PlannedToken> markers;
  for (std::size_t m = 0; m < 5; ++m) {
    PlannedToken t{{static_cast<std::int64_t>(m + 1), std::string(kMarkers[m])}, -1, {}, -1};
    if (ortho) t.row = detail::gaussian(rng, d);
    markers.push_back(std::move(t));
  }

  auto layout = [&](SequenceKey key) {
    const bool with_context = key == SequenceKey::xthetay;
    std::vector<const PlannedToken*> seq;
    SequenceEntry e;
    e.key = key;
    auto push_marker = [&](std::size_t m) {
      if (spec.template_tokens) seq.push_back(&markers[m]);
    };
    push_marker(0);
    e.query.begin = seq.size();
    for (auto& t : query) seq.push_back(&t);
    e.query.end = seq.size();
    push_marker(1);
    push_marker(2);
    e.context.begin = e.context.end = seq.size();
    if (with_context) {
      for (auto& t : context) seq.push_back(&t);
      e.context.end = seq.size();
    }
    push_marker(3);
    push_marker(4);
    e.response.begin = seq.size();
    for (auto& t : response) seq.push_back(&t);
    e.response.end = seq.size();
    if (!with_context) e.context = {};

    std::vector<float> data;
    data.reserve(seq.size() * d);
    for (std::size_t pos = 0; pos < seq.size(); ++pos) {
      e.tokens.push_back(seq[pos]->token);
      if (ortho) {
        for (double x : seq[pos]->row) data.push_back(static_cast<float>(x));
      } else {
        auto emb = detail::token_embedding(seed, seq[pos]->token.id, d);
        auto pe = detail::sinusoidal_position(pos, d);
        for (std::size_t j = 0; j < d; ++j) data.push_back(static_cast<float>(emb[j] + pe[j]));
      }
    }
    return std::pair{std::move(e), HiddenStateMatrix(seq.size(), d, std::move(data), 0)};
  };

  SynthResult out;
  StateDumpManifest& m = out.dump.manifest;
  m.model_id = spec.model_id;
  m.tokenizer_id = "synthetic";
  m.d = d;
  m.layers = {0};
  m.greedy_decoding = true;
  m.prompt_template_version = std::string(kPromptTemplateVersion);
  for (SequenceKey key : {SequenceKey::xy, SequenceKey::xthetay}) {
    auto [entry, states] = layout(key);
    m.sequences.push_back(std::move(entry));
    out.dump.states.emplace(std::pair{key, 0}, std::move(states));
  }

  for (std::size_t k = 0; k < spec.response.size(); ++k) {
    const PlantedRow& p = spec.response[k];
    m.probabilities.push_back(
        TokenProbRecord::make(k, response[k].token.text, p.p_xthetay.value_or(0.9), p.p_xy.value_or(0.1)));
  }

  // Extra layers: fresh Gaussian rows with `duplicate_rows` attributed rows
  // replaced by copies of earlier attributed rows.
  for (const LayerPlant& lp : spec.extra_layers) {
    m.layers.push_back(lp.index);
    RankEvolutionRow expect;
    expect.layer = lp.index;
    for (const SequenceEntry& e : m.sequences) {
      std::vector<std::size_t> attributed;
      for (const Span* s : {&e.query, &e.context, &e.response})
        for (std::size_t i = s->begin; i < s->end; ++i) attributed.push_back(i);
      if (lp.duplicate_rows >= attributed.size())
        throw validation_error("layer " + std::to_string(lp.index) + " plants more duplicates than rows", "synth spec");
      std::vector<std::vector<double>> rows(e.tokens.size());
      for (auto& r : rows) r = detail::gaussian(rng, d);
      std::vector<std::size_t> slots(attributed.size() - 1);
      for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i + 1;
      std::shuffle(slots.begin(), slots.end(), rng);
      slots.resize(lp.duplicate_rows);
      std::sort(slots.begin(), slots.end());
      for (std::size_t s : slots) {
        std::uniform_int_distribution<std::size_t> src(0, s - 1);
        const std::size_t from = attributed[src(rng)];
        const double scale = magnitude(rng);
        for (std::size_t j = 0; j < d; ++j) rows[attributed[s]][j] = scale * rows[from][j];
      }
      std::vector<float> data;
      for (const auto& r : rows)
        for (double x : r) data.push_back(static_cast<float>(x));
      out.dump.states.emplace(std::pair{e.key, lp.index}, HiddenStateMatrix(e.tokens.size(), d, std::move(data), lp.index));
      const std::size_t expected_rank = std::min(attributed.size() - lp.duplicate_rows, d);
      if (e.key == SequenceKey::xy) {
        expect.rank_xy = expected_rank;
        expect.tokens_xy = attributed.size();
      } else {
        expect.rank_xthetay = expected_rank;
        expect.tokens_xthetay = attributed.size();
      }
    }
    out.truth.ranks.push_back(expect);
  }
  std::sort(m.layers.begin(), m.layers.end());
  std::sort(out.truth.ranks.begin(), out.truth.ranks.end(),
            [](const RankEvolutionRow& a, const RankEvolutionRow& b) { return a.layer < b.layer; });

  if (ortho) {
    // Direction bookkeeping: a row is independent iff its direction is not
    // yet spanned.
    auto truth_flags = [&](SequenceKey key, FlagMode mode) {
      std::set<int> span;
      for (auto& t : query) span.insert(t.direction);
      if (key == SequenceKey::xthetay)
        for (auto& t : context) span.insert(t.direction);
      DependenceFlags f{key, {}};
      for (auto& t : response) {
        const bool independent = !span.contains(t.direction);
        f.flags.push_back(independent ? 1 : 0);
        if (mode == FlagMode::sequential) span.insert(t.direction);
      }
      return f;
    };
    GroundTruth& g = out.truth;
    g.available = true;
    g.sequential_xy = truth_flags(SequenceKey::xy, FlagMode::sequential);
    g.sequential_xthetay = spec.context_len == 0 ? g.sequential_xy : truth_flags(SequenceKey::xthetay, FlagMode::sequential);
    g.base_only_xy = truth_flags(SequenceKey::xy, FlagMode::base_only);
    g.base_only_xthetay = spec.context_len == 0 ? g.base_only_xy : truth_flags(SequenceKey::xthetay, FlagMode::base_only);
    g.sequential_xthetay.config = g.base_only_xthetay.config = SequenceKey::xthetay;
    auto tally = [](const DependenceFlags& a, const DependenceFlags& b) {
      std::size_t n[4] = {0, 0, 0, 0};
      for (std::size_t i = 0; i < a.flags.size(); ++i) {
        if (a.flags[i] && b.flags[i]) ++n[0];
        else if (a.flags[i]) ++n[1];
        else if (!b.flags[i]) ++n[2];
        else ++n[3];
      }
      return lea_from_counts(n[0], n[1], n[2], n[3]);
    };
    g.sequential_lea = tally(g.sequential_xy, g.sequential_xthetay);
    g.base_only_lea = tally(g.base_only_xy, g.base_only_xthetay);
  }
  return out;
}

inline PlantedRow planted_row_from_json(const nlohmann::json& j) {
  PlantedRow r;
  if (j.contains("copy")) {
    r.fresh = false;
    r.source = parse_segment(j.at("copy").get<std::string>());
    r.row = j.at("row").get<std::size_t>();
    r.scale = j.value("scale", 1.0);
  } else if (!j.value("fresh", false)) {
    throw validation_error("planted row must be {\"fresh\": true} or {\"copy\": <segment>, \"row\": n}", "synth spec");
  }
  r.text = j.value("text", std::string());
  if (j.contains("p_xthetay")) r.p_xthetay = j.at("p_xthetay").get<double>();
  if (j.contains("p_xy")) r.p_xy = j.at("p_xy").get<double>();
  return r;
}

/// Parses a spec object. `response` lists planted rows explicitly;
/// `response_plan` ({context_copies, query_copies, fresh}) expands through
/// plan_response with `seed`.
inline SynthSpec synth_spec_from_json(const nlohmann::json& j, std::uint64_t seed) {
  try {
    SynthSpec s;
    s.d = j.at("d").get<std::size_t>();
    s.embedding = parse_embedding_mode(j.value("embedding", std::string("random_ortho")));
    s.query_len = j.at("query_len").get<std::size_t>();
    s.context_len = j.value("context_len", std::size_t{0});
    s.noise = j.value("noise", 0.0);
    s.template_tokens = j.value("template_tokens", true);
    s.model_id = j.value("model_id", std::string("synthetic"));
    s.query_texts = j.value("query_texts", std::vector<std::string>{});
    s.context_texts = j.value("context_texts", std::vector<std::string>{});
    if (auto it = j.find("response"); it != j.end())
      for (const auto& r : *it) s.response.push_back(planted_row_from_json(r));
    if (auto it = j.find("response_plan"); it != j.end()) {
      auto rows = plan_response(it->value("context_copies", std::size_t{0}), it->value("query_copies", std::size_t{0}),
                                it->value("fresh", std::size_t{0}), s.query_len, s.context_len, seed);
      s.response.insert(s.response.end(), rows.begin(), rows.end());
    }
    if (auto it = j.find("layers"); it != j.end())
      for (const auto& l : *it) s.extra_layers.push_back({l.at("index").get<int>(), l.at("duplicate_rows").get<std::size_t>()});
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw schema_error(std::string("malformed synth spec: ") + e.what());
  }
}

inline nlohmann::json ground_truth_to_json(const GroundTruth& g) {
  using nlohmann::json;
  if (!g.available && g.ranks.empty()) return {{"available", false}};
  auto lea_json = [](const LeaDistribution& l) {
    return json{{"fnd", l.n_fnd}, {"rag", l.n_rag}, {"q", l.n_q}, {"inconsistent", l.n_inconsistent}, {"denominator", l.denominator}};
  };
  json out{{"available", g.available}};
  if (g.available) {
    out["sequential"] = {{"xy", g.sequential_xy.flags}, {"xthetay", g.sequential_xthetay.flags}, {"lea", lea_json(g.sequential_lea)}};
    out["base_only"] = {{"xy", g.base_only_xy.flags}, {"xthetay", g.base_only_xthetay.flags}, {"lea", lea_json(g.base_only_lea)}};
  }
  json ranks = json::array();
  for (const auto& r : g.ranks)
    ranks.push_back({{"layer", r.layer}, {"rank_xy", r.rank_xy}, {"tokens_xy", r.tokens_xy},
                     {"rank_xthetay", r.rank_xthetay}, {"tokens_xthetay", r.tokens_xthetay}});
  out["ranks"] = std::move(ranks);
  return out;
}

/// Writes `<name>.json`, its sidecar and `<name>.truth.json`. A sample
/// object {cve_id, scenario, ...} is stamped into the manifest.
inline void write_synth_dump(const nlohmann::json& spec_json, std::uint64_t seed, const std::filesystem::path& out_dir,
                             const std::string& name, const nlohmann::json& sample = nullptr) {
  const auto spec = synth_spec_from_json(spec_json, seed);
  auto result = synth_dump(spec, seed);
  if (!sample.is_null()) {
    result.dump.manifest.cve_id = sample.value("cve_id", std::string());
    result.dump.manifest.scenario = sample.value("scenario", std::string());
  }
  write_dump(out_dir / (name + ".json"), result.dump);
  io::write_atomic(out_dir / (name + ".truth.json"), ground_truth_to_json(result.truth).dump(1) + "\n");
}

/// A spec is either one dump (an object with "d") or a corpus
/// {"dumps": [{"name", "sample": {...}, ...spec}]}. Corpus entry k uses
/// seed + k, and entries with a sample are indexed in samples.jsonl.
inline void write_synth_output(const nlohmann::json& spec, std::uint64_t seed, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  if (!spec.contains("dumps")) {
    write_synth_dump(spec, seed, out_dir, "dump");
    return;
  }
  std::string index;
  std::uint64_t k = 0;
  for (const auto& entry : spec.at("dumps")) {
    const std::string name = entry.value("name", "dump" + std::to_string(k));
    const nlohmann::json sample = entry.value("sample", nlohmann::json(nullptr));
    write_synth_dump(entry, seed + k, out_dir, name, sample);
    if (!sample.is_null()) {
      nlohmann::json line = sample;
      line["dump"] = name + ".json";
      index += line.dump() + "\n";
    }
    ++k;
  }
  if (!index.empty()) io::write_atomic(out_dir / "samples.jsonl", index);
}

}  // namespace lea
