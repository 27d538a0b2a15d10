#pragma once

// Hidden-state dump format: a JSON manifest plus a raw sidecar
// (`<manifest>.bin`) of little-endian f32 rows, one region per
// (sequence, layer), addressed by byte offset and length.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lea/attribution.hpp"
#include "lea/error.hpp"
#include "lea/filtering.hpp"
#include "lea/io.hpp"
#include "lea/linalg.hpp"

namespace lea {

inline constexpr int kDumpFormatVersion = 1;

struct RegionRef {
  int layer = 0;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;

  friend bool operator==(const RegionRef&, const RegionRef&) = default;
};

struct SequenceEntry {
  SequenceKey key = SequenceKey::xy;
  std::vector<Token> tokens;
  Span query;
  Span context;
  Span response;
  std::vector<RegionRef> regions;

  friend bool operator==(const SequenceEntry&, const SequenceEntry&) = default;
};

struct StateDumpManifest {
  int format_version = kDumpFormatVersion;
  std::string model_id;
  std::string tokenizer_id;
  std::size_t d = 0;
  std::vector<int> layers;
  std::vector<SequenceEntry> sequences;
  std::vector<TokenProbRecord> probabilities;
  bool greedy_decoding = true;
  std::string prompt_template_version;
  std::string sidecar_sha256;
  std::uint64_t sidecar_bytes = 0;
  // Optional provenance of the prompt; echoed into reports.
  std::string cve_id;
  std::string scenario;

  const SequenceEntry* find(SequenceKey key) const {
    for (const SequenceEntry& s : sequences)
      if (s.key == key) return &s;
    return nullptr;
  }
};

struct StateDump {
  StateDumpManifest manifest;
  std::map<std::pair<SequenceKey, int>, HiddenStateMatrix> states;

  const HiddenStateMatrix& at(SequenceKey key, int layer) const {
    auto it = states.find({key, layer});
    if (it == states.end())
      throw schema_error("no states for sequence at layer",
                         std::string(to_string(key)) + " layer " + std::to_string(layer));
    return it->second;
  }
};

inline std::filesystem::path sidecar_path(const std::filesystem::path& manifest) {
  std::filesystem::path p = manifest;
  p += ".bin";
  return p;
}

namespace detail {

inline nlohmann::json span_json(const Span& s) { return nlohmann::json::array({s.begin, s.end}); }

inline Span span_from_json(const nlohmann::json& j, const std::string& where) {
  if (j.is_null()) return {};
  if (!j.is_array() || j.size() != 2) throw schema_error("span must be [begin, end]", where);
  return {j[0].get<std::size_t>(), j[1].get<std::size_t>()};
}

inline const nlohmann::json& require(const nlohmann::json& j, const char* field, const std::string& where) {
  auto it = j.find(field);
  if (it == j.end()) throw schema_error(std::string("missing field '") + field + "'", where);
  return *it;
}

}  // namespace detail

inline nlohmann::json manifest_to_json(const StateDumpManifest& m) {
  using nlohmann::json;
  json seqs = json::array();
  for (const SequenceEntry& s : m.sequences) {
    json tokens = json::array();
    for (const Token& t : s.tokens) tokens.push_back({{"id", t.id}, {"text", t.text}});
    json regions = json::array();
    for (const RegionRef& r : s.regions) regions.push_back({{"layer", r.layer}, {"offset", r.offset}, {"length", r.length}});
    seqs.push_back({{"key", to_string(s.key)},
                    {"tokens", std::move(tokens)},
                    {"spans",
                     {{"query", detail::span_json(s.query)},
                      {"context", s.key == SequenceKey::xy ? json(nullptr) : detail::span_json(s.context)},
                      {"response", detail::span_json(s.response)}}},
                    {"regions", std::move(regions)}});
  }
  json probs = json::array();
  for (const TokenProbRecord& p : m.probabilities)
    probs.push_back({{"response_index", p.response_index},
                     {"token_text", p.token_text},
                     {"p_xthetay", p.p_xthetay},
                     {"p_xy", p.p_xy},
                     {"delta_p", p.delta_p}});
  json out{{"format_version", m.format_version},
          {"model_id", m.model_id},
          {"tokenizer_id", m.tokenizer_id},
          {"d", m.d},
          {"dtype", "f32le"},
          {"layers", m.layers},
          {"creation", {{"greedy_decoding", m.greedy_decoding}, {"prompt_template_version", m.prompt_template_version}}},
          {"sidecar", {{"sha256", m.sidecar_sha256}, {"bytes", m.sidecar_bytes}}},
          {"sequences", std::move(seqs)},
          {"probabilities", std::move(probs)}};
  if (!m.cve_id.empty() || !m.scenario.empty()) out["sample"] = {{"cve_id", m.cve_id}, {"scenario", m.scenario}};
  return out;
}

inline StateDumpManifest manifest_from_json(const nlohmann::json& j, const std::string& where = "manifest") {
  using detail::require;
  try {
    StateDumpManifest m;
    m.format_version = require(j, "format_version", where).get<int>();
    if (m.format_version != kDumpFormatVersion)
      throw schema_error("unsupported format_version " + std::to_string(m.format_version), where);
    if (j.value("dtype", std::string("f32le")) != "f32le") throw schema_error("unsupported dtype", where);
    m.model_id = require(j, "model_id", where).get<std::string>();
    m.tokenizer_id = j.value("tokenizer_id", std::string());
    m.d = require(j, "d", where).get<std::size_t>();
    if (m.d == 0) throw schema_error("d must be >= 1", where);
    m.layers = require(j, "layers", where).get<std::vector<int>>();
    if (auto c = j.find("creation"); c != j.end()) {
      m.greedy_decoding = c->value("greedy_decoding", true);
      m.prompt_template_version = c->value("prompt_template_version", std::string());
    }
    if (auto sj = j.find("sample"); sj != j.end()) {
      m.cve_id = sj->value("cve_id", std::string());
      m.scenario = sj->value("scenario", std::string());
    }
    const auto& side = require(j, "sidecar", where);
    m.sidecar_sha256 = require(side, "sha256", where + ".sidecar").get<std::string>();
    m.sidecar_bytes = require(side, "bytes", where + ".sidecar").get<std::uint64_t>();
    for (const auto& sj : require(j, "sequences", where)) {
      SequenceEntry s;
      s.key = parse_sequence_key(require(sj, "key", where).get<std::string>());
      const std::string sw = where + "." + std::string(to_string(s.key));
      for (const auto& tj : require(sj, "tokens", sw))
        s.tokens.push_back({require(tj, "id", sw).get<std::int64_t>(), require(tj, "text", sw).get<std::string>()});
      const auto& spans = require(sj, "spans", sw);
      s.query = detail::span_from_json(require(spans, "query", sw), sw);
      s.context = detail::span_from_json(spans.value("context", nlohmann::json(nullptr)), sw);
      s.response = detail::span_from_json(require(spans, "response", sw), sw);
      for (const auto& rj : require(sj, "regions", sw))
        s.regions.push_back({require(rj, "layer", sw).get<int>(), require(rj, "offset", sw).get<std::uint64_t>(),
                             require(rj, "length", sw).get<std::uint64_t>()});
      m.sequences.push_back(std::move(s));
    }
    if (auto pj = j.find("probabilities"); pj != j.end())
      for (const auto& r : *pj) {
        TokenProbRecord p{require(r, "response_index", where).get<std::size_t>(),
                          require(r, "token_text", where).get<std::string>(), require(r, "p_xthetay", where).get<double>(),
                          require(r, "p_xy", where).get<double>(), require(r, "delta_p", where).get<double>()};
        p.validate();
        m.probabilities.push_back(std::move(p));
      }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw schema_error(std::string("malformed manifest: ") + e.what(), where);
  }
}

/// Checks manifest-level invariants that need no sidecar bytes.
inline void validate_manifest(const StateDumpManifest& m) {
  std::map<SequenceKey, int> seen;
  for (const SequenceEntry& s : m.sequences) {
    const std::string where = std::string(to_string(s.key));
    if (++seen[s.key] > 1) throw schema_error("duplicate sequence key", where);
    std::map<int, int> layer_seen;
    for (const RegionRef& r : s.regions) {
      const std::string rw = where + " layer " + std::to_string(r.layer);
      if (std::find(m.layers.begin(), m.layers.end(), r.layer) == m.layers.end())
        throw schema_error("region for undeclared layer", rw);
      if (++layer_seen[r.layer] > 1) throw schema_error("duplicate region", rw);
      if (r.length != s.tokens.size() * m.d * sizeof(float))
        throw schema_error("token-count inconsistency: region holds " + std::to_string(r.length) + " bytes for " +
                               std::to_string(s.tokens.size()) + " tokens x d=" + std::to_string(m.d),
                           rw);
    }
    for (int layer : m.layers)
      if (!layer_seen.contains(layer)) throw schema_error("missing region", where + " layer " + std::to_string(layer));
  }
  const SequenceEntry* xy = m.find(SequenceKey::xy);
  const SequenceEntry* xty = m.find(SequenceKey::xthetay);
  if (xy && xty) {
    if (xy->response.size() != xty->response.size())
      throw schema_error("response spans differ in length between XY and XTHETAY");
    if (xy->response.end <= xy->tokens.size() && xty->response.end <= xty->tokens.size())
      for (std::size_t i = 0; i < xy->response.size(); ++i)
        if (xy->tokens[xy->response.begin + i].text != xty->tokens[xty->response.begin + i].text)
          throw schema_error("response token texts differ between XY and XTHETAY",
                             "response index " + std::to_string(i));
  }
  if (!m.probabilities.empty()) {
    const SequenceEntry* ref = xy ? xy : xty;
    const std::size_t ly = ref ? ref->response.size() : 0;
    if (m.probabilities.size() != ly)
      throw validation_error("probability records do not cover the response (" + std::to_string(m.probabilities.size()) +
                             " records for " + std::to_string(ly) + " tokens)");
  }
}

/// Reads and validates a manifest and its sidecar. Truncation is reported
/// before the checksum so the offending region can be named.
inline StateDump load_dump(const std::filesystem::path& path) {
  StateDump dump;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw schema_error(std::string("manifest is not valid JSON: ") + e.what(), path.string());
  }
  dump.manifest = manifest_from_json(j, path.filename().string());
  const StateDumpManifest& m = dump.manifest;
  validate_manifest(m);

  const auto bytes = io::read_bytes(sidecar_path(path));
  for (const SequenceEntry& s : m.sequences)
    for (const RegionRef& r : s.regions)
      if (r.offset + r.length > bytes.size())
        throw Error(ErrorKind::truncated,
                    "sidecar truncated: region needs bytes up to " + std::to_string(r.offset + r.length) + ", file has " +
                        std::to_string(bytes.size()),
                    std::string(to_string(s.key)) + " layer " + std::to_string(r.layer));
  if (bytes.size() != m.sidecar_bytes)
    throw Error(ErrorKind::truncated,
                "sidecar size " + std::to_string(bytes.size()) + " differs from manifest " + std::to_string(m.sidecar_bytes),
                sidecar_path(path).string());
  if (io::sha256_hex(bytes) != m.sidecar_sha256)
    throw Error(ErrorKind::checksum, "sidecar checksum mismatch", sidecar_path(path).string());

  for (const SequenceEntry& s : m.sequences)
    for (const RegionRef& r : s.regions) {
      std::vector<float> data(r.length / sizeof(float));
      for (std::size_t k = 0; k < data.size(); ++k) {
        std::uint32_t bits = 0;
        std::memcpy(&bits, bytes.data() + r.offset + k * sizeof(float), sizeof bits);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
        data[k] = std::bit_cast<float>(bits);
        if (!std::isfinite(data[k]))
          throw validation_error("non-finite hidden state value",
                                 std::string(to_string(s.key)) + " layer " + std::to_string(r.layer) + " row " +
                                     std::to_string(k / m.d) + ", col " + std::to_string(k % m.d));
      }
      dump.states.emplace(std::pair{s.key, r.layer}, HiddenStateMatrix(s.tokens.size(), m.d, std::move(data), r.layer));
    }
  return dump;
}

/// Lays out every (sequence, layer) block of `dump.states` in manifest
/// order, fills regions and the sidecar checksum, then writes sidecar and
/// manifest atomically. Returns the finalized manifest.
inline StateDumpManifest write_dump(const std::filesystem::path& path, StateDump& dump) {
  StateDumpManifest& m = dump.manifest;
  std::vector<std::uint8_t> bytes;
  for (SequenceEntry& s : m.sequences) {
    s.regions.clear();
    for (int layer : m.layers) {
      const HiddenStateMatrix& h = dump.at(s.key, layer);
      if (h.rows() != s.tokens.size() || h.dim() != m.d)
        throw schema_error("states shape does not match tokens x d", std::string(to_string(s.key)) + " layer " +
                                                                         std::to_string(layer));
      RegionRef r{layer, bytes.size(), h.data().size() * sizeof(float)};
      for (float v : h.data()) {
        auto bits = std::bit_cast<std::uint32_t>(v);
        for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
      }
      s.regions.push_back(r);
    }
  }
  m.sidecar_bytes = bytes.size();
  m.sidecar_sha256 = io::sha256_hex(bytes);
  validate_manifest(m);
  io::write_atomic(sidecar_path(path), bytes);
  io::write_atomic(path, manifest_to_json(m).dump(1) + "\n");
  return m;
}

/// Carves the XY and XTHETAY sequences at `layer` out of a loaded dump.
inline SequencePair build_pair(const StateDump& dump, int layer = 0) {
  const StateDumpManifest& m = dump.manifest;
  auto make = [&](SequenceKey key) {
    const SequenceEntry* e = m.find(key);
    if (!e) throw schema_error("dump has no sequence", std::string(to_string(key)));
    SegmentedSequence s{key, e->tokens, e->query, key == SequenceKey::xy ? Span{} : e->context, e->response,
                        dump.at(key, layer)};
    s.validate();
    return s;
  };
  SequencePair p{make(SequenceKey::xy), make(SequenceKey::xthetay)};
  if (p.xy.response.size() != p.xthetay.response.size())
    throw schema_error("response spans differ in length between XY and XTHETAY");
  return p;
}

/// Response token texts in order (from the XY sequence).
inline std::vector<std::string> response_texts(const SegmentedSequence& s) {
  std::vector<std::string> out;
  for (std::size_t i = s.response.begin; i < s.response.end; ++i) out.push_back(s.tokens[i].text);
  return out;
}

}  // namespace lea
