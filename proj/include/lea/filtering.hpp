#pragma once

// Keep-masks over response tokens: stop-word removal and the Δp > 0 rule.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "lea/error.hpp"
#include "lea/io.hpp"

namespace lea {

enum class DropReason { kept, stopword, nonpositive_delta };

inline std::string_view to_string(DropReason r) {
  switch (r) {
    case DropReason::kept: return "KEPT";
    case DropReason::stopword: return "STOPWORD";
    case DropReason::nonpositive_delta: return "NONPOSITIVE_DELTA";
  }
  return "?";
}

struct FilterMask {
  std::vector<bool> keep;
  std::vector<DropReason> reasons;

  FilterMask() = default;
  explicit FilterMask(std::vector<DropReason> r) : reasons(std::move(r)) {
    keep.reserve(reasons.size());
    for (DropReason x : reasons) keep.push_back(x == DropReason::kept);
  }

  static FilterMask all_kept(std::size_t n) { return FilterMask(std::vector<DropReason>(n, DropReason::kept)); }

  std::size_t size() const noexcept { return reasons.size(); }
  std::size_t kept_count() const { return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true)); }
};

namespace detail {
inline constexpr std::array kBuiltinStopWords = {
    "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "you're", "you've", "you'll",
    "you'd", "your", "yours", "yourself", "yourselves", "he", "him", "his", "himself", "she", "she's", "her",
    "hers", "herself", "it", "it's", "its", "itself", "they", "them", "their", "theirs", "themselves",
    "what", "which", "who", "whom", "this", "that", "that'll", "these", "those", "am", "is", "are", "was",
    "were", "be", "been", "being", "have", "has", "had", "having", "do", "does", "did", "doing", "a", "an",
    "the", "and", "but", "if", "or", "because", "as", "until", "while", "of", "at", "by", "for", "with",
    "about", "against", "between", "into", "through", "during", "before", "after", "above", "below", "to",
    "from", "up", "down", "in", "out", "on", "off", "over", "under", "again", "further", "then", "once",
    "here", "there", "when", "where", "why", "how", "all", "any", "both", "each", "few", "more", "most",
    "other", "some", "such", "no", "nor", "not", "only", "own", "same", "so", "than", "too", "very", "s",
    "t", "can", "will", "just", "don", "don't", "should", "should've", "now", "d", "ll", "m", "o", "re",
    "ve", "y", "ain", "aren", "aren't", "couldn", "couldn't", "didn", "didn't", "doesn", "doesn't", "hadn",
    "hadn't", "hasn", "hasn't", "haven", "haven't", "isn", "isn't", "ma", "mightn", "mightn't", "mustn",
    "mustn't", "needn", "needn't", "shan", "shan't", "shouldn", "shouldn't", "wasn", "wasn't", "weren",
    "weren't", "won", "won't", "wouldn", "wouldn't"
};
}  // namespace detail

/// Frozen, versioned stop-word list. The builtin list is byte-identical to
/// data/stopwords/en-v1.txt (one word per line, trailing newline).
class StopWordList {
 public:
  static constexpr std::string_view kBuiltinVersion = "en-v1";
  static constexpr std::string_view kBuiltinSha256 = "019f104ba2ed07436d05f9cdd3383034ad66014edc27fc651f837e1a038b6451";

  static const StopWordList& builtin() {
    static const StopWordList list = [] {
      std::string text;
      for (std::string_view w : detail::kBuiltinStopWords) {
        text += w;
        text += '\n';
      }
      return from_text(std::string(kBuiltinVersion), text);
    }();
    return list;
  }

  /// Parses one word per line. Blank lines and '#' comments are ignored.
  static StopWordList from_text(std::string version, std::string_view text) {
    StopWordList l;
    l.version_ = std::move(version);
    l.sha256_ = io::sha256_hex(text);
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t nl = text.find('\n', pos);
      if (nl == std::string_view::npos) nl = text.size();
      std::string_view line = text.substr(pos, nl - pos);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (!line.empty() && line.front() != '#') l.words_.emplace(line);
      pos = nl + 1;
    }
    return l;
  }

  /// Loads a list file; verifies it against `expected_sha256` when given,
  /// otherwise against a `<path>.sha256` sidecar when one exists.
  static StopWordList load(const std::filesystem::path& path, std::string expected_sha256 = {}) {
    const std::string text = io::read_text(path);
    if (expected_sha256.empty()) {
      std::filesystem::path sidecar = path;
      sidecar += ".sha256";
      if (std::filesystem::exists(sidecar)) {
        const std::string s = io::read_text(sidecar);
        expected_sha256 = s.substr(0, s.find_first_of(" \t\r\n"));
      }
    }
    StopWordList l = from_text(path.stem().string(), text);
    if (!expected_sha256.empty() && expected_sha256 != l.sha256_)
      throw Error(ErrorKind::checksum, "stop-word list checksum mismatch", path.string());
    return l;
  }

  const std::string& version() const noexcept { return version_; }
  const std::string& sha256() const noexcept { return sha256_; }
  std::size_t size() const noexcept { return words_.size(); }
  bool contains(std::string_view normalized) const { return words_.find(normalized) != words_.end(); }

 private:
  std::string version_;
  std::string sha256_;
  std::set<std::string, std::less<>> words_;
};

/// Strips tokenizer continuation markers (SentencePiece "▁", byte-level BPE
/// "Ġ"/"Ċ", WordPiece "##"), surrounding whitespace, and lower-cases ASCII.
inline std::string normalize_token(std::string_view token) {
  static constexpr std::string_view kMarkers[] = {"\xE2\x96\x81", "\xC4\xA0", "\xC4\x8A"};
  std::string s(token);
  for (std::string_view m : kMarkers)
    for (std::size_t p = s.find(m); p != std::string::npos; p = s.find(m, p)) s.erase(p, m.size());
  const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
  while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.pop_back();
  if (s.starts_with("##")) s.erase(0, 2);
  for (char& c : s)
    if (static_cast<unsigned char>(c) < 0x80) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline bool is_punctuation_only(std::string_view normalized) {
  return std::all_of(normalized.begin(), normalized.end(), [](char c) {
    const auto u = static_cast<unsigned char>(c);
    return u < 0x80 && std::ispunct(u);
  });
}

/// Drops stop words, punctuation-only tokens and tokens that normalize to
/// the empty string.
inline FilterMask stopword_mask(const std::vector<std::string>& tokens,
                                const StopWordList& list = StopWordList::builtin()) {
  std::vector<DropReason> reasons;
  reasons.reserve(tokens.size());
  for (const std::string& t : tokens) {
    const std::string n = normalize_token(t);
    const bool drop = n.empty() || is_punctuation_only(n) || list.contains(n);
    reasons.push_back(drop ? DropReason::stopword : DropReason::kept);
  }
  return FilterMask(std::move(reasons));
}

/// Final-layer post-softmax probabilities of one realized response token
/// with (xθy) and without (xy) the retrieved context.
struct TokenProbRecord {
  std::size_t response_index = 0;
  std::string token_text;
  double p_xthetay = 0.0;
  double p_xy = 0.0;
  double delta_p = 0.0;

  static TokenProbRecord make(std::size_t index, std::string text, double p_xthetay, double p_xy) {
    TokenProbRecord r{index, std::move(text), p_xthetay, p_xy, p_xthetay - p_xy};
    r.validate();
    return r;
  }

  void validate() const {
    const std::string where = "response index " + std::to_string(response_index);
    for (double p : {p_xthetay, p_xy})
      if (!(p >= 0.0 && p <= 1.0)) throw validation_error("probability outside [0,1]", where);
    if (delta_p != p_xthetay - p_xy) throw validation_error("delta_p is not p_xthetay - p_xy", where);
  }
};

/// Keeps token i iff Δp_i > 0. Records must cover 0..n-1 exactly once.
inline FilterMask delta_p_mask(const std::vector<TokenProbRecord>& probs) {
  const std::size_t n = probs.size();
  std::vector<DropReason> reasons(n, DropReason::nonpositive_delta);
  std::vector<bool> seen(n, false);
  for (const TokenProbRecord& r : probs) {
    r.validate();
    if (r.response_index >= n || seen[r.response_index])
      throw validation_error("probability records do not cover each response index exactly once",
                             "response index " + std::to_string(r.response_index));
    seen[r.response_index] = true;
    if (r.delta_p > 0.0) reasons[r.response_index] = DropReason::kept;
  }
  return FilterMask(std::move(reasons));
}

/// keep = a.keep ∧ b.keep; the reason is the first failing filter, `a`
/// checked first.
inline FilterMask combine_masks(const FilterMask& a, const FilterMask& b) {
  if (a.size() != b.size())
    throw schema_error("mask lengths differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  std::vector<DropReason> reasons(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    reasons[i] = a.reasons[i] != DropReason::kept ? a.reasons[i] : b.reasons[i];
  return FilterMask(std::move(reasons));
}

}  // namespace lea
