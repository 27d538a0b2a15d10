#pragma once

// Valid vs. generic/no-retrieval classification on the a_rag score.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "lea/attribution.hpp"
#include "lea/corpus.hpp"
#include "lea/error.hpp"

namespace lea {

struct LabeledSample {
  std::string cve_id;
  int year = 0;
  std::string model;
  Scenario scenario = Scenario::valid;
  double a_rag = 0.0;
  LeaDistribution lea;

  bool positive() const noexcept { return scenario == Scenario::valid; }
};

/// INCORRECT samples never take part in classification.
inline std::vector<LabeledSample> classifier_samples(const std::vector<LabeledSample>& all) {
  std::vector<LabeledSample> out;
  for (const auto& s : all)
    if (s.scenario != Scenario::incorrect) out.push_back(s);
  return out;
}

struct Split {
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> test;
};

/// Stratified by class: each class contributes round(n_c * ratio) samples
/// to train (at least one to each side). INCORRECT samples are dropped.
inline Split split(const std::vector<LabeledSample>& samples, double ratio = 0.8, std::uint64_t seed = 0) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw validation_error("split ratio must lie in (0,1)");
  const auto usable = classifier_samples(samples);
  if (usable.size() < 5) throw validation_error("split needs at least 5 classifiable samples");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < usable.size(); ++i) (usable[i].positive() ? pos : neg).push_back(i);
  if (pos.size() < 2 || neg.size() < 2)
    throw validation_error("split needs at least 2 samples of each class (VALID vs GENERIC/NONE)");

  std::mt19937_64 rng(seed);
  std::vector<bool> in_train(usable.size(), false);
  for (auto* cls : {&pos, &neg}) {
    std::shuffle(cls->begin(), cls->end(), rng);
    const auto n = static_cast<long>(cls->size());
    const long k = std::clamp(std::lround(static_cast<double>(n) * ratio), 1L, n - 1);
    for (long i = 0; i < k; ++i) in_train[(*cls)[static_cast<std::size_t>(i)]] = true;
  }
  Split out;
  for (std::size_t i = 0; i < usable.size(); ++i) (in_train[i] ? out.train : out.test).push_back(usable[i]);
  return out;
}

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const noexcept { return tp + fp + tn + fn; }
};

struct Metrics {
  Confusion confusion;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Predicts VALID iff a_rag >= threshold.
inline Metrics classify(const std::vector<LabeledSample>& samples, double threshold) {
  Metrics m;
  Confusion& c = m.confusion;
  for (const auto& s : samples) {
    if (s.scenario == Scenario::incorrect) continue;
    const bool predicted = s.a_rag >= threshold;
    if (predicted) (s.positive() ? c.tp : c.fp)++;
    else (s.positive() ? c.fn : c.tn)++;
  }
  if (c.total() == 0) throw validation_error("no classifiable samples");
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  m.precision = c.tp + c.fp ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
  m.recall = c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
  m.f1 = c.tp ? 2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn) : 0.0;
  return m;
}

struct RocPoint {
  double threshold;
  double fpr;
  double tpr;
};

struct RocCurve {
  std::vector<RocPoint> points;  // (0,0) at +inf, then unique scores descending
  double auc = 0.0;
};

inline RocCurve roc_curve(const std::vector<LabeledSample>& samples) {
  std::vector<std::pair<double, bool>> scored;
  for (const auto& s : samples)
    if (s.scenario != Scenario::incorrect) scored.emplace_back(s.a_rag, s.positive());
  const auto n_pos = static_cast<std::size_t>(std::count_if(scored.begin(), scored.end(), [](auto& p) { return p.second; }));
  const std::size_t n_neg = scored.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw validation_error("ROC needs both classes");
  std::sort(scored.begin(), scored.end(), [](auto& a, auto& b) { return a.first > b.first; });

  RocCurve c;
  c.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < scored.size();) {
    const double t = scored[i].first;
    for (; i < scored.size() && scored[i].first == t; ++i) (scored[i].second ? tp : fp)++;
    c.points.push_back({t, static_cast<double>(fp) / static_cast<double>(n_neg),
                        static_cast<double>(tp) / static_cast<double>(n_pos)});
  }
  for (std::size_t k = 1; k < c.points.size(); ++k)
    c.auc += (c.points[k].fpr - c.points[k - 1].fpr) * (c.points[k].tpr + c.points[k - 1].tpr) / 2.0;
  return c;
}

/// Squared distance of a ROC point to the perfect classifier (0,1).
inline double corner_distance_sq(const RocPoint& p) { return p.fpr * p.fpr + (1.0 - p.tpr) * (1.0 - p.tpr); }

/// Among the unique-score thresholds, the one closest to (0,1); ties go to
/// the lower threshold.
inline double optimal_threshold(const RocCurve& c) {
  const RocPoint* best = nullptr;
  for (const RocPoint& p : c.points) {
    if (std::isinf(p.threshold)) continue;
    if (!best || corner_distance_sq(p) < corner_distance_sq(*best) ||
        (corner_distance_sq(p) == corner_distance_sq(*best) && p.threshold < best->threshold))
      best = &p;
  }
  if (!best) throw validation_error("empty ROC curve");
  return best->threshold;
}

struct ThresholdReport {
  double threshold = 0.0;
  Metrics train;
  Metrics test;
  double train_auc = 0.0;
  double test_auc = 0.0;
  std::uint64_t split_seed = 0;
  double split_ratio = 0.8;
};

inline ThresholdReport roc_and_threshold(const std::vector<LabeledSample>& train) {
  const RocCurve c = roc_curve(train);
  ThresholdReport r;
  r.threshold = optimal_threshold(c);
  r.train = classify(train, r.threshold);
  r.train_auc = c.auc;
  return r;
}

/// Split, choose the threshold on train, score test.
inline ThresholdReport evaluate_threshold(const std::vector<LabeledSample>& samples, double ratio, std::uint64_t seed) {
  const Split s = split(samples, ratio, seed);
  ThresholdReport r = roc_and_threshold(s.train);
  r.test = classify(s.test, r.threshold);
  r.test_auc = roc_curve(s.test).auc;
  r.split_seed = seed;
  r.split_ratio = ratio;
  return r;
}

enum class GroupBy { year, model, scenario };

inline GroupBy parse_group_by(std::string_view s) {
  if (s == "year") return GroupBy::year;
  if (s == "model") return GroupBy::model;
  if (s == "scenario") return GroupBy::scenario;
  throw validation_error("unknown grouping '" + std::string(s) + "'");
}

struct GroupSummary {
  std::string key;
  std::size_t count = 0;  // samples with a nonempty distribution
  std::size_t empty = 0;  // samples whose kept-token set was empty
  double a_fnd = 0.0, a_rag = 0.0, a_q = 0.0, a_inconsistent = 0.0;
};

/// Per-group arithmetic means of the LEA fractions, ordered by key. Empty
/// distributions are counted but excluded from the means.
inline std::vector<GroupSummary> summarize(const std::vector<LabeledSample>& samples, GroupBy by) {
  std::map<std::string, GroupSummary> groups;
  for (const auto& s : samples) {
    std::string key = by == GroupBy::year ? std::to_string(s.year)
                      : by == GroupBy::model ? s.model
                                             : std::string(to_string(s.scenario));
    GroupSummary& g = groups[key];
    g.key = key;
    if (s.lea.empty()) {
      ++g.empty;
      continue;
    }
    ++g.count;
    g.a_fnd += s.lea.a_fnd;
    g.a_rag += s.lea.a_rag;
    g.a_q += s.lea.a_q;
    g.a_inconsistent += s.lea.a_inconsistent;
  }
  std::vector<GroupSummary> out;
  for (auto& [_, g] : groups) {
    if (g.count > 0) {
      const auto n = static_cast<double>(g.count);
      g.a_fnd /= n;
      g.a_rag /= n;
      g.a_q /= n;
      g.a_inconsistent /= n;
    }
    out.push_back(g);
  }
  return out;
}

/// VALID vs INCORRECT a_rag comparison. Overlapping means signal that the
/// model follows whatever context it is given.
struct IncorrectAudit {
  std::size_t n_valid = 0;
  std::size_t n_incorrect = 0;
  double mean_valid = 0.0;
  double mean_incorrect = 0.0;
  double mean_difference() const { return std::abs(mean_valid - mean_incorrect); }
};

inline IncorrectAudit incorrect_audit(const std::vector<LabeledSample>& samples) {
  IncorrectAudit a;
  for (const auto& s : samples) {
    if (s.scenario == Scenario::valid) {
      ++a.n_valid;
      a.mean_valid += s.a_rag;
    } else if (s.scenario == Scenario::incorrect) {
      ++a.n_incorrect;
      a.mean_incorrect += s.a_rag;
    }
  }
  if (a.n_valid) a.mean_valid /= static_cast<double>(a.n_valid);
  if (a.n_incorrect) a.mean_incorrect /= static_cast<double>(a.n_incorrect);
  return a;
}

}  // namespace lea
