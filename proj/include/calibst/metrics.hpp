#pragma once

// Evaluation metrics over per-turn belief-state predictions.
//
// Every metric is a fold over records; MetricAccumulator holds the additive
// tallies so shards can be evaluated independently and merged.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "calibst/core_types.hpp"

namespace calibst {

// ---------------------------------------------------------------------------
// Accuracy

inline bool turn_correct(const PredictionRecord& rec) {
  for (const auto& [slot, dist] : rec.belief)
    if (dist.argmax() != rec.labels.at(slot)) return false;
  return true;
}

inline void require_nonempty(std::span<const PredictionRecord> records) {
  if (records.empty()) throw DomainError("no records");
}

inline double jga(std::span<const PredictionRecord> records) {
  require_nonempty(records);
  std::size_t hits = 0;
  for (const auto& r : records) hits += turn_correct(r) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

/// Position of `label` in the descending, lowest-index-first ordering.
inline std::size_t label_rank(const CategoricalDist& dist, std::size_t label) {
  const double p = dist[label];
  std::size_t rank = 0;
  for (std::size_t j = 0; j < dist.size(); ++j)
    if (dist[j] > p || (dist[j] == p && j < label)) ++rank;
  return rank;
}

/// How slots below the candidate-count threshold are scored in top-n JGA.
enum class TopNVariant { revert_top1, skip };

inline std::string_view to_string(TopNVariant v) {
  return v == TopNVariant::revert_top1 ? "revert_top1" : "skip";
}

inline TopNVariant parse_top_n_variant(std::string_view s) {
  if (s == "revert_top1") return TopNVariant::revert_top1;
  if (s == "skip") return TopNVariant::skip;
  throw DomainError("unknown top-n variant '" + std::string(s) + "'");
}

inline constexpr std::size_t kDefaultRelaxThreshold = 5;

inline bool turn_correct_top_n(const PredictionRecord& rec, std::size_t n,
                               std::size_t relax_threshold = kDefaultRelaxThreshold,
                               TopNVariant variant = TopNVariant::revert_top1) {
  for (const auto& [slot, dist] : rec.belief) {
    const std::size_t rank = label_rank(dist, rec.labels.at(slot));
    if (dist.size() >= relax_threshold) {
      if (rank >= n) return false;
    } else if (variant == TopNVariant::revert_top1 && rank != 0) {
      return false;
    }
  }
  return true;
}

inline double top_n_jga(std::span<const PredictionRecord> records, std::size_t n,
                        std::size_t relax_threshold = kDefaultRelaxThreshold,
                        TopNVariant variant = TopNVariant::revert_top1) {
  require_nonempty(records);
  if (n == 0) throw DomainError("top-n requires n >= 1");
  std::size_t hits = 0;
  for (const auto& r : records)
    hits += turn_correct_top_n(r, n, relax_threshold, variant) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

// ---------------------------------------------------------------------------
// L2 norm error

enum class L2Convention { mean_over_turns, corpus_norm };

inline std::string_view to_string(L2Convention c) {
  return c == L2Convention::mean_over_turns ? "mean_over_turns" : "corpus_norm";
}

inline L2Convention parse_l2_convention(std::string_view s) {
  if (s == "mean_over_turns") return L2Convention::mean_over_turns;
  if (s == "corpus_norm") return L2Convention::corpus_norm;
  throw DomainError("unknown L2 convention '" + std::string(s) + "'");
}

/// Squared distance between the concatenated one-hot labels and the
/// concatenated predicted distributions of one turn.
inline double turn_l2_squared(const PredictionRecord& rec) {
  double sq = 0.0;
  for (const auto& [slot, dist] : rec.belief) {
    const std::size_t y = rec.labels.at(slot);
    for (std::size_t j = 0; j < dist.size(); ++j) {
      const double d = (j == y ? 1.0 : 0.0) - dist[j];
      sq += d * d;
    }
  }
  return sq;
}

inline double l2_norm_error(std::span<const PredictionRecord> records,
                            L2Convention convention = L2Convention::mean_over_turns) {
  require_nonempty(records);
  double sum = 0.0;
  for (const auto& r : records) {
    const double sq = turn_l2_squared(r);
    sum += convention == L2Convention::mean_over_turns ? std::sqrt(sq) : sq;
  }
  return convention == L2Convention::mean_over_turns
             ? sum / static_cast<double>(records.size())
             : std::sqrt(sum);
}

/// Assumption behind the minimum-L2 bound on a turn with exactly one wrong
/// slot. `per_turn_sqrt2`: the wrong slot is fully confident on a wrong
/// value, giving sqrt(2) per wrong turn (holds for one-hot predictors).
/// `per_turn_belief`: any distribution whose argmax is wrong, whose
/// smallest possible error is a 50/50 split, 1/sqrt(2) per wrong turn.
enum class BoundConvention { per_turn_sqrt2, per_turn_belief };

inline std::string_view to_string(BoundConvention c) {
  return c == BoundConvention::per_turn_sqrt2 ? "per_turn_sqrt2" : "per_turn_belief";
}

inline BoundConvention parse_bound_convention(std::string_view s) {
  if (s == "per_turn_sqrt2") return BoundConvention::per_turn_sqrt2;
  if (s == "per_turn_belief") return BoundConvention::per_turn_belief;
  throw DomainError("unknown bound convention '" + std::string(s) + "'");
}

/// Lower bound on the mean-over-turns L2 error of a model with the given
/// JGA that never gets more than one slot wrong per turn.
inline double min_l2_bound(double jga_value,
                           BoundConvention convention = BoundConvention::per_turn_sqrt2) {
  if (!(jga_value >= 0.0 && jga_value <= 1.0))
    throw DomainError("JGA must lie in [0, 1]");
  const double per_wrong_turn = convention == BoundConvention::per_turn_sqrt2
                                    ? std::sqrt(2.0)
                                    : 1.0 / std::sqrt(2.0);
  return (1.0 - jga_value) * per_wrong_turn;
}

// ---------------------------------------------------------------------------
// Calibration error

/// Minimum over slots of the slot's top probability.
inline double joint_confidence(const BeliefState& belief) {
  if (belief.empty()) throw DomainError("empty belief state");
  double c = 1.0;
  for (const auto& [slot, dist] : belief) c = std::min(c, dist.max());
  return c;
}

/// Lower edge of bin k out of B equal-width bins on [0, 1].
inline double bin_edge(std::size_t k, std::size_t bins) {
  return static_cast<double>(k) / static_cast<double>(bins);
}

/// Bins are right-inclusive, (k/B, (k+1)/B], with 0 in the first bin.
inline std::size_t bin_index(double confidence, std::size_t bins) {
  if (!(confidence >= 0.0 && confidence <= 1.0))
    throw DomainError("confidence outside [0, 1]");
  const double scaled = std::ceil(confidence * static_cast<double>(bins));
  std::size_t k = scaled < 1.0 ? 0 : static_cast<std::size_t>(scaled) - 1;
  k = std::min(k, bins - 1);
  // Agree with explicit edge comparisons at rounding boundaries.
  while (k > 0 && confidence <= bin_edge(k, bins)) --k;
  while (k + 1 < bins && confidence > bin_edge(k + 1, bins)) ++k;
  return k;
}

struct ReliabilityBins {
  std::vector<double> edges;            // B + 1 entries, 0 ... 1
  std::vector<std::size_t> counts;      // b_k
  std::vector<double> confidence_sum;   // sum of confidences in bin k
  std::vector<std::size_t> correct;     // correct observations in bin k

  ReliabilityBins() : ReliabilityBins(10) {}
  explicit ReliabilityBins(std::size_t bins) {
    if (bins == 0) throw DomainError("bin count must be positive");
    edges.resize(bins + 1);
    for (std::size_t k = 0; k <= bins; ++k) edges[k] = bin_edge(k, bins);
    counts.assign(bins, 0);
    confidence_sum.assign(bins, 0.0);
    correct.assign(bins, 0);
  }

  std::size_t size() const noexcept { return counts.size(); }

  void add(double confidence, bool is_correct) {
    const std::size_t k = bin_index(confidence, size());
    ++counts[k];
    confidence_sum[k] += confidence;
    correct[k] += is_correct ? 1 : 0;
  }

  void merge(const ReliabilityBins& other) {
    if (other.size() != size()) throw DomainError("bin counts differ");
    for (std::size_t k = 0; k < size(); ++k) {
      counts[k] += other.counts[k];
      confidence_sum[k] += other.confidence_sum[k];
      correct[k] += other.correct[k];
    }
  }

  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }

  double conf(std::size_t k) const {
    return confidence_sum[k] / static_cast<double>(counts[k]);
  }
  double acc(std::size_t k) const {
    return static_cast<double>(correct[k]) / static_cast<double>(counts[k]);
  }

  /// sum_k (b_k / N) |acc(k) - conf(k)|; empty bins contribute nothing.
  double calibration_error() const {
    const double n = static_cast<double>(total());
    if (n == 0.0) throw DomainError("no observations");
    double e = 0.0;
    for (std::size_t k = 0; k < size(); ++k) {
      if (counts[k] == 0) continue;
      e += (static_cast<double>(counts[k]) / n) * std::abs(acc(k) - conf(k));
    }
    return e;
  }
};

inline ReliabilityBins bin_observations(std::span<const double> confidences,
                                        std::span<const bool> correct, std::size_t bins) {
  if (confidences.size() != correct.size())
    throw DomainError("confidence and correctness lengths differ");
  if (confidences.empty()) throw DomainError("no observations");
  ReliabilityBins out(bins);
  for (std::size_t i = 0; i < confidences.size(); ++i) out.add(confidences[i], correct[i]);
  return out;
}

inline double ece(std::span<const double> confidences, std::span<const bool> correct,
                  std::size_t bins) {
  return bin_observations(confidences, correct, bins).calibration_error();
}

inline ReliabilityBins reliability_bins(std::span<const PredictionRecord> records,
                                        std::size_t bins) {
  require_nonempty(records);
  ReliabilityBins out(bins);
  for (const auto& r : records) out.add(joint_confidence(r.belief), turn_correct(r));
  return out;
}

inline double ejce(std::span<const PredictionRecord> records, std::size_t bins) {
  return reliability_bins(records, bins).calibration_error();
}

// ---------------------------------------------------------------------------
// Reports

struct MetricOptions {
  std::size_t bins = 10;
  std::vector<std::size_t> top_n = {1, 2, 3, 4, 5};
  std::size_t relax_threshold = kDefaultRelaxThreshold;
  TopNVariant top_n_variant = TopNVariant::revert_top1;
  L2Convention l2_convention = L2Convention::mean_over_turns;
};

struct MetricReport {
  double jga = 0.0;
  std::map<std::size_t, double> top_n_jga;
  double l2 = 0.0;
  double ece = 0.0;   // per-slot: slot max probability vs slot argmax correctness
  double ejce = 0.0;  // per-turn: joint confidence vs turn correctness
  ReliabilityBins bins;
  std::size_t n_turns = 0;
};

/// Additive tallies behind a MetricReport; shards merge by `merge`.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(MetricOptions options = {})
      : options_(std::move(options)),
        turn_bins_(options_.bins),
        slot_bins_(options_.bins) {
    for (auto n : options_.top_n) {
      if (n == 0) throw DomainError("top-n requires n >= 1");
      top_n_hits_[n] = 0;
    }
  }

  void add(const PredictionRecord& rec) {
    const bool ok = turn_correct(rec);
    ++n_turns_;
    hits_ += ok ? 1 : 0;
    for (auto& [n, hits] : top_n_hits_)
      hits += turn_correct_top_n(rec, n, options_.relax_threshold, options_.top_n_variant)
                  ? 1
                  : 0;
    const double sq = turn_l2_squared(rec);
    l2_sum_ += std::sqrt(sq);
    l2_sq_sum_ += sq;
    turn_bins_.add(joint_confidence(rec.belief), ok);
    for (const auto& [slot, dist] : rec.belief)
      slot_bins_.add(dist.max(), dist.argmax() == rec.labels.at(slot));
  }

  void add(std::span<const PredictionRecord> records) {
    for (const auto& r : records) add(r);
  }

  void merge(const MetricAccumulator& other) {
    if (other.top_n_hits_.size() != top_n_hits_.size())
      throw DomainError("accumulators use different top-n lists");
    n_turns_ += other.n_turns_;
    hits_ += other.hits_;
    for (auto& [n, hits] : top_n_hits_) hits += other.top_n_hits_.at(n);
    l2_sum_ += other.l2_sum_;
    l2_sq_sum_ += other.l2_sq_sum_;
    turn_bins_.merge(other.turn_bins_);
    slot_bins_.merge(other.slot_bins_);
  }

  MetricReport report() const {
    if (n_turns_ == 0) throw DomainError("no records");
    const double n = static_cast<double>(n_turns_);
    MetricReport r;
    r.bins = turn_bins_;
    r.n_turns = n_turns_;
    r.jga = static_cast<double>(hits_) / n;
    for (const auto& [k, hits] : top_n_hits_) r.top_n_jga[k] = static_cast<double>(hits) / n;
    r.l2 = options_.l2_convention == L2Convention::mean_over_turns ? l2_sum_ / n
                                                                   : std::sqrt(l2_sq_sum_);
    r.ece = slot_bins_.calibration_error();
    r.ejce = turn_bins_.calibration_error();
    return r;
  }

  const MetricOptions& options() const noexcept { return options_; }

 private:
  MetricOptions options_;
  std::size_t n_turns_ = 0;
  std::size_t hits_ = 0;
  std::map<std::size_t, std::size_t> top_n_hits_;
  double l2_sum_ = 0.0;
  double l2_sq_sum_ = 0.0;
  ReliabilityBins turn_bins_;
  ReliabilityBins slot_bins_;
};

inline MetricReport evaluate(std::span<const PredictionRecord> records,
                             const MetricOptions& options = {}) {
  require_nonempty(records);
  MetricAccumulator acc(options);
  acc.add(records);
  return acc.report();
}

}  // namespace calibst
