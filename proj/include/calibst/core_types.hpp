#pragma once

// Probability and dialogue-domain value types shared by every module.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace calibst {

/// Precondition or invariant violation on caller-supplied values.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A NaN or infinity where a finite number is required.
class NonFiniteValue : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Absolute tolerance on the sum of a stored distribution.
inline constexpr double kNormTolerance = 1e-9;

/// Sums closer to one than this are stored as-is; above it (and within
/// kNormTolerance) the row is divided by its sum.
inline constexpr double kRenormThreshold = 1e-12;

// ---------------------------------------------------------------------------
// SlotSchema

struct Slot {
  std::string name;
  std::vector<std::string> candidates;

  std::size_t candidate_count() const noexcept { return candidates.size(); }

  std::optional<std::size_t> candidate_index(std::string_view value) const {
    for (std::size_t i = 0; i < candidates.size(); ++i)
      if (candidates[i] == value) return i;
    return std::nullopt;
  }

  friend bool operator==(const Slot&, const Slot&) = default;
};

/// Ordered slots, each with an ordered candidate list (at least two).
class SlotSchema {
 public:
  SlotSchema() = default;

  explicit SlotSchema(std::vector<Slot> slots) : slots_(std::move(slots)) {
    if (slots_.empty()) throw DomainError("schema has no slots");
    std::unordered_set<std::string> names;
    for (const auto& s : slots_) {
      if (s.name.empty()) throw DomainError("schema slot with empty name");
      if (!names.insert(s.name).second)
        throw DomainError("duplicate slot name '" + s.name + "'");
      if (s.candidates.size() < 2)
        throw DomainError("slot '" + s.name + "' needs at least 2 candidates");
      std::unordered_set<std::string> values;
      for (const auto& c : s.candidates)
        if (!values.insert(c).second)
          throw DomainError("duplicate candidate '" + c + "' in slot '" +
                            s.name + "'");
    }
  }

  const std::vector<Slot>& slots() const noexcept { return slots_; }
  std::size_t size() const noexcept { return slots_.size(); }

  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < slots_.size(); ++i)
      if (slots_[i].name == name) return i;
    return std::nullopt;
  }

  const Slot& slot(std::string_view name) const {
    auto i = index_of(name);
    if (!i) throw DomainError("unknown slot '" + std::string(name) + "'");
    return slots_[*i];
  }

  std::size_t max_candidate_count() const noexcept {
    std::size_t m = 0;
    for (const auto& s : slots_) m = std::max(m, s.candidate_count());
    return m;
  }

  /// Sum of candidate counts; the length of a concatenated belief vector.
  std::size_t total_candidates() const noexcept {
    std::size_t n = 0;
    for (const auto& s : slots_) n += s.candidate_count();
    return n;
  }

  friend bool operator==(const SlotSchema& a, const SlotSchema& b) {
    if (a.slots_.size() != b.slots_.size()) return false;
    for (std::size_t i = 0; i < a.slots_.size(); ++i)
      if (a.slots_[i].name != b.slots_[i].name ||
          a.slots_[i].candidates != b.slots_[i].candidates)
        return false;
    return true;
  }

 private:
  std::vector<Slot> slots_;
};

// ---------------------------------------------------------------------------
// CategoricalDist

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

class CategoricalDist {
 public:
  explicit CategoricalDist(std::vector<double> probs) : probs_(std::move(probs)) {
    if (probs_.empty()) throw DomainError("empty distribution");
    double sum = 0.0;
    for (double p : probs_) {
      if (!std::isfinite(p)) throw NonFiniteValue("non-finite probability");
      if (p < 0.0) throw DomainError("negative probability");
      sum += p;
    }
    const double dev = std::abs(sum - 1.0);
    if (dev > kNormTolerance)
      throw DomainError("distribution sums to " + std::to_string(sum));
    if (dev > kRenormThreshold)
      for (double& p : probs_) p /= sum;
  }

  std::span<const double> probs() const noexcept { return probs_; }
  const std::vector<double>& vector() const noexcept { return probs_; }
  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }

  std::size_t argmax() const { return calibst::argmax(probs_); }
  double max() const { return *std::max_element(probs_.begin(), probs_.end()); }

  friend bool operator==(const CategoricalDist&, const CategoricalDist&) = default;

 private:
  std::vector<double> probs_;
};

// ---------------------------------------------------------------------------
// Logits and Dirichlet parameters

class Logits {
 public:
  explicit Logits(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw DomainError("empty logits");
    for (double z : values_)
      if (!std::isfinite(z)) throw NonFiniteValue("non-finite logit");
  }

  std::span<const double> values() const noexcept { return values_; }
  const std::vector<double>& vector() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }

  friend bool operator==(const Logits&, const Logits&) = default;

 private:
  std::vector<double> values_;
};

/// Concentration vector of a Dirichlet; every entry strictly positive.
class DirichletParams {
 public:
  explicit DirichletParams(std::vector<double> alpha) : alpha_(std::move(alpha)) {
    if (alpha_.size() < 2) throw DomainError("Dirichlet needs at least 2 entries");
    for (double a : alpha_)
      if (!(a > 0.0) || !std::isfinite(a))
        throw DomainError("Dirichlet concentration must be positive and finite");
  }

  std::span<const double> alpha() const noexcept { return alpha_; }
  std::size_t size() const noexcept { return alpha_.size(); }
  double operator[](std::size_t i) const { return alpha_[i]; }
  double total() const { return std::accumulate(alpha_.begin(), alpha_.end(), 0.0); }

  /// Expected categorical alpha / alpha_0.
  CategoricalDist mean() const {
    const double a0 = total();
    std::vector<double> p(alpha_.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = alpha_[i] / a0;
    return CategoricalDist(std::move(p));
  }

 private:
  std::vector<double> alpha_;
};

// ---------------------------------------------------------------------------
// Belief states and prediction records

using BeliefState = std::map<std::string, CategoricalDist>;
using SlotLabels = std::map<std::string, std::size_t>;

/// Unvalidated per-slot rows, e.g. as read from a file.
using RawBelief = std::map<std::string, std::vector<double>>;

struct PredictionRecord {
  std::string dialogue_id;
  std::size_t turn_index = 0;
  BeliefState belief;
  SlotLabels labels;
};

inline CategoricalDist one_hot(std::size_t index, std::size_t size) {
  if (size == 0) throw DomainError("one_hot size must be positive");
  if (index >= size)
    throw DomainError("one_hot index " + std::to_string(index) +
                      " out of range for size " + std::to_string(size));
  std::vector<double> v(size, 0.0);
  v[index] = 1.0;
  return CategoricalDist(std::move(v));
}

struct Violation {
  std::string slot;
  std::string reason;

  friend bool operator==(const Violation&, const Violation&) = default;
};

/// Every invariant violation of `belief` against `schema`; empty means ok.
inline std::vector<Violation> validate_belief(const RawBelief& belief,
                                              const SlotSchema& schema) {
  std::vector<Violation> out;
  for (const auto& slot : schema.slots()) {
    auto it = belief.find(slot.name);
    if (it == belief.end()) {
      out.push_back({slot.name, "missing slot"});
      continue;
    }
    const auto& row = it->second;
    if (row.size() != slot.candidate_count()) {
      out.push_back({slot.name, "wrong arity: expected " +
                                    std::to_string(slot.candidate_count()) +
                                    ", got " + std::to_string(row.size())});
      continue;
    }
    bool finite = true, negative = false;
    double sum = 0.0;
    for (double p : row) {
      if (!std::isfinite(p)) finite = false;
      if (p < 0.0) negative = true;
      sum += p;
    }
    if (!finite) {
      out.push_back({slot.name, "non-finite mass"});
      continue;
    }
    if (negative) out.push_back({slot.name, "negative mass"});
    if (std::abs(sum - 1.0) > kNormTolerance)
      out.push_back({slot.name, "unnormalized: sums to " + std::to_string(sum)});
  }
  for (const auto& [name, row] : belief)
    if (!schema.index_of(name)) out.push_back({name, "unknown slot"});
  return out;
}

inline RawBelief to_raw(const BeliefState& belief) {
  RawBelief raw;
  for (const auto& [name, dist] : belief) raw.emplace(name, dist.vector());
  return raw;
}

inline std::vector<Violation> validate_belief(const BeliefState& belief,
                                              const SlotSchema& schema) {
  return validate_belief(to_raw(belief), schema);
}

/// Record-level check: belief against schema plus label keys and ranges.
inline std::vector<Violation> validate_record(const PredictionRecord& rec,
                                              const SlotSchema& schema) {
  auto out = validate_belief(rec.belief, schema);
  for (const auto& slot : schema.slots()) {
    auto it = rec.labels.find(slot.name);
    if (it == rec.labels.end())
      out.push_back({slot.name, "missing label"});
    else if (it->second >= slot.candidate_count())
      out.push_back({slot.name, "label index " + std::to_string(it->second) +
                                    " out of range"});
  }
  for (const auto& [name, idx] : rec.labels)
    if (!schema.index_of(name)) out.push_back({name, "unknown label slot"});
  return out;
}

inline std::string describe(const std::vector<Violation>& vs) {
  std::string s;
  for (const auto& v : vs) {
    if (!s.empty()) s += "; ";
    s += v.slot + ": " + v.reason;
  }
  return s;
}

/// Builds a validated BeliefState; throws DomainError listing the violations.
inline BeliefState make_belief(const RawBelief& raw, const SlotSchema& schema) {
  auto vs = validate_belief(raw, schema);
  if (!vs.empty()) throw DomainError("invalid belief: " + describe(vs));
  BeliefState b;
  for (const auto& [name, row] : raw) b.emplace(name, CategoricalDist(row));
  return b;
}

}  // namespace calibst
