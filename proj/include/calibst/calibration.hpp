#pragma once

// Post-hoc temperature scaling and ensemble construction/combination.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "calibst/core_types.hpp"
#include "calibst/losses.hpp"
#include "calibst/random.hpp"

namespace calibst {

// ---------------------------------------------------------------------------
// Temperature scaling

class Temperature {
 public:
  explicit Temperature(double beta = 1.0) : beta_(beta) {
    if (!(beta >= 1.0) || !std::isfinite(beta))
      throw DomainError("temperature must be finite and >= 1");
  }
  double beta() const noexcept { return beta_; }

 private:
  double beta_;
};

inline Logits temperature_scale(const Logits& logits, Temperature t) {
  std::vector<double> z(logits.vector());
  for (double& v : z) v /= t.beta();
  return Logits(std::move(z));
}

/// Mean negative log likelihood of `dev` after dividing logits by beta.
inline double temperature_nll(std::span<const LabeledLogits> dev, double beta) {
  double sum = 0.0;
  std::vector<double> z;
  for (const auto& ex : dev) {
    z.assign(ex.logits.vector().begin(), ex.logits.vector().end());
    for (double& v : z) v /= beta;
    sum -= log_softmax(z)[ex.label];
  }
  return sum / static_cast<double>(dev.size());
}

struct TemperatureFit {
  Temperature temperature;
  double nll = 0.0;          // dev NLL at the fitted beta
  double nll_identity = 0.0; // dev NLL at beta = 1
};

inline constexpr double kMinTemperature = 1.0;
inline constexpr double kMaxTemperature = 100.0;

/// Golden-section search for the dev-NLL minimizer over beta in [1, 100].
inline TemperatureFit fit_temperature_detailed(std::span<const LabeledLogits> dev,
                                               double tolerance = 1e-4) {
  if (dev.empty()) throw DomainError("empty development set");
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = kMinTemperature, hi = kMaxTemperature;
  double x1 = hi - inv_phi * (hi - lo), x2 = lo + inv_phi * (hi - lo);
  double f1 = temperature_nll(dev, x1), f2 = temperature_nll(dev, x2);
  while (hi - lo > tolerance) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = temperature_nll(dev, x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = temperature_nll(dev, x2);
    }
  }
  double best = 0.5 * (lo + hi);
  double f_best = temperature_nll(dev, best);
  const double f_one = temperature_nll(dev, 1.0);
  // The bracket never contains its endpoints exactly.
  if (f_one <= f_best) {
    best = 1.0;
    f_best = f_one;
  }
  return {Temperature(best), f_best, f_one};
}

inline Temperature fit_temperature(std::span<const LabeledLogits> dev) {
  return fit_temperature_detailed(dev).temperature;
}

// ---------------------------------------------------------------------------
// Ensemble combination

/// Elementwise mean of the members. Each coordinate is averaged over its
/// sorted values with a running mean, so the result does not depend on
/// member order and equals the input exactly when all members agree.
inline CategoricalDist ensemble_combine(std::span<const CategoricalDist> members) {
  if (members.empty()) throw DomainError("cannot combine an empty ensemble");
  const std::size_t k = members.front().size();
  for (const auto& m : members)
    if (m.size() != k) throw DomainError("ensemble members differ in length");

  std::vector<double> out(k), column(members.size());
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < members.size(); ++i) column[i] = members[i][c];
    std::sort(column.begin(), column.end());
    double mean = column[0];
    for (std::size_t i = 1; i < column.size(); ++i)
      mean += (column[i] - mean) / static_cast<double>(i + 1);
    out[c] = mean;
  }
  return CategoricalDist(std::move(out));
}

inline BeliefState combine_belief_states(std::span<const BeliefState> members) {
  if (members.empty()) throw DomainError("cannot combine an empty ensemble");
  const auto& first = members.front();
  for (const auto& m : members) {
    if (m.size() != first.size()) throw DomainError("belief states differ in slots");
    for (const auto& [name, dist] : first) {
      auto it = m.find(name);
      if (it == m.end())
        throw DomainError("belief state missing slot '" + name + "'");
      if (it->second.size() != dist.size())
        throw DomainError("slot '" + name + "' differs in arity across members");
    }
  }
  BeliefState out;
  std::vector<CategoricalDist> column;
  column.reserve(members.size());
  for (const auto& [name, dist] : first) {
    column.clear();
    for (const auto& m : members) column.push_back(m.at(name));
    out.emplace(name, ensemble_combine(column));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ensemble construction

enum class EnsembleKind { dropout, bootstrap };

struct EnsembleSpec {
  EnsembleKind kind = EnsembleKind::bootstrap;
  std::size_t size = 10;
  std::optional<double> dropout_rate;       // dropout kind
  std::optional<std::size_t> subset_size;   // bootstrap kind
  bool with_replacement = false;            // bootstrap kind
  std::uint64_t seed = 0;

  void validate() const {
    if (size < 1) throw DomainError("ensemble size must be >= 1");
    if (kind == EnsembleKind::dropout) {
      if (!dropout_rate) throw DomainError("dropout ensemble needs a dropout rate");
      if (!(*dropout_rate >= 0.0 && *dropout_rate < 1.0))
        throw DomainError("dropout rate must lie in [0, 1)");
    } else {
      if (!subset_size || *subset_size == 0)
        throw DomainError("bootstrap ensemble needs a positive subset size");
    }
  }
};

/// Per-member index subsets (sorted). Without replacement each subset is a
/// uniform draw of `subset_size` distinct indices via partial Fisher-Yates.
inline std::vector<std::vector<std::size_t>> bootstrap_subsets(std::size_t dataset_size,
                                                               const EnsembleSpec& spec) {
  if (spec.kind != EnsembleKind::bootstrap)
    throw DomainError("bootstrap_subsets requires a bootstrap spec");
  spec.validate();
  if (dataset_size == 0) throw DomainError("dataset is empty");
  const std::size_t n = *spec.subset_size;
  if (!spec.with_replacement && n > dataset_size)
    throw DomainError("subset size " + std::to_string(n) + " exceeds dataset size " +
                      std::to_string(dataset_size));

  std::vector<std::vector<std::size_t>> out(spec.size);
  std::vector<std::size_t> perm(dataset_size);
  for (std::size_t m = 0; m < spec.size; ++m) {
    Rng rng(derive_seed(spec.seed, {0xb007, m}));
    auto& subset = out[m];
    subset.resize(n);
    if (spec.with_replacement) {
      for (auto& idx : subset) idx = rng.below(dataset_size);
    } else {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + rng.below(dataset_size - i);
        std::swap(perm[i], perm[j]);
        subset[i] = perm[i];
      }
    }
    std::sort(subset.begin(), subset.end());
  }
  return out;
}

/// Inverted-dropout masks: each entry is 0 with probability `rate`,
/// otherwise 1 / (1 - rate).
inline std::vector<std::vector<double>> dropout_masks(std::size_t layer_width, double rate,
                                                      std::size_t count,
                                                      std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw DomainError("dropout rate must lie in [0, 1)");
  if (layer_width == 0) throw DomainError("layer width must be positive");
  std::vector<std::vector<double>> masks(count, std::vector<double>(layer_width, 1.0));
  if (rate == 0.0) return masks;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t m = 0; m < count; ++m) {
    Rng rng(derive_seed(seed, {0xd509, m}));
    for (auto& v : masks[m]) v = rng.uniform() < rate ? 0.0 : keep_scale;
  }
  return masks;
}

}  // namespace calibst
