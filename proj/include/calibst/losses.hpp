#pragma once

// Training objectives over one slot's logits, each returning its value and
// the analytic gradient with respect to the logits:
//
//   cross entropy       -log softmax(z)[y]
//   label smoothing     KL between softmax(z) and the smoothed one-hot target
//   Bayesian matching   lambda * KL[Dir(alpha(z)) || Dir(1)] - E[log pi_y]

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "calibst/core_types.hpp"
#include "calibst/special_functions.hpp"

namespace calibst {

/// Floor applied before taking the log of a stored probability.
inline constexpr double kLogClamp = 1e-12;

inline double safe_log(double p) { return std::log(std::max(p, kLogClamp)); }

struct LossValue {
  double value = 0.0;
  std::vector<double> grad;
};

enum class LossKind { cross_entropy, label_smoothing, bayesian_matching };

/// Argument order of the smoothing KL. `paper` is KL[softmax || target],
/// `standard` is KL[target || softmax].
enum class KlDirection { paper, standard };

enum class ConcentrationMap { exp, softplus_plus_one };

struct SmoothingConfig {
  double alpha = 0.05;

  void validate(std::size_t num_classes) const {
    if (num_classes < 2) throw DomainError("label smoothing needs K >= 2");
    // 1/K itself is legal; allow for its rounding.
    const double upper = 1.0 / static_cast<double>(num_classes);
    if (!(alpha > 0.0) || alpha > upper * (1.0 + 1e-12))
      throw DomainError("smoothing alpha " + std::to_string(alpha) +
                        " outside (0, 1/" + std::to_string(num_classes) + "]");
  }
};

struct BayesMatchConfig {
  double lambda = 0.003;
  ConcentrationMap map = ConcentrationMap::exp;

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
      throw DomainError("Bayesian matching lambda must be finite and >= 0");
  }
};

struct LossConfig {
  LossKind kind = LossKind::cross_entropy;
  SmoothingConfig smoothing;
  KlDirection direction = KlDirection::standard;
  BayesMatchConfig bayes;
};

inline std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::cross_entropy: return "cross_entropy";
    case LossKind::label_smoothing: return "label_smoothing";
    case LossKind::bayesian_matching: return "bayesian_matching";
  }
  return "?";
}

inline std::string_view to_string(KlDirection d) {
  return d == KlDirection::paper ? "paper" : "standard";
}

inline std::string_view to_string(ConcentrationMap m) {
  return m == ConcentrationMap::exp ? "exp" : "softplus_plus_one";
}

inline LossKind parse_loss_kind(std::string_view s) {
  if (s == "cross_entropy") return LossKind::cross_entropy;
  if (s == "label_smoothing") return LossKind::label_smoothing;
  if (s == "bayesian_matching") return LossKind::bayesian_matching;
  throw DomainError("unknown loss kind '" + std::string(s) + "'");
}

inline KlDirection parse_kl_direction(std::string_view s) {
  if (s == "paper") return KlDirection::paper;
  if (s == "standard") return KlDirection::standard;
  throw DomainError("unknown KL direction '" + std::string(s) + "'");
}

inline ConcentrationMap parse_concentration_map(std::string_view s) {
  if (s == "exp") return ConcentrationMap::exp;
  if (s == "softplus_plus_one") return ConcentrationMap::softplus_plus_one;
  throw DomainError("unknown concentration map '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Softmax and targets

inline std::vector<double> log_softmax(std::span<const double> z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - m);
  const double lse = std::log(sum);
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = (z[i] - m) - lse;
  return out;
}

inline std::vector<double> softmax_values(std::span<const double> z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  std::vector<double> out(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - m);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
  return out;
}

inline CategoricalDist softmax(const Logits& logits) {
  return CategoricalDist(softmax_values(logits.values()));
}

inline CategoricalDist smoothed_target(std::size_t label, std::size_t num_classes,
                                       double alpha) {
  SmoothingConfig{alpha}.validate(num_classes);
  if (label >= num_classes) throw DomainError("label out of range");
  std::vector<double> t(num_classes, alpha);
  t[label] = 1.0 - static_cast<double>(num_classes - 1) * alpha;
  return CategoricalDist(std::move(t));
}

// ---------------------------------------------------------------------------
// Softmax losses

inline void check_label(std::size_t label, std::size_t k) {
  if (label >= k)
    throw DomainError("label " + std::to_string(label) + " out of range for " +
                      std::to_string(k) + " classes");
}

inline LossValue cross_entropy_loss(const Logits& logits, std::size_t label) {
  check_label(label, logits.size());
  const auto logp = log_softmax(logits.values());
  LossValue out;
  out.value = -logp[label];
  out.grad.resize(logp.size());
  for (std::size_t i = 0; i < logp.size(); ++i) out.grad[i] = std::exp(logp[i]);
  out.grad[label] -= 1.0;
  return out;
}

inline LossValue label_smoothing_loss(const Logits& logits, std::size_t label,
                                      const SmoothingConfig& cfg,
                                      KlDirection direction) {
  const std::size_t k = logits.size();
  check_label(label, k);
  cfg.validate(k);
  const auto target = smoothed_target(label, k, cfg.alpha).vector();
  const auto logp = log_softmax(logits.values());

  LossValue out;
  out.grad.resize(k);
  if (direction == KlDirection::standard) {
    // sum_c t_c (log t_c - log p_c); d/dz = p - t
    double v = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      v += target[c] * (std::log(target[c]) - logp[c]);
      out.grad[c] = std::exp(logp[c]) - target[c];
    }
    out.value = std::max(v, 0.0);
  } else {
    // f = sum_c p_c g_c with g_c = log p_c - log t_c; d/dz_j = p_j (g_j - f)
    std::vector<double> p(k), g(k);
    double f = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      p[c] = std::exp(logp[c]);
      g[c] = logp[c] - std::log(target[c]);
      f += p[c] * g[c];
    }
    for (std::size_t c = 0; c < k; ++c) out.grad[c] = p[c] * (g[c] - f);
    out.value = std::max(f, 0.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dirichlet head

inline constexpr double kConcentrationClamp = 10.0;

inline double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

inline DirichletParams concentration(const Logits& logits,
                                     const BayesMatchConfig& cfg) {
  std::vector<double> a(logits.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double z = logits[i];
    a[i] = cfg.map == ConcentrationMap::exp
               ? std::exp(std::clamp(z, -kConcentrationClamp, kConcentrationClamp))
               : softplus(z) + 1.0;
  }
  return DirichletParams(std::move(a));
}

/// d alpha_k / d z_k for the configured map (zero where exp is clamped).
inline std::vector<double> concentration_derivative(const Logits& logits,
                                                    const BayesMatchConfig& cfg) {
  std::vector<double> d(logits.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double z = logits[i];
    if (cfg.map == ConcentrationMap::exp)
      d[i] = std::abs(z) < kConcentrationClamp ? std::exp(z) : 0.0;
    else
      d[i] = 1.0 / (1.0 + std::exp(-z));
  }
  return d;
}

/// KL[Dir(alpha) || Dir(1, ..., 1)].
inline double dirichlet_kl_to_uniform(const DirichletParams& alpha) {
  const double k = static_cast<double>(alpha.size());
  const double a0 = alpha.total();
  const double psi0 = digamma(a0);
  double v = log_gamma(a0) - log_gamma(k);
  for (double a : alpha.alpha())
    v += -log_gamma(a) + (a - 1.0) * (digamma(a) - psi0);
  return std::max(v, 0.0);
}

/// d KL[Dir(alpha) || Dir(1)] / d alpha_j = (alpha_j - 1) psi'(alpha_j) - (alpha_0 - K) psi'(alpha_0)
inline std::vector<double> dirichlet_kl_to_uniform_grad(const DirichletParams& alpha) {
  const double k = static_cast<double>(alpha.size());
  const double a0 = alpha.total();
  const double common = (a0 - k) * trigamma(a0);
  std::vector<double> g(alpha.size());
  for (std::size_t j = 0; j < g.size(); ++j)
    g[j] = (alpha[j] - 1.0) * trigamma(alpha[j]) - common;
  return g;
}

/// -E_{pi ~ Dir(alpha)}[log pi_label] = psi(alpha_0) - psi(alpha_label).
inline double dirichlet_expected_nll(const DirichletParams& alpha, std::size_t label) {
  check_label(label, alpha.size());
  return digamma(alpha.total()) - digamma(alpha[label]);
}

inline LossValue bayesian_matching_loss(const Logits& logits, std::size_t label,
                                        const BayesMatchConfig& cfg) {
  check_label(label, logits.size());
  cfg.validate();
  const auto alpha = concentration(logits, cfg);
  const auto dalpha = concentration_derivative(logits, cfg);
  const auto kl_grad = dirichlet_kl_to_uniform_grad(alpha);
  const double tri0 = trigamma(alpha.total());

  LossValue out;
  out.value = cfg.lambda * dirichlet_kl_to_uniform(alpha) +
              dirichlet_expected_nll(alpha, label);
  out.grad.resize(logits.size());
  for (std::size_t j = 0; j < out.grad.size(); ++j) {
    double d_nll = tri0;
    if (j == label) d_nll -= trigamma(alpha[j]);
    out.grad[j] = (cfg.lambda * kl_grad[j] + d_nll) * dalpha[j];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dispatch and batching

inline LossValue example_loss(const LossConfig& cfg, const Logits& logits,
                              std::size_t label) {
  switch (cfg.kind) {
    case LossKind::cross_entropy: return cross_entropy_loss(logits, label);
    case LossKind::label_smoothing:
      return label_smoothing_loss(logits, label, cfg.smoothing, cfg.direction);
    case LossKind::bayesian_matching:
      return bayesian_matching_loss(logits, label, cfg.bayes);
  }
  throw DomainError("unknown loss kind");
}

/// Predictive categorical of a head trained with `cfg`: softmax for the
/// softmax losses, the Dirichlet mean for Bayesian matching.
inline CategoricalDist predictive(const LossConfig& cfg, const Logits& logits) {
  if (cfg.kind == LossKind::bayesian_matching)
    return concentration(logits, cfg.bayes).mean();
  return softmax(logits);
}

struct LabeledLogits {
  Logits logits;
  std::size_t label;
};

struct BatchLoss {
  double value = 0.0;
  std::vector<std::vector<double>> grads;  // one per example
};

/// Mean over the batch for cross entropy and label smoothing, sum for
/// Bayesian matching. Examples are accumulated in index order.
inline BatchLoss batch_loss(const LossConfig& cfg, std::span<const LabeledLogits> batch) {
  if (batch.empty()) throw DomainError("empty batch");
  const double weight = cfg.kind == LossKind::bayesian_matching
                            ? 1.0
                            : 1.0 / static_cast<double>(batch.size());
  BatchLoss out;
  out.grads.reserve(batch.size());
  for (const auto& ex : batch) {
    auto l = example_loss(cfg, ex.logits, ex.label);
    out.value += weight * l.value;
    for (double& g : l.grad) g *= weight;
    out.grads.push_back(std::move(l.grad));
  }
  return out;
}

}  // namespace calibst
