#pragma once

// Desk-scale belief tracker: a synthetic multi-slot dialogue corpus and a
// small gated recurrent model with one affine head per slot.
//
// Corpus. Each dialogue starts from uniformly drawn slot values; at every
// turn a slot keeps its value with probability `carryover_prob`, otherwise
// it is redrawn. A turn's evidence for a slot is its true value, replaced
// with probability `label_noise` by a uniformly drawn wrong value. The
// feature vector is the sum over slots of a fixed random embedding of the
// evidence plus isotropic Gaussian jitter. From one turn alone the best
// achievable per-slot accuracy is therefore 1 - label_noise; carryover lets
// a recurrent model do better by pooling evidence across turns.
//
// Model, per turn t with features x_t and h_0 = 0:
//   c_t = tanh(Wc x_t + Uc h_{t-1} + bc)
//   g_t = sigmoid(Wg x_t + Ug h_{t-1} + bg)
//   h_t = g_t * h_{t-1} + (1 - g_t) * c_t
//   z_{t,s} = V_s (m * h_t) + d_s
// where m is an inverted-dropout mask shared by every turn of a pass.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "calibst/calibration.hpp"
#include "calibst/core_types.hpp"
#include "calibst/losses.hpp"
#include "calibst/random.hpp"

namespace calibst {

// ---------------------------------------------------------------------------
// Corpus

/// Five slots with 3, 4, 5, 7 and 9 candidates.
inline SlotSchema default_toy_schema() {
  return SlotSchema({
      {"hotel-pricerange", {"cheap", "moderate", "expensive"}},
      {"hotel-parking", {"yes", "no", "free", "dontcare"}},
      {"hotel-area", {"centre", "north", "south", "east", "west"}},
      {"restaurant-day",
       {"monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"}},
      {"restaurant-food",
       {"british", "chinese", "european", "french", "indian", "italian", "catalan",
        "thai", "turkish"}},
  });
}

struct SynthConfig {
  SlotSchema schema = default_toy_schema();
  std::size_t n_dialogues = 300;
  std::size_t min_turns = 3;
  std::size_t max_turns = 10;
  std::size_t feature_dim = 32;
  double label_noise = 0.3;
  double carryover_prob = 0.8;
  double embedding_scale = 3.0;
  double feature_jitter = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (schema.size() == 0) throw DomainError("synth schema is empty");
    if (n_dialogues < 10) throw DomainError("need at least 10 dialogues for an 80/10/10 split");
    if (min_turns == 0 || min_turns > max_turns)
      throw DomainError("turn range must satisfy 1 <= min_turns <= max_turns");
    if (feature_dim < schema.size()) throw DomainError("feature_dim must be >= number of slots");
    if (!(label_noise >= 0.0 && label_noise < 0.5))
      throw DomainError("label_noise must lie in [0, 0.5)");
    if (!(carryover_prob >= 0.0 && carryover_prob <= 1.0))
      throw DomainError("carryover_prob must lie in [0, 1]");
    if (!(embedding_scale > 0.0)) throw DomainError("embedding_scale must be positive");
    if (!(feature_jitter >= 0.0)) throw DomainError("feature_jitter must be >= 0");
  }
};

struct Turn {
  std::vector<double> features;
  std::vector<std::size_t> labels;  // schema order
};

struct Dialogue {
  std::string id;
  std::vector<Turn> turns;
};

struct Corpus {
  SlotSchema schema;
  std::size_t feature_dim = 0;
  std::vector<Dialogue> train, dev, test;
};

inline std::string dialogue_name(std::size_t index) {
  std::string digits = std::to_string(index);
  return "toy" + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits;
}

inline Corpus generate_corpus(const SynthConfig& cfg) {
  cfg.validate();
  const auto& slots = cfg.schema.slots();
  const std::size_t dim = cfg.feature_dim;

  // embeddings[s][v] has entries N(0, scale^2 / dim)
  Rng emb_rng(derive_seed(cfg.seed, {0xe4b}));
  std::vector<std::vector<std::vector<double>>> embeddings(slots.size());
  const double emb_sd = cfg.embedding_scale / std::sqrt(static_cast<double>(dim));
  for (std::size_t s = 0; s < slots.size(); ++s) {
    embeddings[s].resize(slots[s].candidate_count());
    for (auto& e : embeddings[s]) {
      e.resize(dim);
      for (double& v : e) v = emb_sd * emb_rng.normal();
    }
  }

  std::vector<Dialogue> dialogues(cfg.n_dialogues);
  for (std::size_t d = 0; d < cfg.n_dialogues; ++d) {
    Rng rng(derive_seed(cfg.seed, {0xd1a, d}));
    Dialogue& dlg = dialogues[d];
    dlg.id = dialogue_name(d);
    const std::size_t n_turns =
        cfg.min_turns + rng.below(cfg.max_turns - cfg.min_turns + 1);
    std::vector<std::size_t> state(slots.size());
    for (std::size_t s = 0; s < slots.size(); ++s)
      state[s] = rng.below(slots[s].candidate_count());
    for (std::size_t t = 0; t < n_turns; ++t) {
      if (t > 0)
        for (std::size_t s = 0; s < slots.size(); ++s)
          if (rng.uniform() >= cfg.carryover_prob)
            state[s] = rng.below(slots[s].candidate_count());
      Turn turn;
      turn.labels = state;
      turn.features.assign(dim, 0.0);
      for (std::size_t s = 0; s < slots.size(); ++s) {
        const std::size_t k = slots[s].candidate_count();
        std::size_t evidence = state[s];
        if (rng.uniform() < cfg.label_noise) {
          evidence = rng.below(k - 1);
          if (evidence >= state[s]) ++evidence;
        }
        const auto& e = embeddings[s][evidence];
        for (std::size_t i = 0; i < dim; ++i) turn.features[i] += e[i];
      }
      for (double& v : turn.features) v += cfg.feature_jitter * rng.normal();
      dlg.turns.push_back(std::move(turn));
    }
  }

  Corpus c;
  c.schema = cfg.schema;
  c.feature_dim = dim;
  const std::size_t n_train = cfg.n_dialogues * 8 / 10;
  const std::size_t n_dev = cfg.n_dialogues / 10;
  auto begin = std::make_move_iterator(dialogues.begin());
  c.train.assign(begin, begin + n_train);
  c.dev.assign(begin + n_train, begin + n_train + n_dev);
  c.test.assign(begin + n_train + n_dev, std::make_move_iterator(dialogues.end()));
  return c;
}

// ---------------------------------------------------------------------------
// Model

struct ToyModel {
  std::size_t feature_dim = 0;
  std::size_t hidden = 0;
  std::vector<std::size_t> arity;

  Eigen::MatrixXd wc, uc;  // hidden x feature_dim, hidden x hidden
  Eigen::VectorXd bc;
  Eigen::MatrixXd wg, ug;
  Eigen::VectorXd bg;
  std::vector<Eigen::MatrixXd> head_w;  // arity[s] x hidden
  std::vector<Eigen::VectorXd> head_b;

  static ToyModel zeros(std::size_t feature_dim, std::size_t hidden,
                        std::vector<std::size_t> arity) {
    if (feature_dim == 0 || hidden == 0) throw DomainError("model dimensions must be positive");
    ToyModel m;
    m.feature_dim = feature_dim;
    m.hidden = hidden;
    m.arity = std::move(arity);
    m.wc = Eigen::MatrixXd::Zero(hidden, feature_dim);
    m.uc = Eigen::MatrixXd::Zero(hidden, hidden);
    m.bc = Eigen::VectorXd::Zero(hidden);
    m.wg = Eigen::MatrixXd::Zero(hidden, feature_dim);
    m.ug = Eigen::MatrixXd::Zero(hidden, hidden);
    m.bg = Eigen::VectorXd::Zero(hidden);
    for (auto k : m.arity) {
      if (k < 2) throw DomainError("slot head needs at least 2 outputs");
      m.head_w.push_back(Eigen::MatrixXd::Zero(k, hidden));
      m.head_b.push_back(Eigen::VectorXd::Zero(k));
    }
    return m;
  }

  /// Gaussian init scaled by 1/sqrt(fan_in); biases start at zero.
  static ToyModel random(std::size_t feature_dim, std::size_t hidden,
                         std::vector<std::size_t> arity, std::uint64_t seed) {
    ToyModel m = zeros(feature_dim, hidden, std::move(arity));
    Rng rng(derive_seed(seed, {0x1417}));
    auto fill = [&rng](Eigen::MatrixXd& w) {
      const double sd = 1.0 / std::sqrt(static_cast<double>(w.cols()));
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = sd * rng.normal();
    };
    fill(m.wc);
    fill(m.uc);
    fill(m.wg);
    fill(m.ug);
    for (auto& w : m.head_w) fill(w);
    return m;
  }

  std::size_t slot_count() const noexcept { return arity.size(); }

  template <typename F>
  void for_each_block(F&& f) {
    f(wc.data(), wc.size());
    f(uc.data(), uc.size());
    f(bc.data(), bc.size());
    f(wg.data(), wg.size());
    f(ug.data(), ug.size());
    f(bg.data(), bg.size());
    for (std::size_t s = 0; s < head_w.size(); ++s) {
      f(head_w[s].data(), head_w[s].size());
      f(head_b[s].data(), head_b[s].size());
    }
  }

  template <typename F>
  void for_each_block(F&& f) const {
    const_cast<ToyModel*>(this)->for_each_block(
        [&f](double* p, Eigen::Index n) { f(static_cast<const double*>(p), n); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_block([&n](const double*, Eigen::Index len) { n += static_cast<std::size_t>(len); });
    return n;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for_each_block([&out](const double* p, Eigen::Index n) { out.insert(out.end(), p, p + n); });
    return out;
  }

  void assign(std::span<const double> flat) {
    if (flat.size() != parameter_count()) throw DomainError("parameter vector has wrong length");
    std::size_t off = 0;
    for_each_block([&](double* p, Eigen::Index n) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), n, p);
      off += static_cast<std::size_t>(n);
    });
  }

  /// this += a * other, block by block.
  void axpy(double a, const ToyModel& other) {
    wc += a * other.wc;
    uc += a * other.uc;
    bc += a * other.bc;
    wg += a * other.wg;
    ug += a * other.ug;
    bg += a * other.bg;
    for (std::size_t s = 0; s < head_w.size(); ++s) {
      head_w[s] += a * other.head_w[s];
      head_b[s] += a * other.head_b[s];
    }
  }

  void scale(double a) {
    for_each_block([a](double* p, Eigen::Index n) {
      for (Eigen::Index i = 0; i < n; ++i) p[i] *= a;
    });
  }

  void set_zero() { scale(0.0); }

  bool all_finite() const {
    bool ok = true;
    for_each_block([&ok](const double* p, Eigen::Index n) {
      for (Eigen::Index i = 0; i < n; ++i) ok = ok && std::isfinite(p[i]);
    });
    return ok;
  }

  friend bool operator==(const ToyModel& a, const ToyModel& b) {
    return a.feature_dim == b.feature_dim && a.hidden == b.hidden && a.arity == b.arity &&
           a.flatten() == b.flatten();
  }
};

inline std::vector<std::size_t> schema_arity(const SlotSchema& schema) {
  std::vector<std::size_t> a;
  for (const auto& s : schema.slots()) a.push_back(s.candidate_count());
  return a;
}

/// Per-slot logits (schema order) for each turn of a dialogue.
using TurnLogits = std::vector<Logits>;

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct ForwardTrace {
  std::vector<Eigen::VectorXd> h;  // h[0] = 0, h[t+1] after turn t
  std::vector<Eigen::VectorXd> c, g;
  std::vector<Eigen::VectorXd> out;  // mask * h[t+1]
};

inline void check_dims(const ToyModel& model, const Dialogue& dlg) {
  for (const auto& t : dlg.turns) {
    if (t.features.size() != model.feature_dim)
      throw DomainError("feature dimension " + std::to_string(t.features.size()) +
                        " does not match model input " + std::to_string(model.feature_dim));
    if (!t.labels.empty() && t.labels.size() != model.slot_count())
      throw DomainError("turn has " + std::to_string(t.labels.size()) + " labels, model has " +
                        std::to_string(model.slot_count()) + " slots");
  }
}

inline ForwardTrace run(const ToyModel& m, const Dialogue& dlg, const Eigen::VectorXd* mask) {
  check_dims(m, dlg);
  if (mask && static_cast<std::size_t>(mask->size()) != m.hidden)
    throw DomainError("dropout mask width does not match hidden width");
  ForwardTrace tr;
  const std::size_t n = dlg.turns.size();
  tr.h.reserve(n + 1);
  tr.h.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.hidden)));
  for (std::size_t t = 0; t < n; ++t) {
    const Eigen::Map<const Eigen::VectorXd> x(dlg.turns[t].features.data(),
                                              static_cast<Eigen::Index>(m.feature_dim));
    const Eigen::VectorXd& prev = tr.h.back();
    Eigen::VectorXd c = (m.wc * x + m.uc * prev + m.bc).array().tanh().matrix();
    Eigen::VectorXd g = (m.wg * x + m.ug * prev + m.bg).unaryExpr(&sigmoid);
    Eigen::VectorXd h = g.cwiseProduct(prev) + (1.0 - g.array()).matrix().cwiseProduct(c);
    tr.out.push_back(mask ? Eigen::VectorXd(h.cwiseProduct(*mask)) : h);
    tr.c.push_back(std::move(c));
    tr.g.push_back(std::move(g));
    tr.h.push_back(std::move(h));
  }
  return tr;
}

inline Logits head(const ToyModel& m, std::size_t s, const Eigen::VectorXd& o) {
  Eigen::VectorXd z = m.head_w[s] * o + m.head_b[s];
  return Logits(std::vector<double>(z.data(), z.data() + z.size()));
}

inline std::optional<Eigen::VectorXd> make_mask(std::size_t width, double rate,
                                                std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw DomainError("dropout rate must lie in [0, 1)");
  if (rate == 0.0) return std::nullopt;
  const auto m = dropout_masks(width, rate, 1, seed).front();
  return Eigen::Map<const Eigen::VectorXd>(m.data(), static_cast<Eigen::Index>(width));
}

}  // namespace detail

/// Forward pass with an explicit mask (empty span means no dropout).
inline std::vector<TurnLogits> forward(const ToyModel& model, const Dialogue& dlg,
                                       std::span<const double> mask) {
  std::optional<Eigen::VectorXd> m;
  if (!mask.empty())
    m = Eigen::Map<const Eigen::VectorXd>(mask.data(), static_cast<Eigen::Index>(mask.size()));
  const auto tr = detail::run(model, dlg, m ? &*m : nullptr);
  std::vector<TurnLogits> out(dlg.turns.size());
  for (std::size_t t = 0; t < out.size(); ++t)
    for (std::size_t s = 0; s < model.slot_count(); ++s)
      out[t].push_back(detail::head(model, s, tr.out[t]));
  return out;
}

/// Forward pass with a dropout mask drawn from `mask_seed`.
inline std::vector<TurnLogits> forward(const ToyModel& model, const Dialogue& dlg,
                                       double dropout_rate, std::uint64_t mask_seed) {
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw DomainError("dropout rate must lie in [0, 1)");
  const auto mask = detail::make_mask(model.hidden, dropout_rate, mask_seed);
  return forward(model, dlg,
                 mask ? std::span<const double>(mask->data(), model.hidden)
                      : std::span<const double>{});
}

/// Adds weight * d(sum over turns and slots of the loss)/d(params) to
/// `grad` and returns the unweighted loss sum.
inline double accumulate_gradient(const ToyModel& m, const Dialogue& dlg,
                                  const LossConfig& loss, std::span<const double> mask,
                                  double weight, ToyModel& grad) {
  std::optional<Eigen::VectorXd> mvec;
  if (!mask.empty())
    mvec = Eigen::Map<const Eigen::VectorXd>(mask.data(), static_cast<Eigen::Index>(mask.size()));
  const auto tr = detail::run(m, dlg, mvec ? &*mvec : nullptr);
  const std::size_t n = dlg.turns.size();
  const auto H = static_cast<Eigen::Index>(m.hidden);

  double total = 0.0;
  Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(H);
  for (std::size_t ti = n; ti-- > 0;) {
    const auto& turn = dlg.turns[ti];
    if (turn.labels.size() != m.slot_count()) throw DomainError("turn is missing labels");
    Eigen::VectorXd d_out = Eigen::VectorXd::Zero(H);
    for (std::size_t s = 0; s < m.slot_count(); ++s) {
      const Logits z = detail::head(m, s, tr.out[ti]);
      const LossValue l = example_loss(loss, z, turn.labels[s]);
      total += l.value;
      const Eigen::Map<const Eigen::VectorXd> dz0(l.grad.data(),
                                                  static_cast<Eigen::Index>(l.grad.size()));
      const Eigen::VectorXd dz = weight * dz0;
      grad.head_w[s].noalias() += dz * tr.out[ti].transpose();
      grad.head_b[s] += dz;
      d_out.noalias() += m.head_w[s].transpose() * dz;
    }
    Eigen::VectorXd dh = mvec ? Eigen::VectorXd(d_out.cwiseProduct(*mvec)) : d_out;
    dh += dh_next;

    const Eigen::VectorXd& prev = tr.h[ti];
    const Eigen::VectorXd& c = tr.c[ti];
    const Eigen::VectorXd& g = tr.g[ti];
    const Eigen::VectorXd dg = dh.cwiseProduct(prev - c);
    const Eigen::VectorXd dc = dh.cwiseProduct((1.0 - g.array()).matrix());
    const Eigen::VectorXd da = dc.cwiseProduct((1.0 - c.array().square()).matrix());
    const Eigen::VectorXd dr = dg.cwiseProduct((g.array() * (1.0 - g.array())).matrix());

    const Eigen::Map<const Eigen::VectorXd> x(turn.features.data(),
                                              static_cast<Eigen::Index>(m.feature_dim));
    grad.wc.noalias() += da * x.transpose();
    grad.uc.noalias() += da * prev.transpose();
    grad.bc += da;
    grad.wg.noalias() += dr * x.transpose();
    grad.ug.noalias() += dr * prev.transpose();
    grad.bg += dr;

    dh_next = dh.cwiseProduct(g);
    dh_next.noalias() += m.uc.transpose() * da;
    dh_next.noalias() += m.ug.transpose() * dr;
  }
  return total;
}

/// Unweighted loss sum over every turn and slot of a dialogue.
inline double dialogue_loss(const ToyModel& m, const Dialogue& dlg, const LossConfig& loss,
                            std::span<const double> mask = {}) {
  const auto logits = forward(m, dlg, mask);
  double total = 0.0;
  for (std::size_t t = 0; t < logits.size(); ++t)
    for (std::size_t s = 0; s < m.slot_count(); ++s)
      total += example_loss(loss, logits[t][s], dlg.turns[t].labels[s]).value;
  return total;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  LossConfig loss;
  double learning_rate = 0.05;
  std::size_t epochs = 200;
  std::size_t batch_size = 16;
  double dropout_rate = 0.3;
  std::size_t hidden = 32;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw DomainError("learning rate must be finite and >= 0");
    if (epochs == 0) throw DomainError("epochs must be positive");
    if (batch_size == 0) throw DomainError("batch size must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw DomainError("dropout rate must lie in [0, 1)");
    if (hidden == 0) throw DomainError("hidden width must be positive");
    loss.bayes.validate();
    if (loss.kind == LossKind::label_smoothing && !(loss.smoothing.alpha > 0.0))
      throw DomainError("smoothing alpha must be positive");
  }
};

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(std::size_t epoch)
      : std::runtime_error("training diverged (non-finite loss) at epoch " +
                           std::to_string(epoch)),
        epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

struct TrainResult {
  ToyModel model;
  std::vector<double> loss_curve;  // mean per-prediction loss of each epoch
};

/// Mini-batch gradient descent over dialogues. The step uses the mean
/// gradient per slot prediction in the batch for every loss kind.
inline TrainResult train(ToyModel model, std::span<const Dialogue> data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw DomainError("empty training set");
  ToyModel grad = ToyModel::zeros(model.feature_dim, model.hidden, model.arity);
  std::vector<std::size_t> order(data.size());
  TrainResult res;
  res.loss_curve.reserve(cfg.epochs);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(cfg.seed, {0x5f1e, epoch}));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    double epoch_loss = 0.0;
    std::size_t epoch_preds = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      grad.set_zero();
      std::size_t preds = 0;
      for (std::size_t b = start; b < stop; ++b) {
        const auto& dlg = data[order[b]];
        const auto mask = detail::make_mask(model.hidden, cfg.dropout_rate,
                                            derive_seed(cfg.seed, {0x3a5c, epoch, order[b]}));
        try {
          epoch_loss += accumulate_gradient(
              model, dlg, cfg.loss,
              mask ? std::span<const double>(mask->data(), model.hidden)
                   : std::span<const double>{},
              1.0, grad);
        } catch (const NonFiniteValue&) {
          throw TrainingDiverged(epoch);
        }
        preds += dlg.turns.size() * model.slot_count();
      }
      epoch_preds += preds;
      if (preds == 0) continue;
      model.axpy(-cfg.learning_rate / static_cast<double>(preds), grad);
    }
    const double mean = epoch_loss / static_cast<double>(std::max<std::size_t>(epoch_preds, 1));
    if (!std::isfinite(mean) || !model.all_finite()) throw TrainingDiverged(epoch);
    res.loss_curve.push_back(mean);
  }
  res.model = std::move(model);
  return res;
}

inline TrainResult train(std::span<const Dialogue> data, const SlotSchema& schema,
                         std::size_t feature_dim, const TrainConfig& cfg) {
  return train(ToyModel::random(feature_dim, cfg.hidden, schema_arity(schema), cfg.seed), data,
               cfg);
}

/// Independent members, each trained on its own dialogue subset with seed
/// cfg.seed + member index. Members run concurrently.
inline std::vector<ToyModel> train_ensemble(std::span<const Dialogue> data,
                                            const SlotSchema& schema, std::size_t feature_dim,
                                            const EnsembleSpec& spec, const TrainConfig& cfg) {
  if (spec.kind != EnsembleKind::bootstrap)
    throw DomainError("train_ensemble requires a bootstrap spec");
  const auto subsets = bootstrap_subsets(data.size(), spec);
  std::vector<std::future<ToyModel>> jobs;
  for (std::size_t i = 0; i < subsets.size(); ++i) {
    jobs.push_back(std::async(std::launch::async, [&, i] {
      std::vector<Dialogue> part;
      part.reserve(subsets[i].size());
      for (auto idx : subsets[i]) part.push_back(data[idx]);
      TrainConfig member = cfg;
      member.seed = cfg.seed + i;
      return train(part, schema, feature_dim, member).model;
    }));
  }
  std::vector<ToyModel> out;
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

// ---------------------------------------------------------------------------
// Prediction

enum class PredictMode { single, dropout, bootstrap };

inline std::string_view to_string(PredictMode m) {
  switch (m) {
    case PredictMode::single: return "single";
    case PredictMode::dropout: return "dropout";
    case PredictMode::bootstrap: return "bootstrap";
  }
  return "?";
}

inline PredictMode parse_predict_mode(std::string_view s) {
  if (s == "single") return PredictMode::single;
  if (s == "dropout") return PredictMode::dropout;
  if (s == "bootstrap") return PredictMode::bootstrap;
  throw DomainError("unknown predict mode '" + std::string(s) + "'");
}

struct PredictOptions {
  PredictMode mode = PredictMode::single;
  std::size_t passes = 35;      // dropout mode
  double dropout_rate = 0.3;    // dropout mode
  std::uint64_t seed = 0;       // dropout mode
  std::optional<Temperature> temperature;
};

struct LogitRecord {
  std::string dialogue_id;
  std::size_t turn_index = 0;
  std::vector<Logits> logits;  // schema order
  std::vector<std::size_t> labels;
};

/// Raw single-model logits for every turn, e.g. for temperature fitting.
inline std::vector<LogitRecord> collect_logits(const ToyModel& model,
                                               std::span<const Dialogue> dialogues) {
  std::vector<LogitRecord> out;
  for (const auto& dlg : dialogues) {
    auto logits = forward(model, dlg, std::span<const double>{});
    for (std::size_t t = 0; t < logits.size(); ++t)
      out.push_back({dlg.id, t, std::move(logits[t]), dlg.turns[t].labels});
  }
  return out;
}

namespace detail {

inline std::vector<std::vector<CategoricalDist>> turn_predictive(
    const ToyModel& m, const Dialogue& dlg, std::span<const double> mask,
    const LossConfig& loss, const std::optional<Temperature>& temp) {
  const auto logits = forward(m, dlg, mask);
  std::vector<std::vector<CategoricalDist>> out(logits.size());
  for (std::size_t t = 0; t < logits.size(); ++t)
    for (const auto& z : logits[t])
      out[t].push_back(predictive(loss, temp ? temperature_scale(z, *temp) : z));
  return out;
}

}  // namespace detail

/// Per-turn belief states for `dialogues`. `loss` selects the predictive
/// head (softmax or Dirichlet mean). Ensembles combine member
/// distributions by their elementwise mean.
inline std::vector<PredictionRecord> predict_corpus(std::span<const ToyModel> models,
                                                    std::span<const Dialogue> dialogues,
                                                    const SlotSchema& schema,
                                                    const LossConfig& loss,
                                                    const PredictOptions& opts) {
  if (models.empty()) throw DomainError("no models to predict with");
  for (const auto& m : models)
    if (m.arity != schema_arity(schema)) throw DomainError("model heads do not match schema");

  std::vector<std::vector<double>> masks;
  std::size_t members = 1;
  if (opts.mode == PredictMode::dropout) {
    if (opts.passes == 0) throw DomainError("dropout prediction needs at least one pass");
    masks = dropout_masks(models.front().hidden, opts.dropout_rate, opts.passes, opts.seed);
    members = opts.passes;
  } else if (opts.mode == PredictMode::bootstrap) {
    members = models.size();
  } else if (models.size() != 1) {
    throw DomainError("single mode takes exactly one model");
  }

  const auto& slots = schema.slots();
  std::vector<PredictionRecord> out;
  for (const auto& dlg : dialogues) {
    std::vector<std::vector<std::vector<CategoricalDist>>> per_member;
    per_member.reserve(members);
    for (std::size_t i = 0; i < members; ++i) {
      const ToyModel& m = opts.mode == PredictMode::bootstrap ? models[i] : models.front();
      const std::span<const double> mask =
          opts.mode == PredictMode::dropout ? std::span<const double>(masks[i])
                                            : std::span<const double>{};
      per_member.push_back(detail::turn_predictive(m, dlg, mask, loss, opts.temperature));
    }
    std::vector<CategoricalDist> column;
    for (std::size_t t = 0; t < dlg.turns.size(); ++t) {
      PredictionRecord rec;
      rec.dialogue_id = dlg.id;
      rec.turn_index = t;
      for (std::size_t s = 0; s < slots.size(); ++s) {
        column.clear();
        for (const auto& pm : per_member) column.push_back(pm[t][s]);
        rec.belief.emplace(slots[s].name,
                           members == 1 ? column.front() : ensemble_combine(column));
        rec.labels.emplace(slots[s].name, dlg.turns[t].labels.at(s));
      }
      out.push_back(std::move(rec));
    }
  }
  return out;
}

}  // namespace calibst
