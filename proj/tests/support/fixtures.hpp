#pragma once

// Random and hand-built inputs shared by the unit tests and the acceptance
// suite. Randomness comes from std::mt19937_64 so fixtures never depend on
// the library's own generator.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "calibst/core_types.hpp"
#include "calibst/losses.hpp"
#include "support/oracles.hpp"

namespace fixture {

using calibst::BeliefState;
using calibst::CategoricalDist;
using calibst::PredictionRecord;
using calibst::Slot;
using calibst::SlotSchema;

inline SlotSchema make_schema(const std::vector<std::size_t>& arities) {
  std::vector<Slot> slots;
  for (std::size_t s = 0; s < arities.size(); ++s) {
    Slot slot{"slot" + std::to_string(s), {}};
    for (std::size_t v = 0; v < arities[s]; ++v) slot.candidates.push_back("v" + std::to_string(v));
    slots.push_back(std::move(slot));
  }
  return SlotSchema(std::move(slots));
}

inline SlotSchema random_schema(std::mt19937_64& gen, std::size_t max_slots = 5,
                                std::size_t max_k = 10) {
  std::uniform_int_distribution<std::size_t> n_slots(1, max_slots), k(2, max_k);
  std::vector<std::size_t> arities(n_slots(gen));
  for (auto& a : arities) a = k(gen);
  return make_schema(arities);
}

/// One of several shapes: smooth Dirichlet draw, sharp draw, one-hot, or an
/// exact tie between the first two candidates.
inline CategoricalDist random_dist(std::size_t k, std::mt19937_64& gen) {
  std::uniform_int_distribution<int> shape(0, 5);
  std::vector<double> p(k, 0.0);
  switch (shape(gen)) {
    case 0: {
      p[std::uniform_int_distribution<std::size_t>(0, k - 1)(gen)] = 1.0;
      break;
    }
    case 1: {
      p[0] = 0.5;
      p[1] = 0.5;
      break;
    }
    case 2: {
      std::vector<double> a(k, 0.1);
      p = oracle::sample_dirichlet(a, gen);
      break;
    }
    default: {
      std::vector<double> a(k, 1.0);
      p = oracle::sample_dirichlet(a, gen);
      break;
    }
  }
  return CategoricalDist(std::move(p));
}

inline PredictionRecord random_record(const SlotSchema& schema, std::mt19937_64& gen,
                                      std::size_t turn = 0) {
  PredictionRecord r;
  r.dialogue_id = "d" + std::to_string(turn / 4);
  r.turn_index = turn % 4;
  for (const auto& slot : schema.slots()) {
    const auto k = slot.candidate_count();
    r.belief.emplace(slot.name, random_dist(k, gen));
    r.labels[slot.name] = std::uniform_int_distribution<std::size_t>(0, k - 1)(gen);
  }
  return r;
}

inline std::vector<PredictionRecord> random_records(const SlotSchema& schema, std::size_t n,
                                                    std::mt19937_64& gen) {
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_record(schema, gen, i));
  return out;
}

/// Belief that is one-hot on the predicted value of each slot; `wrong`
/// slots predict (label + 1) mod K.
inline PredictionRecord one_hot_record(const SlotSchema& schema,
                                       const std::vector<std::size_t>& labels,
                                       const std::vector<bool>& wrong) {
  PredictionRecord r;
  for (std::size_t s = 0; s < schema.size(); ++s) {
    const auto& slot = schema.slots()[s];
    const auto k = slot.candidate_count();
    r.labels[slot.name] = labels[s];
    r.belief.emplace(slot.name, calibst::one_hot(wrong[s] ? (labels[s] + 1) % k : labels[s], k));
  }
  return r;
}

/// Development set whose logits are c * log(true probabilities); labels
/// are drawn from the true probabilities, so dividing by beta = c
/// calibrates it exactly.
inline std::vector<calibst::LabeledLogits> sharpened_dev(double c, std::size_t n, std::size_t k,
                                                         std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<double> a(k, 1.0);
  std::vector<calibst::LabeledLogits> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto p = oracle::sample_dirichlet(a, gen);
    for (double& v : p) v = std::max(v, 1e-12);
    std::discrete_distribution<std::size_t> draw(p.begin(), p.end());
    std::vector<double> z(k);
    for (std::size_t j = 0; j < k; ++j) z[j] = c * std::log(p[j]);
    out.push_back({calibst::Logits(std::move(z)), draw(gen)});
  }
  return out;
}

/// Single-slot records with joint confidence c uniform on [0.1, 1] and the
/// turn correct with probability c.
inline std::vector<PredictionRecord> calibrated_stream(std::size_t n, std::uint64_t seed) {
  const auto schema = make_schema({10});
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> conf(0.1, 1.0), u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> other(1, 9);
  std::vector<PredictionRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = conf(gen);
    std::vector<double> p(10, (1.0 - c) / 9.0);
    p[0] = c;
    PredictionRecord r;
    r.dialogue_id = "s" + std::to_string(i);
    r.belief.emplace("slot0", CategoricalDist(std::move(p)));
    r.labels["slot0"] = u(gen) < c ? 0 : other(gen);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace fixture
