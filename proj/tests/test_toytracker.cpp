#include <gtest/gtest.h>

#include <random>
#include <set>

#include "calibst/metrics.hpp"
#include "calibst/toytracker.hpp"
#include "support/oracles.hpp"
#include "support/suites.hpp"

using namespace calibst;

namespace {

Corpus small_corpus(std::uint64_t seed, std::size_t n = 40) {
  SynthConfig sc;
  sc.n_dialogues = n;
  sc.seed = seed;
  return generate_corpus(sc);
}

Dialogue tiny_dialogue(std::size_t dim, std::mt19937_64& gen) {
  std::normal_distribution<double> n(0.0, 1.0);
  Dialogue d;
  d.id = "tiny";
  for (std::size_t t = 0; t < 3; ++t) {
    Turn turn;
    for (std::size_t i = 0; i < dim; ++i) turn.features.push_back(n(gen));
    turn.labels = {gen() % 3, gen() % 2};
    d.turns.push_back(turn);
  }
  return d;
}

}  // namespace

TEST(Corpus, DeterministicPerSeed) {
  const auto a = small_corpus(3), b = small_corpus(3), c = small_corpus(4);
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].id, b.train[i].id);
    ASSERT_EQ(a.train[i].turns.size(), b.train[i].turns.size());
    for (std::size_t t = 0; t < a.train[i].turns.size(); ++t) {
      EXPECT_EQ(a.train[i].turns[t].features, b.train[i].turns[t].features);
      EXPECT_EQ(a.train[i].turns[t].labels, b.train[i].turns[t].labels);
    }
  }
  EXPECT_NE(a.train[0].turns[0].features, c.train[0].turns[0].features);
}

TEST(Corpus, SplitAndShape) {
  const auto c = small_corpus(1, 100);
  EXPECT_EQ(c.train.size(), 80u);
  EXPECT_EQ(c.dev.size(), 10u);
  EXPECT_EQ(c.test.size(), 10u);
  std::set<std::string> ids;
  for (const auto* split : {&c.train, &c.dev, &c.test})
    for (const auto& d : *split) {
      ids.insert(d.id);
      EXPECT_GE(d.turns.size(), 3u);
      EXPECT_LE(d.turns.size(), 10u);
      for (const auto& t : d.turns) {
        ASSERT_EQ(t.features.size(), c.feature_dim);
        ASSERT_EQ(t.labels.size(), c.schema.size());
        for (std::size_t s = 0; s < t.labels.size(); ++s)
          EXPECT_LT(t.labels[s], c.schema.slots()[s].candidate_count());
      }
    }
  EXPECT_EQ(ids.size(), 100u);
  EXPECT_EQ(c.train.front().id, "toy00000");
}

TEST(Corpus, FullCarryoverKeepsStateFixed) {
  SynthConfig sc;
  sc.n_dialogues = 30;
  sc.carryover_prob = 1.0;
  sc.seed = 8;
  const auto c = generate_corpus(sc);
  for (const auto* split : {&c.train, &c.dev, &c.test})
    for (const auto& d : *split)
      for (const auto& t : d.turns) EXPECT_EQ(t.labels, d.turns.front().labels);
}

TEST(Corpus, RejectsBadConfig) {
  SynthConfig sc;
  sc.n_dialogues = 5;
  EXPECT_THROW(generate_corpus(sc), DomainError);
  sc = {};
  sc.label_noise = 0.5;
  EXPECT_THROW(generate_corpus(sc), DomainError);
  sc = {};
  sc.min_turns = 4;
  sc.max_turns = 3;
  EXPECT_THROW(generate_corpus(sc), DomainError);
}

TEST(Forward, ZeroWeightsGiveUniform) {
  const auto c = small_corpus(2);
  const auto m = ToyModel::zeros(c.feature_dim, 8, schema_arity(c.schema));
  LossConfig ce;
  const auto recs = predict_corpus(std::span(&m, 1), c.test, c.schema, ce, {});
  for (const auto& r : recs)
    for (const auto& [slot, d] : r.belief)
      for (double p : d.probs()) EXPECT_DOUBLE_EQ(p, 1.0 / static_cast<double>(d.size()));
}

TEST(Forward, DropoutZeroMatchesSinglePass) {
  const auto v = suite::dropout_zero_suite(21);
  EXPECT_TRUE(v.pass) << v.detail;
}

TEST(Forward, RejectsMismatchedFeatures) {
  const auto c = small_corpus(2);
  const auto m = ToyModel::random(c.feature_dim + 1, 8, schema_arity(c.schema), 0);
  EXPECT_THROW(forward(m, c.test.front(), std::span<const double>{}), DomainError);
}

// Backpropagation through the recurrence against central differences on
// every parameter.
TEST(Gradient, FullModelMatchesFiniteDifferences) {
  std::mt19937_64 gen(61);
  const std::vector<std::size_t> arity{3, 2};
  for (auto kind : {LossKind::cross_entropy, LossKind::label_smoothing, LossKind::bayesian_matching}) {
    for (int rep = 0; rep < 3; ++rep) {
      auto m = ToyModel::random(4, 5, arity, gen());
      for (auto& b : m.head_b) b.setRandom();
      m.bc.setRandom();
      m.bg.setRandom();
      const auto dlg = tiny_dialogue(4, gen);
      LossConfig loss;
      loss.kind = kind;
      loss.smoothing.alpha = 0.1;
      loss.bayes.lambda = 0.3;
      std::vector<double> mask;
      if (rep == 2) mask = dropout_masks(5, 0.4, 1, gen()).front();

      auto grad = ToyModel::zeros(4, 5, arity);
      const double value = accumulate_gradient(m, dlg, loss, mask, 1.0, grad);
      EXPECT_NEAR(value, dialogue_loss(m, dlg, loss, mask), 1e-12);
      const auto numeric = oracle::finite_difference(
          [&](const std::vector<double>& x) {
            auto probe = m;
            probe.assign(x);
            return dialogue_loss(probe, dlg, loss, mask);
          },
          m.flatten());
      EXPECT_LE(oracle::max_rel_violation(grad.flatten(), numeric, 1e-7), 1e-4)
          << to_string(kind) << " rep " << rep;
    }
  }
}

TEST(Train, ZeroLearningRateLeavesModelUnchanged) {
  const auto c = small_corpus(5);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 4;
  cfg.hidden = 8;
  const auto init = ToyModel::random(c.feature_dim, 8, schema_arity(c.schema), cfg.seed);
  const auto r = train(init, c.train, cfg);
  EXPECT_EQ(r.model, init);
  ASSERT_EQ(r.loss_curve.size(), 4u);
  // dropout masks still vary per epoch, so compare the no-dropout curve
  cfg.dropout_rate = 0.0;
  const auto flat = train(init, c.train, cfg).loss_curve;
  for (double v : flat) EXPECT_DOUBLE_EQ(v, flat.front());
}

TEST(Train, DeterministicPerSeed) {
  const auto c = small_corpus(6);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.hidden = 8;
  const auto a = train(c.train, c.schema, c.feature_dim, cfg);
  const auto b = train(c.train, c.schema, c.feature_dim, cfg);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.loss_curve, b.loss_curve);
  cfg.seed = 1;
  EXPECT_FALSE(train(c.train, c.schema, c.feature_dim, cfg).model == a.model);
}

TEST(Train, Diverges) {
  const auto c = small_corpus(7);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.hidden = 8;
  auto init = ToyModel::random(c.feature_dim, 8, schema_arity(c.schema), 0);
  init.head_b[0][0] = std::numeric_limits<double>::infinity();
  try {
    train(init, c.train, cfg);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.epoch(), 0u);
  }
  cfg.learning_rate = -1.0;
  EXPECT_THROW(train(c.train, c.schema, c.feature_dim, cfg), DomainError);
}

TEST(Train, NoiselessCorpusIsLearned) {
  SynthConfig sc;
  sc.n_dialogues = 200;
  sc.label_noise = 0.0;
  sc.seed = 5;
  const auto c = generate_corpus(sc);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.learning_rate = 0.3;
  cfg.dropout_rate = 0.0;
  const auto r = train(c.train, c.schema, c.feature_dim, cfg);
  EXPECT_LT(r.loss_curve.back(), 0.05);
  EXPECT_LT(r.loss_curve.back(), r.loss_curve.front());
  const auto recs = predict_corpus(std::span(&r.model, 1), c.test, c.schema, cfg.loss, {});
  std::size_t ok = 0, n = 0;
  for (const auto& rec : recs)
    for (const auto& [slot, d] : rec.belief) {
      ++n;
      ok += d.argmax() == rec.labels.at(slot) ? 1 : 0;
    }
  EXPECT_GE(static_cast<double>(ok) / static_cast<double>(n), 0.99);
}

TEST(TrainEnsemble, SingleFullMemberEqualsTrain) {
  const auto c = small_corpus(9);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.hidden = 8;
  cfg.seed = 4;
  EnsembleSpec spec;
  spec.size = 1;
  spec.subset_size = c.train.size();
  const auto members = train_ensemble(c.train, c.schema, c.feature_dim, spec, cfg);
  ASSERT_EQ(members.size(), 1u);
  EXPECT_EQ(members.front(), train(c.train, c.schema, c.feature_dim, cfg).model);

  spec.size = 3;
  spec.subset_size = c.train.size() * 3 / 4;
  const auto three = train_ensemble(c.train, c.schema, c.feature_dim, spec, cfg);
  ASSERT_EQ(three.size(), 3u);
  EXPECT_FALSE(three[0] == three[1]);
  EXPECT_FALSE(three[1] == three[2]);
  EXPECT_EQ(three, train_ensemble(c.train, c.schema, c.feature_dim, spec, cfg));
}

TEST(Predict, IdenticalMembersEqualSingle) {
  const auto c = small_corpus(10);
  const auto m = ToyModel::random(c.feature_dim, 8, schema_arity(c.schema), 3);
  const std::vector<ToyModel> copies(4, m);
  for (auto kind : {LossKind::cross_entropy, LossKind::bayesian_matching}) {
    LossConfig loss;
    loss.kind = kind;
    PredictOptions boot;
    boot.mode = PredictMode::bootstrap;
    const auto a = predict_corpus(std::span(&m, 1), c.test, c.schema, loss, {});
    const auto b = predict_corpus(copies, c.test, c.schema, loss, boot);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].belief, b[i].belief);
  }
  EXPECT_THROW(predict_corpus(copies, c.test, c.schema, LossConfig{}, {}), DomainError);
}

TEST(Predict, OutputsValidateAndTopNIsMonotone) {
  const auto c = small_corpus(11, 60);
  const auto m = ToyModel::random(c.feature_dim, 8, schema_arity(c.schema), 5);
  PredictOptions drop;
  drop.mode = PredictMode::dropout;
  drop.passes = 6;
  drop.seed = 2;
  PredictOptions temp;
  temp.temperature = Temperature(2.5);
  for (const auto& opts : {PredictOptions{}, drop, temp}) {
    const auto recs = predict_corpus(std::span(&m, 1), c.test, c.schema, LossConfig{}, opts);
    std::size_t turns = 0;
    for (const auto& d : c.test) turns += d.turns.size();
    ASSERT_EQ(recs.size(), turns);
    for (const auto& r : recs) EXPECT_TRUE(validate_record(r, c.schema).empty());
    for (std::size_t n = 2; n <= 5; ++n) EXPECT_GE(top_n_jga(recs, n), top_n_jga(recs, n - 1));
  }
}

TEST(Predict, TemperatureLowersConfidence) {
  const auto c = small_corpus(12);
  const auto m = ToyModel::random(c.feature_dim, 8, schema_arity(c.schema), 6);
  PredictOptions temp;
  temp.temperature = Temperature(3.0);
  const auto a = predict_corpus(std::span(&m, 1), c.test, c.schema, LossConfig{}, {});
  const auto b = predict_corpus(std::span(&m, 1), c.test, c.schema, LossConfig{}, temp);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (const auto& [slot, d] : a[i].belief) {
      EXPECT_LE(b[i].belief.at(slot).max(), d.max() + 1e-15);
      EXPECT_EQ(b[i].belief.at(slot).argmax(), d.argmax());
    }
}
