#pragma once

// End-to-end toy benchmark: corpus -> training -> calibration -> metrics.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "calibst/calibration.hpp"
#include "calibst/io.hpp"
#include "calibst/metrics.hpp"
#include "calibst/toytracker.hpp"

namespace calibst {

// ---------------------------------------------------------------------------
// Configuration

inline SynthConfig synth_from_json(const json& j, SynthConfig c = {}) {
  if (j.contains("schema")) c.schema = schema_from_json(j["schema"]);
  c.n_dialogues = j.value("n_dialogues", c.n_dialogues);
  c.min_turns = j.value("min_turns", c.min_turns);
  c.max_turns = j.value("max_turns", c.max_turns);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.label_noise = j.value("label_noise", c.label_noise);
  c.carryover_prob = j.value("carryover_prob", c.carryover_prob);
  c.embedding_scale = j.value("embedding_scale", c.embedding_scale);
  c.feature_jitter = j.value("feature_jitter", c.feature_jitter);
  c.seed = j.value("seed", c.seed);
  return c;
}

inline json synth_to_json(const SynthConfig& c) {
  return {{"schema", schema_to_json(c.schema)},
          {"n_dialogues", c.n_dialogues},
          {"min_turns", c.min_turns},
          {"max_turns", c.max_turns},
          {"feature_dim", c.feature_dim},
          {"label_noise", c.label_noise},
          {"carryover_prob", c.carryover_prob},
          {"embedding_scale", c.embedding_scale},
          {"feature_jitter", c.feature_jitter},
          {"seed", c.seed}};
}

inline TrainConfig train_from_json(const json& j, TrainConfig c = {}) {
  if (j.contains("loss")) c.loss = loss_from_json(j["loss"]);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.hidden = j.value("hidden", c.hidden);
  c.seed = j.value("seed", c.seed);
  return c;
}

inline json train_to_json(const TrainConfig& c) {
  return {{"loss", loss_to_json(c.loss)},
          {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"dropout_rate", c.dropout_rate},
          {"hidden", c.hidden},
          {"seed", c.seed}};
}

struct PipelineConfig {
  SynthConfig synth;
  TrainConfig train;
  std::size_t ensemble_size = 10;
  double subset_fraction = 0.75;
  std::uint64_t ensemble_seed = 0;
  std::size_t dropout_passes = 35;
  double predict_dropout_rate = 0.3;
  std::uint64_t predict_seed = 0;
  MetricOptions metrics;

  void validate() const {
    synth.validate();
    train.validate();
    if (ensemble_size == 0) throw DomainError("ensemble size must be >= 1");
    if (!(subset_fraction > 0.0 && subset_fraction <= 1.0))
      throw DomainError("subset_fraction must lie in (0, 1]");
    if (dropout_passes == 0) throw DomainError("dropout passes must be >= 1");
  }

  /// Bootstrap spec over `n_train` training dialogues.
  EnsembleSpec ensemble_spec(std::size_t n_train) const {
    EnsembleSpec s;
    s.kind = EnsembleKind::bootstrap;
    s.size = ensemble_size;
    s.subset_size = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(subset_fraction * static_cast<double>(n_train))));
    s.seed = ensemble_seed;
    return s;
  }
};

inline MetricOptions metrics_from_json(const json& j, MetricOptions m = {}) {
  m.bins = j.value("bins", m.bins);
  m.top_n = j.value("top_n", m.top_n);
  m.relax_threshold = j.value("relax_threshold", m.relax_threshold);
  if (j.contains("top_n_variant")) m.top_n_variant = parse_top_n_variant(j["top_n_variant"].get<std::string>());
  if (j.contains("l2_convention")) m.l2_convention = parse_l2_convention(j["l2_convention"].get<std::string>());
  return m;
}

inline json metrics_to_json(const MetricOptions& m) {
  return {{"bins", m.bins},
          {"top_n", m.top_n},
          {"relax_threshold", m.relax_threshold},
          {"top_n_variant", to_string(m.top_n_variant)},
          {"l2_convention", to_string(m.l2_convention)}};
}

inline PipelineConfig pipeline_from_json(const json& j) {
  PipelineConfig c;
  if (j.contains("synth")) c.synth = synth_from_json(j["synth"]);
  if (j.contains("train")) c.train = train_from_json(j["train"]);
  if (j.contains("ensemble")) {
    const auto& e = j["ensemble"];
    c.ensemble_size = e.value("size", c.ensemble_size);
    c.subset_fraction = e.value("subset_fraction", c.subset_fraction);
    c.ensemble_seed = e.value("seed", c.ensemble_seed);
  }
  if (j.contains("predict")) {
    const auto& p = j["predict"];
    c.dropout_passes = p.value("dropout_passes", c.dropout_passes);
    c.predict_dropout_rate = p.value("dropout_rate", c.predict_dropout_rate);
    c.predict_seed = p.value("seed", c.predict_seed);
  }
  if (j.contains("metrics")) c.metrics = metrics_from_json(j["metrics"]);
  c.validate();
  return c;
}

inline json pipeline_to_json(const PipelineConfig& c) {
  return {{"synth", synth_to_json(c.synth)},
          {"train", train_to_json(c.train)},
          {"ensemble",
           {{"size", c.ensemble_size},
            {"subset_fraction", c.subset_fraction},
            {"seed", c.ensemble_seed}}},
          {"predict",
           {{"dropout_passes", c.dropout_passes},
            {"dropout_rate", c.predict_dropout_rate},
            {"seed", c.predict_seed}}},
          {"metrics", metrics_to_json(c.metrics)}};
}

// ---------------------------------------------------------------------------
// Benchmark

/// Rows of the calibration comparison the benchmark can produce.
enum class Variant {
  cross_entropy,
  label_smoothing,
  bayesian_matching,
  cross_entropy_temperature,
  label_smoothing_temperature,
  cross_entropy_dropout,
  label_smoothing_dropout,
  label_smoothing_bootstrap,
};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::cross_entropy: return "cross_entropy";
    case Variant::label_smoothing: return "label_smoothing";
    case Variant::bayesian_matching: return "bayesian_matching";
    case Variant::cross_entropy_temperature: return "cross_entropy+temperature";
    case Variant::label_smoothing_temperature: return "label_smoothing+temperature";
    case Variant::cross_entropy_dropout: return "cross_entropy+dropout";
    case Variant::label_smoothing_dropout: return "label_smoothing+dropout";
    case Variant::label_smoothing_bootstrap: return "label_smoothing+bootstrap";
  }
  return "?";
}

inline std::vector<Variant> all_variants() {
  return {Variant::cross_entropy,           Variant::label_smoothing,
          Variant::bayesian_matching,       Variant::cross_entropy_temperature,
          Variant::label_smoothing_temperature, Variant::cross_entropy_dropout,
          Variant::label_smoothing_dropout, Variant::label_smoothing_bootstrap};
}

struct VariantResult {
  Variant variant = Variant::cross_entropy;
  LossConfig loss;
  std::vector<ToyModel> models;
  std::optional<Temperature> temperature;
  std::vector<PredictionRecord> predictions;
  MetricReport report;
};

struct BenchmarkRun {
  Corpus corpus;
  std::vector<VariantResult> variants;

  const VariantResult& at(Variant v) const {
    for (const auto& r : variants)
      if (r.variant == v) return r;
    throw DomainError("variant not in run");
  }
};

inline LossConfig loss_for(LossKind kind, const LossConfig& base) {
  LossConfig l = base;
  l.kind = kind;
  return l;
}

inline BenchmarkRun run_benchmark(const PipelineConfig& cfg, std::span<const Variant> variants) {
  cfg.validate();
  BenchmarkRun run;
  run.corpus = generate_corpus(cfg.synth);
  const Corpus& c = run.corpus;

  std::map<LossKind, ToyModel> singles;
  auto single = [&](LossKind kind) -> const ToyModel& {
    auto it = singles.find(kind);
    if (it == singles.end()) {
      TrainConfig tc = cfg.train;
      tc.loss = loss_for(kind, cfg.train.loss);
      it = singles.emplace(kind, train(c.train, c.schema, c.feature_dim, tc).model).first;
    }
    return it->second;
  };

  for (Variant v : variants) {
    VariantResult r;
    r.variant = v;
    PredictOptions po;
    LossKind kind = LossKind::cross_entropy;
    switch (v) {
      case Variant::cross_entropy:
      case Variant::cross_entropy_temperature:
      case Variant::cross_entropy_dropout: kind = LossKind::cross_entropy; break;
      case Variant::bayesian_matching: kind = LossKind::bayesian_matching; break;
      default: kind = LossKind::label_smoothing; break;
    }
    r.loss = loss_for(kind, cfg.train.loss);

    if (v == Variant::label_smoothing_bootstrap) {
      TrainConfig tc = cfg.train;
      tc.loss = r.loss;
      r.models = train_ensemble(c.train, c.schema, c.feature_dim,
                                cfg.ensemble_spec(c.train.size()), tc);
      po.mode = PredictMode::bootstrap;
    } else {
      r.models = {single(kind)};
    }
    if (v == Variant::cross_entropy_temperature || v == Variant::label_smoothing_temperature) {
      const auto dev = pool_slot_logits(collect_logits(r.models.front(), c.dev));
      r.temperature = fit_temperature(dev);
      po.temperature = r.temperature;
    }
    if (v == Variant::cross_entropy_dropout || v == Variant::label_smoothing_dropout) {
      po.mode = PredictMode::dropout;
      po.passes = cfg.dropout_passes;
      po.dropout_rate = cfg.predict_dropout_rate;
      po.seed = cfg.predict_seed;
    }
    r.predictions = predict_corpus(r.models, c.test, c.schema, r.loss, po);
    r.report = evaluate(r.predictions, cfg.metrics);
    run.variants.push_back(std::move(r));
  }
  return run;
}

inline std::string variant_label(const VariantResult& r, const PipelineConfig& cfg) {
  std::string s(to_string(r.variant));
  if (r.temperature) s += " (beta=" + format_fixed(r.temperature->beta(), 2) + ")";
  if (r.variant == Variant::cross_entropy_dropout || r.variant == Variant::label_smoothing_dropout)
    s += " (N=" + std::to_string(cfg.dropout_passes) + ")";
  if (r.variant == Variant::label_smoothing_bootstrap) s += " (N=" + std::to_string(r.models.size()) + ")";
  return s;
}

// ---------------------------------------------------------------------------
// Quickstart: every artifact of a benchmark run written under one directory.

inline std::string slug(std::string_view s) {
  std::string out;
  for (char ch : s) out += (ch == '+') ? '_' : ch;
  return out;
}

inline json manifest(std::string_view command, const json& flags, const json& seeds,
                     const std::vector<std::string>& outputs) {
  return {{"format", "calibst-manifest"},
          {"version", kFormatVersion},
          {"command", command},
          {"flags", flags},
          {"seeds", seeds},
          {"outputs", outputs}};
}

inline BenchmarkRun write_quickstart(const PipelineConfig& cfg, const std::filesystem::path& dir) {
  const auto variants = all_variants();
  BenchmarkRun run = run_benchmark(cfg, variants);
  const auto& c = run.corpus;
  std::vector<std::string> outputs;
  auto put = [&](const std::string& rel, const std::string& text) {
    write_text(dir / rel, text);
    outputs.push_back(rel);
  };

  put("schema.json", schema_to_json(c.schema).dump(2) + "\n");
  put("corpus/train.jsonl", corpus_split_to_string(c.schema, c.feature_dim, "train", c.train));
  put("corpus/dev.jsonl", corpus_split_to_string(c.schema, c.feature_dim, "dev", c.dev));
  put("corpus/test.jsonl", corpus_split_to_string(c.schema, c.feature_dim, "test", c.test));

  std::vector<NamedReport> rows;
  for (const auto& r : run.variants) {
    const std::string name = slug(to_string(r.variant));
    put("models/" + name + ".json", models_to_string(c.schema, {r.loss, r.models}));
    put("predictions/" + name + ".jsonl", predictions_to_string(c.schema, r.predictions));
    put("reports/" + name + ".json",
        report_to_json(r.report, cfg.metrics, to_string(r.variant)).dump(2) + "\n");
    put("reliability/" + name + ".csv", reliability_csv(r.report.bins));
    put("reliability/" + name + ".svg", reliability_svg(r.report.bins, to_string(r.variant)));
    rows.push_back({variant_label(r, cfg), r.report});
  }
  put("report.txt", format_report_table(rows));
  put("config.json", pipeline_to_json(cfg).dump(2) + "\n");

  const json seeds = {{"synth", cfg.synth.seed},
                      {"train", cfg.train.seed},
                      {"ensemble", cfg.ensemble_seed},
                      {"predict", cfg.predict_seed}};
  write_text(dir / "manifest.json",
             manifest("quickstart", pipeline_to_json(cfg), seeds, outputs).dump(2) + "\n");
  return run;
}

}  // namespace calibst
