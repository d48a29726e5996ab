#pragma once

// Command-line front end. `run_cli` is the whole program, so tests can drive
// it in-process with their own streams.
//
// Exit codes: 0 success, 1 usage error, 2 data or validation error.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "calibst/calibration.hpp"
#include "calibst/io.hpp"
#include "calibst/metrics.hpp"
#include "calibst/pipeline.hpp"
#include "calibst/toytracker.hpp"

namespace calibst::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Environment variable naming the directory for outputs whose path flag
/// was not given. Defaults to the working directory.
inline constexpr const char* kOutputDirEnv = "CALIBST_OUTPUT_DIR";

inline fs::path default_output(const std::string& name) {
  const char* dir = std::getenv(kOutputDirEnv);
  return (dir && *dir) ? fs::path(dir) / name : fs::path(name);
}

inline fs::path manifest_path(const fs::path& output) {
  return fs::path(output.string() + ".manifest.json");
}

inline void write_manifest(const fs::path& path, std::string_view command, const json& flags,
                           const json& seeds, const std::vector<fs::path>& outputs) {
  std::vector<std::string> outs;
  for (const auto& o : outputs) outs.push_back(o.generic_string());
  write_text(path, manifest(command, flags, seeds, outs).dump(2) + "\n");
}

inline json read_json_file(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline CorpusSplit read_corpus_split(const fs::path& dir, const std::string& split,
                                     const SlotSchema& schema) {
  const fs::path path = dir / (split + ".jsonl");
  try {
    return corpus_split_from_string(read_text(path), schema);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

struct Options {
  // shared
  std::string schema_path, predictions_path, out_path, config_path, corpus_dir;
  std::size_t bins = 10;
  bool raw = false;
  // evaluate
  std::vector<std::size_t> top_n = {1, 2, 3, 4, 5};
  std::string l2_convention = "mean_over_turns";
  std::string top_n_variant = "revert_top1";
  std::size_t relax_threshold = kDefaultRelaxThreshold;
  // reliability
  std::string svg_path;
  // calibrate-temperature
  std::string logits_path;
  // combine / report
  std::vector<std::string> inputs;
  // synth
  std::optional<std::uint64_t> synth_seed;
  std::optional<std::size_t> n_dialogues;
  std::optional<double> label_noise;
  // train
  std::optional<std::string> loss;
  std::optional<double> alpha, lambda, lr, dropout;
  std::optional<std::string> direction, concentration_map;
  std::optional<std::size_t> epochs, batch_size, hidden, ensemble, subset_size;
  std::optional<double> subset_fraction;
  std::optional<std::uint64_t> seed, ensemble_seed;
  bool with_replacement = false;
  // predict
  std::string model_path, split = "test", mode, temperature_file, logits_out;
  std::optional<double> temperature;
  std::size_t passes = 35;
  double rate = 0.3;
  std::uint64_t predict_seed = 0;
};

// ---------------------------------------------------------------------------
// Commands

inline MetricOptions metric_options(const Options& o) {
  MetricOptions m;
  m.bins = o.bins;
  m.top_n = o.top_n;
  m.relax_threshold = o.relax_threshold;
  m.l2_convention = parse_l2_convention(o.l2_convention);
  m.top_n_variant = parse_top_n_variant(o.top_n_variant);
  return m;
}

inline int cmd_evaluate(const Options& o, std::ostream& out) {
  const auto schema = read_schema(o.schema_path);
  const auto records = read_predictions(o.predictions_path, schema);
  const auto opts = metric_options(o);
  const auto report = evaluate(records, opts);
  const NamedReport row{fs::path(o.predictions_path).stem().string(), report};
  out << format_report_table(std::span(&row, 1), o.raw);
  const fs::path dest = o.out_path.empty() ? default_output("report.json") : fs::path(o.out_path);
  write_text(dest, report_to_json(report, opts, row.label).dump(2) + "\n");
  write_manifest(manifest_path(dest), "evaluate",
                 {{"predictions", o.predictions_path}, {"schema", o.schema_path},
                  {"metrics", metrics_to_json(opts)}, {"raw", o.raw}},
                 json::object(), {dest});
  return kExitOk;
}

inline int cmd_reliability(const Options& o, std::ostream& out) {
  const auto schema = read_schema(o.schema_path);
  const auto records = read_predictions(o.predictions_path, schema);
  const auto bins = reliability_bins(records, o.bins);
  const std::string table = reliability_csv(bins);
  out << table;
  const fs::path dest = o.out_path.empty() ? default_output("reliability.csv") : fs::path(o.out_path);
  write_text(dest, table);
  std::vector<fs::path> outputs = {dest};
  if (!o.svg_path.empty()) {
    write_text(o.svg_path, reliability_svg(bins, fs::path(o.predictions_path).stem().string()));
    outputs.emplace_back(o.svg_path);
  }
  write_manifest(manifest_path(dest), "reliability",
                 {{"predictions", o.predictions_path}, {"schema", o.schema_path}, {"bins", o.bins},
                  {"svg", o.svg_path}},
                 json::object(), outputs);
  return kExitOk;
}

inline int cmd_calibrate_temperature(const Options& o, std::ostream& out) {
  const auto schema = read_schema(o.schema_path);
  std::vector<LogitRecord> records;
  try {
    records = logits_from_string(read_text(o.logits_path), schema);
  } catch (const DataError& e) {
    throw DataError(o.logits_path + ": " + e.what());
  }
  const auto pooled = pool_slot_logits(records);
  const auto fit = fit_temperature_detailed(pooled);
  out << "beta " << format_fixed(fit.temperature.beta(), 4) << "\n"
      << "dev_nll " << format_fixed(fit.nll, 6) << " (beta=1: " << format_fixed(fit.nll_identity, 6)
      << ")\n";
  const fs::path dest = o.out_path.empty() ? default_output("temperature.json") : fs::path(o.out_path);
  write_text(dest, json({{"format", "calibst-temperature"},
                         {"version", kFormatVersion},
                         {"beta", fit.temperature.beta()},
                         {"dev_nll", fit.nll},
                         {"dev_nll_identity", fit.nll_identity},
                         {"n_examples", pooled.size()}})
                       .dump(2) +
                       "\n");
  write_manifest(manifest_path(dest), "calibrate-temperature",
                 {{"logits", o.logits_path}, {"schema", o.schema_path}}, json::object(), {dest});
  return kExitOk;
}

inline double read_temperature_file(const fs::path& path) {
  const json j = read_json_file(path);
  check_header(j, "calibst-temperature", path.string());
  return j.at("beta").get<double>();
}

inline int cmd_combine(const Options& o, std::ostream& out) {
  const auto schema = read_schema(o.schema_path);
  std::vector<std::vector<PredictionRecord>> members;
  for (const auto& path : o.inputs) members.push_back(read_predictions(path, schema));
  const auto& first = members.front();
  for (std::size_t m = 1; m < members.size(); ++m) {
    if (members[m].size() != first.size())
      throw DataError(o.inputs[m] + ": record count differs from " + o.inputs[0]);
    for (std::size_t i = 0; i < first.size(); ++i) {
      const auto& a = first[i];
      const auto& b = members[m][i];
      if (a.dialogue_id != b.dialogue_id || a.turn_index != b.turn_index)
        throw DataError(o.inputs[m] + ": record " + std::to_string(i + 2) +
                        " is not aligned with " + o.inputs[0]);
      if (a.labels != b.labels)
        throw DataError(o.inputs[m] + ": labels of " + a.dialogue_id + "/" +
                        std::to_string(a.turn_index) + " differ from " + o.inputs[0]);
    }
  }
  std::vector<PredictionRecord> combined;
  std::vector<BeliefState> column;
  for (std::size_t i = 0; i < first.size(); ++i) {
    column.clear();
    for (const auto& m : members) column.push_back(m[i].belief);
    PredictionRecord r = first[i];
    r.belief = combine_belief_states(column);
    combined.push_back(std::move(r));
  }
  const fs::path dest = o.out_path.empty() ? default_output("combined.jsonl") : fs::path(o.out_path);
  write_predictions(dest, schema, combined);
  out << "combined " << members.size() << " files, " << combined.size() << " records -> "
      << dest.generic_string() << "\n";
  write_manifest(manifest_path(dest), "combine", {{"inputs", o.inputs}, {"schema", o.schema_path}},
                 json::object(), {dest});
  return kExitOk;
}

inline json config_section(const Options& o, const char* key) {
  if (o.config_path.empty()) return json::object();
  const json j = read_json_file(o.config_path);
  return j.contains(key) ? j[key] : j;
}

inline int cmd_synth(const Options& o, std::ostream& out) {
  SynthConfig cfg = synth_from_json(config_section(o, "synth"));
  if (o.synth_seed) cfg.seed = *o.synth_seed;
  if (o.n_dialogues) cfg.n_dialogues = *o.n_dialogues;
  if (o.label_noise) cfg.label_noise = *o.label_noise;
  const Corpus c = generate_corpus(cfg);
  const fs::path dir = o.out_path.empty() ? default_output("corpus") : fs::path(o.out_path);
  write_schema(dir / "schema.json", c.schema);
  write_text(dir / "train.jsonl", corpus_split_to_string(c.schema, c.feature_dim, "train", c.train));
  write_text(dir / "dev.jsonl", corpus_split_to_string(c.schema, c.feature_dim, "dev", c.dev));
  write_text(dir / "test.jsonl", corpus_split_to_string(c.schema, c.feature_dim, "test", c.test));
  write_manifest(dir / "manifest.json", "synth", synth_to_json(cfg), {{"synth", cfg.seed}},
                 {"schema.json", "train.jsonl", "dev.jsonl", "test.jsonl"});
  out << "wrote " << c.train.size() << "/" << c.dev.size() << "/" << c.test.size()
      << " train/dev/test dialogues to " << dir.generic_string() << "\n";
  return kExitOk;
}

inline int cmd_train(const Options& o, std::ostream& out) {
  const json section = config_section(o, "train");
  TrainConfig cfg = train_from_json(section);
  if (o.loss) cfg.loss.kind = parse_loss_kind(*o.loss);
  if (o.alpha) cfg.loss.smoothing.alpha = *o.alpha;
  if (o.lambda) cfg.loss.bayes.lambda = *o.lambda;
  if (o.direction) cfg.loss.direction = parse_kl_direction(*o.direction);
  if (o.concentration_map) cfg.loss.bayes.map = parse_concentration_map(*o.concentration_map);
  if (o.lr) cfg.learning_rate = *o.lr;
  if (o.epochs) cfg.epochs = *o.epochs;
  if (o.batch_size) cfg.batch_size = *o.batch_size;
  if (o.dropout) cfg.dropout_rate = *o.dropout;
  if (o.hidden) cfg.hidden = *o.hidden;
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();

  const fs::path dir(o.corpus_dir);
  const auto schema = read_schema(dir / "schema.json");
  const auto train_split = read_corpus_split(dir, "train", schema);

  ModelBundle bundle{cfg.loss, {}};
  json curves = json::array();
  json seeds = {{"train", cfg.seed}};
  json ens_flags = nullptr;
  if (o.ensemble && *o.ensemble > 1) {
    EnsembleSpec spec;
    spec.kind = EnsembleKind::bootstrap;
    spec.size = *o.ensemble;
    const double frac = o.subset_fraction.value_or(0.75);
    spec.subset_size = o.subset_size.value_or(std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(frac * train_split.dialogues.size()))));
    spec.with_replacement = o.with_replacement;
    spec.seed = o.ensemble_seed.value_or(cfg.seed);
    bundle.members = train_ensemble(train_split.dialogues, schema, train_split.feature_dim, spec, cfg);
    seeds["ensemble"] = spec.seed;
    ens_flags = {{"size", spec.size},
                 {"subset_size", *spec.subset_size},
                 {"with_replacement", spec.with_replacement}};
  } else {
    auto res = train(train_split.dialogues, schema, train_split.feature_dim, cfg);
    curves.push_back(res.loss_curve);
    bundle.members.push_back(std::move(res.model));
  }
  const fs::path dest = o.out_path.empty() ? default_output("model.json") : fs::path(o.out_path);
  write_text(dest, models_to_string(schema, bundle));
  json flags = train_to_json(cfg);
  flags["corpus"] = o.corpus_dir;
  flags["ensemble"] = ens_flags;
  json m = manifest("train", flags, seeds, {dest.generic_string()});
  if (!curves.empty()) m["loss_curve"] = curves.front();
  write_text(manifest_path(dest), m.dump(2) + "\n");
  out << "trained " << bundle.members.size() << " model(s), loss " << to_string(cfg.loss.kind);
  if (cfg.loss.kind == LossKind::bayesian_matching)
    out << " lambda " << format_number(cfg.loss.bayes.lambda, 6);
  if (cfg.loss.kind == LossKind::label_smoothing)
    out << " alpha " << format_number(cfg.loss.smoothing.alpha, 6) << " direction "
        << to_string(cfg.loss.direction);
  out << " -> " << dest.generic_string() << "\n";
  return kExitOk;
}

inline int cmd_predict(const Options& o, std::ostream& out) {
  const fs::path dir(o.corpus_dir);
  const auto schema = read_schema(dir / "schema.json");
  const auto split = read_corpus_split(dir, o.split, schema);
  const auto bundle = models_from_string(read_text(o.model_path), schema);

  PredictOptions po;
  po.mode = o.mode.empty()
                ? (bundle.members.size() > 1 ? PredictMode::bootstrap : PredictMode::single)
                : parse_predict_mode(o.mode);
  po.passes = o.passes;
  po.dropout_rate = o.rate;
  po.seed = o.predict_seed;
  if (o.temperature) po.temperature = Temperature(*o.temperature);
  if (!o.temperature_file.empty()) po.temperature = Temperature(read_temperature_file(o.temperature_file));

  std::span<const ToyModel> models(bundle.members);
  if (po.mode != PredictMode::bootstrap) models = models.first(1);
  const auto records = predict_corpus(models, split.dialogues, schema, bundle.loss, po);
  const fs::path dest = o.out_path.empty() ? default_output("predictions.jsonl") : fs::path(o.out_path);
  write_predictions(dest, schema, records);
  std::vector<fs::path> outputs = {dest};
  if (!o.logits_out.empty()) {
    write_text(o.logits_out,
               logits_to_string(schema, collect_logits(bundle.members.front(), split.dialogues)));
    outputs.emplace_back(o.logits_out);
  }
  json flags = {{"model", o.model_path},
                {"corpus", o.corpus_dir},
                {"split", o.split},
                {"mode", to_string(po.mode)},
                {"passes", po.passes},
                {"dropout_rate", po.dropout_rate},
                {"temperature", po.temperature ? json(po.temperature->beta()) : json(nullptr)}};
  write_manifest(manifest_path(dest), "predict", flags, {{"predict", po.seed}}, outputs);
  out << "wrote " << records.size() << " turn predictions (" << to_string(po.mode) << ") to "
      << dest.generic_string() << "\n";
  return kExitOk;
}

inline int cmd_report(const Options& o, std::ostream& out) {
  std::vector<NamedReport> rows;
  for (const auto& arg : o.inputs) {
    std::string label, path = arg;
    if (auto eq = arg.find('='); eq != std::string::npos) {
      label = arg.substr(0, eq);
      path = arg.substr(eq + 1);
    }
    const json j = read_json_file(path);
    if (label.empty()) label = j.value("label", fs::path(path).stem().string());
    try {
      rows.push_back({label, report_from_json(j)});
    } catch (const json::exception& e) {
      throw DataError(path + ": " + e.what());
    }
  }
  const std::string table = format_report_table(rows, o.raw);
  out << table;
  const fs::path dest = o.out_path.empty() ? default_output("report.txt") : fs::path(o.out_path);
  write_text(dest, table);
  write_manifest(manifest_path(dest), "report", {{"inputs", o.inputs}, {"raw", o.raw}},
                 json::object(), {dest});
  return kExitOk;
}

inline int cmd_quickstart(const Options& o, std::ostream& out) {
  const PipelineConfig cfg =
      o.config_path.empty() ? PipelineConfig{} : pipeline_from_json(read_json_file(o.config_path));
  const fs::path dir = o.out_path.empty() ? default_output("quickstart") : fs::path(o.out_path);
  write_quickstart(cfg, dir);
  out << read_text(dir / "report.txt");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"calibst - calibration and evaluation for dialogue belief trackers"};
  app.require_subcommand(1);
  Options o;

  auto* evaluate_cmd = app.add_subcommand("evaluate", "JGA, top-n JGA, L2, ECE and EJCE of a prediction file");
  evaluate_cmd->add_option("-p,--predictions", o.predictions_path, "prediction file")->required();
  evaluate_cmd->add_option("-s,--schema", o.schema_path, "schema file")->required();
  evaluate_cmd->add_option("-b,--bins", o.bins, "number of equal-width bins")->check(CLI::PositiveNumber);
  evaluate_cmd->add_option("-n,--top-n", o.top_n, "top-n list, e.g. 1,2,3")->delimiter(',');
  evaluate_cmd->add_option("--l2", o.l2_convention, "mean_over_turns | corpus_norm");
  evaluate_cmd->add_option("--top-n-variant", o.top_n_variant, "revert_top1 | skip");
  evaluate_cmd->add_option("--relax-threshold", o.relax_threshold, "minimum candidates for top-n relaxation");
  evaluate_cmd->add_flag("--raw", o.raw, "print calibration errors unscaled");
  evaluate_cmd->add_option("-o,--out", o.out_path, "report document path");

  auto* rel_cmd = app.add_subcommand("reliability", "reliability table and optional SVG diagram");
  rel_cmd->add_option("-p,--predictions", o.predictions_path, "prediction file")->required();
  rel_cmd->add_option("-s,--schema", o.schema_path, "schema file")->required();
  rel_cmd->add_option("-b,--bins", o.bins, "number of equal-width bins")->check(CLI::PositiveNumber);
  rel_cmd->add_option("--svg", o.svg_path, "write an SVG reliability diagram");
  rel_cmd->add_option("-o,--out", o.out_path, "table path");

  auto* temp_cmd = app.add_subcommand("calibrate-temperature", "fit a temperature on development logits");
  temp_cmd->add_option("-l,--logits", o.logits_path, "logits file")->required();
  temp_cmd->add_option("-s,--schema", o.schema_path, "schema file")->required();
  temp_cmd->add_option("-o,--out", o.out_path, "temperature document path");

  auto* combine_cmd = app.add_subcommand("combine", "average prediction files into an ensemble");
  combine_cmd->add_option("inputs", o.inputs, "prediction files")->required();
  combine_cmd->add_option("-s,--schema", o.schema_path, "schema file")->required();
  combine_cmd->add_option("-o,--out", o.out_path, "combined prediction file");

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dialogue corpus");
  synth_cmd->add_option("-c,--config", o.config_path, "config file (uses its 'synth' section)");
  synth_cmd->add_option("--seed", o.synth_seed, "corpus seed");
  synth_cmd->add_option("--dialogues", o.n_dialogues, "number of dialogues");
  synth_cmd->add_option("--label-noise", o.label_noise, "evidence corruption probability");
  synth_cmd->add_option("-o,--out", o.out_path, "output directory");

  auto* train_cmd = app.add_subcommand("train", "train a toy tracker or a bootstrap ensemble");
  train_cmd->add_option("--corpus", o.corpus_dir, "corpus directory")->required();
  train_cmd->add_option("-c,--config", o.config_path, "config file (uses its 'train' section)");
  train_cmd->add_option("--loss", o.loss, "cross_entropy | label_smoothing | bayesian_matching");
  train_cmd->add_option("--alpha", o.alpha, "label smoothing alpha");
  train_cmd->add_option("--direction", o.direction, "smoothing KL direction: standard | paper");
  train_cmd->add_option("--lambda", o.lambda, "Bayesian matching KL weight");
  train_cmd->add_option("--concentration-map", o.concentration_map, "exp | softplus_plus_one");
  train_cmd->add_option("--lr", o.lr, "learning rate");
  train_cmd->add_option("--epochs", o.epochs, "epochs");
  train_cmd->add_option("--batch-size", o.batch_size, "dialogues per batch");
  train_cmd->add_option("--dropout", o.dropout, "training dropout rate");
  train_cmd->add_option("--hidden", o.hidden, "recurrent state width");
  train_cmd->add_option("--seed", o.seed, "training seed");
  train_cmd->add_option("--ensemble", o.ensemble, "bootstrap ensemble size");
  train_cmd->add_option("--subset-size", o.subset_size, "dialogues per bootstrap member");
  train_cmd->add_option("--subset-fraction", o.subset_fraction, "fraction of dialogues per member");
  train_cmd->add_option("--ensemble-seed", o.ensemble_seed, "subset sampling seed");
  train_cmd->add_flag("--with-replacement", o.with_replacement, "classical bootstrap resampling");
  train_cmd->add_option("-o,--out", o.out_path, "model file");

  auto* predict_cmd = app.add_subcommand("predict", "write belief-state predictions for a corpus split");
  predict_cmd->add_option("-m,--model", o.model_path, "model file")->required();
  predict_cmd->add_option("--corpus", o.corpus_dir, "corpus directory")->required();
  predict_cmd->add_option("--split", o.split, "train | dev | test");
  predict_cmd->add_option("--mode", o.mode, "single | dropout | bootstrap");
  predict_cmd->add_option("--passes", o.passes, "dropout passes")->check(CLI::PositiveNumber);
  predict_cmd->add_option("--rate", o.rate, "inference dropout rate");
  predict_cmd->add_option("--seed", o.predict_seed, "dropout mask seed");
  predict_cmd->add_option("--temperature", o.temperature, "temperature to divide logits by");
  predict_cmd->add_option("--temperature-file", o.temperature_file, "fitted temperature document");
  predict_cmd->add_option("--logits-out", o.logits_out, "also write raw logits (first member)");
  predict_cmd->add_option("-o,--out", o.out_path, "prediction file");

  auto* report_cmd = app.add_subcommand("report", "comparison grid of report documents");
  report_cmd->add_option("inputs", o.inputs, "report files, optionally label=path")->required();
  report_cmd->add_flag("--raw", o.raw, "print calibration errors unscaled");
  report_cmd->add_option("-o,--out", o.out_path, "grid path");

  auto* quick_cmd = app.add_subcommand("quickstart", "run the whole toy benchmark into one directory");
  quick_cmd->add_option("-c,--config", o.config_path, "pipeline config file");
  quick_cmd->add_option("-o,--out", o.out_path, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*evaluate_cmd) return cmd_evaluate(o, out);
    if (*rel_cmd) return cmd_reliability(o, out);
    if (*temp_cmd) return cmd_calibrate_temperature(o, out);
    if (*combine_cmd) return cmd_combine(o, out);
    if (*synth_cmd) return cmd_synth(o, out);
    if (*train_cmd) return cmd_train(o, out);
    if (*predict_cmd) return cmd_predict(o, out);
    if (*report_cmd) return cmd_report(o, out);
    if (*quick_cmd) return cmd_quickstart(o, out);
  } catch (const DomainError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace calibst::cli
