#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "calibst/cli.hpp"
#include "support/fixtures.hpp"
#include "support/paths.hpp"

using namespace calibst;
namespace fs = std::filesystem;

namespace {

struct Run {
  int rc;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "calibst");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int rc = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {rc, out.str(), err.str()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override { ::setenv(cli::kOutputDirEnv, tmp.path().c_str(), 1); }
  void TearDown() override { ::unsetenv(cli::kOutputDirEnv); }

  std::string p(const std::string& name) const { return (tmp / name).string(); }
  static std::string fx(const std::string& name) { return (fixture::fixture_dir() / name).string(); }

  // A small trained setup: corpus in tmp/corpus, CE model in tmp/model.json.
  void small_pipeline() {
    ASSERT_EQ(run({"synth", "--dialogues", "30", "--seed", "4", "-o", p("corpus")}).rc, 0);
    ASSERT_EQ(run({"train", "--corpus", p("corpus"), "--epochs", "3", "--hidden", "8", "-o", p("model.json")}).rc, 0);
  }

  fixture::TempDir tmp;
};

}  // namespace

TEST_F(Cli, EvaluateOneHotCorrectPredictions) {
  SynthConfig sc;
  sc.n_dialogues = 30;
  const auto c = generate_corpus(sc);
  std::vector<PredictionRecord> recs;
  for (const auto& d : c.test)
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      PredictionRecord r;
      r.dialogue_id = d.id;
      r.turn_index = t;
      for (std::size_t s = 0; s < c.schema.size(); ++s) {
        const auto& slot = c.schema.slots()[s];
        r.belief.emplace(slot.name, one_hot(d.turns[t].labels[s], slot.candidate_count()));
        r.labels.emplace(slot.name, d.turns[t].labels[s]);
      }
      recs.push_back(r);
    }
  write_schema(tmp / "schema.json", c.schema);
  write_predictions(tmp / "oh.jsonl", c.schema, recs);
  const auto r = run({"evaluate", "-p", p("oh.jsonl"), "-s", p("schema.json")});
  ASSERT_EQ(r.rc, 0) << r.err;
  const auto lines = split_lines(r.out);
  ASSERT_GE(lines.size(), 2u);
  for (int n = 1; n <= 5; ++n) EXPECT_NE(lines[0].find("Top-" + std::to_string(n)), std::string::npos);
  EXPECT_EQ(lines[0].find("Top-6"), std::string::npos);
  EXPECT_NE(lines[1].find("100.00"), std::string::npos);
  EXPECT_NE(lines[1].find(" 0.000"), std::string::npos);
  // default output lands in the environment-selected directory
  const auto report = json::parse(read_text(tmp / "report.json"));
  EXPECT_EQ(report["jga"], 1.0);
  EXPECT_EQ(report["ejce"], 0.0);
  EXPECT_TRUE(fs::exists(tmp / "report.json.manifest.json"));
}

TEST_F(Cli, EvaluateEqualsInMemoryMetrics) {
  const auto r = run({"evaluate", "-p", fx("valid.jsonl"), "-s", fx("schema.json"), "-b", "7", "--l2",
                      "corpus_norm", "-n", "1,3", "-o", p("r.json")});
  ASSERT_EQ(r.rc, 0) << r.err;
  const auto schema = read_schema(fx("schema.json"));
  const auto recs = read_predictions(fx("valid.jsonl"), schema);
  MetricOptions opts;
  opts.bins = 7;
  opts.l2_convention = L2Convention::corpus_norm;
  opts.top_n = {1, 3};
  EXPECT_EQ(json::parse(read_text(tmp / "r.json")), report_to_json(evaluate(recs, opts), opts, "valid"));
  const auto manifest = json::parse(read_text(tmp / "r.json.manifest.json"));
  EXPECT_EQ(manifest["command"], "evaluate");
  EXPECT_EQ(manifest["version"], kFormatVersion);
  EXPECT_EQ(manifest["flags"]["metrics"]["bins"], 7);
}

TEST_F(Cli, EvaluateRawFlag) {
  const auto r = run({"evaluate", "-p", fx("valid.jsonl"), "-s", fx("schema.json"), "--raw"});
  ASSERT_EQ(r.rc, 0);
  EXPECT_NE(r.out.find("0.250"), std::string::npos);
  const auto scaled = run({"evaluate", "-p", fx("valid.jsonl"), "-s", fx("schema.json")});
  EXPECT_NE(scaled.out.find("25.000"), std::string::npos);
}

TEST_F(Cli, ErrorsAndExitCodes) {
  auto r = run({"evaluate", "-p", p("nope.jsonl"), "-s", fx("schema.json")});
  EXPECT_EQ(r.rc, 2);
  EXPECT_NE(r.err.find("nope.jsonl"), std::string::npos);
  EXPECT_TRUE(r.out.empty());

  r = run({"evaluate", "-p", fx("valid.jsonl"), "-s", fx("schema.json"), "--frobnicate"});
  EXPECT_EQ(r.rc, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);

  r = run({"bogus"});
  EXPECT_EQ(r.rc, 1);

  r = run({"evaluate", "-p", fx("invalid/unknown_slot.jsonl"), "-s", fx("schema.json")});
  EXPECT_EQ(r.rc, 2);
  EXPECT_NE(r.err.find("line 3: unknown slot 'food'"), std::string::npos) << r.err;

  r = run({"--help"});
  EXPECT_EQ(r.rc, 0);
  for (const char* cmd : {"evaluate", "reliability", "calibrate-temperature", "combine", "synth", "train",
                          "predict", "report", "quickstart"})
    EXPECT_NE(r.out.find(cmd), std::string::npos) << cmd;
}

TEST_F(Cli, ReliabilityTableAndPlot) {
  auto r = run({"reliability", "-p", fx("valid.jsonl"), "-s", fx("schema.json"), "-b", "1", "--svg", p("d.svg")});
  ASSERT_EQ(r.rc, 0) << r.err;
  const auto lines = split_lines(read_text(tmp / "reliability.csv"));
  EXPECT_EQ(lines[0], "bin_lower,bin_upper,count,conf,jga");
  EXPECT_EQ(lines[1].rfind("0.0000,1.0000,4,", 0), 0u);
  EXPECT_EQ(r.out, read_text(tmp / "reliability.csv"));
  EXPECT_NE(read_text(tmp / "d.svg").find("id=\"diagonal\""), std::string::npos);

  r = run({"reliability", "-p", fx("valid.jsonl"), "-s", fx("schema.json"), "-o", p("r10.csv")});
  ASSERT_EQ(r.rc, 0);
  std::size_t total = 0;
  const auto rows = split_lines(read_text(tmp / "r10.csv"));
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (!rows[i].empty()) total += std::stoul(rows[i].substr(rows[i].find(',', rows[i].find(',') + 1) + 1));
  EXPECT_EQ(total, 4u);
}

TEST_F(Cli, CombineIdentityAndHandMeans) {
  auto r = run({"combine", fx("valid.jsonl"), "-s", fx("schema.json"), "-o", p("one.jsonl")});
  ASSERT_EQ(r.rc, 0) << r.err;
  const auto schema = read_schema(fx("schema.json"));
  const auto orig = read_predictions(fx("valid.jsonl"), schema);
  auto same = [&](const std::string& file) {
    const auto got = read_predictions(tmp / file, schema);
    if (got.size() != orig.size()) return false;
    for (std::size_t i = 0; i < got.size(); ++i)
      if (!(got[i].belief == orig[i].belief) || got[i].labels != orig[i].labels) return false;
    return true;
  };
  EXPECT_TRUE(same("one.jsonl"));
  r = run({"combine", fx("valid.jsonl"), fx("valid.jsonl"), fx("valid.jsonl"), "-s", fx("schema.json"), "-o",
           p("three.jsonl")});
  ASSERT_EQ(r.rc, 0);
  EXPECT_TRUE(same("three.jsonl"));

  r = run({"combine", fx("combine_a.jsonl"), fx("combine_b.jsonl"), "-s", fx("schema.json"), "-o", p("ab.jsonl")});
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_EQ(read_text(tmp / "ab.jsonl"), read_text(fx("combine_ab.expected.jsonl")));

  r = run({"combine", fx("combine_a.jsonl"), fx("valid.jsonl"), "-s", fx("schema.json")});
  EXPECT_EQ(r.rc, 2);
}

TEST_F(Cli, TrainEchoesBayesianMatchingLambda) {
  ASSERT_EQ(run({"synth", "--dialogues", "20", "--seed", "1", "-o", p("corpus")}).rc, 0);
  const auto r = run({"train", "--corpus", p("corpus"), "--loss", "bayesian_matching", "--lambda", "0.003",
                      "--epochs", "2", "--hidden", "8", "-o", p("bm.json")});
  ASSERT_EQ(r.rc, 0) << r.err;
  const auto manifest = json::parse(read_text(tmp / "bm.json.manifest.json"));
  EXPECT_EQ(manifest["flags"]["loss"]["kind"], "bayesian_matching");
  EXPECT_EQ(manifest["flags"]["loss"]["lambda"], 0.003);
  EXPECT_EQ(manifest["loss_curve"].size(), 2u);
  const auto model = json::parse(read_text(tmp / "bm.json"));
  EXPECT_EQ(model["loss"]["lambda"], 0.003);

  EXPECT_EQ(run({"train", "--corpus", p("corpus"), "--loss", "hinge"}).rc, 2);
  EXPECT_EQ(run({"train", "--corpus", p("corpus"), "--lambda", "-1"}).rc, 2);
}

TEST_F(Cli, PipelineIsDeterministic) {
  small_pipeline();
  for (int i = 0; i < 2; ++i) {
    const std::string tag = std::to_string(i);
    ASSERT_EQ(run({"synth", "--dialogues", "30", "--seed", "4", "-o", p("c" + tag)}).rc, 0);
    ASSERT_EQ(run({"train", "--corpus", p("c" + tag), "--epochs", "3", "--hidden", "8", "-o", p("m" + tag)}).rc, 0);
    ASSERT_EQ(run({"predict", "-m", p("m" + tag), "--corpus", p("c" + tag), "--mode", "dropout", "--passes", "4",
                   "-o", p("pred" + tag)})
                  .rc,
              0);
  }
  for (const char* f : {"train.jsonl", "dev.jsonl", "test.jsonl", "schema.json"})
    EXPECT_EQ(read_text(tmp / "c0" / f), read_text(tmp / "c1" / f)) << f;
  EXPECT_EQ(read_text(tmp / "c0" / "test.jsonl"), read_text(tmp / "corpus" / "test.jsonl"));
  EXPECT_EQ(read_text(tmp / "m0"), read_text(tmp / "m1"));
  EXPECT_EQ(read_text(tmp / "pred0"), read_text(tmp / "pred1"));
}

TEST_F(Cli, TemperatureFitAndUse) {
  small_pipeline();
  auto r = run({"predict", "-m", p("model.json"), "--corpus", p("corpus"), "--split", "dev", "--logits-out",
                p("dev_logits.jsonl"), "-o", p("dev.jsonl")});
  ASSERT_EQ(r.rc, 0) << r.err;
  r = run({"calibrate-temperature", "-l", p("dev_logits.jsonl"), "-s", p("corpus/schema.json")});
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_EQ(r.out.rfind("beta ", 0), 0u);
  const auto t = json::parse(read_text(tmp / "temperature.json"));
  EXPECT_EQ(t["format"], "calibst-temperature");
  const double beta = t["beta"].get<double>();
  EXPECT_GE(beta, 1.0);
  EXPECT_LE(beta, 100.0);

  r = run({"predict", "-m", p("model.json"), "--corpus", p("corpus"), "--temperature-file", p("temperature.json"),
           "-o", p("t1.jsonl")});
  ASSERT_EQ(r.rc, 0) << r.err;
  r = run({"predict", "-m", p("model.json"), "--corpus", p("corpus"), "--temperature", format_number(beta), "-o",
           p("t2.jsonl")});
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_EQ(read_text(tmp / "t1.jsonl"), read_text(tmp / "t2.jsonl"));
  EXPECT_EQ(run({"predict", "-m", p("model.json"), "--corpus", p("corpus"), "--temperature", "0.5"}).rc, 2);
}

TEST_F(Cli, EnsembleTrainPredictAndReport) {
  ASSERT_EQ(run({"synth", "--dialogues", "30", "--seed", "2", "-o", p("corpus")}).rc, 0);
  auto r = run({"train", "--corpus", p("corpus"), "--loss", "label_smoothing", "--ensemble", "3", "--epochs", "2",
                "--hidden", "8", "-o", p("ens.json")});
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_EQ(json::parse(read_text(tmp / "ens.json"))["members"].size(), 3u);
  r = run({"predict", "-m", p("ens.json"), "--corpus", p("corpus"), "-o", p("ens.jsonl")});
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_EQ(json::parse(read_text(tmp / "ens.jsonl.manifest.json"))["flags"]["mode"], "bootstrap");
  ASSERT_EQ(run({"evaluate", "-p", p("ens.jsonl"), "-s", p("corpus/schema.json"), "-o", p("ens.report.json")}).rc, 0);
  ASSERT_EQ(run({"evaluate", "-p", fx("valid.jsonl"), "-s", fx("schema.json"), "-o", p("v.report.json")}).rc, 0);
  r = run({"report", "ensemble=" + p("ens.report.json"), p("v.report.json")});
  ASSERT_EQ(r.rc, 0) << r.err;
  const auto lines = split_lines(r.out);
  ASSERT_GE(lines.size(), 3u);
  EXPECT_EQ(lines[1].rfind("ensemble", 0), 0u);
  EXPECT_EQ(lines[2].rfind("valid ", 0), 0u);
  EXPECT_EQ(read_text(tmp / "report.txt"), r.out);
}
