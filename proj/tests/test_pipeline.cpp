// tests/test_pipeline.cpp

#include "aud/pipeline.hpp"
#include "aud/synthetic.hpp"

#include "test_util.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

using namespace aud;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

MetricsRecord metrics(const std::string& input, std::uint64_t seed, double nmi, double purity, double bfs) {
  MetricsRecord m;
  m.language = "en";
  m.model = "HMMVAE";
  m.input = input;
  m.seed = seed;
  m.result.nmi = nmi;
  m.result.purity = purity;
  m.result.boundary.fscore = bfs;
  m.result.frames = 100;
  return m;
}

// A small end-to-end experiment on a synthetic corpus.
struct Experiment {
  test::TempDir dir{"pipeline"};
  SyntheticCorpus corpus;
  ExperimentConfig config;

  explicit Experiment(InputCondition condition) {
    SyntheticCorpusOptions options;
    options.num_utterances = 6;
    options.seconds = 0.6;
    options.seed = 4;
    corpus = generate_synthetic_corpus(options, dir / "corpus");
    config.condition = condition;
    config.route = ConversionRoute::kFeature;
    config.seeds = {1, 2};
    config.run_dir = dir / "runs";
    config.vc_manifests = {dir / "corpus" / "manifest.jsonl"};
    config.aud_manifest = dir / "corpus" / "manifest.jsonl";
    config.reference = dir / "corpus" / "reference.seg";
    config.fvae.hidden_channels = 8;
    config.fvae.content_dim = 4;
    config.fvae.style_dim = 4;
    config.fvae.cpc_dim = 4;
    config.fvae.lookahead_seconds = 0.1;
    config.fvae_train.steps = 3;
    config.fvae_train.batch_size = 3;
    config.hmmvae.latent_dim = 3;
    config.hmmvae.hidden_channels = 8;
    config.hmmvae.num_units = 4;
    config.hmmvae.batch_size = 3;
    config.pretrain_iterations = 3;
    config.train_iterations = 3;
  }
};

}  // namespace

TEST_CASE("config parsing") {
  const std::string text =
      "# smoke run\n"
      "experiment.language = yo\n"
      "experiment.condition = rec   # trailing comment\n"
      "experiment.seeds = 3, 1, 2\n"
      "\n"
      "experiment.run_dir = out\n"
      "data.aud_manifest = corpus/m.jsonl\n"
      "data.reference = /abs/ref.seg\n"
      "data.vc_manifests = a.jsonl,b.jsonl\n"
      "fvae.lambda = 0.5\n"
      "hmmvae.num_units = 50\n"
      "hmmvae.learn_unit_transitions = false\n"
      "metrics.matching = nearest\n";
  const auto c = parse_config(text, "/base");
  CHECK(c.language == "yo");
  CHECK(c.condition == InputCondition::kRec);
  CHECK(c.seeds == std::vector<std::uint64_t>{3, 1, 2});
  CHECK(c.run_dir == fs::path("/base/out"));
  CHECK(c.aud_manifest == fs::path("/base/corpus/m.jsonl"));
  CHECK(c.reference == fs::path("/abs/ref.seg"));
  REQUIRE(c.vc_manifests.size() == 2);
  CHECK(c.vc_manifests[1] == fs::path("/base/b.jsonl"));
  CHECK(c.fvae.lambda == 0.5);
  CHECK(c.hmmvae.num_units == 50);
  CHECK_FALSE(c.hmmvae.learn_unit_transitions);
  CHECK(c.boundary.matching == BoundaryMatching::kNearest);
  CHECK(c.boundary.collar == 0.02);
}

TEST_CASE("config defaults follow the reference setup") {
  const ExperimentConfig c;
  CHECK(c.seeds.size() == 5);
  CHECK(c.hmmvae.num_units == 80);
  CHECK(c.hmmvae.states_per_unit == 3);
  CHECK(c.hmmvae.learning_rate == 1e-3);
  CHECK(c.hmmvae.batch_size == 16);
  CHECK(c.pretrain_iterations == 2000);
  CHECK(c.train_iterations == 20000);
  CHECK(c.fvae.lookahead_frames() == 50);
  CHECK(c.fvae.content_dim == 64);
  CHECK(c.fvae.style_dim == 256);
  CHECK(c.boundary.collar == 0.02);
}

TEST_CASE("config errors name the line") {
  const auto line_of = [](const std::string& text) -> std::size_t {
    try {
      parse_config(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  CHECK(line_of("experiment.language = en\nexperiment.colour = red\n") == 2);
  CHECK(line_of("# c\n\nexperiment.language en\n") == 3);
  CHECK(line_of("hmmvae.num_units = many\n") == 1);
  CHECK(line_of("experiment.condition = noisy\n") == 1);
  CHECK(line_of("metrics.include_edges = perhaps\n") == 1);
  CHECK_THROWS_AS(load_config("/nonexistent/config.cfg"), Error);
}

TEST_CASE("config validation") {
  ExperimentConfig c;
  CHECK_THROWS_AS(c.validate(), Error);
  c.aud_manifest = "m.jsonl";
  c.reference = "r.seg";
  c.vc_manifests = {"m.jsonl"};
  CHECK_NOTHROW(c.validate());
  c.seeds = {1, 1};
  CHECK_THROWS_AS(c.validate(), Error);
  c.seeds = {1};
  c.vc_manifests.clear();
  CHECK_THROWS_AS(c.validate(), Error);
  c.condition = InputCondition::kClean;
  CHECK_NOTHROW(c.validate());
  c.hmmvae.min_duration = 2;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("config text round trip") {
  ExperimentConfig c;
  c.language = "mb";
  c.condition = InputCondition::kClean;
  c.seeds = {7, 9};
  c.run_dir = "/tmp/runs";
  c.aud_manifest = "/data/m.jsonl";
  c.reference = "/data/r.seg";
  c.fvae.beta = 0.125;
  c.hmmvae.observation_variance = 0.3;
  c.train_iterations = 123;
  c.boundary.include_edges = true;
  const auto back = parse_config(config_to_text(c));
  CHECK(back.language == "mb");
  CHECK(back.condition == InputCondition::kClean);
  CHECK(back.seeds == c.seeds);
  CHECK(back.aud_manifest == c.aud_manifest);
  CHECK(back.fvae.beta == 0.125);
  CHECK(back.hmmvae.observation_variance == 0.3);
  CHECK(back.train_iterations == 123);
  CHECK(back.boundary.include_edges);
  CHECK(config_to_text(back) == config_to_text(c));
}

TEST_CASE("input conditions") {
  CHECK(parse_input_condition("clean") == InputCondition::kClean);
  CHECK(parse_input_condition("rec") == InputCondition::kRec);
  CHECK(parse_input_condition("vc") == InputCondition::kVc);
  CHECK(to_string(InputCondition::kVc) == "vc");
  CHECK_THROWS_AS(parse_input_condition("VC2"), Error);
}

TEST_CASE("stage selection") {
  ExperimentConfig c;
  c.condition = InputCondition::kClean;
  CHECK(stages_for(c) == std::vector<Stage>{Stage::kTrainAud, Stage::kDecode, Stage::kEvaluate});
  c.condition = InputCondition::kVc;
  CHECK(stages_for(c).front() == Stage::kTrainVc);
  c.fvae_checkpoint = "pretrained.fvae";
  CHECK(stages_for(c).front() == Stage::kConvert);
  CHECK(fvae_checkpoint_for(c, 3) == fs::path("pretrained.fvae"));
}

TEST_CASE("summary statistics use the sample standard deviation") {
  const auto s = summarize({1.0, 2.0, 3.0, 4.0});
  CHECK(s.mean == doctest::Approx(2.5));
  REQUIRE(s.stddev.has_value());
  CHECK(*s.stddev == doctest::Approx(std::sqrt(5.0 / 3.0)));
  const auto one = summarize({42.0});
  CHECK(one.mean == 42.0);
  CHECK_FALSE(one.stddev.has_value());
}

TEST_CASE("report aggregates seeds per condition") {
  test::TempDir dir("report");
  for (const char* d : {"a/seed-1", "a/seed-2", "b/seed-1"}) fs::create_directories(dir / d);
  save_metrics(metrics("vc", 1, 40.0, 0.50, 0.60), dir / "a" / "seed-1" / "metrics.json");
  save_metrics(metrics("vc", 2, 42.0, 0.54, 0.62), dir / "a" / "seed-2" / "metrics.json");
  save_metrics(metrics("clean", 1, 38.0, 0.48, 0.58), dir / "b" / "seed-1" / "metrics.json");

  const auto back = load_metrics(dir / "a" / "seed-2" / "metrics.json");
  CHECK(back.result.nmi == 42.0);
  CHECK(back.seed == 2);

  const auto rows = collect_report({dir.path()});
  REQUIRE(rows.size() == 2);
  const auto& clean = rows[0].input == "clean" ? rows[0] : rows[1];
  const auto& vc = rows[0].input == "vc" ? rows[0] : rows[1];
  CHECK(vc.runs.size() == 2);
  CHECK(vc.nmi().mean == doctest::Approx(41.0));
  CHECK(*vc.nmi().stddev == doctest::Approx(std::sqrt(2.0)));
  CHECK_FALSE(clean.nmi().stddev.has_value());

  const auto text = format_report_text(rows);
  const auto header = text.substr(0, text.find('\n'));
  std::vector<std::size_t> pos;
  for (const char* col : {"language", "model", "input", "NMI", "CP", "BFS", "seeds"}) pos.push_back(header.find(col));
  for (std::size_t i = 0; i < pos.size(); ++i) {
    REQUIRE(pos[i] != std::string::npos);
    if (i > 0) CHECK(pos[i] > pos[i - 1]);
  }
  CHECK(text.find("41.00 ± 1.41") != std::string::npos);
  CHECK(text.find("52.00") != std::string::npos);

  const auto j = format_report_json(rows);
  const auto parsed = nlohmann::json::parse(j);
  std::size_t nulls = 0;
  for (const auto& row : parsed)
    for (const char* k : {"nmi", "cp", "bfs"}) nulls += row.at(k).at("std").is_null() ? 1 : 0;
  CHECK(nulls == 3);

  const auto svg = per_seed_bar_plot(rows, "nmi");
  CHECK(svg.rfind("<svg", 0) == 0);
  std::size_t rects = 0;
  for (std::size_t p = svg.find("<rect"); p != std::string::npos; p = svg.find("<rect", p + 1)) ++rects;
  CHECK(rects >= 3);
  CHECK_THROWS_AS(per_seed_bar_plot(rows, "wer"), Error);

  write_report(rows, dir / "out");
  for (const char* f : {"report.txt", "report.json", "seeds_nmi.svg", "seeds_purity.svg", "seeds_bfs.svg"})
    CHECK(fs::exists(dir / "out" / f));
  CHECK_THROWS_AS(collect_report({dir / "absent"}), Error);
}

TEST_CASE("clean runs never load an FVAE and rerun as no-ops") {
  Experiment e(InputCondition::kClean);
  std::ofstream(e.dir / "garbage.fvae") << "this is not a checkpoint";
  e.config.fvae_checkpoint = e.dir / "garbage.fvae";
  e.config.vc_manifests.clear();

  SpeakerAccessAudit audit;
  const auto first = run_experiment(e.config);
  CHECK(audit.accesses() == 0);
  REQUIRE(first.size() == 2);
  for (const auto& run : first) {
    CHECK(run.skipped_stages.empty());
    CHECK(run.metrics.input == "clean");
    CHECK(run.metrics.result.nmi >= 0.0);
    CHECK(run.metrics.result.nmi <= 100.0);
    CHECK(run.metrics.result.frames > 0);
    CHECK(fs::exists(run.dir / "units.seg"));
    CHECK_FALSE(fs::exists(run.dir / "converted"));
  }

  const auto before = read_file(first[0].dir / "metrics.json");
  const auto second = run_experiment(e.config);
  for (const auto& run : second) CHECK(run.skipped_stages == std::vector<std::string>{"train-aud", "decode", "evaluate"});
  CHECK(read_file(first[0].dir / "metrics.json") == before);
}

TEST_CASE("identical configs reproduce identical metrics") {
  Experiment e(InputCondition::kClean);
  e.config.seeds = {3};
  const auto a = run_experiment(e.config);
  e.config.run_dir = e.dir / "again";
  const auto b = run_experiment(e.config);
  CHECK(a[0].metrics.result.nmi == b[0].metrics.result.nmi);
  CHECK(a[0].metrics.result.purity == b[0].metrics.result.purity);
  CHECK(a[0].metrics.result.boundary.fscore == b[0].metrics.result.boundary.fscore);
  CHECK(read_file(a[0].dir / "units.seg") == read_file(b[0].dir / "units.seg"));
}

TEST_CASE("vc runs train, convert and evaluate without speaker labels") {
  Experiment e(InputCondition::kVc);
  e.config.seeds = {1};
  SpeakerAccessAudit audit;
  const auto runs = run_experiment(e.config);
  CHECK(audit.accesses() == 0);
  REQUIRE(runs.size() == 1);
  const auto& dir = runs[0].dir;
  CHECK(fs::exists(dir / "fvae.ckpt"));
  CHECK(fs::exists(dir / "medoid.json"));
  const auto medoid = load_medoid_record(dir / "medoid.json");
  CHECK(medoid.checkpoint_hash == hash_file(dir / "fvae.ckpt"));
  for (const auto& r : e.corpus.manifest.records) CHECK(fs::exists(converted_aud_path(dir / "converted", r.utterance_id)));
  CHECK(runs[0].metrics.input == "vc");
  CHECK(fs::exists(e.config.run_dir / "en-vc" / "config.txt"));
}

TEST_CASE("a broken pretrained FVAE fails its stage") {
  Experiment e(InputCondition::kRec);
  e.config.seeds = {1};
  std::ofstream(e.dir / "garbage.fvae") << "this is not a checkpoint";
  e.config.fvae_checkpoint = e.dir / "garbage.fvae";
  try {
    run_experiment(e.config);
    FAIL("expected the convert stage to fail");
  } catch (const Error& err) {
    CHECK(std::string(err.what()).find("stage convert") != std::string::npos);
  }
  CHECK_FALSE(fs::exists(seed_dir(e.config, 1) / "convert.done"));
}

TEST_CASE("stages run individually and check their inputs") {
  Experiment e(InputCondition::kClean);
  CHECK_THROWS_AS(run_stage(e.config, 1, Stage::kDecode), Error);
  CHECK_THROWS_AS(run_stage(e.config, 1, Stage::kConvert), Error);
  CHECK(run_stage(e.config, 1, Stage::kTrainAud));
  CHECK_FALSE(run_stage(e.config, 1, Stage::kTrainAud));
  CHECK(run_stage(e.config, 1, Stage::kDecode));
  CHECK(run_stage(e.config, 1, Stage::kEvaluate));
  CHECK(fs::exists(seed_dir(e.config, 1) / "metrics.json"));
}

TEST_CASE("FVAE training is reproducible per seed") {
  Experiment e(InputCondition::kVc);
  const auto pooled = load_manifest(e.config.aud_manifest);
  for (const char* d : {"a", "b", "c"}) fs::create_directories(e.dir / d);
  train_vc(e.config, pooled, 5, e.dir / "a" / "fvae.ckpt", e.dir / "cache", false);
  train_vc(e.config, pooled, 5, e.dir / "b" / "fvae.ckpt", e.dir / "cache", true);
  train_vc(e.config, pooled, 6, e.dir / "c" / "fvae.ckpt", e.dir / "cache", false);
  CHECK(hash_file(e.dir / "a" / "fvae.ckpt") == hash_file(e.dir / "b" / "fvae.ckpt"));
  CHECK(hash_file(e.dir / "a" / "fvae.ckpt") != hash_file(e.dir / "c" / "fvae.ckpt"));
  CHECK_FALSE(fs::exists(e.dir / "a" / "fvae.ckpt.state"));
}
