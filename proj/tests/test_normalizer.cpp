// tests/test_normalizer.cpp

#include "aud/normalizer.hpp"
#include "aud/synthetic.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>

using namespace aud;

namespace {

FvaeConfig small_config() {
  FvaeConfig c;
  c.hidden_channels = 8;
  c.content_dim = 4;
  c.style_dim = 6;
  c.cpc_dim = 4;
  c.lookahead_seconds = 0.1;
  return c;
}

// Brute-force medoid: full pairwise distance sums, smallest id on ties.
std::string medoid_oracle(const StyleTable& table) {
  std::string best;
  double best_sum = std::numeric_limits<double>::infinity();
  for (const auto& [id, v] : table.entries) {
    double sum = 0.0;
    for (const auto& [other, w] : table.entries) sum += (v - w).norm();
    if (sum < best_sum) {
      best_sum = sum;
      best = id;
    }
  }
  return best;
}

struct Fixture {
  test::TempDir dir{"normalizer"};
  SyntheticCorpus corpus;
  FactoredVae model{small_config(), 11};

  explicit Fixture(int utterances = 3) {
    SyntheticCorpusOptions options;
    options.num_utterances = utterances;
    options.seconds = 0.5;
    options.seed = 3;
    corpus = generate_synthetic_corpus(options, dir / "corpus");
    std::vector<LogMelSpectrogram> feats;
    for (const auto& r : corpus.manifest.records) feats.push_back(compute_logmel_vc(load_audio_16k(r)));
    model.norm_stats = compute_norm_stats(feats);
  }
};

}  // namespace

TEST_CASE("medoid of the worked example") {
  StyleTable t;
  t.entries["a"] = (VectorXd(2) << 0.0, 0.0).finished();
  t.entries["b"] = (VectorXd(2) << 1.0, 0.0).finished();
  t.entries["c"] = (VectorXd(2) << 10.0, 0.0).finished();
  CHECK(find_style_medoid(t) == "b");
}

TEST_CASE("medoid edge cases") {
  StyleTable one;
  one.entries["only"] = VectorXd::Ones(3);
  CHECK(find_style_medoid(one) == "only");

  StyleTable tie;
  tie.entries["zeta"] = VectorXd::Ones(3);
  tie.entries["alpha"] = VectorXd::Ones(3);
  CHECK(find_style_medoid(tie) == "alpha");

  CHECK_THROWS_AS(find_style_medoid(StyleTable{}), Error);
}

TEST_CASE("medoid agrees with a brute-force scan") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> size(1, 60);
  for (int trial = 0; trial < 200; ++trial) {
    StyleTable t;
    const int n = trial == 0 ? 1000 : size(rng);
    for (int i = 0; i < n; ++i) t.entries["u" + std::to_string(i)] = test::random_matrix(4, 1, rng).col(0);
    CHECK(find_style_medoid(t) == medoid_oracle(t));
  }
}

TEST_CASE("style table file round trip") {
  test::TempDir dir("styles");
  std::mt19937_64 rng(2);
  StyleTable t;
  t.corpus = "toy";
  for (int i = 0; i < 5; ++i) t.entries["u" + std::to_string(i)] = test::random_matrix(7, 1, rng).col(0);
  save_style_table(t, dir / "styles.txt");
  const auto back = load_style_table(dir / "styles.txt");
  REQUIRE(back.entries.size() == 5);
  for (const auto& [id, v] : t.entries) CHECK(back.entries.at(id) == v);
  CHECK(find_style_medoid(back) == find_style_medoid(t));
}

TEST_CASE("style extraction is per utterance and deterministic") {
  Fixture f;
  const auto a = extract_styles(f.corpus.manifest, f.model);
  const auto b = extract_styles(f.corpus.manifest, f.model);
  CHECK(a.entries.size() == 3);
  for (const auto& [id, v] : a.entries) CHECK(b.entries.at(id) == v);

  auto duplicated = f.corpus.manifest;
  auto copy = duplicated.records[0];
  copy.utterance_id = "copy-of-first";
  duplicated.records.push_back(copy);
  const auto c = extract_styles(duplicated, f.model);
  CHECK(c.entries.at("copy-of-first") == c.entries.at(duplicated.records[0].utterance_id));

  FactoredVae bare(small_config(), 12);
  CHECK_THROWS_AS(extract_styles(f.corpus.manifest, bare), Error);
}

TEST_CASE("vc with the own style equals rec") {
  Fixture f;
  const auto source = audio_feature_source(f.model);
  const auto feats = source(f.corpus.manifest.records[0]).values;
  const auto own = f.model.encode_style(feats);
  const MatrixXd rec = convert_utterance(feats, own, f.model, ConversionMode::kRec);
  const MatrixXd vc = convert_utterance(feats, own, f.model, ConversionMode::kVc);
  CHECK(rec == vc);
  CHECK(rec.rows() == feats.rows());

  StyleEmbedding other;
  other.vector = VectorXd::Constant(6, 0.7);
  CHECK(convert_utterance(feats, other, f.model, ConversionMode::kRec) == rec);
  CHECK(convert_utterance(feats, other, f.model, ConversionMode::kVc) != rec);
}

TEST_CASE("vc mode decodes every utterance with the medoid style") {
  Fixture f;
  NormalizeOptions options;
  options.output_dir = f.dir / "vc";
  options.route = ConversionRoute::kFeature;
  const auto report = normalize_corpus(f.corpus.manifest, f.model, ConversionMode::kVc, options);
  CHECK(report.failures.empty());
  CHECK(report.converted == 3);

  const auto styles = extract_styles(f.corpus.manifest, f.model);
  CHECK(report.medoid_id == find_style_medoid(styles));
  StyleEmbedding medoid;
  medoid.vector = styles.entries.at(report.medoid_id);
  const auto source = audio_feature_source(f.model);
  for (const auto& r : f.corpus.manifest.records) {
    const auto feats = source(r).values;
    const auto expected = convert_utterance(feats, medoid, f.model, ConversionMode::kVc);
    const auto stored = load_features(options.output_dir / (safe_file_stem(r.utterance_id) + ".logmel80.feat"));
    LogMelSpectrogram normalized_expected;
    normalized_expected.values = expected;
    const auto raw = denormalize_per_band(normalized_expected, *f.model.norm_stats);
    CHECK((stored.values - raw.values).cwiseAbs().maxCoeff() < 1e-12);
    const auto aud = load_features(converted_aud_path(options.output_dir, r.utterance_id));
    CHECK(aud.frames() == feats.rows());
    CHECK(aud.values.cols() == 120);
  }

  // The medoid converted to its own style equals its reconstruction.
  const auto& m = f.corpus.manifest.find(report.medoid_id);
  const auto feats = source(m).values;
  CHECK(convert_utterance(feats, medoid, f.model, ConversionMode::kVc) ==
        convert_utterance(feats, medoid, f.model, ConversionMode::kRec));
}

TEST_CASE("rec mode keeps each utterance's own style") {
  Fixture f;
  NormalizeOptions options;
  options.output_dir = f.dir / "rec";
  options.route = ConversionRoute::kFeature;
  const auto report = normalize_corpus(f.corpus.manifest, f.model, ConversionMode::kRec, options);
  CHECK(report.medoid_id.empty());
  const auto source = audio_feature_source(f.model);
  for (const auto& r : f.corpus.manifest.records) {
    const auto feats = source(r).values;
    LogMelSpectrogram expected;
    expected.values = f.model.decode(f.model.encode_content(feats), f.model.encode_style(feats));
    const auto raw = denormalize_per_band(expected, *f.model.norm_stats);
    const auto stored = load_features(options.output_dir / (safe_file_stem(r.utterance_id) + ".logmel80.feat"));
    CHECK((stored.values - raw.values).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("normalization reuses its cache") {
  Fixture f;
  NormalizeOptions options;
  options.output_dir = f.dir / "cache";
  options.route = ConversionRoute::kAudio;
  options.griffin_lim_iterations = 4;
  const auto first = normalize_corpus(f.corpus.manifest, f.model, ConversionMode::kVc, options);
  CHECK(first.converted == 3);
  const auto path = converted_aud_path(options.output_dir, f.corpus.manifest.records[1].utterance_id);
  const auto before = std::filesystem::last_write_time(path);
  const auto bytes = load_features(path).values;
  const auto second = normalize_corpus(f.corpus.manifest, f.model, ConversionMode::kVc, options);
  CHECK(second.converted == 0);
  CHECK(second.reused == 3);
  CHECK(std::filesystem::last_write_time(path) == before);
  CHECK(load_features(path).values == bytes);
  for (const auto& r : f.corpus.manifest.records)
    CHECK(std::filesystem::exists(options.output_dir / (safe_file_stem(r.utterance_id) + ".wav")));
}

TEST_CASE("per-utterance failures are collected") {
  Fixture f;
  auto manifest = f.corpus.manifest;
  manifest.records[1].audio_path = f.dir / "missing.wav";
  NormalizeOptions options;
  options.output_dir = f.dir / "partial";
  options.route = ConversionRoute::kFeature;
  const auto source = audio_feature_source(f.model);
  const VcFeatureSource skip_missing = [&](const UtteranceRecord& r) { return source(r); };
  const auto report = normalize_corpus(manifest, f.model, ConversionMode::kRec, options, skip_missing);
  CHECK(report.converted == 2);
  REQUIRE(report.failures.size() == 1);
  CHECK(report.failures[0].first == manifest.records[1].utterance_id);
}

TEST_CASE("normalization never reads speaker labels") {
  Fixture f;
  SpeakerAccessAudit audit;
  NormalizeOptions options;
  options.output_dir = f.dir / "audit";
  options.route = ConversionRoute::kFeature;
  normalize_corpus(f.corpus.manifest, f.model, ConversionMode::kVc, options);
  CHECK(audit.accesses() == 0);
}

TEST_CASE("medoid record round trip") {
  test::TempDir dir("medoid");
  std::ofstream(dir / "ckpt") << "weights";
  const MedoidRecord r{"toy", "utt-3", hash_file(dir / "ckpt")};
  CHECK(r.checkpoint_hash.size() == 16);
  save_medoid_record(r, dir / "medoid.json");
  const auto back = load_medoid_record(dir / "medoid.json");
  CHECK(back.corpus == "toy");
  CHECK(back.medoid_id == "utt-3");
  CHECK(back.checkpoint_hash == r.checkpoint_hash);
}

TEST_CASE("mode and route names") {
  CHECK(parse_conversion_mode("vc") == ConversionMode::kVc);
  CHECK(parse_conversion_mode("rec") == ConversionMode::kRec);
  CHECK(to_string(ConversionRoute::kFeature) == "feature");
  CHECK(parse_conversion_route("audio") == ConversionRoute::kAudio);
  CHECK_THROWS_AS(parse_conversion_mode("clean"), Error);
  CHECK_THROWS_AS(parse_conversion_route("mel"), Error);
}
