// tests/acceptance.cpp
//
// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include "aud/contrastive.hpp"
#include "aud/fvae.hpp"
#include "aud/gaussian.hpp"
#include "aud/hmm.hpp"
#include "aud/hmmvae.hpp"
#include "aud/log.hpp"
#include "aud/metrics.hpp"
#include "aud/normalizer.hpp"
#include "aud/pipeline.hpp"
#include "aud/synthetic.hpp"

#include "test_util.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/random/sobol.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

using namespace aud;
namespace fs = std::filesystem;

namespace {

using Counts = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int number;
  std::string title;
  double time_limit_seconds;  // 0: no limit
  std::function<Outcome()> run;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

// --- 1, 2: clustering scores -------------------------------------------------

double oracle_nmi(const Counts& c) {
  const double n = static_cast<double>(c.sum());
  std::vector<double> pu(c.rows(), 0.0), pp(c.cols(), 0.0);
  for (Eigen::Index u = 0; u < c.rows(); ++u)
    for (Eigen::Index p = 0; p < c.cols(); ++p) {
      pu[u] += static_cast<double>(c(u, p)) / n;
      pp[p] += static_cast<double>(c(u, p)) / n;
    }
  double hu = 0.0, hp = 0.0, mi = 0.0;
  for (const double x : pu)
    if (x > 0) hu -= x * std::log(x);
  for (const double x : pp)
    if (x > 0) hp -= x * std::log(x);
  for (Eigen::Index u = 0; u < c.rows(); ++u)
    for (Eigen::Index p = 0; p < c.cols(); ++p) {
      const double j = static_cast<double>(c(u, p)) / n;
      if (j > 0) mi += j * std::log(j / (pu[u] * pp[p]));
    }
  return hu + hp == 0.0 ? 100.0 : 200.0 * mi / (hu + hp);
}

double oracle_purity(const Counts& c) {
  std::int64_t hit = 0;
  for (Eigen::Index u = 0; u < c.rows(); ++u) hit += c.row(u).maxCoeff();
  return static_cast<double>(hit) / static_cast<double>(c.sum());
}

Outcome metric_oracles() {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> dim(1, 10), val(0, 30);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    Counts c(dim(rng), dim(rng));
    for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = val(rng);
    if (c.sum() == 0) c(0, 0) = 1;
    const ConfusionMatrix cm(c);
    worst = std::max({worst, std::abs(nmi(cm) - oracle_nmi(c)), std::abs(cluster_purity(cm) - oracle_purity(c))});
  }
  Counts example(2, 2);
  example << 2, 0, 1, 1;
  const double n = nmi(ConfusionMatrix(example));
  const double p = cluster_purity(ConfusionMatrix(example));
  return {worst < 1e-10 && std::abs(n - 34.37) <= 0.01 && p == 0.75,
          "max deviation " + fmt(worst, 3) + ", example NMI " + fmt(n, 6) + ", purity " + fmt(p)};
}

FrameLabelSequence labels(std::vector<int> l) {
  FrameLabelSequence s;
  s.labels = std::move(l);
  s.utterance_id = "u";
  return s;
}

Outcome nmi_degenerate() {
  const std::vector<int> ref = {0, 0, 1, 2, 2, 2, 3, 1};
  const double same = nmi(frame_confusion(labels(ref), labels(ref)));
  const double constant = nmi(frame_confusion(labels(std::vector<int>(ref.size(), 5)), labels(ref)));
  return {std::abs(same - 100.0) < 1e-9 && constant == 0.0,
          "identical " + fmt(same, 17) + ", constant hyp " + fmt(constant)};
}

// --- 3: boundaries ---------------------------------------------------------------

Outcome boundary_example() {
  BoundarySet hyp, ref;
  hyp.times = {0.11, 0.30, 0.51};
  ref.times = {0.10, 0.50};
  hyp.utterance_id = ref.utterance_id = "u";
  BoundaryOptions options;
  options.collar = 0.02;
  const auto s = boundary_fscore(hyp, ref, options);
  return {s.precision == 2.0 / 3.0 && s.recall == 1.0 && s.fscore == 0.8,
          "P " + fmt(s.precision, 17) + ", R " + fmt(s.recall) + ", F " + fmt(s.fscore, 17)};
}

// --- 4: Viterbi -------------------------------------------------------------------

VectorXd log_normalize(const VectorXd& x) {
  const double m = x.maxCoeff();
  return x.array() - (m + std::log((x.array() - m).exp().sum()));
}

Outcome viterbi_exhaustive() {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> pick_t(1, 6), pick_n(1, 4);
  int mismatches = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int frames = pick_t(rng), n = pick_n(rng);
    const MatrixXd em = test::random_matrix(frames, n, rng, 2.0);
    const VectorXd init = log_normalize(test::random_matrix(n, 1, rng));
    MatrixXd trans(n, n);
    for (int i = 0; i < n; ++i) trans.row(i) = log_normalize(test::random_matrix(n, 1, rng)).transpose();
    // Enumerate all n^frames paths, keeping the first maximum.
    long total = 1;
    for (int t = 0; t < frames; ++t) total *= n;
    std::vector<int> path(frames), best_path;
    double best = -std::numeric_limits<double>::infinity();
    for (long code = 0; code < total; ++code) {
      long rest = code;
      for (int t = frames - 1; t >= 0; --t) {
        path[t] = static_cast<int>(rest % n);
        rest /= n;
      }
      double lp = init(path[0]) + em(0, path[0]);
      for (int t = 1; t < frames; ++t) lp += trans(path[t - 1], path[t]) + em(t, path[t]);
      if (lp > best) {
        best = lp;
        best_path = path;
      }
    }
    const auto fast = viterbi<double>(em, init, trans);
    if (fast.states != best_path) ++mismatches;
    worst = std::max(worst, std::abs(fast.log_prob - best));
  }
  return {mismatches == 0 && worst < 1e-8, fmt(mismatches) + " path mismatches, max log-prob gap " + fmt(worst, 3)};
}

// --- 5, 6, 7: FVAE losses ------------------------------------------------------------

FvaeConfig toy_fvae() {
  FvaeConfig c;
  c.mel_bands = 4;
  c.hidden_channels = 5;
  c.content_dim = 3;
  c.style_dim = 2;
  c.cpc_dim = 3;
  c.cpc_kernels = {2};
  c.lookahead_seconds = 0.02;
  return c;
}

struct ToyBatch {
  std::vector<MatrixXd> feats;
  std::vector<MatrixXd> noise;
};

ToyBatch toy_batch(const FactoredVae& model, std::mt19937_64& rng) {
  ToyBatch b;
  for (const Eigen::Index t : {8, 8, 6}) {
    b.feats.push_back(test::random_matrix(t, model.config().mel_bands, rng));
    b.noise.push_back(test::random_matrix(model.content_frames(t), model.config().content_dim, rng));
  }
  return b;
}

Outcome cpc_loss() {
  std::mt19937_64 rng(5);
  const MatrixXd h = test::random_matrix(6, 3, rng);
  const auto uniform = info_nce<double>(std::vector<MatrixXd>(4, h), 1, false);
  const double gap = std::abs(uniform.loss - std::log(4.0));

  FactoredVae model(toy_fvae(), 5);
  const auto batch = toy_batch(model, rng);
  model.backprop(batch.feats, batch.noise, FvaeObjective::kCpcAdversary);
  double diff = 0.0, norm = 0.0;
  for (auto* p : model.cpc_parameters()) {
    const MatrixXd analytic = p->grad;
    for (Eigen::Index r = 0; r < p->value.rows(); ++r)
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
        const double numeric = test::central_difference(
            p->value, r, c, [&] { return model.compute_losses(batch.feats, batch.noise).cpc; }, 1e-3);
        diff += std::pow(numeric - analytic(r, c), 2);
        norm += numeric * numeric;
      }
  }
  const double rel = std::sqrt(diff / norm);
  return {gap < 1e-6 && rel < 1e-4, "|L - ln 4| " + fmt(gap, 3) + ", gradient relative error " + fmt(rel, 3)};
}

Outcome kl_monte_carlo() {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> uniform;
  const boost::math::normal_distribution<double> standard;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const VectorXd mean = test::random_matrix(3, 1, rng);
    const VectorXd log_var = test::random_matrix(3, 1, rng, 0.5);
    const VectorXd zero = VectorXd::Zero(3);
    const double closed = kl_to_standard_normal(mean, log_var);
    // Randomly shifted Sobol points mapped through the normal quantile.
    constexpr int kSamples = 100000;
    boost::random::sobol sobol(3);
    const std::array<double, 3> shift = {uniform(rng), uniform(rng), uniform(rng)};
    const double scale = 1.0 / (static_cast<double>(sobol.max()) + 1.0);
    double mc = 0.0;
    VectorXd x(3);
    for (int s = 0; s < kSamples; ++s) {
      for (int d = 0; d < 3; ++d) {
        double u = (static_cast<double>(sobol()) + 0.5) * scale + shift[d];
        u -= std::floor(u);
        x(d) = mean(d) + std::exp(0.5 * log_var(d)) * boost::math::quantile(standard, u);
      }
      mc += log_normal_diagonal(x, mean, log_var) - log_normal_diagonal(x, zero, zero);
    }
    mc /= kSamples;
    worst = std::max(worst, std::abs(mc - closed) / closed);
  }
  return {worst < 1e-2, "max relative deviation " + fmt(worst, 3)};
}

nn::Parameter& named(nn::ParameterList params, const std::string& name) {
  for (auto* p : params)
    if (p->name == name) return *p;
  throw Error("no parameter " + name);
}

Outcome adversarial_sign() {
  // Two content-encoder weights and two CPC weights are probed.
  std::mt19937_64 rng(7);
  auto config = toy_fvae();
  config.lambda = 1.0;
  FactoredVae with(config, 7);
  config.lambda = 0.0;
  FactoredVae without(config, 7);
  const auto batch = toy_batch(with, rng);
  const auto cpc = [&] { return with.compute_losses(batch.feats, batch.noise).cpc; };

  with.backprop(batch.feats, batch.noise, FvaeObjective::kAutoencoder);
  without.backprop(batch.feats, batch.noise, FvaeObjective::kAutoencoder);
  auto& w = named(with.content_parameters(), "content.0.weight");
  auto& w0 = named(without.content_parameters(), "content.0.weight");
  double worst = 0.0;
  for (const auto& [r, c] : {std::pair<Eigen::Index, Eigen::Index>{0, 0}, {1, 2}}) {
    const double numeric = test::central_difference(w.value, r, c, cpc, 1e-4);
    const double contained = w.grad(r, c) - w0.grad(r, c);
    worst = std::max(worst, std::abs(contained + numeric) / std::max(std::abs(numeric), 1e-8));
  }

  with.backprop(batch.feats, batch.noise, FvaeObjective::kCpcAdversary);
  auto& v = *with.cpc_parameters().front();
  double adversary = 0.0;
  for (const auto& [r, c] : {std::pair<Eigen::Index, Eigen::Index>{0, 0}, {1, 1}}) {
    const double numeric = test::central_difference(v.value, r, c, cpc, 1e-4);
    adversary = std::max(adversary, std::abs(v.grad(r, c) - numeric) / std::max(std::abs(numeric), 1e-8));
  }
  return {worst < 1e-4 && adversary < 1e-4,
          "content grad vs -dLcpc/dw " + fmt(worst, 3) + ", adversary grad vs +dLcpc/dw " + fmt(adversary, 3)};
}

// --- 8, 9: FVAE smoke training -------------------------------------------------------

FvaeConfig smoke_fvae() {
  FvaeConfig c;
  c.hidden_channels = 32;
  c.content_dim = 8;
  c.style_dim = 16;
  c.cpc_dim = 16;
  c.lookahead_seconds = 0.1;
  c.learning_rate = 1e-3;
  return c;
}

// 500 steps on 8 utterances of two pseudo-speakers, shared by 8 and 9.
struct SmokeTraining {
  test::TempDir dir{"acceptance-fvae"};
  SyntheticCorpus corpus;
  std::vector<LossBreakdown> history;
  std::optional<FactoredVae> model;

  SmokeTraining() {
    SyntheticCorpusOptions options;
    options.num_utterances = 8;
    options.num_speakers = 2;
    options.seed = 1;
    corpus = generate_synthetic_corpus(options, dir.path());
    std::vector<LogMelSpectrogram> raw;
    for (const auto& r : corpus.manifest.records) {
      auto f = compute_logmel_vc(load_audio_16k(r));
      f.utterance_id = r.utterance_id;
      raw.push_back(std::move(f));
    }
    const auto stats = compute_norm_stats(raw);
    std::vector<LogMelSpectrogram> batch;
    for (const auto& f : raw) {
      auto n = normalize_per_band(f, stats);
      n.utterance_id = f.utterance_id;
      batch.push_back(std::move(n));
    }
    FactoredVae initial(smoke_fvae(), 1);
    initial.norm_stats = stats;
    FvaeTrainer trainer(std::move(initial), 1);
    FvaeTrainOptions train;
    train.steps = 500;
    train.seed = 1;
    train.log_every = 0;
    history = train_fvae(trainer, {batch}, train);
    model = trainer.model();
  }
};

SmokeTraining& smoke_training() {
  static SmokeTraining s;
  return s;
}

Outcome fvae_convergence() {
  const auto& s = smoke_training();
  const double first = s.history.front().rec, last = s.history.back().rec;
  const double drop = 1.0 - last / first;
  return {s.history.size() == 500 && drop >= 0.5,
          "L_rec " + fmt(first) + " -> " + fmt(last) + " (" + fmt(100.0 * drop, 3) + "% drop)"};
}

double silhouette(const std::vector<VectorXd>& points, const std::vector<int>& groups) {
  double total = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    double same = 0.0, other = 0.0;
    int ns = 0, no = 0;
    for (std::size_t j = 0; j < points.size(); ++j) {
      if (i == j) continue;
      const double d = (points[i] - points[j]).norm();
      if (groups[i] == groups[j]) {
        same += d;
        ++ns;
      } else {
        other += d;
        ++no;
      }
    }
    same /= ns;
    other /= no;
    total += (other - same) / std::max(same, other);
  }
  return total / static_cast<double>(points.size());
}

Outcome style_separation() {
  const auto& s = smoke_training();
  const auto styles = extract_styles(s.corpus.manifest, *s.model);
  std::vector<VectorXd> points;
  for (const auto& r : s.corpus.manifest.records) points.push_back(styles.entries.at(r.utterance_id));
  const double score = silhouette(points, s.corpus.speakers);
  return {score > 0.0, "silhouette " + fmt(score)};
}

// --- 10: HMMVAE recovery ------------------------------------------------------------

struct RecoveryData {
  std::vector<LogMelSpectrogram> corpus;
  std::vector<std::vector<int>> units;
};

// Three units with one Gaussian each (shared by their three left-to-right
// states) in a 4-d latent space, pushed through a fixed random linear map to 8
// feature dimensions, then standardized.
RecoveryData recovery_data(std::uint64_t seed) {
  constexpr int kFeatures = 8, kLatent = 4, kUnits = 3, kUtterances = 20, kFrames = 100;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  const MatrixXd decoder = test::random_matrix(kLatent, kFeatures, rng);
  const MatrixXd means = test::random_matrix(kUnits, kLatent, rng, 3.0);
  std::uniform_int_distribution<int> duration(2, 5), unit(0, kUnits - 1);
  RecoveryData data;
  for (int u = 0; u < kUtterances; ++u) {
    std::vector<int> labels;
    while (labels.size() < kFrames) {
      const int k = unit(rng);
      for (int s = 0; s < 3; ++s)
        for (int d = duration(rng); d > 0 && labels.size() < kFrames; --d) labels.push_back(k);
    }
    MatrixXd y(kFrames, kFeatures);
    for (int t = 0; t < kFrames; ++t) {
      VectorXd x = means.row(labels[t]).transpose();
      for (int d = 0; d < kLatent; ++d) x(d) += 0.3 * normal(rng);
      y.row(t) = (decoder.transpose() * x).transpose();
      for (int f = 0; f < kFeatures; ++f) y(t, f) += 0.05 * normal(rng);
    }
    LogMelSpectrogram s;
    s.values = y;
    s.utterance_id = "r" + std::to_string(u);
    data.corpus.push_back(std::move(s));
    data.units.push_back(std::move(labels));
  }
  std::vector<LogMelSpectrogram> copy = data.corpus;
  const auto stats = compute_norm_stats(copy);
  for (auto& s : data.corpus) {
    const auto id = s.utterance_id;
    s = normalize_per_band(s, stats);
    s.utterance_id = id;
  }
  return data;
}

double best_assignment_accuracy(const HmmVae& model, const RecoveryData& data) {
  std::array<std::array<int, 3>, 3> counts{};
  int frames = 0;
  for (std::size_t u = 0; u < data.corpus.size(); ++u) {
    const auto states = model.align(data.corpus[u].values).states;
    for (std::size_t t = 0; t < states.size(); ++t) {
      ++counts[states[t] / 3][data.units[u][t]];
      ++frames;
    }
  }
  std::array<int, 3> perm = {0, 1, 2};
  int best = 0;
  do {
    best = std::max(best, counts[0][perm[0]] + counts[1][perm[1]] + counts[2][perm[2]]);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / frames;
}

double corpus_negative_elbo(const HmmVae& model, const RecoveryData& data) {
  std::vector<MatrixXd> feats, noise;
  std::vector<StateAlignment> alignments;
  for (const auto& s : data.corpus) {
    feats.push_back(s.values);
    alignments.push_back(model.align(s.values));
    noise.push_back(MatrixXd::Zero(s.values.rows(), model.config().latent_dim));
  }
  return model.negative_elbo(feats, alignments, noise).total;
}

Outcome hmmvae_recovery() {
  const auto data = recovery_data(101);
  HmmVaeConfig config;
  config.feature_dim = 8;
  config.latent_dim = 4;
  config.hidden_channels = 32;
  config.num_units = 3;
  config.observation_variance = 0.3;
  config.batch_size = 10;
  // Restarts are ranked by the unsupervised corpus ELBO; truth labels are
  // only used to score the selected model.
  constexpr int kRestarts = 12;
  double best_elbo = std::numeric_limits<double>::infinity();
  std::uint64_t chosen = 0;
  std::optional<HmmVae> selected;
  for (std::uint64_t seed = 1; seed <= kRestarts; ++seed) {
    HmmVaeTrainer trainer(HmmVae(config, seed), seed);
    HmmVaeTrainOptions options;
    options.seed = seed;
    options.iterations = 1000;
    options.log_every = 0;
    train_hmmvae(trainer, data.corpus, options);
    const double elbo = corpus_negative_elbo(trainer.model(), data);
    if (elbo < best_elbo) {
      best_elbo = elbo;
      chosen = seed;
      selected = trainer.model();
    }
  }
  const double accuracy = best_assignment_accuracy(*selected, data);
  return {accuracy >= 0.9, "frame accuracy " + fmt(accuracy) + " (restart " + std::to_string(chosen) + " of " +
                               std::to_string(kRestarts) + ", negative ELBO " + fmt(best_elbo) + ")"};
}

// --- 11: medoid ---------------------------------------------------------------------

Outcome medoid() {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> size(1, 80);
  int mismatches = 0, trials = 0;
  for (int trial = 0; trial < 100; ++trial, ++trials) {
    StyleTable t;
    const int n = trial == 0 ? 1000 : size(rng);
    for (int i = 0; i < n; ++i) t.entries["u" + std::to_string(i)] = test::random_matrix(5, 1, rng).col(0);
    std::string best;
    double best_sum = std::numeric_limits<double>::infinity();
    for (const auto& [id, v] : t.entries) {
      double sum = 0.0;
      for (const auto& [other, w] : t.entries) sum += (v - w).norm();
      if (sum < best_sum) {
        best_sum = sum;
        best = id;
      }
    }
    if (find_style_medoid(t) != best) ++mismatches;
  }
  StyleTable example;
  example.entries["a"] = (VectorXd(2) << 0.0, 0.0).finished();
  example.entries["b"] = (VectorXd(2) << 1.0, 0.0).finished();
  example.entries["c"] = (VectorXd(2) << 10.0, 0.0).finished();
  const auto m = find_style_medoid(example);
  return {mismatches == 0 && m == "b",
          fmt(mismatches) + " mismatches in " + fmt(trials) + " tables (n up to 1000), example -> " + m};
}

// --- 12: end to end ------------------------------------------------------------------

Outcome end_to_end() {
  test::TempDir dir("acceptance-e2e");
  SyntheticCorpusOptions options;
  options.num_utterances = 10;
  options.seed = 12;
  const auto corpus = generate_synthetic_corpus(options, dir / "raw");
  const auto ingested = ingest_corpus(corpus.manifest, dir / "audio16k");
  save_manifest(ingested, dir / "manifest.jsonl");

  ExperimentConfig config;
  config.condition = InputCondition::kVc;
  config.route = ConversionRoute::kAudio;
  config.seeds = {1};
  config.run_dir = dir / "runs";
  config.vc_manifests = {dir / "manifest.jsonl"};
  config.aud_manifest = dir / "manifest.jsonl";
  config.reference = dir / "raw" / "reference.seg";
  config.fvae = smoke_fvae();
  config.fvae_train.steps = 50;
  config.fvae_train.batch_size = 10;
  config.hmmvae.latent_dim = 8;
  config.hmmvae.hidden_channels = 32;
  config.hmmvae.num_units = 8;
  config.hmmvae.batch_size = 5;
  config.pretrain_iterations = 20;
  config.train_iterations = 50;
  const auto runs = run_experiment(config);
  const auto& r = runs.at(0).metrics.result;
  const bool finite = std::isfinite(r.nmi) && std::isfinite(r.purity) && std::isfinite(r.boundary.fscore);
  return {finite && r.frames > 0, "NMI " + fmt(r.nmi) + ", CP " + fmt(100.0 * r.purity) + ", BFS " +
                                      fmt(100.0 * r.boundary.fscore) + " over " + std::to_string(r.frames) +
                                      " frames"};
}

}  // namespace

int main() {
  set_log_level(LogLevel::kWarning);
  const std::vector<Criterion> criteria = {
      {1, "metric oracles", 10.0, metric_oracles},
      {2, "NMI degenerate cases", 0.0, nmi_degenerate},
      {3, "boundary F-score example", 0.0, boundary_example},
      {4, "Viterbi vs exhaustive enumeration", 30.0, viterbi_exhaustive},
      {5, "CPC loss and gradient", 0.0, cpc_loss},
      {6, "KL vs Monte Carlo", 0.0, kl_monte_carlo},
      {7, "adversarial sign", 0.0, adversarial_sign},
      {8, "FVAE convergence smoke", 300.0, fvae_convergence},
      {9, "style separation smoke", 0.0, style_separation},
      {10, "HMMVAE unit recovery", 600.0, hmmvae_recovery},
      {11, "medoid", 0.0, medoid},
      {12, "end-to-end smoke", 600.0, end_to_end},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("error: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.time_limit_seconds > 0.0 && seconds >= c.time_limit_seconds) {
      outcome.pass = false;
      outcome.detail += "; over the " + fmt(c.time_limit_seconds) + " s limit";
    }
    if (!outcome.pass) ++failed;
    std::cout << (outcome.pass ? "[PASS]" : "[FAIL]") << " criterion " << c.number << ": " << c.title << " ("
              << outcome.detail << "; " << std::fixed << std::setprecision(1) << seconds << " s)"
              << std::defaultfloat << std::endl;
  }
  std::cout << "criterion 13: corpus-scale results are not reproduced at desk scale (see README)\n";
  return failed;
}
