// src/hmmvae.cpp

#include "aud/hmmvae.hpp"

#include "aud/binary_io.hpp"
#include "aud/gaussian.hpp"
#include "aud/log.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace aud {

namespace {

constexpr const char* kHmmVaeMagic = "AUDHMMV";
constexpr std::uint32_t kHmmVaeVersion = 1;

}  // namespace

void HmmVaeConfig::validate() const {
  if (feature_dim < 1 || latent_dim < 1 || hidden_channels < 1) throw Error("hmmvae: layer sizes must be positive");
  if (num_units < 1 || states_per_unit < 1) throw Error("hmmvae: need at least one unit and one state per unit");
  if (observation_variance <= 0.0) throw Error("hmmvae: observation variance must be positive");
  if (min_duration < states_per_unit || max_duration < min_duration)
    throw Error("hmmvae: durations must satisfy states_per_unit <= min_duration <= max_duration");
  if (batch_size < 1) throw Error("hmmvae: batch size must be positive");
}

ViterbiResult<double> viterbi_align(const MatrixXd& latents, const HmmParameters& hmm) {
  return viterbi<double>(hmm.emission_log_likelihood(latents), hmm.log_initial(), hmm.log_transition());
}

AUTranscription states_to_units(const std::vector<int>& states, int states_per_unit, double hop_seconds) {
  AUTranscription out;
  out.hop_seconds = hop_seconds;
  for (std::size_t t = 0; t < states.size(); ++t) {
    const int unit = states[t] / states_per_unit;
    if (out.units.empty() || out.units.back().unit_id != unit) {
      out.units.push_back({unit, static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(t + 1)});
    } else {
      out.units.back().end_frame = static_cast<Eigen::Index>(t + 1);
    }
  }
  return out;
}

std::vector<TimedSegment> to_segments(const AUTranscription& transcription) {
  std::vector<TimedSegment> out;
  out.reserve(transcription.units.size());
  for (const auto& u : transcription.units) {
    out.push_back({static_cast<double>(u.start_frame) * transcription.hop_seconds,
                   static_cast<double>(u.end_frame - u.start_frame) * transcription.hop_seconds,
                   std::to_string(u.unit_id)});
  }
  return out;
}

std::vector<int> expand_unit_evenly(int unit, Eigen::Index duration, int states_per_unit) {
  std::vector<int> states;
  states.reserve(static_cast<std::size_t>(duration));
  const Eigen::Index base = duration / states_per_unit;
  const Eigen::Index extra = duration % states_per_unit;
  for (int k = 0; k < states_per_unit; ++k) {
    const Eigen::Index len = base + (k < extra ? 1 : 0);
    states.insert(states.end(), static_cast<std::size_t>(len), unit * states_per_unit + k);
  }
  return states;
}

StateAlignment sample_random_alignment(Eigen::Index frames, int num_units, int states_per_unit,
                                       int min_duration, int max_duration, std::mt19937_64& rng) {
  if (frames < 1) throw Error("random alignment: need at least one frame");
  std::uniform_int_distribution<int> pick_unit(0, num_units - 1);
  std::uniform_int_distribution<int> pick_duration(min_duration, max_duration);
  StateAlignment out;
  out.states.reserve(static_cast<std::size_t>(frames));
  Eigen::Index remaining = frames;
  while (remaining > 0) {
    Eigen::Index d = pick_duration(rng);
    if (remaining < d + min_duration) d = remaining;
    const int unit = pick_unit(rng);
    if (d < states_per_unit) {
      for (Eigen::Index k = 0; k < d; ++k) out.states.push_back(unit * states_per_unit + static_cast<int>(k));
    } else {
      // states_per_unit - 1 distinct cut points in [1, d - 1].
      std::vector<Eigen::Index> cuts(static_cast<std::size_t>(d - 1));
      std::iota(cuts.begin(), cuts.end(), Eigen::Index{1});
      std::shuffle(cuts.begin(), cuts.end(), rng);
      cuts.resize(static_cast<std::size_t>(states_per_unit - 1));
      std::sort(cuts.begin(), cuts.end());
      Eigen::Index prev = 0;
      for (int k = 0; k < states_per_unit; ++k) {
        const Eigen::Index next = k + 1 < states_per_unit ? cuts[static_cast<std::size_t>(k)] : d;
        out.states.insert(out.states.end(), static_cast<std::size_t>(next - prev), unit * states_per_unit + k);
        prev = next;
      }
    }
    remaining -= d;
  }
  return out;
}

// --- model -----------------------------------------------------------------

HmmVae::HmmVae(HmmVaeConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const int h = config_.hidden_channels;
  encoder_.add<nn::Conv1d>("encoder.0", config_.feature_dim, h, 1, 1, nn::Padding::kSame, rng);
  encoder_.add<nn::Tanh>();
  encoder_.add<nn::Conv1d>("encoder.1", h, h, 1, 1, nn::Padding::kSame, rng);
  encoder_.add<nn::Tanh>();
  encoder_.add<nn::Conv1d>("encoder.2", h, 2 * config_.latent_dim, 1, 1, nn::Padding::kSame, rng);
  decoder_.add<nn::Conv1d>("decoder.0", config_.latent_dim, h, 1, 1, nn::Padding::kSame, rng);
  decoder_.add<nn::Tanh>();
  decoder_.add<nn::Conv1d>("decoder.1", h, h, 1, 1, nn::Padding::kSame, rng);
  decoder_.add<nn::Tanh>();
  decoder_.add<nn::Conv1d>("decoder.2", h, config_.feature_dim, 1, 1, nn::Padding::kSame, rng);
  hmm_ = HmmParameters(config_.num_units, config_.latent_dim, config_.states_per_unit, rng,
                       config_.initial_mean_scale);
  hmm_.set_learn_unit_transitions(config_.learn_unit_transitions);
}

LatentPosterior HmmVae::encode(const MatrixXd& feats) const {
  if (feats.cols() != config_.feature_dim)
    throw Error("hmmvae: expected " + std::to_string(config_.feature_dim) + " feature maps, got " +
                std::to_string(feats.cols()));
  const MatrixXd out = encoder_.forward(feats);
  return {out.leftCols(config_.latent_dim), out.rightCols(config_.latent_dim)};
}

MatrixXd HmmVae::decode(const MatrixXd& latents) const { return decoder_.forward(latents); }

StateAlignment HmmVae::align(const MatrixXd& feats) const {
  const auto q = encode(feats);
  const auto result = viterbi<double>(hmm_.expected_emission_log_likelihood(q.means, q.log_variances),
                                      hmm_.log_initial(), hmm_.log_transition());
  return {result.states};
}

AUTranscription HmmVae::transcribe(const MatrixXd& feats) const {
  return states_to_units(align(feats).states, config_.states_per_unit);
}

MatrixXd HmmVae::draw_noise(Eigen::Index frames, std::mt19937_64& rng) const {
  std::normal_distribution<double> normal;
  MatrixXd noise(frames, config_.latent_dim);
  for (Eigen::Index r = 0; r < noise.rows(); ++r)
    for (Eigen::Index c = 0; c < noise.cols(); ++c) noise(r, c) = normal(rng);
  return noise;
}

namespace {

void check_batch(std::span<const MatrixXd> feats, std::span<const StateAlignment> alignments,
                 std::span<const MatrixXd> noise, const HmmParameters& hmm) {
  if (feats.empty()) throw Error("hmmvae: empty batch");
  if (alignments.size() != feats.size() || noise.size() != feats.size())
    throw Error("hmmvae: batch, alignment and noise counts differ");
  for (std::size_t b = 0; b < feats.size(); ++b) {
    if (static_cast<Eigen::Index>(alignments[b].states.size()) != feats[b].rows())
      throw Error("hmmvae: alignment length does not match utterance length");
    if (noise[b].rows() != feats[b].rows()) throw Error("hmmvae: noise length does not match utterance");
    for (const int s : alignments[b].states)
      if (s < 0 || s >= hmm.num_states()) throw Error("hmmvae: alignment state out of range");
  }
}

}  // namespace

ElboBreakdown HmmVae::negative_elbo(std::span<const MatrixXd> feats, std::span<const StateAlignment> alignments,
                                    std::span<const MatrixXd> noise) const {
  check_batch(feats, alignments, noise, hmm_);
  ElboBreakdown out;
  for (std::size_t b = 0; b < feats.size(); ++b) {
    const auto q = encode(feats[b]);
    const MatrixXd x = q.means + ((0.5 * q.log_variances.array()).exp() * noise[b].array()).matrix();
    out.reconstruction += (feats[b] - decode(x)).squaredNorm() / (2.0 * config_.observation_variance);
    for (Eigen::Index t = 0; t < feats[b].rows(); ++t) {
      const int k = alignments[b].states[static_cast<std::size_t>(t)];
      out.latent_kl += kl_diagonal(q.means.row(t), q.log_variances.row(t), hmm_.means().row(k),
                                   hmm_.log_variances().row(k));
    }
    out.path += hmm_.path_neg_log_prob(alignments[b].states);
    out.frames += static_cast<double>(feats[b].rows());
  }
  out.reconstruction /= out.frames;
  out.latent_kl /= out.frames;
  out.path /= out.frames;
  out.total = out.reconstruction + out.latent_kl + out.path;
  return out;
}

ElboBreakdown HmmVae::backprop(std::span<const MatrixXd> feats, std::span<const StateAlignment> alignments,
                               std::span<const MatrixXd> noise) {
  check_batch(feats, alignments, noise, hmm_);
  nn::zero_grad(all_parameters());
  double frames = 0.0;
  for (const auto& f : feats) frames += static_cast<double>(f.rows());
  const double scale = 1.0 / frames;
  const double inv_var = 1.0 / config_.observation_variance;

  ElboBreakdown out;
  out.frames = frames;
  auto& mean_grad = hmm_.means_parameter().grad;
  auto& log_var_grad = hmm_.log_variances_parameter().grad;
  nn::Trace enc_trace, dec_trace;
  for (std::size_t b = 0; b < feats.size(); ++b) {
    const MatrixXd enc_out = encoder_.forward(feats[b], enc_trace);
    const MatrixXd mu = enc_out.leftCols(config_.latent_dim);
    const MatrixXd log_var = enc_out.rightCols(config_.latent_dim);
    const Eigen::ArrayXXd std_dev = (0.5 * log_var.array()).exp();
    const MatrixXd x = mu + (std_dev * noise[b].array()).matrix();
    const MatrixXd recon = decoder_.forward(x, dec_trace);
    const MatrixXd residual = recon - feats[b];
    out.reconstruction += residual.squaredNorm() * 0.5 * inv_var;

    const MatrixXd dx = decoder_.backward(dec_trace, scale * inv_var * residual);
    MatrixXd d_mu = dx;
    MatrixXd d_log_var = (dx.array() * noise[b].array() * std_dev * 0.5).matrix();

    const auto& states = alignments[b].states;
    for (Eigen::Index t = 0; t < feats[b].rows(); ++t) {
      const int k = states[static_cast<std::size_t>(t)];
      const auto mp = hmm_.means().row(k);
      const auto lvp = hmm_.log_variances().row(k);
      out.latent_kl += kl_diagonal(mu.row(t), log_var.row(t), mp, lvp);
      const Eigen::ArrayXd inv_vp = (-lvp.array()).exp().transpose();
      const Eigen::ArrayXd diff = (mu.row(t) - mp).array().transpose();
      const Eigen::ArrayXd vq = log_var.row(t).array().exp().transpose();
      d_mu.row(t) += scale * (diff * inv_vp).matrix().transpose();
      d_log_var.row(t) += scale * (0.5 * (vq * inv_vp - 1.0)).matrix().transpose();
      mean_grad.row(k) -= scale * (diff * inv_vp).matrix().transpose();
      log_var_grad.row(k) += scale * (0.5 * (1.0 - (vq + diff.square()) * inv_vp)).matrix().transpose();
    }
    out.path += hmm_.path_neg_log_prob(states);
    hmm_.accumulate_path_gradient(states, scale);

    MatrixXd d_enc(feats[b].rows(), 2 * config_.latent_dim);
    d_enc << d_mu, d_log_var;
    encoder_.backward(enc_trace, d_enc);
  }
  hmm_.mask_gradients();
  out.reconstruction *= scale;
  out.latent_kl *= scale;
  out.path *= scale;
  out.total = out.reconstruction + out.latent_kl + out.path;
  return out;
}

nn::ParameterList HmmVae::network_parameters() {
  nn::ParameterList out = encoder_.parameters();
  for (auto* p : decoder_.parameters()) out.push_back(p);
  return out;
}

nn::ParameterList HmmVae::all_parameters() {
  nn::ParameterList out = network_parameters();
  for (auto* p : hmm_.parameters()) out.push_back(p);
  return out;
}

void HmmVae::save(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(kHmmVaeMagic, 7);
  bin::write_pod(out, kHmmVaeVersion);
  const auto& c = config_;
  for (int v : {c.feature_dim, c.latent_dim, c.hidden_channels, c.num_units, c.states_per_unit, c.batch_size,
                c.min_duration, c.max_duration, c.learn_unit_transitions ? 1 : 0})
    bin::write_pod<std::int32_t>(out, v);
  for (double v : {c.observation_variance, c.learning_rate, c.grad_clip, c.initial_mean_scale})
    bin::write_pod<double>(out, v);
  nn::save_parameters(out, all_parameters());
  if (!out) throw Error("failed writing " + path.string());
}

HmmVae HmmVae::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open HMMVAE checkpoint " + path.string());
  bin::expect_magic(in, kHmmVaeMagic, path.string());
  const auto version = bin::read_pod<std::uint32_t>(in);
  if (version != kHmmVaeVersion) throw Error(path.string() + ": unsupported HMMVAE checkpoint version");
  HmmVaeConfig c;
  int learn = 1;
  for (int* v : {&c.feature_dim, &c.latent_dim, &c.hidden_channels, &c.num_units, &c.states_per_unit,
                 &c.batch_size, &c.min_duration, &c.max_duration, &learn})
    *v = bin::read_pod<std::int32_t>(in);
  c.learn_unit_transitions = learn != 0;
  for (double* v : {&c.observation_variance, &c.learning_rate, &c.grad_clip, &c.initial_mean_scale})
    *v = bin::read_pod<double>(in);
  HmmVae model(c, 0);
  nn::load_parameters(in, model.all_parameters());
  return model;
}

// --- training ----------------------------------------------------------------

HmmVaeTrainer::HmmVaeTrainer(HmmVae model, std::uint64_t seed)
    : model_(std::make_unique<HmmVae>(std::move(model))), rng_(seed) {
  nn::Adam::Options opts;
  opts.learning_rate = model_->config().learning_rate;
  optimizer_ = nn::Adam(model_->all_parameters(), opts);
}

ElboBreakdown HmmVaeTrainer::step(std::span<const MatrixXd> feats, std::span<const StateAlignment> alignments) {
  std::vector<MatrixXd> noise;
  noise.reserve(feats.size());
  for (const auto& f : feats) noise.push_back(model_->draw_noise(f.rows(), rng_));
  const auto loss = model_->backprop(feats, alignments, noise);
  if (!std::isfinite(loss.total)) return loss;
  nn::clip_grad_norm(model_->all_parameters(), model_->config().grad_clip);
  optimizer_.step();
  return loss;
}

namespace {

// Cycles through shuffled epochs of batch indices.
class BatchSchedule {
 public:
  BatchSchedule(std::size_t corpus_size, int batch_size, std::uint64_t seed)
      : order_(corpus_size), batch_size_(static_cast<std::size_t>(batch_size)), rng_(seed) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    pos_ = order_.size();
  }

  std::vector<std::size_t> next() {
    if (pos_ >= order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    const std::size_t stop = std::min(order_.size(), pos_ + batch_size_);
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(stop));
    pos_ = stop;
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t pos_ = 0;
  std::mt19937_64 rng_;
};

void check_corpus(const std::vector<LogMelSpectrogram>& corpus, const HmmVae& model) {
  if (corpus.empty()) throw Error("hmmvae: empty training corpus");
  for (const auto& f : corpus) {
    if (f.values.cols() != model.config().feature_dim)
      throw Error("hmmvae: utterance " + f.utterance_id + " has " + std::to_string(f.values.cols()) +
                  " feature maps, expected " + std::to_string(model.config().feature_dim));
    if (f.values.rows() < 1) throw Error("hmmvae: utterance " + f.utterance_id + " is empty");
  }
}

}  // namespace

std::vector<ElboBreakdown> pretrain_random_alignments(HmmVaeTrainer& trainer,
                                                      const std::vector<LogMelSpectrogram>& corpus,
                                                      const HmmVaeTrainOptions& options,
                                                      const HmmVaeStepCallback& callback) {
  check_corpus(corpus, trainer.model());
  const auto& cfg = trainer.model().config();
  std::mt19937_64 rng(options.seed);
  std::vector<StateAlignment> alignments;
  alignments.reserve(corpus.size());
  for (const auto& f : corpus)
    alignments.push_back(sample_random_alignment(f.values.rows(), cfg.num_units, cfg.states_per_unit,
                                                  cfg.min_duration, cfg.max_duration, rng));
  BatchSchedule schedule(corpus.size(), cfg.batch_size, options.seed + 1);
  std::vector<ElboBreakdown> history;
  for (int it = 0; it < options.iterations; ++it) {
    std::vector<MatrixXd> feats;
    std::vector<StateAlignment> batch_alignments;
    for (const auto i : schedule.next()) {
      feats.push_back(corpus[i].values);
      batch_alignments.push_back(alignments[i]);
    }
    const auto loss = trainer.step(feats, batch_alignments);
    if (!std::isfinite(loss.total)) throw NumericError("hmmvae pretraining: non-finite loss at iteration " + std::to_string(it));
    history.push_back(loss);
    if (callback) callback(it + 1, loss);
    if (options.log_every > 0 && (it + 1) % options.log_every == 0)
      AUD_INFO("hmmvae pretrain " << it + 1 << " loss " << loss.total);
  }
  return history;
}

std::vector<ElboBreakdown> train_hmmvae(HmmVaeTrainer& trainer, const std::vector<LogMelSpectrogram>& corpus,
                                        const HmmVaeTrainOptions& options, const HmmVaeStepCallback& callback) {
  check_corpus(corpus, trainer.model());
  BatchSchedule schedule(corpus.size(), trainer.model().config().batch_size, options.seed + 2);
  HmmVae last_good = trainer.model();
  std::vector<ElboBreakdown> history;
  for (int it = 0; it < options.iterations; ++it) {
    std::vector<MatrixXd> feats;
    std::vector<StateAlignment> alignments;
    for (const auto i : schedule.next()) {
      feats.push_back(corpus[i].values);
      alignments.push_back(trainer.model().align(corpus[i].values));
    }
    const auto loss = trainer.step(feats, alignments);
    if (!std::isfinite(loss.total)) {
      // Copy values in place; the optimizer holds pointers to these parameters.
      const auto good = last_good.all_parameters();
      const auto live = trainer.model().all_parameters();
      for (std::size_t i = 0; i < live.size(); ++i) live[i]->value = good[i]->value;
      throw NumericError("hmmvae training diverged at iteration " + std::to_string(it) +
                         "; parameters restored to the last good state");
    }
    history.push_back(loss);
    if ((it + 1) % 50 == 0) last_good = trainer.model();
    if (callback) callback(it + 1, loss);
    if (options.log_every > 0 && (it + 1) % options.log_every == 0)
      AUD_INFO("hmmvae train " << it + 1 << " loss " << loss.total << " (rec " << loss.reconstruction << ", kl "
                               << loss.latent_kl << ", path " << loss.path << ")");
  }
  return history;
}

SegmentTable decode_to_units(const HmmVae& model, const std::vector<LogMelSpectrogram>& corpus) {
  SegmentTable table;
  for (const auto& f : corpus) table[f.utterance_id] = to_segments(model.transcribe(f.values));
  return table;
}

}  // namespace aud
