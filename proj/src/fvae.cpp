// src/fvae.cpp

#include "aud/fvae.hpp"

#include "aud/binary_io.hpp"
#include "aud/contrastive.hpp"
#include "aud/gaussian.hpp"
#include "aud/log.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace aud {

namespace {

constexpr const char* kFvaeMagic = "AUDFVAE";
constexpr std::uint32_t kFvaeVersion = 1;

}  // namespace

Eigen::Index FvaeConfig::lookahead_frames() const {
  return static_cast<Eigen::Index>(std::floor(lookahead_seconds / (hop_seconds * pooling) + 0.5));
}

Eigen::Index FvaeConfig::cpc_receptive_field() const {
  Eigen::Index rf = 1;
  for (int k : cpc_kernels) rf += k - 1;
  return rf;
}

void FvaeConfig::validate() const {
  if (beta < 0.0) throw Error("fvae: beta must be non-negative");
  if (lambda < 0.0) throw Error("fvae: lambda must be non-negative");
  if (lookahead_seconds <= 0.0) throw Error("fvae: lookahead must be positive");
  if (pooling < 1) throw Error("fvae: pooling must be at least 1");
  if (lookahead_frames() < 1) throw Error("fvae: lookahead shorter than one content frame");
  if (mel_bands < 1 || hidden_channels < 1 || content_dim < 1 || style_dim < 1 || cpc_dim < 1)
    throw Error("fvae: layer sizes must be positive");
  if (style_layers < 1 || cpc_kernels.empty()) throw Error("fvae: empty encoder stack");
}

MatrixXd ContentEmbeddingSequence::sample(const MatrixXd& noise) const {
  if (noise.rows() != means.rows() || noise.cols() != means.cols())
    throw Error("content noise shape mismatch");
  return means + ((0.5 * log_variances.array()).exp() * noise.array()).matrix();
}

// Intermediate values of one utterance's forward pass.
struct FactoredVae::Pass {
  MatrixXd means;
  MatrixXd log_variances;
  MatrixXd content;  // sampled
  VectorXd style;
  MatrixXd reconstruction;
  MatrixXd cpc;
};

FactoredVae::FactoredVae(FvaeConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const int h = config_.hidden_channels;
  const auto& c = config_;

  content_.add<nn::Conv1d>("content.0", c.mel_bands, h, c.content_kernel, 1, nn::Padding::kSame, rng);
  content_.add<nn::Tanh>();
  content_.add<nn::Conv1d>("content.1", h, h, c.content_kernel, c.pooling, nn::Padding::kSame, rng);
  content_.add<nn::Tanh>();
  content_.add<nn::Conv1d>("content.2", h, 2 * c.content_dim, 1, 1, nn::Padding::kSame, rng);

  for (int l = 0; l < c.style_layers; ++l) {
    const int in = l == 0 ? c.mel_bands : h;
    const int out = l + 1 == c.style_layers ? c.style_dim : h;
    style_.add<nn::Conv1d>("style." + std::to_string(l), in, out, c.style_kernel, 1, nn::Padding::kSame, rng);
    if (l + 1 < c.style_layers) style_.add<nn::Tanh>();
  }

  decoder_.add<nn::UpsampleConv1d>("decoder.0", c.content_dim + c.style_dim, h, c.pooling, rng);
  decoder_.add<nn::Tanh>();
  decoder_.add<nn::Conv1d>("decoder.1", h, h, c.decoder_kernel, 1, nn::Padding::kSame, rng);
  decoder_.add<nn::Tanh>();
  decoder_.add<nn::Conv1d>("decoder.2", h, c.mel_bands, 1, 1, nn::Padding::kSame, rng);

  for (std::size_t l = 0; l < c.cpc_kernels.size(); ++l) {
    const int in = l == 0 ? c.content_dim : c.cpc_dim;
    cpc_.add<nn::Conv1d>("cpc." + std::to_string(l), in, c.cpc_dim, c.cpc_kernels[l], 1, nn::Padding::kValid, rng);
    if (l + 1 < c.cpc_kernels.size()) cpc_.add<nn::Tanh>();
  }
}

Eigen::Index FactoredVae::content_frames(Eigen::Index frames) const {
  return (frames + config_.pooling - 1) / config_.pooling;
}

ContentEmbeddingSequence FactoredVae::encode_content(const MatrixXd& feats) const {
  if (feats.cols() != config_.mel_bands)
    throw Error("content encoder expects " + std::to_string(config_.mel_bands) + " bands, got " +
                std::to_string(feats.cols()));
  if (feats.rows() < config_.pooling)
    throw Error("utterance has " + std::to_string(feats.rows()) + " frames, fewer than the pooling factor");
  const MatrixXd out = content_.forward(feats);
  ContentEmbeddingSequence c;
  c.means = out.leftCols(config_.content_dim);
  c.log_variances = out.rightCols(config_.content_dim);
  c.frames_per_embedding = config_.pooling;
  c.source_frames = feats.rows();
  return c;
}

StyleEmbedding FactoredVae::encode_style(const MatrixXd& feats) const {
  if (feats.cols() != config_.mel_bands)
    throw Error("style encoder expects " + std::to_string(config_.mel_bands) + " bands");
  if (feats.rows() < config_.pooling)
    throw Error("utterance has fewer frames than the pooling factor");
  StyleEmbedding s;
  s.vector = style_.forward(feats).colwise().mean().transpose();
  return s;
}

MatrixXd FactoredVae::decode(const MatrixXd& content, const VectorXd& style, Eigen::Index frames) const {
  if (content.cols() != config_.content_dim)
    throw Error("decoder: content dimension " + std::to_string(content.cols()) + " != " +
                std::to_string(config_.content_dim));
  if (style.size() != config_.style_dim)
    throw Error("decoder: style dimension " + std::to_string(style.size()) + " != " +
                std::to_string(config_.style_dim));
  if (content.rows() * config_.pooling < frames || content_frames(frames) != content.rows())
    throw Error("decoder: " + std::to_string(content.rows()) + " content frames cannot produce " +
                std::to_string(frames) + " output frames");
  MatrixXd input(content.rows(), config_.content_dim + config_.style_dim);
  input.leftCols(config_.content_dim) = content;
  input.rightCols(config_.style_dim) = style.transpose().replicate(content.rows(), 1);
  return decoder_.forward(input).topRows(frames);
}

MatrixXd FactoredVae::decode(const ContentEmbeddingSequence& content, const StyleEmbedding& style) const {
  return decode(content.means, style.vector, content.source_frames);
}

MatrixXd FactoredVae::cpc_embed(const MatrixXd& content) const { return cpc_.forward(content); }

MatrixXd FactoredVae::draw_noise(const MatrixXd& feats, std::mt19937_64& rng) const {
  std::normal_distribution<double> normal;
  MatrixXd noise(content_frames(feats.rows()), config_.content_dim);
  for (Eigen::Index r = 0; r < noise.rows(); ++r)
    for (Eigen::Index c = 0; c < noise.cols(); ++c) noise(r, c) = normal(rng);
  return noise;
}

FactoredVae::Pass FactoredVae::run(const MatrixXd& feats, const MatrixXd& noise, nn::Trace* content_trace,
                                   nn::Trace* style_trace, nn::Trace* decoder_trace,
                                   nn::Trace* cpc_trace) const {
  if (feats.cols() != config_.mel_bands) throw Error("fvae: band count mismatch");
  if (feats.rows() < config_.pooling) throw Error("fvae: utterance shorter than the pooling factor");
  Pass p;
  const MatrixXd out = content_trace ? content_.forward(feats, *content_trace) : content_.forward(feats);
  p.means = out.leftCols(config_.content_dim);
  p.log_variances = out.rightCols(config_.content_dim);
  if (noise.rows() != p.means.rows() || noise.cols() != p.means.cols())
    throw Error("fvae: noise shape does not match content embeddings");
  p.content = p.means + ((0.5 * p.log_variances.array()).exp() * noise.array()).matrix();

  const MatrixXd style_frames = style_trace ? style_.forward(feats, *style_trace) : style_.forward(feats);
  p.style = style_frames.colwise().mean().transpose();

  MatrixXd input(p.content.rows(), config_.content_dim + config_.style_dim);
  input.leftCols(config_.content_dim) = p.content;
  input.rightCols(config_.style_dim) = p.style.transpose().replicate(p.content.rows(), 1);
  const MatrixXd full = decoder_trace ? decoder_.forward(input, *decoder_trace) : decoder_.forward(input);
  p.reconstruction = full.topRows(feats.rows());

  p.cpc = cpc_trace ? cpc_.forward(p.content, *cpc_trace) : cpc_.forward(p.content);
  return p;
}

LossBreakdown FactoredVae::compute_losses(std::span<const MatrixXd> feats, std::span<const MatrixXd> noise) const {
  if (feats.empty()) throw Error("fvae: empty batch");
  if (noise.size() != feats.size()) throw Error("fvae: one noise matrix per utterance required");
  LossBreakdown out;
  std::vector<MatrixXd> embeddings;
  for (std::size_t b = 0; b < feats.size(); ++b) {
    Pass p = run(feats[b], noise[b], nullptr, nullptr, nullptr, nullptr);
    out.rec += (p.reconstruction - feats[b]).squaredNorm() / static_cast<double>(feats[b].rows());
    out.kld += kl_to_standard_normal(p.means, p.log_variances) / static_cast<double>(p.means.rows());
    embeddings.push_back(std::move(p.cpc));
  }
  const double n = static_cast<double>(feats.size());
  out.rec /= n;
  out.kld /= n;
  const auto nce = info_nce<double>(embeddings, config_.lookahead_frames(), false);
  out.cpc_valid = nce.valid();
  out.cpc = nce.valid() ? nce.loss : 0.0;
  out.total = out.rec + config_.beta * out.kld - config_.lambda * out.cpc;
  return out;
}

LossBreakdown FactoredVae::backprop(std::span<const MatrixXd> feats, std::span<const MatrixXd> noise,
                                   FvaeObjective objective, std::vector<double>* per_utterance) {
  if (feats.empty()) throw Error("fvae: empty batch");
  if (noise.size() != feats.size()) throw Error("fvae: one noise matrix per utterance required");
  const auto all = all_parameters();
  nn::zero_grad(all);

  const std::size_t batch = feats.size();
  const double n = static_cast<double>(batch);
  std::vector<Pass> passes(batch);
  std::vector<nn::Trace> content_traces(batch), style_traces(batch), decoder_traces(batch), cpc_traces(batch);
  std::vector<MatrixXd> embeddings(batch);
  LossBreakdown out;
  if (per_utterance) per_utterance->assign(batch, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    passes[b] = run(feats[b], noise[b], &content_traces[b], &style_traces[b], &decoder_traces[b], &cpc_traces[b]);
    const double rec = (passes[b].reconstruction - feats[b]).squaredNorm() / static_cast<double>(feats[b].rows());
    const double kld = kl_to_standard_normal(passes[b].means, passes[b].log_variances) /
                       static_cast<double>(passes[b].means.rows());
    out.rec += rec;
    out.kld += kld;
    if (per_utterance) (*per_utterance)[b] = rec + config_.beta * kld;
    embeddings[b] = passes[b].cpc;
  }
  out.rec /= n;
  out.kld /= n;
  const bool need_cpc_grad =
      objective == FvaeObjective::kCpcAdversary || config_.lambda != 0.0;
  const auto nce = info_nce<double>(embeddings, config_.lookahead_frames(), need_cpc_grad);
  out.cpc_valid = nce.valid();
  out.cpc = nce.valid() ? nce.loss : 0.0;
  out.total = out.rec + config_.beta * out.kld - config_.lambda * out.cpc;

  if (objective == FvaeObjective::kCpcAdversary) {
    if (nce.valid())
      for (std::size_t b = 0; b < batch; ++b) cpc_.backward(cpc_traces[b], nce.grads[b]);
    return out;
  }

  for (std::size_t b = 0; b < batch; ++b) {
    const Pass& p = passes[b];
    const Eigen::Index frames = feats[b].rows();
    const Eigen::Index m = p.means.rows();

    // Reconstruction through the decoder.
    MatrixXd d_full = MatrixXd::Zero(m * config_.pooling, config_.mel_bands);
    d_full.topRows(frames) = (2.0 / (static_cast<double>(frames) * n)) * (p.reconstruction - feats[b]);
    const MatrixXd d_input = decoder_.backward(decoder_traces[b], d_full);
    MatrixXd d_content = d_input.leftCols(config_.content_dim);
    const VectorXd d_style = d_input.rightCols(config_.style_dim).colwise().sum().transpose();

    // Global average pooling spreads the style gradient over all frames.
    const Eigen::Index style_frames = style_traces[b].back().rows();
    const MatrixXd d_style_frames =
        (d_style / static_cast<double>(style_frames)).transpose().replicate(style_frames, 1);
    style_.backward(style_traces[b], d_style_frames);

    // Adversarial term: the content encoder ascends the CPC loss.
    if (nce.valid() && config_.lambda != 0.0) {
      const MatrixXd d_content_cpc = cpc_.backward(cpc_traces[b], nce.grads[b]);
      d_content -= config_.lambda * d_content_cpc;
    }

    // Reparameterization and KL.
    const Eigen::ArrayXXd std_dev = (0.5 * p.log_variances.array()).exp();
    const MatrixXd eps = noise[b];
    const double kl_scale = config_.beta / (static_cast<double>(m) * n);
    MatrixXd d_means = d_content + kl_scale * p.means;
    MatrixXd d_log_var = (d_content.array() * eps.array() * std_dev * 0.5).matrix() +
                         (kl_scale * 0.5 * (p.log_variances.array().exp() - 1.0)).matrix();
    MatrixXd d_out(m, 2 * config_.content_dim);
    d_out << d_means, d_log_var;
    content_.backward(content_traces[b], d_out);
  }
  // The CPC encoder is not part of this objective.
  nn::zero_grad(cpc_.parameters());
  return out;
}

nn::ParameterList FactoredVae::autoencoder_parameters() {
  nn::ParameterList out = content_.parameters();
  for (auto* p : style_.parameters()) out.push_back(p);
  for (auto* p : decoder_.parameters()) out.push_back(p);
  return out;
}

nn::ParameterList FactoredVae::all_parameters() {
  nn::ParameterList out = autoencoder_parameters();
  for (auto* p : cpc_.parameters()) out.push_back(p);
  return out;
}

// --- trainer ---------------------------------------------------------------

FvaeTrainer::FvaeTrainer(FactoredVae model, std::uint64_t seed)
    : model_(std::make_unique<FactoredVae>(std::move(model))), rng_(seed) {
  nn::Adam::Options opts;
  opts.learning_rate = model_->config().learning_rate;
  autoencoder_opt_ = nn::Adam(model_->autoencoder_parameters(), opts);
  cpc_opt_ = nn::Adam(model_->cpc_parameters(), opts);
}

FvaeStepResult FvaeTrainer::step(std::span<const LogMelSpectrogram> batch) {
  if (batch.empty()) throw Error("fvae: empty batch");
  std::vector<MatrixXd> feats;
  std::vector<MatrixXd> noise;
  for (const auto& f : batch) {
    feats.push_back(f.values);
    noise.push_back(model_->draw_noise(f.values, rng_));
  }
  FvaeStepResult result;
  const double clip = model_->config().grad_clip;

  if (feats.size() >= 2) {
    const auto adversary = model_->backprop(feats, noise, FvaeObjective::kCpcAdversary);
    if (adversary.cpc_valid) {
      if (!std::isfinite(adversary.cpc)) throw NumericError("fvae: non-finite CPC loss in batch starting with " + batch.front().utterance_id);
      result.cpc_grad_norm = nn::clip_grad_norm(model_->cpc_parameters(), clip);
      cpc_opt_.step();
    }
  }

  std::vector<double> per_utterance;
  result.losses = model_->backprop(feats, noise, FvaeObjective::kAutoencoder, &per_utterance);
  for (std::size_t b = 0; b < per_utterance.size(); ++b)
    if (!std::isfinite(per_utterance[b]))
      throw NumericError("fvae: non-finite loss for utterance " + batch[b].utterance_id);
  if (!std::isfinite(result.losses.total))
    throw NumericError("fvae: non-finite CPC loss in batch starting with " + batch.front().utterance_id);
  const auto params = model_->autoencoder_parameters();
  result.autoencoder_grad_norm = nn::clip_grad_norm(params, clip);
  if (clip > 0.0 && result.autoencoder_grad_norm > clip)
    AUD_LOG_AT(LogLevel::kDebug, "fvae: clipped gradient norm " << result.autoencoder_grad_norm);
  autoencoder_opt_.step();
  ++steps_;
  return result;
}

namespace {

void write_config(std::ostream& out, const FvaeConfig& c) {
  for (int v : {c.mel_bands, c.hidden_channels, c.content_dim, c.style_dim, c.cpc_dim, c.pooling,
                c.content_kernel, c.style_kernel, c.style_layers, c.decoder_kernel})
    bin::write_pod<std::int32_t>(out, v);
  bin::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c.cpc_kernels.size()));
  for (int k : c.cpc_kernels) bin::write_pod<std::int32_t>(out, k);
  for (double v : {c.beta, c.lambda, c.lookahead_seconds, c.hop_seconds, c.learning_rate, c.grad_clip})
    bin::write_pod<double>(out, v);
}

FvaeConfig read_config(std::istream& in) {
  FvaeConfig c;
  for (int* v : {&c.mel_bands, &c.hidden_channels, &c.content_dim, &c.style_dim, &c.cpc_dim, &c.pooling,
                 &c.content_kernel, &c.style_kernel, &c.style_layers, &c.decoder_kernel})
    *v = bin::read_pod<std::int32_t>(in);
  const auto n = bin::read_pod<std::uint32_t>(in);
  if (n > 64) throw Error("fvae checkpoint: corrupt CPC kernel list");
  c.cpc_kernels.resize(n);
  for (auto& k : c.cpc_kernels) k = bin::read_pod<std::int32_t>(in);
  for (double* v : {&c.beta, &c.lambda, &c.lookahead_seconds, &c.hop_seconds, &c.learning_rate, &c.grad_clip})
    *v = bin::read_pod<double>(in);
  return c;
}

void write_model(std::ostream& out, FactoredVae& model) {
  out.write(kFvaeMagic, 7);
  bin::write_pod(out, kFvaeVersion);
  write_config(out, model.config());
  bin::write_pod<std::uint8_t>(out, model.norm_stats ? 1 : 0);
  if (model.norm_stats) {
    bin::write_matrix(out, model.norm_stats->mean);
    bin::write_matrix(out, model.norm_stats->std);
  }
  nn::save_parameters(out, model.all_parameters());
}

FactoredVae read_model(std::istream& in, const std::string& what) {
  bin::expect_magic(in, kFvaeMagic, what);
  const auto version = bin::read_pod<std::uint32_t>(in);
  if (version != kFvaeVersion) throw Error(what + ": unsupported FVAE checkpoint version " + std::to_string(version));
  FactoredVae model(read_config(in), 0);
  if (bin::read_pod<std::uint8_t>(in) != 0) {
    CorpusNormStats stats;
    stats.mean = bin::read_matrix(in);
    stats.std = bin::read_matrix(in);
    model.norm_stats = std::move(stats);
  }
  nn::load_parameters(in, model.all_parameters());
  return model;
}

}  // namespace

void save_fvae(const FactoredVae& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_model(out, const_cast<FactoredVae&>(model));
  bin::write_pod<std::uint8_t>(out, 0);
  if (!out) throw Error("failed writing " + path.string());
}

FactoredVae load_fvae(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open FVAE checkpoint " + path.string());
  return read_model(in, path.string());
}

void FvaeTrainer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_model(out, *model_);
  bin::write_pod<std::uint8_t>(out, 1);
  bin::write_pod<std::int64_t>(out, steps_);
  std::ostringstream rng_state;
  rng_state << rng_;
  bin::write_string(out, rng_state.str());
  autoencoder_opt_.save(out);
  cpc_opt_.save(out);
  if (!out) throw Error("failed writing " + path.string());
}

FvaeTrainer FvaeTrainer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open FVAE checkpoint " + path.string());
  FvaeTrainer trainer(read_model(in, path.string()), 0);
  if (bin::read_pod<std::uint8_t>(in) != 0) {
    trainer.steps_ = bin::read_pod<std::int64_t>(in);
    std::istringstream rng_state(bin::read_string(in));
    rng_state >> trainer.rng_;
    trainer.autoencoder_opt_.load(in);
    trainer.cpc_opt_.load(in);
  }
  return trainer;
}

std::vector<LossBreakdown> train_fvae(FvaeTrainer& trainer,
                                      const std::vector<std::vector<LogMelSpectrogram>>& batches,
                                      const FvaeTrainOptions& options, const FvaeStepCallback& callback) {
  if (batches.empty()) throw Error("fvae: no training batches");
  std::mt19937_64 crop_rng(options.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<LossBreakdown> history;
  history.reserve(static_cast<std::size_t>(std::max(0, options.steps)));
  const Eigen::Index min_frames = trainer.model().config().pooling;
  for (int s = 0; s < options.steps; ++s) {
    const auto& source = batches[static_cast<std::size_t>(s) % batches.size()];
    std::vector<LogMelSpectrogram> batch;
    batch.reserve(source.size());
    for (const auto& f : source) {
      if (f.values.rows() < min_frames) continue;
      if (options.crop_frames > 0 && f.values.rows() > options.crop_frames) {
        std::uniform_int_distribution<Eigen::Index> start(0, f.values.rows() - options.crop_frames);
        LogMelSpectrogram crop = f;
        crop.values = f.values.middleRows(start(crop_rng), options.crop_frames);
        batch.push_back(std::move(crop));
      } else {
        batch.push_back(f);
      }
    }
    if (batch.empty()) continue;
    const auto result = trainer.step(batch);
    history.push_back(result.losses);
    if (callback) callback(trainer.steps(), result);
    if (options.log_every > 0 && trainer.steps() % options.log_every == 0)
      AUD_INFO("fvae step " << trainer.steps() << " rec " << result.losses.rec << " kld "
                            << result.losses.kld << " cpc " << result.losses.cpc);
  }
  return history;
}

}  // namespace aud
