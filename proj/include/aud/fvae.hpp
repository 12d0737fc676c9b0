// aud/fvae.hpp
//
// Factored VAE for voice conversion: a pooled content encoder with a Gaussian
// posterior per content frame, a style encoder closed by global average
// pooling, an upsampling decoder, and a CPC encoder that runs on the content
// sequence as an adversary.
//
// Training alternates two updates per batch. The CPC encoder minimizes the
// InfoNCE loss; afterwards content encoder, style encoder and decoder minimize
//
//   total = rec + beta * kld - lambda * cpc
//
// so the content encoder is pushed to make slowly varying (speaker) information
// unpredictable from its output.

#ifndef AUD_FVAE_HPP_
#define AUD_FVAE_HPP_

#include "aud/common.hpp"
#include "aud/features.hpp"
#include "aud/nn.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace aud {

struct FvaeConfig {
  int mel_bands = kVcBands;
  int hidden_channels = 128;
  int content_dim = 64;
  int style_dim = 256;
  int cpc_dim = 64;
  // Total temporal pooling of the content encoder.
  int pooling = 2;
  int content_kernel = 3;
  int style_kernel = 3;
  int style_layers = 2;
  int decoder_kernel = 3;
  // Valid convolutions; receptive field 1 + sum(k - 1) = 8 content frames.
  std::vector<int> cpc_kernels = {3, 3, 4};

  double beta = 0.01;  // KL weight
  double lambda = 1.0;  // adversarial CPC weight
  double lookahead_seconds = 1.0;
  double hop_seconds = kHopSeconds;

  double learning_rate = 1e-4;
  double grad_clip = 20.0;

  // Lookahead in content frames, rounded half up.
  Eigen::Index lookahead_frames() const;
  Eigen::Index cpc_receptive_field() const;
  void validate() const;
};

struct ContentEmbeddingSequence {
  MatrixXd means;          // M x content_dim
  MatrixXd log_variances;  // M x content_dim
  int frames_per_embedding = 1;
  Eigen::Index source_frames = 0;

  // mean + exp(log_var / 2) * noise
  MatrixXd sample(const MatrixXd& noise) const;
};

struct StyleEmbedding {
  VectorXd vector;
  std::string utterance_id;
};

struct LossBreakdown {
  double rec = 0.0;
  double kld = 0.0;
  double cpc = 0.0;
  double total = 0.0;
  // False when no frame pair had two or more candidates; cpc is then 0.
  bool cpc_valid = false;
};

// Which objective backprop() differentiates.
enum class FvaeObjective {
  // rec + beta * kld - lambda * cpc w.r.t. content, style and decoder weights.
  kAutoencoder,
  // +cpc w.r.t. the CPC encoder weights only.
  kCpcAdversary,
};

class FactoredVae {
 public:
  FactoredVae(FvaeConfig config, std::uint64_t seed);

  const FvaeConfig& config() const { return config_; }
  FvaeConfig& mutable_config() { return config_; }

  ContentEmbeddingSequence encode_content(const MatrixXd& feats) const;
  StyleEmbedding encode_style(const MatrixXd& feats) const;
  // content: M x content_dim (means or samples); output has `frames` rows.
  MatrixXd decode(const MatrixXd& content, const VectorXd& style, Eigen::Index frames) const;
  MatrixXd decode(const ContentEmbeddingSequence& content, const StyleEmbedding& style) const;
  MatrixXd cpc_embed(const MatrixXd& content) const;

  // Losses for one batch with explicit reparameterization noise (one M x
  // content_dim matrix per utterance; zeros give the posterior means).
  LossBreakdown compute_losses(std::span<const MatrixXd> feats, std::span<const MatrixXd> noise) const;

  // Zeroes every gradient, then fills the gradients of `objective`. Returns
  // the losses at the current parameters; `per_utterance`, if given, receives
  // rec + beta * kld for each utterance.
  LossBreakdown backprop(std::span<const MatrixXd> feats, std::span<const MatrixXd> noise,
                         FvaeObjective objective, std::vector<double>* per_utterance = nullptr);

  // Noise shaped for encode_content(feats).
  MatrixXd draw_noise(const MatrixXd& feats, std::mt19937_64& rng) const;
  Eigen::Index content_frames(Eigen::Index frames) const;

  nn::ParameterList content_parameters() { return content_.parameters(); }
  nn::ParameterList style_parameters() { return style_.parameters(); }
  nn::ParameterList decoder_parameters() { return decoder_.parameters(); }
  nn::ParameterList cpc_parameters() { return cpc_.parameters(); }
  nn::ParameterList autoencoder_parameters();
  nn::ParameterList all_parameters();

  // Corpus statistics used to normalize the 80-band input.
  std::optional<CorpusNormStats> norm_stats;

 private:
  struct Pass;
  Pass run(const MatrixXd& feats, const MatrixXd& noise, nn::Trace* content_trace,
           nn::Trace* style_trace, nn::Trace* decoder_trace, nn::Trace* cpc_trace) const;

  FvaeConfig config_;
  nn::Sequential content_;
  nn::Sequential style_;
  nn::Sequential decoder_;
  nn::Sequential cpc_;
};

struct FvaeStepResult {
  LossBreakdown losses;
  double autoencoder_grad_norm = 0.0;
  double cpc_grad_norm = 0.0;
};

// Owns a model plus one Adam optimizer per update group.
class FvaeTrainer {
 public:
  FvaeTrainer(FactoredVae model, std::uint64_t seed);

  FactoredVae& model() { return *model_; }
  const FactoredVae& model() const { return *model_; }

  // One adversary update followed by one autoencoder update. Throws
  // NumericError naming the utterance if a loss is not finite.
  FvaeStepResult step(std::span<const LogMelSpectrogram> batch);

  std::int64_t steps() const { return steps_; }

  void save(const std::filesystem::path& path) const;
  static FvaeTrainer load(const std::filesystem::path& path);

 private:
  std::unique_ptr<FactoredVae> model_;
  nn::Adam autoencoder_opt_;
  nn::Adam cpc_opt_;
  std::mt19937_64 rng_;
  std::int64_t steps_ = 0;
};

// Checkpoint without optimizer state (also readable by FvaeTrainer::load).
void save_fvae(const FactoredVae& model, const std::filesystem::path& path);
FactoredVae load_fvae(const std::filesystem::path& path);

struct FvaeTrainOptions {
  int steps = 500;
  int batch_size = 16;
  // Random crop length in frames for training examples; 0 keeps whole
  // utterances.
  int crop_frames = 0;
  std::uint64_t seed = 0;
  int log_every = 50;
};

using FvaeStepCallback = std::function<void(std::int64_t step, const FvaeStepResult&)>;

// Cycles over language-homogeneous batches of normalized features until
// `steps` updates have been made. Batches with one utterance still train the
// autoencoder; the adversary skips them.
std::vector<LossBreakdown> train_fvae(FvaeTrainer& trainer,
                                      const std::vector<std::vector<LogMelSpectrogram>>& batches,
                                      const FvaeTrainOptions& options,
                                      const FvaeStepCallback& callback = {});

}  // namespace aud

#endif  // AUD_FVAE_HPP_
