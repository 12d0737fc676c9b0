// aud/hmmvae.hpp
//
// VAE whose latent prior is an HMM over acoustic-unit states. State
// posteriors are replaced by the Viterbi path, so the negative ELBO of an
// utterance decomposes into
//
//   sum_t ||y_t - f(x_t)||^2 / (2 sigma^2)          reconstruction
//   + sum_t KL(q(x_t) || N(mu_{z_t}, Sigma_{z_t}))   latent prior
//   - log pi(z_1) - sum_t log A(z_{t-1}, z_t)        state path
//
// (constants dropped). Losses are averaged over all frames of a batch.

#ifndef AUD_HMMVAE_HPP_
#define AUD_HMMVAE_HPP_

#include "aud/common.hpp"
#include "aud/features.hpp"
#include "aud/hmm.hpp"
#include "aud/nn.hpp"
#include "aud/segments.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace aud {

struct HmmVaeConfig {
  int feature_dim = 3 * kAudBands;
  int latent_dim = 32;
  int hidden_channels = 128;
  int num_units = 80;
  int states_per_unit = 3;
  double observation_variance = 1.0;
  bool learn_unit_transitions = true;
  double learning_rate = 1e-3;
  double grad_clip = 100.0;
  int batch_size = 16;
  // Random-alignment unit durations, in frames.
  int min_duration = 5;
  int max_duration = 30;
  // Standard deviation of the initial state means.
  double initial_mean_scale = 1.0;

  int num_states() const { return num_units * states_per_unit; }
  void validate() const;
};

struct LatentPosterior {
  MatrixXd means;          // T x latent_dim
  MatrixXd log_variances;  // T x latent_dim
};

struct ElboBreakdown {
  double reconstruction = 0.0;
  double latent_kl = 0.0;
  double path = 0.0;
  double total = 0.0;  // negative ELBO per frame
  double frames = 0.0;
};

struct AUTranscription {
  struct Unit {
    int unit_id = 0;
    Eigen::Index start_frame = 0;
    Eigen::Index end_frame = 0;  // exclusive
  };
  std::vector<Unit> units;
  double hop_seconds = kHopSeconds;
};

// Viterbi over the given latent points (means or samples).
ViterbiResult<double> viterbi_align(const MatrixXd& latents, const HmmParameters& hmm);

// Consecutive frames whose states share state / states_per_unit merge.
AUTranscription states_to_units(const std::vector<int>& states, int states_per_unit,
                                double hop_seconds = kHopSeconds);

std::vector<TimedSegment> to_segments(const AUTranscription& transcription);

// Even split of one unit's duration over its states, earlier states taking
// the remainder frames.
std::vector<int> expand_unit_evenly(int unit, Eigen::Index duration, int states_per_unit = 3);

// Random unit sequence with durations uniform in [min_duration, max_duration]
// (the last unit absorbs the remainder) and random within-unit state splits.
StateAlignment sample_random_alignment(Eigen::Index frames, int num_units, int states_per_unit,
                                       int min_duration, int max_duration, std::mt19937_64& rng);

class HmmVae {
 public:
  HmmVae(HmmVaeConfig config, std::uint64_t seed);
  HmmVae(const HmmVae&) = default;
  HmmVae& operator=(const HmmVae&) = default;

  const HmmVaeConfig& config() const { return config_; }
  HmmParameters& hmm() { return hmm_; }
  const HmmParameters& hmm() const { return hmm_; }

  LatentPosterior encode(const MatrixXd& feats) const;
  MatrixXd decode(const MatrixXd& latents) const;

  // Best state path for the posterior: emission scores are expected
  // log-likelihoods under q(x_t), which maximizes the ELBO over the path.
  StateAlignment align(const MatrixXd& feats) const;
  AUTranscription transcribe(const MatrixXd& feats) const;

  // Noise: one T x latent_dim matrix per utterance (zeros give the means).
  ElboBreakdown negative_elbo(std::span<const MatrixXd> feats, std::span<const StateAlignment> alignments,
                              std::span<const MatrixXd> noise) const;
  // Zeroes and fills all gradients; returns the loss at current parameters.
  ElboBreakdown backprop(std::span<const MatrixXd> feats, std::span<const StateAlignment> alignments,
                         std::span<const MatrixXd> noise);

  MatrixXd draw_noise(Eigen::Index frames, std::mt19937_64& rng) const;

  nn::ParameterList network_parameters();
  nn::ParameterList all_parameters();

  void save(const std::filesystem::path& path);
  static HmmVae load(const std::filesystem::path& path);

 private:
  HmmVaeConfig config_;
  nn::Sequential encoder_;
  nn::Sequential decoder_;
  HmmParameters hmm_;
};

struct HmmVaeTrainOptions {
  int iterations = 20000;
  std::uint64_t seed = 0;
  int log_every = 500;
};

using HmmVaeStepCallback = std::function<void(std::int64_t step, const ElboBreakdown&)>;

class HmmVaeTrainer {
 public:
  HmmVaeTrainer(HmmVae model, std::uint64_t seed);

  HmmVae& model() { return *model_; }
  const HmmVae& model() const { return *model_; }

  // One Adam step against fixed alignments.
  ElboBreakdown step(std::span<const MatrixXd> feats, std::span<const StateAlignment> alignments);

 private:
  std::unique_ptr<HmmVae> model_;
  nn::Adam optimizer_;
  std::mt19937_64 rng_;
};

// Pseudo-supervised warm start: one random alignment per utterance, fixed
// for all iterations.
std::vector<ElboBreakdown> pretrain_random_alignments(HmmVaeTrainer& trainer,
                                                      const std::vector<LogMelSpectrogram>& corpus,
                                                      const HmmVaeTrainOptions& options,
                                                      const HmmVaeStepCallback& callback = {});

// Per batch: Viterbi re-alignment under the current model, then one Adam step
// on the negative ELBO. A non-finite loss restores the last good parameters
// and throws NumericError.
std::vector<ElboBreakdown> train_hmmvae(HmmVaeTrainer& trainer, const std::vector<LogMelSpectrogram>& corpus,
                                        const HmmVaeTrainOptions& options,
                                        const HmmVaeStepCallback& callback = {});

SegmentTable decode_to_units(const HmmVae& model, const std::vector<LogMelSpectrogram>& corpus);

}  // namespace aud

#endif  // AUD_HMMVAE_HPP_
