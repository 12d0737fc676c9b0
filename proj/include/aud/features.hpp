// aud/features.hpp
//
// Log-mel front ends. The VC recipe is 80 bands normalized with corpus
// statistics; the AUD recipe is 40 bands plus deltas and delta-deltas,
// normalized per utterance. Both share one framing (400-sample Blackman
// window, 160-sample shift, 512-point FFT, no padding) so their frames align.

#ifndef AUD_FEATURES_HPP_
#define AUD_FEATURES_HPP_

#include "aud/common.hpp"

#include <filesystem>
#include <span>
#include <string>

namespace aud {

struct FramingConfig {
  int window_length = 400;
  int window_shift = 160;
  int fft_size = 512;
  int sample_rate = kSampleRate;
  double low_hz = 0.0;
  double high_hz = 8000.0;
  double log_floor = 1e-10;

  int num_bins() const { return fft_size / 2 + 1; }
  double hop_seconds() const { return static_cast<double>(window_shift) / sample_rate; }
};

inline constexpr int kVcBands = 80;
inline constexpr int kAudBands = 40;
inline constexpr int kDeltaWindow = 2;

inline constexpr const char* kRecipeVc = "logmel80";
inline constexpr const char* kRecipeVcNormalized = "logmel80-cmvn";
inline constexpr const char* kRecipeAud = "logmel40-dd-uttnorm";

struct LogMelSpectrogram {
  MatrixXd values;  // frames x feature maps
  double hop_seconds = kHopSeconds;
  int band_count = 0;
  std::string utterance_id;
  std::string recipe;

  Eigen::Index frames() const { return values.rows(); }
};

struct CorpusNormStats {
  VectorXd mean;
  VectorXd std;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular HTK-style filters, bands x (fft_size/2 + 1), peak weight 1.
MatrixXd mel_filterbank(int bands, const FramingConfig& cfg = {});

// Center frequency (Hz) of each band of mel_filterbank.
VectorXd mel_center_frequencies(int bands, const FramingConfig& cfg = {});

VectorXd blackman_window(int length);

// 1 + floor((n - window) / shift); throws if n < window.
Eigen::Index frame_count(Eigen::Index num_samples, const FramingConfig& cfg = {});

// |STFT|^2, frames x bins.
MatrixXd power_spectrogram(const VectorXd& waveform, const FramingConfig& cfg = {});

LogMelSpectrogram compute_logmel(const VectorXd& waveform, int bands,
                                 const FramingConfig& cfg = {});

LogMelSpectrogram compute_logmel_vc(const VectorXd& waveform, const FramingConfig& cfg = {});

// Per-band mean and population standard deviation over all frames.
CorpusNormStats compute_norm_stats(std::span<const LogMelSpectrogram> feats);

LogMelSpectrogram normalize_per_band(const LogMelSpectrogram& feat, const CorpusNormStats& stats);
LogMelSpectrogram denormalize_per_band(const LogMelSpectrogram& feat, const CorpusNormStats& stats);

// Regression deltas over +-window frames with edge replication.
MatrixXd compute_deltas(const MatrixXd& feats, int window = kDeltaWindow);

// Zero mean, unit variance per column. Constant columns map to zero.
MatrixXd normalize_per_utterance(const MatrixXd& feats);

// Appends deltas and delta-deltas and normalizes per utterance.
LogMelSpectrogram finalize_aud_features(const MatrixXd& logmel40, double hop_seconds);

LogMelSpectrogram compute_logmel_aud(const VectorXd& waveform, const FramingConfig& cfg = {});

// Non-negative least-squares solution of fb * P = mel_power, column by column.
MatrixXd mel_to_linear_power(const MatrixXd& mel_power, const MatrixXd& filterbank,
                             int iterations = 100);

// Raw (denormalized) 80-band log-mel back to audio via NNLS + Griffin-Lim.
VectorXd invert_logmel(const LogMelSpectrogram& feat, int iterations = 60,
                       const FramingConfig& cfg = {});

// Maps converted 80-band log-mel directly to the AUD feature recipe without
// resynthesis.
LogMelSpectrogram regroup_to_aud(const LogMelSpectrogram& raw_logmel80,
                                 const FramingConfig& cfg = {});

// Feature cache: one binary file per utterance, bit-exact round trip.
void save_features(const LogMelSpectrogram& feat, const std::filesystem::path& path);
LogMelSpectrogram load_features(const std::filesystem::path& path);

}  // namespace aud

#endif  // AUD_FEATURES_HPP_
