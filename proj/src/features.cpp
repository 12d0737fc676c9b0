// src/features.cpp

#include "aud/features.hpp"

#include "aud/binary_io.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <random>
#include <vector>

namespace aud {

namespace {

constexpr const char* kFeatureMagic = "AUDFEAT";
constexpr std::uint32_t kFeatureVersion = 1;

using Complex = std::complex<double>;

Eigen::FFT<double> make_fft() {
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  return fft;
}

// Complex STFT, frames x bins.
Eigen::MatrixXcd stft(const VectorXd& waveform, const VectorXd& window, const FramingConfig& cfg) {
  const Eigen::Index frames = frame_count(waveform.size(), cfg);
  Eigen::MatrixXcd spec(frames, cfg.num_bins());
  auto fft = make_fft();
  std::vector<double> frame(cfg.fft_size, 0.0);
  std::vector<Complex> bins;
  for (Eigen::Index t = 0; t < frames; ++t) {
    const Eigen::Index start = t * cfg.window_shift;
    for (int n = 0; n < cfg.window_length; ++n) frame[n] = waveform[start + n] * window[n];
    fft.fwd(bins, frame);
    for (int k = 0; k < cfg.num_bins(); ++k) spec(t, k) = bins[k];
  }
  return spec;
}

// Weighted overlap-add inverse of stft().
VectorXd istft(const Eigen::MatrixXcd& spec, const VectorXd& window, const FramingConfig& cfg) {
  const Eigen::Index frames = spec.rows();
  const Eigen::Index length = (frames - 1) * cfg.window_shift + cfg.window_length;
  VectorXd out = VectorXd::Zero(length);
  VectorXd norm = VectorXd::Zero(length);
  auto fft = make_fft();
  std::vector<Complex> bins(cfg.num_bins());
  std::vector<double> frame;
  for (Eigen::Index t = 0; t < frames; ++t) {
    for (int k = 0; k < cfg.num_bins(); ++k) bins[k] = spec(t, k);
    fft.inv(frame, bins);
    const Eigen::Index start = t * cfg.window_shift;
    for (int n = 0; n < cfg.window_length; ++n) {
      out[start + n] += frame[n] * window[n];
      norm[start + n] += window[n] * window[n];
    }
  }
  for (Eigen::Index i = 0; i < length; ++i)
    if (norm[i] > 1e-8) out[i] /= norm[i];
  return out;
}

MatrixXd log_floor(const MatrixXd& power, double floor) {
  return power.array().max(floor).log().matrix();
}

void check_band_count(const LogMelSpectrogram& feat, const CorpusNormStats& stats) {
  if (feat.values.cols() != stats.mean.size() || feat.values.cols() != stats.std.size())
    throw Error("band count mismatch: features have " + std::to_string(feat.values.cols()) +
                " maps, statistics have " + std::to_string(stats.mean.size()));
}

}  // namespace

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

VectorXd mel_center_frequencies(int bands, const FramingConfig& cfg) {
  const double lo = hz_to_mel(cfg.low_hz);
  const double hi = hz_to_mel(cfg.high_hz);
  VectorXd centers(bands);
  for (int b = 0; b < bands; ++b) centers[b] = mel_to_hz(lo + (hi - lo) * (b + 1) / (bands + 1));
  return centers;
}

MatrixXd mel_filterbank(int bands, const FramingConfig& cfg) {
  const double lo = hz_to_mel(cfg.low_hz);
  const double hi = hz_to_mel(cfg.high_hz);
  std::vector<double> edges(bands + 2);
  for (int i = 0; i < bands + 2; ++i) edges[i] = mel_to_hz(lo + (hi - lo) * i / (bands + 1));
  MatrixXd fb = MatrixXd::Zero(bands, cfg.num_bins());
  for (int k = 0; k < cfg.num_bins(); ++k) {
    const double f = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
    for (int b = 0; b < bands; ++b) {
      const double left = edges[b], center = edges[b + 1], right = edges[b + 2];
      if (f > left && f < right) {
        fb(b, k) = f <= center ? (f - left) / (center - left) : (right - f) / (right - center);
      }
    }
  }
  return fb;
}

VectorXd blackman_window(int length) {
  VectorXd w(length);
  for (int n = 0; n < length; ++n) {
    const double x = 2.0 * std::numbers::pi * n / length;
    w[n] = 0.42 - 0.5 * std::cos(x) + 0.08 * std::cos(2.0 * x);
  }
  return w;
}

Eigen::Index frame_count(Eigen::Index num_samples, const FramingConfig& cfg) {
  if (num_samples < cfg.window_length)
    throw Error("waveform too short: " + std::to_string(num_samples) + " samples, need at least " +
                std::to_string(cfg.window_length));
  return 1 + (num_samples - cfg.window_length) / cfg.window_shift;
}

MatrixXd power_spectrogram(const VectorXd& waveform, const FramingConfig& cfg) {
  return stft(waveform, blackman_window(cfg.window_length), cfg).cwiseAbs2();
}

LogMelSpectrogram compute_logmel(const VectorXd& waveform, int bands, const FramingConfig& cfg) {
  if (!waveform.allFinite()) throw NumericError("non-finite waveform samples");
  const MatrixXd power = power_spectrogram(waveform, cfg);
  LogMelSpectrogram out;
  out.values = log_floor(power * mel_filterbank(bands, cfg).transpose(), cfg.log_floor);
  out.band_count = bands;
  out.hop_seconds = cfg.hop_seconds();
  return out;
}

LogMelSpectrogram compute_logmel_vc(const VectorXd& waveform, const FramingConfig& cfg) {
  auto out = compute_logmel(waveform, kVcBands, cfg);
  out.recipe = kRecipeVc;
  return out;
}

CorpusNormStats compute_norm_stats(std::span<const LogMelSpectrogram> feats) {
  if (feats.empty()) throw Error("no features for normalization statistics");
  const Eigen::Index bands = feats.front().values.cols();
  VectorXd sum = VectorXd::Zero(bands);
  VectorXd sum_sq = VectorXd::Zero(bands);
  double frames = 0.0;
  for (const auto& f : feats) {
    if (f.values.cols() != bands) throw Error("band count mismatch in normalization corpus");
    sum += f.values.colwise().sum().transpose();
    sum_sq += f.values.array().square().colwise().sum().matrix().transpose();
    frames += static_cast<double>(f.values.rows());
  }
  if (frames == 0.0) throw Error("no frames for normalization statistics");
  CorpusNormStats stats;
  stats.mean = sum / frames;
  const VectorXd var = (sum_sq / frames - stats.mean.cwiseAbs2()).cwiseMax(0.0);
  stats.std = var.cwiseSqrt().cwiseMax(1e-8);
  return stats;
}

LogMelSpectrogram normalize_per_band(const LogMelSpectrogram& feat, const CorpusNormStats& stats) {
  check_band_count(feat, stats);
  LogMelSpectrogram out = feat;
  out.values = ((feat.values.rowwise() - stats.mean.transpose()).array().rowwise() /
                stats.std.transpose().array())
                   .matrix();
  out.recipe = kRecipeVcNormalized;
  return out;
}

LogMelSpectrogram denormalize_per_band(const LogMelSpectrogram& feat, const CorpusNormStats& stats) {
  check_band_count(feat, stats);
  LogMelSpectrogram out = feat;
  out.values = ((feat.values.array().rowwise() * stats.std.transpose().array()).matrix().rowwise() +
                stats.mean.transpose());
  out.recipe = kRecipeVc;
  return out;
}

MatrixXd compute_deltas(const MatrixXd& feats, int window) {
  const Eigen::Index frames = feats.rows();
  double denom = 0.0;
  for (int n = 1; n <= window; ++n) denom += 2.0 * n * n;
  MatrixXd out = MatrixXd::Zero(frames, feats.cols());
  for (Eigen::Index t = 0; t < frames; ++t) {
    for (int n = 1; n <= window; ++n) {
      const Eigen::Index ahead = std::min<Eigen::Index>(frames - 1, t + n);
      const Eigen::Index behind = std::max<Eigen::Index>(0, t - n);
      out.row(t) += n * (feats.row(ahead) - feats.row(behind));
    }
  }
  return out / denom;
}

MatrixXd normalize_per_utterance(const MatrixXd& feats) {
  const RowVectorXd mean = feats.colwise().mean();
  MatrixXd centered = feats.rowwise() - mean;
  RowVectorXd std = (centered.array().square().colwise().sum() / static_cast<double>(feats.rows()))
                        .sqrt()
                        .matrix();
  for (Eigen::Index c = 0; c < std.size(); ++c)
    if (std[c] < 1e-12) std[c] = 1.0;
  return (centered.array().rowwise() / std.array()).matrix();
}

LogMelSpectrogram finalize_aud_features(const MatrixXd& logmel40, double hop_seconds) {
  const MatrixXd d1 = compute_deltas(logmel40);
  const MatrixXd d2 = compute_deltas(d1);
  MatrixXd stacked(logmel40.rows(), logmel40.cols() * 3);
  stacked << logmel40, d1, d2;
  LogMelSpectrogram out;
  out.values = normalize_per_utterance(stacked);
  out.band_count = static_cast<int>(logmel40.cols());
  out.hop_seconds = hop_seconds;
  out.recipe = kRecipeAud;
  return out;
}

LogMelSpectrogram compute_logmel_aud(const VectorXd& waveform, const FramingConfig& cfg) {
  const auto base = compute_logmel(waveform, kAudBands, cfg);
  return finalize_aud_features(base.values, base.hop_seconds);
}

MatrixXd mel_to_linear_power(const MatrixXd& mel_power, const MatrixXd& filterbank, int iterations) {
  // mel_power: frames x bands; returns frames x bins.
  const MatrixXd pinv = filterbank.completeOrthogonalDecomposition().pseudoInverse();
  MatrixXd p = (mel_power * pinv.transpose()).cwiseMax(0.0);  // frames x bins
  const MatrixXd gram = filterbank.transpose() * filterbank;  // bins x bins
  const double lipschitz = Eigen::SelfAdjointEigenSolver<MatrixXd>(gram, Eigen::EigenvaluesOnly)
                               .eigenvalues()
                               .maxCoeff();
  if (lipschitz <= 0.0) return p;
  const double step = 1.0 / lipschitz;
  const MatrixXd target = mel_power * filterbank;  // frames x bins
  // Projected gradient on 0.5 * ||P F^T - M||^2 subject to P >= 0.
  for (int it = 0; it < iterations; ++it) {
    const MatrixXd grad = p * gram - target;
    p = (p - step * grad).cwiseMax(0.0);
  }
  return p;
}

VectorXd invert_logmel(const LogMelSpectrogram& feat, int iterations, const FramingConfig& cfg) {
  if (!feat.values.allFinite()) throw NumericError("non-finite log-mel input to inversion");
  if (feat.values.rows() < 1) throw Error("empty log-mel input to inversion");
  const MatrixXd fb = mel_filterbank(static_cast<int>(feat.values.cols()), cfg);
  const MatrixXd mel_power = feat.values.array().exp().matrix();
  const MatrixXd magnitude = mel_to_linear_power(mel_power, fb).cwiseSqrt();
  const VectorXd window = blackman_window(cfg.window_length);

  std::mt19937_64 rng(0x6a09e667f3bcc908ull);
  std::uniform_real_distribution<double> phase(-std::numbers::pi, std::numbers::pi);
  Eigen::MatrixXcd spec(magnitude.rows(), magnitude.cols());
  for (Eigen::Index t = 0; t < spec.rows(); ++t)
    for (Eigen::Index k = 0; k < spec.cols(); ++k)
      spec(t, k) = std::polar(magnitude(t, k), phase(rng));

  VectorXd signal = istft(spec, window, cfg);
  for (int it = 0; it < iterations; ++it) {
    const Eigen::MatrixXcd rebuilt = stft(signal, window, cfg);
    for (Eigen::Index t = 0; t < spec.rows(); ++t) {
      for (Eigen::Index k = 0; k < spec.cols(); ++k) {
        const double mag = std::abs(rebuilt(t, k));
        spec(t, k) = mag > 1e-12 ? magnitude(t, k) * rebuilt(t, k) / mag : Complex(magnitude(t, k), 0.0);
      }
    }
    signal = istft(spec, window, cfg);
  }
  return signal;
}

LogMelSpectrogram regroup_to_aud(const LogMelSpectrogram& raw_logmel80, const FramingConfig& cfg) {
  const MatrixXd fb80 = mel_filterbank(static_cast<int>(raw_logmel80.values.cols()), cfg);
  const MatrixXd linear = mel_to_linear_power(raw_logmel80.values.array().exp().matrix(), fb80);
  const MatrixXd mel40 = log_floor(linear * mel_filterbank(kAudBands, cfg).transpose(), cfg.log_floor);
  auto out = finalize_aud_features(mel40, raw_logmel80.hop_seconds);
  out.utterance_id = raw_logmel80.utterance_id;
  return out;
}

void save_features(const LogMelSpectrogram& feat, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write feature file " + path.string());
  out.write(kFeatureMagic, 7);
  bin::write_pod(out, kFeatureVersion);
  bin::write_string(out, feat.recipe);
  bin::write_string(out, feat.utterance_id);
  bin::write_pod<std::int32_t>(out, feat.band_count);
  bin::write_pod<double>(out, feat.hop_seconds);
  bin::write_matrix(out, feat.values);
  if (!out) throw Error("failed writing feature file " + path.string());
}

LogMelSpectrogram load_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open feature file " + path.string());
  bin::expect_magic(in, kFeatureMagic, path.string());
  const auto version = bin::read_pod<std::uint32_t>(in);
  if (version != kFeatureVersion)
    throw Error(path.string() + ": unsupported feature file version " + std::to_string(version));
  LogMelSpectrogram feat;
  feat.recipe = bin::read_string(in);
  feat.utterance_id = bin::read_string(in);
  feat.band_count = bin::read_pod<std::int32_t>(in);
  feat.hop_seconds = bin::read_pod<double>(in);
  feat.values = bin::read_matrix(in);
  return feat;
}

}  // namespace aud
