// src/synthetic.cpp

#include "aud/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

namespace aud {

namespace {

constexpr int kResonances = 3;
constexpr Eigen::Index kSamplesPerFrame = 160;

// Resonance frequencies of phone p, spread over 200-6000 Hz.
double resonance_hz(int phone, int k, int num_phones) {
  const double lo = 200.0, hi = 6000.0;
  const double step = (hi - lo) / (kResonances * num_phones);
  return lo + step * (static_cast<double>(k * num_phones + (phone * (k + 1)) % num_phones) + 0.5);
}

}  // namespace

double synthetic_speaker_tilt(int speaker, int num_speakers) {
  if (num_speakers <= 1) return 0.0;
  return -0.9 + 1.8 * static_cast<double>(speaker) / static_cast<double>(num_speakers - 1);
}

VectorXd synthesize_utterance(const std::vector<TimedSegment>& segments, int num_phones, int speaker,
                              int num_speakers, Eigen::Index frames, std::mt19937_64& rng) {
  const Eigen::Index n = frames * kSamplesPerFrame;
  VectorXd x = VectorXd::Zero(n);
  std::normal_distribution<double> noise(0.0, 0.02);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  for (const auto& seg : segments) {
    const int phone = std::stoi(seg.label.substr(1));
    const auto b = static_cast<Eigen::Index>(std::llround(seg.start * kSampleRate));
    const auto e = std::min(n, static_cast<Eigen::Index>(std::llround(seg.end() * kSampleRate)));
    for (int k = 0; k < kResonances; ++k) {
      const double w = 2.0 * std::numbers::pi * resonance_hz(phone, k, num_phones) / kSampleRate;
      const double ph = phase(rng);
      const double amp = 0.25 / (k + 1);
      for (Eigen::Index i = b; i < e; ++i) x(i) += amp * std::sin(w * static_cast<double>(i - b) + ph);
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) x(i) += noise(rng);
  // y[n] = x[n] - a x[n-1]; a > 0 lifts high frequencies, a < 0 lowers them.
  const double a = synthetic_speaker_tilt(speaker, num_speakers);
  VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = x(i) - (i > 0 ? a * x(i - 1) : 0.0);
  return 0.5 * y / std::max(1e-9, y.cwiseAbs().maxCoeff());
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusOptions& options, const std::filesystem::path& dir) {
  if (options.num_utterances < 1 || options.num_phones < 1 || options.num_speakers < 1)
    throw Error("synthetic corpus: counts must be positive");
  if (options.min_phone_frames < 1 || options.max_phone_frames < options.min_phone_frames)
    throw Error("synthetic corpus: invalid phone duration range");
  const auto wav_dir = dir / "wav";
  std::filesystem::create_directories(wav_dir);
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<int> pick_phone(0, options.num_phones - 1);
  std::uniform_int_distribution<int> pick_frames(options.min_phone_frames, options.max_phone_frames);
  const auto frames = static_cast<Eigen::Index>(std::llround(options.seconds / kHopSeconds));

  SyntheticCorpus corpus;
  corpus.manifest.name = options.name;
  corpus.manifest.language_set.insert(options.language);
  for (int u = 0; u < options.num_utterances; ++u) {
    const int speaker = u % options.num_speakers;
    char id[64];
    std::snprintf(id, sizeof id, "%s-spk%d-%03d", options.name.c_str(), speaker, u);
    std::vector<TimedSegment> segs;
    Eigen::Index t = 0;
    int prev = -1;
    while (t < frames) {
      Eigen::Index d = pick_frames(rng);
      if (frames - t < d + options.min_phone_frames) d = frames - t;
      int phone = pick_phone(rng);
      if (options.num_phones > 1)
        while (phone == prev) phone = pick_phone(rng);
      segs.push_back({static_cast<double>(t) * kHopSeconds, static_cast<double>(d) * kHopSeconds,
                      "p" + std::to_string(phone)});
      prev = phone;
      t += d;
    }
    const VectorXd audio = synthesize_utterance(segs, options.num_phones, speaker, options.num_speakers, frames, rng);
    const auto path = wav_dir / (safe_file_stem(id) + ".wav");
    write_wav(path, audio);

    UtteranceRecord r;
    r.utterance_id = id;
    r.language = options.language;
    r.audio_path = std::filesystem::absolute(path);
    r.num_samples = audio.size();
    r.sample_rate = kSampleRate;
    r.set_speaker_id("spk" + std::to_string(speaker));
    corpus.manifest.records.push_back(std::move(r));
    corpus.reference[id] = std::move(segs);
    corpus.speakers.push_back(speaker);
  }
  save_manifest(corpus.manifest, dir / "manifest.jsonl");
  write_segments(corpus.reference, dir / "reference.seg");
  return corpus;
}

}  // namespace aud
