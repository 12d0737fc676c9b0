// aud/synthetic.hpp
//
// Synthetic speech-like corpora for smoke runs: each "phone" is a fixed set
// of sinusoidal resonances over a noise floor, and each pseudo-speaker applies
// its own first-order spectral tilt to the shared phone inventory. Reference
// alignments are exact on the 10 ms frame grid.

#ifndef AUD_SYNTHETIC_HPP_
#define AUD_SYNTHETIC_HPP_

#include "aud/dataio.hpp"
#include "aud/segments.hpp"

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace aud {

struct SyntheticCorpusOptions {
  std::string name = "synthetic";
  std::string language = "en";
  int num_utterances = 10;
  double seconds = 1.0;
  int num_phones = 4;
  int num_speakers = 2;
  int min_phone_frames = 6;
  int max_phone_frames = 15;
  std::uint64_t seed = 0;
};

struct SyntheticCorpus {
  CorpusManifest manifest;
  SegmentTable reference;
  std::vector<int> speakers;  // per record
};

// Pre-emphasis coefficient of a pseudo-speaker's tilt filter.
double synthetic_speaker_tilt(int speaker, int num_speakers);

// One utterance of the given phone segments, `frames` x 10 ms long.
VectorXd synthesize_utterance(const std::vector<TimedSegment>& segments, int num_phones, int speaker,
                              int num_speakers, Eigen::Index frames, std::mt19937_64& rng);

// Writes <dir>/wav/*.wav, <dir>/manifest.jsonl and <dir>/reference.seg.
SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusOptions& options, const std::filesystem::path& dir);

}  // namespace aud

#endif  // AUD_SYNTHETIC_HPP_
