// aud/dataio.hpp
//
// Corpus manifests (JSON lines), 16-bit PCM WAV I/O with resampling to 16 kHz,
// and language-homogeneous batching.

#ifndef AUD_DATAIO_HPP_
#define AUD_DATAIO_HPP_

#include "aud/common.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace aud {

// Counts reads of speaker labels. Training code must never read them; the
// test suite installs a scope around training entry points and checks the
// count stays zero.
class SpeakerAccessAudit {
 public:
  SpeakerAccessAudit();
  ~SpeakerAccessAudit();
  SpeakerAccessAudit(const SpeakerAccessAudit&) = delete;
  SpeakerAccessAudit& operator=(const SpeakerAccessAudit&) = delete;

  std::size_t accesses() const { return accesses_; }

  static void record_access();

 private:
  std::size_t accesses_ = 0;
  SpeakerAccessAudit* previous_ = nullptr;
};

class UtteranceRecord {
 public:
  UtteranceRecord() = default;
  UtteranceRecord(std::string utterance_id, std::string language,
                  std::optional<std::string> speaker_id,
                  std::filesystem::path audio_path, std::int64_t num_samples,
                  int sample_rate)
      : utterance_id(std::move(utterance_id)),
        language(std::move(language)),
        audio_path(std::move(audio_path)),
        num_samples(num_samples),
        sample_rate(sample_rate),
        speaker_id_(std::move(speaker_id)) {}

  std::string utterance_id;
  std::string language;
  std::filesystem::path audio_path;
  std::int64_t num_samples = 0;
  int sample_rate = kSampleRate;

  // Evaluation-only. Every read is reported to the active audit scope.
  const std::optional<std::string>& speaker_id() const {
    SpeakerAccessAudit::record_access();
    return speaker_id_;
  }
  void set_speaker_id(std::optional<std::string> id) { speaker_id_ = std::move(id); }

 private:
  std::optional<std::string> speaker_id_;
};

struct CorpusManifest {
  std::string name;
  std::vector<UtteranceRecord> records;
  std::set<std::string> language_set;

  const UtteranceRecord& find(const std::string& utterance_id) const;
};

using Batch = std::vector<UtteranceRecord>;

struct ManifestLoadOptions {
  // Check that every audio file exists and its header is readable.
  bool check_audio = true;
};

// One JSON object per line: utterance_id, language, speaker_id (nullable),
// audio_path, num_samples, sample_rate. Relative audio paths resolve against
// the manifest's directory. Blank lines are ignored.
CorpusManifest load_manifest(const std::filesystem::path& path,
                             const ManifestLoadOptions& options = {});
void save_manifest(const CorpusManifest& manifest, const std::filesystem::path& path);

// Validates an in-memory manifest (non-empty, unique ids, language set).
void validate_manifest(const CorpusManifest& manifest);

// Concatenates several manifests; utterance ids must stay unique.
CorpusManifest merge_manifests(const std::vector<CorpusManifest>& manifests,
                               const std::string& name);

std::vector<Batch> build_language_batches(const CorpusManifest& manifest,
                                          int batch_size, std::uint64_t seed);

// --- audio -----------------------------------------------------------------

struct WavInfo {
  int sample_rate = 0;
  int channels = 0;
  std::int64_t num_frames = 0;
};

WavInfo read_wav_info(const std::filesystem::path& path);

// Reads 16-bit PCM, downmixes to mono, scales to [-1, 1).
VectorXd read_wav(const std::filesystem::path& path, int* sample_rate = nullptr);

// Writes mono 16-bit PCM; samples are clipped to [-1, 1].
void write_wav(const std::filesystem::path& path, const VectorXd& samples,
               int sample_rate = kSampleRate);

// Polyphase windowed-sinc resampler for rational rate changes.
VectorXd resample(const VectorXd& samples, int from_rate, int to_rate);

// File-name-safe encoding of an utterance id (percent-escapes anything
// outside [A-Za-z0-9._-]).
std::string safe_file_stem(const std::string& id);

// Reads a record's audio and converts it to 16 kHz.
VectorXd load_audio_16k(const UtteranceRecord& record);

}  // namespace aud

#endif  // AUD_DATAIO_HPP_
