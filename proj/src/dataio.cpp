// src/dataio.cpp

#include "aud/dataio.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <unordered_set>

namespace aud {

namespace {
thread_local SpeakerAccessAudit* g_active_audit = nullptr;
}

SpeakerAccessAudit::SpeakerAccessAudit() : previous_(g_active_audit) {
  g_active_audit = this;
}

SpeakerAccessAudit::~SpeakerAccessAudit() { g_active_audit = previous_; }

void SpeakerAccessAudit::record_access() {
  for (auto* audit = g_active_audit; audit != nullptr; audit = audit->previous_)
    ++audit->accesses_;
}

const UtteranceRecord& CorpusManifest::find(const std::string& utterance_id) const {
  for (const auto& r : records)
    if (r.utterance_id == utterance_id) return r;
  throw Error("manifest " + name + ": no utterance " + utterance_id);
}

void validate_manifest(const CorpusManifest& manifest) {
  if (manifest.records.empty())
    throw Error("manifest " + manifest.name + " has no records");
  std::unordered_set<std::string> ids;
  for (const auto& r : manifest.records) {
    if (!ids.insert(r.utterance_id).second)
      throw Error("manifest " + manifest.name + ": duplicate utterance_id " +
                  r.utterance_id);
    if (!manifest.language_set.contains(r.language))
      throw Error("manifest " + manifest.name + ": language " + r.language +
                  " not in language set");
  }
}

CorpusManifest load_manifest(const std::filesystem::path& path,
                             const ManifestLoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  CorpusManifest manifest;
  manifest.name = path.stem().string();
  const auto base = path.parent_path();
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }))
      continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
    UtteranceRecord r;
    try {
      r.utterance_id = j.at("utterance_id").get<std::string>();
      r.language = j.at("language").get<std::string>();
      if (j.contains("speaker_id") && !j.at("speaker_id").is_null())
        r.set_speaker_id(j.at("speaker_id").get<std::string>());
      std::filesystem::path audio = j.at("audio_path").get<std::string>();
      r.audio_path = audio.is_absolute() ? audio : base / audio;
      r.num_samples = j.at("num_samples").get<std::int64_t>();
      r.sample_rate = j.at("sample_rate").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
    if (r.utterance_id.empty()) throw ParseError(path.string(), line_no, "empty utterance_id");
    if (r.sample_rate <= 0) throw ParseError(path.string(), line_no, "invalid sample_rate");
    if (!ids.insert(r.utterance_id).second)
      throw ParseError(path.string(), line_no, "duplicate utterance_id " + r.utterance_id);
    if (options.check_audio) {
      if (!std::filesystem::exists(r.audio_path))
        throw ParseError(path.string(), line_no, "missing audio file " + r.audio_path.string());
      try {
        read_wav_info(r.audio_path);
      } catch (const Error& e) {
        throw ParseError(path.string(), line_no,
                         "unreadable audio header for " + r.utterance_id + ": " + e.what());
      }
    }
    manifest.language_set.insert(r.language);
    manifest.records.push_back(std::move(r));
  }
  if (manifest.records.empty()) throw Error("manifest " + path.string() + " has no records");
  return manifest;
}

void save_manifest(const CorpusManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest " + path.string());
  for (const auto& r : manifest.records) {
    nlohmann::json j;
    j["utterance_id"] = r.utterance_id;
    j["language"] = r.language;
    const auto& speaker = r.speaker_id();
    j["speaker_id"] = speaker ? nlohmann::json(*speaker) : nlohmann::json(nullptr);
    j["audio_path"] = r.audio_path.string();
    j["num_samples"] = r.num_samples;
    j["sample_rate"] = r.sample_rate;
    out << j.dump() << '\n';
  }
}

CorpusManifest merge_manifests(const std::vector<CorpusManifest>& manifests,
                               const std::string& name) {
  CorpusManifest merged;
  merged.name = name;
  for (const auto& m : manifests) {
    merged.records.insert(merged.records.end(), m.records.begin(), m.records.end());
    merged.language_set.insert(m.language_set.begin(), m.language_set.end());
  }
  validate_manifest(merged);
  return merged;
}

std::vector<Batch> build_language_batches(const CorpusManifest& manifest,
                                          int batch_size, std::uint64_t seed) {
  if (batch_size < 2)
    throw Error("batch_size must be at least 2 for contrastive negatives, got " +
                std::to_string(batch_size));
  std::mt19937_64 rng(seed);
  std::map<std::string, std::vector<std::size_t>> by_language;
  for (std::size_t i = 0; i < manifest.records.size(); ++i)
    by_language[manifest.records[i].language].push_back(i);

  std::vector<Batch> batches;
  for (auto& [language, indices] : by_language) {
    std::shuffle(indices.begin(), indices.end(), rng);
    for (std::size_t start = 0; start < indices.size(); start += batch_size) {
      const std::size_t stop = std::min(indices.size(), start + batch_size);
      Batch batch;
      for (std::size_t k = start; k < stop; ++k) batch.push_back(manifest.records[indices[k]]);
      batches.push_back(std::move(batch));
    }
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

// --- WAV -------------------------------------------------------------------

namespace {

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return b[0] | (b[1] << 8) | (b[2] << 16) | (std::uint32_t(b[3]) << 24);
}

std::uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
                     char((v >> 24) & 0xff)};
  out.write(b, 4);
}

void write_u16(std::ostream& out, std::uint16_t v) {
  const char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
  out.write(b, 2);
}

struct WavLayout {
  WavInfo info;
  std::streamoff data_offset = 0;
};

WavLayout parse_wav_header(std::istream& in, const std::filesystem::path& path) {
  char tag[4];
  in.read(tag, 4);
  if (!in || std::string(tag, 4) != "RIFF") throw Error(path.string() + ": not a RIFF file");
  read_u32(in);
  in.read(tag, 4);
  if (!in || std::string(tag, 4) != "WAVE") throw Error(path.string() + ": not a WAVE file");
  WavLayout layout;
  bool have_fmt = false;
  while (in.read(tag, 4)) {
    const std::uint32_t size = read_u32(in);
    const std::string id(tag, 4);
    if (id == "fmt ") {
      const std::uint16_t format = read_u16(in);
      layout.info.channels = read_u16(in);
      layout.info.sample_rate = static_cast<int>(read_u32(in));
      read_u32(in);
      read_u16(in);
      const std::uint16_t bits = read_u16(in);
      if (format != 1 || bits != 16)
        throw Error(path.string() + ": only 16-bit PCM WAV is supported");
      if (layout.info.channels < 1) throw Error(path.string() + ": no channels");
      in.seekg(size - 16 + (size & 1), std::ios::cur);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw Error(path.string() + ": data chunk before fmt chunk");
      layout.data_offset = in.tellg();
      layout.info.num_frames = size / (2 * layout.info.channels);
      return layout;
    } else {
      in.seekg(size + (size & 1), std::ios::cur);
    }
  }
  throw Error(path.string() + ": no data chunk");
}

}  // namespace

WavInfo read_wav_info(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return parse_wav_header(in, path).info;
}

VectorXd read_wav(const std::filesystem::path& path, int* sample_rate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const WavLayout layout = parse_wav_header(in, path);
  const auto channels = layout.info.channels;
  std::vector<std::int16_t> raw(static_cast<std::size_t>(layout.info.num_frames * channels));
  in.seekg(layout.data_offset);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 2));
  if (!in) throw Error(path.string() + ": truncated data chunk");
  VectorXd out(layout.info.num_frames);
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) acc += raw[i * channels + c];
    out[i] = acc / channels / 32768.0;
  }
  if (sample_rate != nullptr) *sample_rate = layout.info.sample_rate;
  return out;
}

void write_wav(const std::filesystem::path& path, const VectorXd& samples, int sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  out.write("RIFF", 4);
  write_u32(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  write_u32(out, 16);
  write_u16(out, 1);
  write_u16(out, 1);
  write_u32(out, static_cast<std::uint32_t>(sample_rate));
  write_u32(out, static_cast<std::uint32_t>(sample_rate * 2));
  write_u16(out, 2);
  write_u16(out, 16);
  out.write("data", 4);
  write_u32(out, data_bytes);
  for (Eigen::Index i = 0; i < samples.size(); ++i) {
    const double clipped = std::clamp(samples[i], -1.0, 1.0);
    const auto v = static_cast<std::int16_t>(std::lround(std::clamp(clipped * 32768.0, -32768.0, 32767.0)));
    write_u16(out, static_cast<std::uint16_t>(v));
  }
}

VectorXd resample(const VectorXd& samples, int from_rate, int to_rate) {
  if (from_rate <= 0 || to_rate <= 0) throw Error("invalid sample rate");
  if (from_rate == to_rate) return samples;
  const int g = std::gcd(from_rate, to_rate);
  const int up = to_rate / g;
  const int down = from_rate / g;
  // Cutoff relative to the input Nyquist rate.
  const double cutoff = std::min(1.0, static_cast<double>(up) / down);
  constexpr int kZeroCrossings = 16;
  const int half_width = static_cast<int>(std::ceil(kZeroCrossings / cutoff));

  // One filter per output phase; phase p has fractional input offset p*down/up.
  std::vector<std::vector<double>> phases(up);
  for (int p = 0; p < up; ++p) {
    const double frac = std::fmod(static_cast<double>(p) * down, up) / up;
    auto& taps = phases[p];
    taps.resize(2 * half_width + 1);
    for (int k = -half_width; k <= half_width; ++k) {
      const double x = frac - k;  // distance between output time and input sample
      const double arg = cutoff * x;
      const double sinc = std::abs(arg) < 1e-12 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
      const double w = std::abs(x) >= half_width ? 0.0
                                                 : 0.5 * (1.0 + std::cos(std::numbers::pi * x / half_width));
      taps[k + half_width] = cutoff * sinc * w;
    }
  }
  const auto out_len = static_cast<Eigen::Index>(
      (static_cast<std::int64_t>(samples.size()) * up) / down);
  VectorXd out(out_len);
  for (Eigen::Index n = 0; n < out_len; ++n) {
    const std::int64_t num = n * static_cast<std::int64_t>(down);
    const std::int64_t base = num / up;
    const auto& taps = phases[n % up];
    double acc = 0.0;
    for (int k = -half_width; k <= half_width; ++k) {
      const std::int64_t idx = base + k;
      if (idx < 0 || idx >= samples.size()) continue;
      acc += taps[k + half_width] * samples[idx];
    }
    out[n] = acc;
  }
  return out;
}

std::string safe_file_stem(const std::string& id) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : id) {
    if (std::isalnum(c) || c == '.' || c == '_' || c == '-') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 15]);
    }
  }
  if (out.empty() || out[0] == '.') out.insert(out.begin(), '_');
  return out;
}

VectorXd load_audio_16k(const UtteranceRecord& record) {
  int rate = 0;
  VectorXd audio;
  try {
    audio = read_wav(record.audio_path, &rate);
  } catch (const Error& e) {
    throw Error("utterance " + record.utterance_id + ": " + e.what());
  }
  return resample(audio, rate, kSampleRate);
}

}  // namespace aud
