// aud/normalizer.hpp
//
// Corpus-level speaker normalization: every utterance is re-decoded from its
// own content embeddings with one shared target style, the style medoid of the
// corpus.

#ifndef AUD_NORMALIZER_HPP_
#define AUD_NORMALIZER_HPP_

#include "aud/dataio.hpp"
#include "aud/features.hpp"
#include "aud/fvae.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace aud {

struct StyleTable {
  std::string corpus;
  std::map<std::string, VectorXd> entries;
};

enum class ConversionMode {
  kVc,   // decode with the corpus medoid style
  kRec,  // decode with the utterance's own style
};

ConversionMode parse_conversion_mode(const std::string& s);
std::string to_string(ConversionMode mode);

// Produces the normalized 80-band input the FVAE expects for a record.
using VcFeatureSource = std::function<LogMelSpectrogram(const UtteranceRecord&)>;

// Reads audio, computes 80-band log-mel and applies the model's corpus
// statistics. Throws if the model carries no statistics.
VcFeatureSource audio_feature_source(const FactoredVae& model);

StyleTable extract_styles(const CorpusManifest& manifest, const FactoredVae& model,
                          const VcFeatureSource& source);
StyleTable extract_styles(const CorpusManifest& manifest, const FactoredVae& model);

// Id whose embedding has the smallest mean Euclidean distance to all entries
// (itself included). Ties go to the lexicographically smallest id.
std::string find_style_medoid(const StyleTable& table);

// feats: normalized 80-band log-mel. Returns the converted features in the
// same normalized domain, one frame per input frame.
MatrixXd convert_utterance(const MatrixXd& feats, const StyleEmbedding& target_style,
                           const FactoredVae& model, ConversionMode mode);

enum class ConversionRoute {
  kAudio,    // resynthesize with Griffin-Lim, recompute AUD features from audio
  kFeature,  // regroup converted 80-band log-mel into AUD features directly
};

ConversionRoute parse_conversion_route(const std::string& s);
std::string to_string(ConversionRoute route);

struct NormalizeOptions {
  std::filesystem::path output_dir;
  ConversionRoute route = ConversionRoute::kAudio;
  int griffin_lim_iterations = 60;
};

struct NormalizeReport {
  std::string medoid_id;  // empty in rec mode
  std::size_t converted = 0;
  std::size_t reused = 0;
  std::vector<std::pair<std::string, std::string>> failures;  // id, message
};

// Per-utterance cache layout inside output_dir:
//   <stem>.logmel80.feat  converted, denormalized 80-band log-mel
//   <stem>.wav            resynthesized audio (audio route)
//   <stem>.aud.feat       AUD features for the unit discovery stage
// Existing outputs are reused. Per-utterance failures are collected and the
// run continues.
NormalizeReport normalize_corpus(const CorpusManifest& manifest, const FactoredVae& model,
                                 ConversionMode mode, const NormalizeOptions& options,
                                 const VcFeatureSource& source);
NormalizeReport normalize_corpus(const CorpusManifest& manifest, const FactoredVae& model,
                                 ConversionMode mode, const NormalizeOptions& options);

std::filesystem::path converted_aud_path(const std::filesystem::path& dir, const std::string& utterance_id);

// Text format, one line per entry: utterance_id v_1 ... v_D
void save_style_table(const StyleTable& table, const std::filesystem::path& path);
StyleTable load_style_table(const std::filesystem::path& path);

struct MedoidRecord {
  std::string corpus;
  std::string medoid_id;
  std::string checkpoint_hash;  // hex FNV-1a 64 of the checkpoint file
};

std::string hash_file(const std::filesystem::path& path);
void save_medoid_record(const MedoidRecord& record, const std::filesystem::path& path);
MedoidRecord load_medoid_record(const std::filesystem::path& path);

}  // namespace aud

#endif  // AUD_NORMALIZER_HPP_
