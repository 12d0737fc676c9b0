// aud/pipeline.hpp
//
// Experiment configuration and the staged AUD experiment:
//
//   features -> FVAE training -> speaker normalization -> HMMVAE -> evaluation
//
// Each seed gets its own directory under <run_dir>/<language>-<condition>/.
// Stage outputs are written atomically and marked with a `<stage>.done` file;
// a rerun skips every marked stage.

#ifndef AUD_PIPELINE_HPP_
#define AUD_PIPELINE_HPP_

#include "aud/dataio.hpp"
#include "aud/features.hpp"
#include "aud/fvae.hpp"
#include "aud/hmmvae.hpp"
#include "aud/metrics.hpp"
#include "aud/normalizer.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace aud {

// Defaults of the reference setup.
inline constexpr int kDefaultSeedCount = 5;
inline constexpr int kDefaultBatchSize = 16;
inline constexpr int kDefaultPretrainIterations = 2000;
inline constexpr int kDefaultTrainIterations = 20000;
inline constexpr int kDefaultGriffinLimIterations = 60;
// Not fixed by the reference setup; a smoke-scale default.
inline constexpr int kDefaultFvaeSteps = 500;

enum class InputCondition {
  kClean,  // original AUD features
  kRec,    // FVAE reconstruction with the utterance's own style
  kVc,     // FVAE conversion to the corpus medoid style
};

InputCondition parse_input_condition(const std::string& s);
std::string to_string(InputCondition condition);

struct ExperimentConfig {
  std::string language = "en";
  std::string model_name = "HMMVAE";
  InputCondition condition = InputCondition::kVc;
  ConversionRoute route = ConversionRoute::kAudio;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::filesystem::path run_dir = "runs";

  // Corpora pooled for FVAE training.
  std::vector<std::filesystem::path> vc_manifests;
  // Target-language corpus for AUD and its reference phone alignments.
  std::filesystem::path aud_manifest;
  std::filesystem::path reference;
  // Pretrained FVAE; when set, FVAE training is skipped.
  std::filesystem::path fvae_checkpoint;

  FvaeConfig fvae;
  FvaeTrainOptions fvae_train;
  int griffin_lim_iterations = kDefaultGriffinLimIterations;

  HmmVaeConfig hmmvae;
  int pretrain_iterations = kDefaultPretrainIterations;
  int train_iterations = kDefaultTrainIterations;

  BoundaryOptions boundary;

  void validate() const;
  bool needs_fvae() const { return condition != InputCondition::kClean; }
};

// Flat `section.key = value` lines; `#` starts a comment. Relative paths
// resolve against `base_dir`.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {},
                              const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);
// Applies one `section.key` assignment; throws on an unknown key.
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value,
                      const std::filesystem::path& base_dir = {});
std::string config_to_text(const ExperimentConfig& config);

// --- stages ------------------------------------------------------------------

// Copies records into `output_dir` as 16 kHz WAV when they are at another
// rate; 16 kHz records keep their audio path.
CorpusManifest ingest_corpus(const CorpusManifest& manifest, const std::filesystem::path& output_dir);

// Raw 80-band log-mel of every record, cached as `<stem>.logmel80.feat`.
std::vector<LogMelSpectrogram> vc_features(const CorpusManifest& manifest, const std::filesystem::path& cache_dir);

// Trains an FVAE on the pooled manifests and writes `checkpoint`. With
// `resume`, training continues from `<checkpoint>.state` when present.
void train_vc(const ExperimentConfig& config, const CorpusManifest& pooled, std::uint64_t seed,
              const std::filesystem::path& checkpoint, const std::filesystem::path& cache_dir, bool resume);

// AUD features of the target corpus for the condition. Clean features come
// from the original audio; rec and vc features are read from `converted_dir`.
std::vector<LogMelSpectrogram> aud_features(const CorpusManifest& manifest, InputCondition condition,
                                            const std::filesystem::path& converted_dir);

void train_aud(const ExperimentConfig& config, const std::vector<LogMelSpectrogram>& feats, std::uint64_t seed,
               const std::filesystem::path& checkpoint);

struct MetricsRecord {
  std::string language;
  std::string model;
  std::string input;
  std::uint64_t seed = 0;
  EvaluationResult result;
};

void save_metrics(const MetricsRecord& record, const std::filesystem::path& path);
MetricsRecord load_metrics(const std::filesystem::path& path);

// --- experiment ----------------------------------------------------------------

struct RunOptions {
  bool resume = false;
};

struct SeedRun {
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  MetricsRecord metrics;
  std::vector<std::string> skipped_stages;
};

std::filesystem::path condition_dir(const ExperimentConfig& config);
std::filesystem::path seed_dir(const ExperimentConfig& config, std::uint64_t seed);

enum class Stage { kTrainVc, kConvert, kTrainAud, kDecode, kEvaluate };

std::string to_string(Stage stage);

// Stages of the configured condition, in order. Clean runs have no FVAE
// stages; a configured pretrained FVAE drops train-vc.
std::vector<Stage> stages_for(const ExperimentConfig& config);

std::filesystem::path fvae_checkpoint_for(const ExperimentConfig& config, std::uint64_t seed);

// Runs one stage for one seed unless its marker exists; returns whether it ran.
bool run_stage(const ExperimentConfig& config, std::uint64_t seed, Stage stage, const RunOptions& options = {});

std::vector<SeedRun> run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

// --- report ----------------------------------------------------------------------

struct ReportRow {
  std::string language;
  std::string model;
  std::string input;
  std::vector<MetricsRecord> runs;

  struct Stat {
    double mean = 0.0;
    std::optional<double> stddev;  // sample standard deviation, absent for one run
  };
  Stat nmi() const;
  Stat purity() const;
  Stat bfs() const;
};

// Collects every metrics.json below the given directories.
std::vector<ReportRow> collect_report(const std::vector<std::filesystem::path>& run_dirs);

std::string format_report_text(const std::vector<ReportRow>& rows);
std::string format_report_json(const std::vector<ReportRow>& rows);
// One bar per seed and row for the given metric ("nmi", "purity" or "bfs").
std::string per_seed_bar_plot(const std::vector<ReportRow>& rows, const std::string& metric);

// Writes report.txt, report.json and one SVG per metric into `output_dir`.
void write_report(const std::vector<ReportRow>& rows, const std::filesystem::path& output_dir);

ReportRow::Stat summarize(const std::vector<double>& values);

}  // namespace aud

#endif  // AUD_PIPELINE_HPP_
