// src/pipeline.cpp

#include "aud/pipeline.hpp"

#include "aud/log.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace aud {

namespace fs = std::filesystem;
using json = nlohmann::json;

InputCondition parse_input_condition(const std::string& s) {
  if (s == "clean") return InputCondition::kClean;
  if (s == "rec") return InputCondition::kRec;
  if (s == "vc") return InputCondition::kVc;
  throw Error("unknown input condition '" + s + "' (expected clean, rec or vc)");
}

std::string to_string(InputCondition condition) {
  switch (condition) {
    case InputCondition::kClean: return "clean";
    case InputCondition::kRec: return "rec";
    case InputCondition::kVc: return "vc";
  }
  return "?";
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw Error("config: at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw Error("config: seeds must be distinct");
  if (aud_manifest.empty()) throw Error("config: data.aud_manifest is required");
  if (reference.empty()) throw Error("config: data.reference is required");
  if (needs_fvae() && vc_manifests.empty() && fvae_checkpoint.empty())
    throw Error("config: condition " + to_string(condition) +
                " needs an FVAE (data.vc_manifests or data.fvae_checkpoint)");
  if (language.empty()) throw Error("config: experiment.language is empty");
  if (fvae_train.batch_size < 2) throw Error("config: fvae.batch_size must be at least 2");
  if (pretrain_iterations < 0 || train_iterations < 0) throw Error("config: iteration counts must be >= 0");
  fvae.validate();
  hmmvae.validate();
}

// --- config parsing ------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int to_int(const std::string& v) {
  std::size_t pos = 0;
  const int out = std::stoi(v, &pos);
  if (pos != v.size()) throw Error("not an integer: " + v);
  return out;
}

double to_double(const std::string& v) {
  std::size_t pos = 0;
  const double out = std::stod(v, &pos);
  if (pos != v.size()) throw Error("not a number: " + v);
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error("not a boolean: " + v);
}

fs::path to_path(const std::string& v, const fs::path& base) {
  fs::path p(v);
  if (p.is_relative() && !base.empty()) p = base / p;
  return p;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const fs::path&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"experiment.language", [](auto& c, const auto& v, const auto&) { c.language = v; }},
      {"experiment.model", [](auto& c, const auto& v, const auto&) { c.model_name = v; }},
      {"experiment.condition", [](auto& c, const auto& v, const auto&) { c.condition = parse_input_condition(v); }},
      {"experiment.route", [](auto& c, const auto& v, const auto&) { c.route = parse_conversion_route(v); }},
      {"experiment.seeds",
       [](auto& c, const auto& v, const auto&) {
         c.seeds.clear();
         for (const auto& s : split_list(v)) c.seeds.push_back(std::stoull(s));
       }},
      {"experiment.run_dir", [](auto& c, const auto& v, const auto& b) { c.run_dir = to_path(v, b); }},
      {"data.vc_manifests",
       [](auto& c, const auto& v, const auto& b) {
         c.vc_manifests.clear();
         for (const auto& s : split_list(v)) c.vc_manifests.push_back(to_path(s, b));
       }},
      {"data.aud_manifest", [](auto& c, const auto& v, const auto& b) { c.aud_manifest = to_path(v, b); }},
      {"data.reference", [](auto& c, const auto& v, const auto& b) { c.reference = to_path(v, b); }},
      {"data.fvae_checkpoint", [](auto& c, const auto& v, const auto& b) { c.fvae_checkpoint = to_path(v, b); }},
      {"fvae.hidden_channels", [](auto& c, const auto& v, const auto&) { c.fvae.hidden_channels = to_int(v); }},
      {"fvae.content_dim", [](auto& c, const auto& v, const auto&) { c.fvae.content_dim = to_int(v); }},
      {"fvae.style_dim", [](auto& c, const auto& v, const auto&) { c.fvae.style_dim = to_int(v); }},
      {"fvae.cpc_dim", [](auto& c, const auto& v, const auto&) { c.fvae.cpc_dim = to_int(v); }},
      {"fvae.beta", [](auto& c, const auto& v, const auto&) { c.fvae.beta = to_double(v); }},
      {"fvae.lambda", [](auto& c, const auto& v, const auto&) { c.fvae.lambda = to_double(v); }},
      {"fvae.lookahead_seconds", [](auto& c, const auto& v, const auto&) { c.fvae.lookahead_seconds = to_double(v); }},
      {"fvae.learning_rate", [](auto& c, const auto& v, const auto&) { c.fvae.learning_rate = to_double(v); }},
      {"fvae.grad_clip", [](auto& c, const auto& v, const auto&) { c.fvae.grad_clip = to_double(v); }},
      {"fvae.steps", [](auto& c, const auto& v, const auto&) { c.fvae_train.steps = to_int(v); }},
      {"fvae.batch_size", [](auto& c, const auto& v, const auto&) { c.fvae_train.batch_size = to_int(v); }},
      {"fvae.crop_frames", [](auto& c, const auto& v, const auto&) { c.fvae_train.crop_frames = to_int(v); }},
      {"fvae.log_every", [](auto& c, const auto& v, const auto&) { c.fvae_train.log_every = to_int(v); }},
      {"normalizer.griffin_lim_iterations",
       [](auto& c, const auto& v, const auto&) { c.griffin_lim_iterations = to_int(v); }},
      {"hmmvae.latent_dim", [](auto& c, const auto& v, const auto&) { c.hmmvae.latent_dim = to_int(v); }},
      {"hmmvae.hidden_channels", [](auto& c, const auto& v, const auto&) { c.hmmvae.hidden_channels = to_int(v); }},
      {"hmmvae.num_units", [](auto& c, const auto& v, const auto&) { c.hmmvae.num_units = to_int(v); }},
      {"hmmvae.states_per_unit", [](auto& c, const auto& v, const auto&) { c.hmmvae.states_per_unit = to_int(v); }},
      {"hmmvae.observation_variance",
       [](auto& c, const auto& v, const auto&) { c.hmmvae.observation_variance = to_double(v); }},
      {"hmmvae.learn_unit_transitions",
       [](auto& c, const auto& v, const auto&) { c.hmmvae.learn_unit_transitions = to_bool(v); }},
      {"hmmvae.learning_rate", [](auto& c, const auto& v, const auto&) { c.hmmvae.learning_rate = to_double(v); }},
      {"hmmvae.grad_clip", [](auto& c, const auto& v, const auto&) { c.hmmvae.grad_clip = to_double(v); }},
      {"hmmvae.batch_size", [](auto& c, const auto& v, const auto&) { c.hmmvae.batch_size = to_int(v); }},
      {"hmmvae.min_duration", [](auto& c, const auto& v, const auto&) { c.hmmvae.min_duration = to_int(v); }},
      {"hmmvae.max_duration", [](auto& c, const auto& v, const auto&) { c.hmmvae.max_duration = to_int(v); }},
      {"hmmvae.initial_mean_scale",
       [](auto& c, const auto& v, const auto&) { c.hmmvae.initial_mean_scale = to_double(v); }},
      {"hmmvae.pretrain_iterations", [](auto& c, const auto& v, const auto&) { c.pretrain_iterations = to_int(v); }},
      {"hmmvae.train_iterations", [](auto& c, const auto& v, const auto&) { c.train_iterations = to_int(v); }},
      {"metrics.collar", [](auto& c, const auto& v, const auto&) { c.boundary.collar = to_double(v); }},
      {"metrics.include_edges", [](auto& c, const auto& v, const auto&) { c.boundary.include_edges = to_bool(v); }},
      {"metrics.matching",
       [](auto& c, const auto& v, const auto&) {
         if (v == "maximal") c.boundary.matching = BoundaryMatching::kMaximal;
         else if (v == "nearest") c.boundary.matching = BoundaryMatching::kNearest;
         else throw Error("unknown boundary matching '" + v + "'");
       }},
  };
  return table;
}

}  // namespace

void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value,
                      const fs::path& base_dir) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw Error("unknown config key '" + key + "'");
  try {
    it->second(config, value, base_dir);
  } catch (const std::invalid_argument&) {
    throw Error("bad value for " + key + ": '" + value + "'");
  } catch (const std::out_of_range&) {
    throw Error("value out of range for " + key + ": '" + value + "'");
  }
}

ExperimentConfig parse_config(const std::string& text, const fs::path& base_dir, const std::string& source) {
  ExperimentConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(source, line_no, "expected 'section.key = value'");
    try {
      set_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), base_dir);
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(source, line_no, e.what());
    }
  }
  return config;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path(), path.string());
}

std::string config_to_text(const ExperimentConfig& c) {
  std::ostringstream out;
  out << std::setprecision(17);
  auto paths = [](const std::vector<fs::path>& ps) {
    std::string s;
    for (const auto& p : ps) s += (s.empty() ? "" : ",") + p.string();
    return s;
  };
  std::string seeds;
  for (const auto s : c.seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
  out << "experiment.language = " << c.language << '\n'
      << "experiment.model = " << c.model_name << '\n'
      << "experiment.condition = " << to_string(c.condition) << '\n'
      << "experiment.route = " << to_string(c.route) << '\n'
      << "experiment.seeds = " << seeds << '\n'
      << "experiment.run_dir = " << c.run_dir.string() << '\n'
      << "data.vc_manifests = " << paths(c.vc_manifests) << '\n'
      << "data.aud_manifest = " << c.aud_manifest.string() << '\n'
      << "data.reference = " << c.reference.string() << '\n';
  if (!c.fvae_checkpoint.empty()) out << "data.fvae_checkpoint = " << c.fvae_checkpoint.string() << '\n';
  out << "fvae.hidden_channels = " << c.fvae.hidden_channels << '\n'
      << "fvae.content_dim = " << c.fvae.content_dim << '\n'
      << "fvae.style_dim = " << c.fvae.style_dim << '\n'
      << "fvae.cpc_dim = " << c.fvae.cpc_dim << '\n'
      << "fvae.beta = " << c.fvae.beta << '\n'
      << "fvae.lambda = " << c.fvae.lambda << '\n'
      << "fvae.lookahead_seconds = " << c.fvae.lookahead_seconds << '\n'
      << "fvae.learning_rate = " << c.fvae.learning_rate << '\n'
      << "fvae.grad_clip = " << c.fvae.grad_clip << '\n'
      << "fvae.steps = " << c.fvae_train.steps << '\n'
      << "fvae.batch_size = " << c.fvae_train.batch_size << '\n'
      << "fvae.crop_frames = " << c.fvae_train.crop_frames << '\n'
      << "fvae.log_every = " << c.fvae_train.log_every << '\n'
      << "normalizer.griffin_lim_iterations = " << c.griffin_lim_iterations << '\n'
      << "hmmvae.latent_dim = " << c.hmmvae.latent_dim << '\n'
      << "hmmvae.hidden_channels = " << c.hmmvae.hidden_channels << '\n'
      << "hmmvae.num_units = " << c.hmmvae.num_units << '\n'
      << "hmmvae.states_per_unit = " << c.hmmvae.states_per_unit << '\n'
      << "hmmvae.observation_variance = " << c.hmmvae.observation_variance << '\n'
      << "hmmvae.learn_unit_transitions = " << (c.hmmvae.learn_unit_transitions ? "true" : "false") << '\n'
      << "hmmvae.learning_rate = " << c.hmmvae.learning_rate << '\n'
      << "hmmvae.grad_clip = " << c.hmmvae.grad_clip << '\n'
      << "hmmvae.batch_size = " << c.hmmvae.batch_size << '\n'
      << "hmmvae.min_duration = " << c.hmmvae.min_duration << '\n'
      << "hmmvae.max_duration = " << c.hmmvae.max_duration << '\n'
      << "hmmvae.initial_mean_scale = " << c.hmmvae.initial_mean_scale << '\n'
      << "hmmvae.pretrain_iterations = " << c.pretrain_iterations << '\n'
      << "hmmvae.train_iterations = " << c.train_iterations << '\n'
      << "metrics.collar = " << c.boundary.collar << '\n'
      << "metrics.include_edges = " << (c.boundary.include_edges ? "true" : "false") << '\n'
      << "metrics.matching = " << (c.boundary.matching == BoundaryMatching::kMaximal ? "maximal" : "nearest")
      << '\n';
  return out.str();
}

// --- stages ------------------------------------------------------------------

CorpusManifest ingest_corpus(const CorpusManifest& manifest, const fs::path& output_dir) {
  validate_manifest(manifest);
  CorpusManifest out = manifest;
  for (auto& record : out.records) {
    if (record.sample_rate == kSampleRate) continue;
    fs::create_directories(output_dir);
    const VectorXd audio = load_audio_16k(record);
    const fs::path dest = output_dir / (safe_file_stem(record.utterance_id) + ".wav");
    write_wav(dest, audio, kSampleRate);
    record.audio_path = fs::absolute(dest);
    record.num_samples = audio.size();
    record.sample_rate = kSampleRate;
  }
  return out;
}

std::vector<LogMelSpectrogram> vc_features(const CorpusManifest& manifest, const fs::path& cache_dir) {
  fs::create_directories(cache_dir);
  std::vector<LogMelSpectrogram> out;
  out.reserve(manifest.records.size());
  for (const auto& record : manifest.records) {
    const fs::path path = cache_dir / (safe_file_stem(record.utterance_id) + ".logmel80.feat");
    if (fs::exists(path)) {
      out.push_back(load_features(path));
      continue;
    }
    LogMelSpectrogram f = compute_logmel_vc(load_audio_16k(record));
    f.utterance_id = record.utterance_id;
    const auto tmp = path.string() + ".tmp";
    save_features(f, tmp);
    fs::rename(tmp, path);
    out.push_back(std::move(f));
  }
  return out;
}

void train_vc(const ExperimentConfig& config, const CorpusManifest& pooled, std::uint64_t seed,
              const fs::path& checkpoint, const fs::path& cache_dir, bool resume) {
  const auto raw = vc_features(pooled, cache_dir);
  const CorpusNormStats stats = compute_norm_stats(raw);
  std::map<std::string, LogMelSpectrogram> normalized;
  for (const auto& f : raw) normalized.emplace(f.utterance_id, normalize_per_band(f, stats));

  std::vector<std::vector<LogMelSpectrogram>> batches;
  for (const auto& batch : build_language_batches(pooled, config.fvae_train.batch_size, seed)) {
    auto& feats = batches.emplace_back();
    for (const auto& record : batch) feats.push_back(normalized.at(record.utterance_id));
  }

  const fs::path state = checkpoint.string() + ".state";
  std::optional<FvaeTrainer> trainer;
  if (resume && fs::exists(state)) {
    trainer.emplace(FvaeTrainer::load(state));
    AUD_INFO("resuming FVAE training at step " << trainer->steps());
  } else {
    FactoredVae model(config.fvae, seed);
    model.norm_stats = stats;
    trainer.emplace(std::move(model), seed);
  }
  FvaeTrainOptions options = config.fvae_train;
  options.seed = seed;
  options.steps = std::max<int>(0, config.fvae_train.steps - static_cast<int>(trainer->steps()));
  constexpr std::int64_t kStateEvery = 100;
  train_fvae(*trainer, batches, options, [&](std::int64_t step, const FvaeStepResult&) {
    if (step % kStateEvery == 0) trainer->save(state);
  });
  const auto tmp = checkpoint.string() + ".tmp";
  save_fvae(trainer->model(), tmp);
  fs::rename(tmp, checkpoint);
  fs::remove(state);
}

std::vector<LogMelSpectrogram> aud_features(const CorpusManifest& manifest, InputCondition condition,
                                            const fs::path& converted_dir) {
  std::vector<LogMelSpectrogram> out;
  out.reserve(manifest.records.size());
  for (const auto& record : manifest.records) {
    LogMelSpectrogram f;
    if (condition == InputCondition::kClean) {
      f = compute_logmel_aud(load_audio_16k(record));
    } else {
      const fs::path path = converted_aud_path(converted_dir, record.utterance_id);
      if (!fs::exists(path)) throw Error("no converted features for " + record.utterance_id + " in " +
                                         converted_dir.string());
      f = load_features(path);
    }
    f.utterance_id = record.utterance_id;
    out.push_back(std::move(f));
  }
  return out;
}

void train_aud(const ExperimentConfig& config, const std::vector<LogMelSpectrogram>& feats, std::uint64_t seed,
               const fs::path& checkpoint) {
  HmmVaeTrainer trainer(HmmVae(config.hmmvae, seed), seed + 1);
  HmmVaeTrainOptions options;
  options.seed = seed;
  options.iterations = config.pretrain_iterations;
  pretrain_random_alignments(trainer, feats, options);
  options.iterations = config.train_iterations;
  train_hmmvae(trainer, feats, options);
  const auto tmp = checkpoint.string() + ".tmp";
  trainer.model().save(tmp);
  fs::rename(tmp, checkpoint);
}

void save_metrics(const MetricsRecord& record, const fs::path& path) {
  const auto& r = record.result;
  json j = {{"language", record.language},
            {"model", record.model},
            {"input", record.input},
            {"seed", record.seed},
            {"nmi", r.nmi},
            {"purity", r.purity},
            {"bfs", r.boundary.fscore},
            {"boundary_precision", r.boundary.precision},
            {"boundary_recall", r.boundary.recall},
            {"boundary_matches", r.boundary.matches},
            {"boundary_hyp", r.boundary.num_hyp},
            {"boundary_ref", r.boundary.num_ref},
            {"frames", r.frames}};
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

MetricsRecord load_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    const json j = json::parse(in);
    MetricsRecord m;
    m.language = j.at("language").get<std::string>();
    m.model = j.at("model").get<std::string>();
    m.input = j.at("input").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.result.nmi = j.at("nmi").get<double>();
    m.result.purity = j.at("purity").get<double>();
    m.result.boundary.fscore = j.at("bfs").get<double>();
    m.result.boundary.precision = j.value("boundary_precision", 0.0);
    m.result.boundary.recall = j.value("boundary_recall", 0.0);
    m.result.boundary.matches = j.value("boundary_matches", std::int64_t{0});
    m.result.boundary.num_hyp = j.value("boundary_hyp", std::int64_t{0});
    m.result.boundary.num_ref = j.value("boundary_ref", std::int64_t{0});
    m.result.frames = j.value("frames", std::int64_t{0});
    return m;
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

// --- experiment ----------------------------------------------------------------

fs::path condition_dir(const ExperimentConfig& config) {
  return config.run_dir / (config.language + "-" + to_string(config.condition));
}

fs::path seed_dir(const ExperimentConfig& config, std::uint64_t seed) {
  return condition_dir(config) / ("seed-" + std::to_string(seed));
}

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::kTrainVc: return "train-vc";
    case Stage::kConvert: return "convert";
    case Stage::kTrainAud: return "train-aud";
    case Stage::kDecode: return "decode";
    case Stage::kEvaluate: return "evaluate";
  }
  return "?";
}

std::vector<Stage> stages_for(const ExperimentConfig& config) {
  std::vector<Stage> out;
  if (config.needs_fvae()) {
    if (config.fvae_checkpoint.empty()) out.push_back(Stage::kTrainVc);
    out.push_back(Stage::kConvert);
  }
  out.insert(out.end(), {Stage::kTrainAud, Stage::kDecode, Stage::kEvaluate});
  return out;
}

fs::path fvae_checkpoint_for(const ExperimentConfig& config, std::uint64_t seed) {
  if (!config.fvae_checkpoint.empty()) return config.fvae_checkpoint;
  return seed_dir(config, seed) / "fvae.ckpt";
}

namespace {

CorpusManifest pooled_vc_corpus(const ExperimentConfig& config) {
  std::vector<CorpusManifest> manifests;
  for (const auto& p : config.vc_manifests) manifests.push_back(load_manifest(p));
  return merge_manifests(manifests, "vc-pool");
}

void require_file(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) throw Error(path.string() + " is missing; run " + producer + " first");
}

void execute_stage(const ExperimentConfig& config, std::uint64_t seed, Stage stage, const RunOptions& options) {
  const fs::path dir = seed_dir(config, seed);
  const fs::path converted = dir / "converted";
  const fs::path hmm_path = dir / "hmmvae.ckpt";
  const fs::path units_path = dir / "units.seg";
  switch (stage) {
    case Stage::kTrainVc: {
      if (!config.needs_fvae()) throw Error("condition clean uses no FVAE");
      if (!config.fvae_checkpoint.empty()) throw Error("a pretrained FVAE is configured; nothing to train");
      train_vc(config, pooled_vc_corpus(config), seed, dir / "fvae.ckpt", config.run_dir / "cache" / "vc",
               options.resume);
      return;
    }
    case Stage::kConvert: {
      if (!config.needs_fvae()) throw Error("condition clean has no conversion stage");
      const fs::path fvae_path = fvae_checkpoint_for(config, seed);
      require_file(fvae_path, "train-vc");
      const CorpusManifest target = load_manifest(config.aud_manifest);
      const FactoredVae model = load_fvae(fvae_path);
      NormalizeOptions nopts;
      nopts.output_dir = converted;
      nopts.route = config.route;
      nopts.griffin_lim_iterations = config.griffin_lim_iterations;
      const auto mode = config.condition == InputCondition::kVc ? ConversionMode::kVc : ConversionMode::kRec;
      const auto report = normalize_corpus(target, model, mode, nopts);
      if (!report.failures.empty())
        throw Error(std::to_string(report.failures.size()) + " utterance(s) failed conversion, first " +
                    report.failures.front().first + ": " + report.failures.front().second);
      if (mode == ConversionMode::kVc)
        save_medoid_record({target.name, report.medoid_id, hash_file(fvae_path)}, dir / "medoid.json");
      return;
    }
    case Stage::kTrainAud: {
      const CorpusManifest target = load_manifest(config.aud_manifest);
      train_aud(config, aud_features(target, config.condition, converted), seed, hmm_path);
      return;
    }
    case Stage::kDecode: {
      require_file(hmm_path, "train-aud");
      const CorpusManifest target = load_manifest(config.aud_manifest);
      const auto feats = aud_features(target, config.condition, converted);
      const auto tmp = units_path.string() + ".tmp";
      write_segments(decode_to_units(HmmVae::load(hmm_path), feats), tmp);
      fs::rename(tmp, units_path);
      return;
    }
    case Stage::kEvaluate: {
      require_file(units_path, "decode");
      MetricsRecord m;
      m.language = config.language;
      m.model = config.model_name;
      m.input = to_string(config.condition);
      m.seed = seed;
      m.result = evaluate_transcriptions(read_segments(units_path), read_segments(config.reference), config.boundary);
      save_metrics(m, dir / "metrics.json");
      return;
    }
  }
}

}  // namespace

bool run_stage(const ExperimentConfig& config, std::uint64_t seed, Stage stage, const RunOptions& options) {
  const fs::path dir = seed_dir(config, seed);
  fs::create_directories(dir);
  const fs::path marker = dir / (to_string(stage) + ".done");
  if (fs::exists(marker)) return false;
  AUD_INFO("stage " << to_string(stage) << " in " << dir.string());
  try {
    execute_stage(config, seed, stage, options);
  } catch (const std::exception& e) {
    throw Error("stage " + to_string(stage) + " failed in " + dir.string() + ": " + e.what());
  }
  std::ofstream(marker) << "ok\n";
  return true;
}

std::vector<SeedRun> run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  fs::create_directories(condition_dir(config));
  std::ofstream(condition_dir(config) / "config.txt") << config_to_text(config);
  std::vector<SeedRun> runs;
  for (const auto seed : config.seeds) {
    SeedRun run;
    run.seed = seed;
    run.dir = seed_dir(config, seed);
    for (const Stage stage : stages_for(config))
      if (!run_stage(config, seed, stage, options)) run.skipped_stages.push_back(to_string(stage));
    run.metrics = load_metrics(run.dir / "metrics.json");
    runs.push_back(std::move(run));
  }
  return runs;
}

// --- report ----------------------------------------------------------------------

ReportRow::Stat summarize(const std::vector<double>& values) {
  ReportRow::Stat s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  for (const double v : values) s.mean += v;
  s.mean /= n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (const double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

namespace {

template <typename Get>
ReportRow::Stat row_stat(const ReportRow& row, Get get) {
  std::vector<double> v;
  for (const auto& r : row.runs) v.push_back(get(r));
  return summarize(v);
}

double metric_value(const MetricsRecord& r, const std::string& metric) {
  if (metric == "nmi") return r.result.nmi;
  if (metric == "purity") return r.result.purity;
  if (metric == "bfs") return r.result.boundary.fscore;
  throw Error("unknown metric '" + metric + "'");
}

std::string format_stat(const ReportRow::Stat& s, int precision, double scale) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(precision) << s.mean * scale;
  if (s.stddev) out << " ± " << *s.stddev * scale;
  return out.str();
}

json stat_json(const ReportRow::Stat& s) {
  json j = {{"mean", s.mean}};
  j["std"] = s.stddev ? json(*s.stddev) : json(nullptr);
  return j;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

ReportRow::Stat ReportRow::nmi() const {
  return row_stat(*this, [](const MetricsRecord& r) { return r.result.nmi; });
}
ReportRow::Stat ReportRow::purity() const {
  return row_stat(*this, [](const MetricsRecord& r) { return r.result.purity; });
}
ReportRow::Stat ReportRow::bfs() const {
  return row_stat(*this, [](const MetricsRecord& r) { return r.result.boundary.fscore; });
}

std::vector<ReportRow> collect_report(const std::vector<fs::path>& run_dirs) {
  std::map<std::tuple<std::string, std::string, std::string>, ReportRow> grouped;
  std::set<fs::path> seen;
  for (const auto& dir : run_dirs) {
    if (!fs::exists(dir)) throw Error("run directory " + dir.string() + " does not exist");
    std::vector<fs::path> files;
    if (fs::is_regular_file(dir)) {
      files.push_back(dir);
    } else {
      for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().filename() == "metrics.json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      if (!seen.insert(fs::weakly_canonical(f)).second) continue;
      auto m = load_metrics(f);
      auto& row = grouped[{m.language, m.model, m.input}];
      row.language = m.language;
      row.model = m.model;
      row.input = m.input;
      row.runs.push_back(std::move(m));
    }
  }
  std::vector<ReportRow> rows;
  for (auto& [key, row] : grouped) {
    std::sort(row.runs.begin(), row.runs.end(),
              [](const MetricsRecord& a, const MetricsRecord& b) { return a.seed < b.seed; });
    rows.push_back(std::move(row));
  }
  if (rows.empty()) AUD_WARN("report: no completed runs found");
  return rows;
}

namespace {

// Left-aligned in `width` display columns; UTF-8 continuation bytes take none.
std::string pad(const std::string& s, std::size_t width) {
  std::size_t columns = 0;
  for (const unsigned char ch : s)
    if ((ch & 0xC0) != 0x80) ++columns;
  return s + std::string(width > columns ? width - columns : 1, ' ');
}

}  // namespace

std::string format_report_text(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(10) << "language" << std::setw(10) << "model" << std::setw(8) << "input"
      << std::setw(18) << "NMI" << std::setw(18) << "CP" << std::setw(18) << "BFS" << "seeds\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(10) << r.language << std::setw(10) << r.model << std::setw(8) << r.input
        << pad(format_stat(r.nmi(), 2, 1.0), 18) << pad(format_stat(r.purity(), 2, 100.0), 18)
        << pad(format_stat(r.bfs(), 2, 100.0), 18) << r.runs.size() << '\n';
  }
  return out.str();
}

std::string format_report_json(const std::vector<ReportRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    json seeds = json::array();
    for (const auto& m : r.runs)
      seeds.push_back({{"seed", m.seed}, {"nmi", m.result.nmi}, {"cp", m.result.purity},
                       {"bfs", m.result.boundary.fscore}});
    out.push_back({{"language", r.language},
                   {"model", r.model},
                   {"input", r.input},
                   {"nmi", stat_json(r.nmi())},
                   {"cp", stat_json(r.purity())},
                   {"bfs", stat_json(r.bfs())},
                   {"runs", seeds}});
  }
  return out.dump(2) + "\n";
}

std::string per_seed_bar_plot(const std::vector<ReportRow>& rows, const std::string& metric) {
  std::size_t bars = 0;
  double max_value = 0.0;
  for (const auto& r : rows)
    for (const auto& m : r.runs) {
      ++bars;
      max_value = std::max(max_value, metric_value(m, metric));
    }
  if (max_value <= 0.0) max_value = 1.0;
  constexpr double kBar = 24.0, kGap = 6.0, kGroupGap = 24.0, kHeight = 200.0, kMargin = 40.0;
  const double width = 2 * kMargin + static_cast<double>(bars) * (kBar + kGap) +
                       static_cast<double>(rows.size()) * kGroupGap;
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << kHeight + 2 * kMargin + 20
      << "\">\n";
  out << "<text x=\"" << kMargin << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << xml_escape(metric)
      << " per seed</text>\n";
  out << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin + kHeight << "\" x2=\"" << width - kMargin << "\" y2=\""
      << kMargin + kHeight << "\" stroke=\"black\"/>\n";
  double x = kMargin;
  for (const auto& r : rows) {
    const double group_start = x;
    for (const auto& m : r.runs) {
      const double v = metric_value(m, metric);
      const double h = kHeight * v / max_value;
      out << "<rect x=\"" << x << "\" y=\"" << kMargin + kHeight - h << "\" width=\"" << kBar << "\" height=\"" << h
          << "\" fill=\"steelblue\"><title>seed " << m.seed << ": " << v << "</title></rect>\n";
      out << "<text x=\"" << x + kBar / 2 << "\" y=\"" << kMargin + kHeight + 12
          << "\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"middle\">" << m.seed << "</text>\n";
      x += kBar + kGap;
    }
    out << "<text x=\"" << (group_start + x - kGap) / 2 << "\" y=\"" << kMargin + kHeight + 28
        << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">"
        << xml_escape(r.language + " " + r.model + " " + r.input) << "</text>\n";
    x += kGroupGap;
  }
  out << "</svg>\n";
  return out.str();
}

void write_report(const std::vector<ReportRow>& rows, const fs::path& output_dir) {
  fs::create_directories(output_dir);
  std::ofstream(output_dir / "report.txt") << format_report_text(rows);
  std::ofstream(output_dir / "report.json") << format_report_json(rows);
  for (const std::string metric : {"nmi", "purity", "bfs"})
    std::ofstream(output_dir / ("seeds_" + metric + ".svg")) << per_seed_bar_plot(rows, metric);
}

}  // namespace aud
