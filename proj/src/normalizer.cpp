// src/normalizer.cpp

#include "aud/normalizer.hpp"

#include "aud/log.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace aud {

ConversionMode parse_conversion_mode(const std::string& s) {
  if (s == "vc") return ConversionMode::kVc;
  if (s == "rec") return ConversionMode::kRec;
  throw Error("unknown conversion mode '" + s + "' (expected vc or rec)");
}

std::string to_string(ConversionMode mode) { return mode == ConversionMode::kVc ? "vc" : "rec"; }

ConversionRoute parse_conversion_route(const std::string& s) {
  if (s == "audio") return ConversionRoute::kAudio;
  if (s == "feature") return ConversionRoute::kFeature;
  throw Error("unknown conversion route '" + s + "' (expected audio or feature)");
}

std::string to_string(ConversionRoute route) {
  return route == ConversionRoute::kAudio ? "audio" : "feature";
}

VcFeatureSource audio_feature_source(const FactoredVae& model) {
  if (!model.norm_stats) throw Error("FVAE checkpoint carries no normalization statistics");
  const CorpusNormStats stats = *model.norm_stats;
  return [stats](const UtteranceRecord& record) {
    auto feat = compute_logmel_vc(load_audio_16k(record));
    feat.utterance_id = record.utterance_id;
    return normalize_per_band(feat, stats);
  };
}

StyleTable extract_styles(const CorpusManifest& manifest, const FactoredVae& model,
                          const VcFeatureSource& source) {
  StyleTable table;
  table.corpus = manifest.name;
  for (const auto& record : manifest.records) {
    try {
      table.entries[record.utterance_id] = model.encode_style(source(record).values).vector;
    } catch (const Error& e) {
      throw Error("style extraction failed for " + record.utterance_id + ": " + e.what());
    }
  }
  return table;
}

StyleTable extract_styles(const CorpusManifest& manifest, const FactoredVae& model) {
  return extract_styles(manifest, model, audio_feature_source(model));
}

std::string find_style_medoid(const StyleTable& table) {
  if (table.entries.empty()) throw Error("cannot pick a medoid from an empty style table");
  const auto n = static_cast<Eigen::Index>(table.entries.size());
  const Eigen::Index dim = table.entries.begin()->second.size();
  MatrixXd points(n, dim);
  std::vector<const std::string*> ids;
  Eigen::Index row = 0;
  for (const auto& [id, v] : table.entries) {
    if (v.size() != dim) throw Error("style table has vectors of different length");
    points.row(row++) = v.transpose();
    ids.push_back(&id);
  }
  Eigen::Index best = 0;
  double best_mean = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = (points.rowwise() - points.row(i)).rowwise().norm().sum() / static_cast<double>(n);
    // entries iterate in lexicographic order, so strict < keeps the smallest id on ties
    if (mean < best_mean) {
      best_mean = mean;
      best = i;
    }
  }
  return *ids[static_cast<std::size_t>(best)];
}

MatrixXd convert_utterance(const MatrixXd& feats, const StyleEmbedding& target_style,
                           const FactoredVae& model, ConversionMode mode) {
  const auto content = model.encode_content(feats);
  const VectorXd style = mode == ConversionMode::kRec ? model.encode_style(feats).vector : target_style.vector;
  return model.decode(content.means, style, feats.rows());
}

std::filesystem::path converted_aud_path(const std::filesystem::path& dir, const std::string& utterance_id) {
  return dir / (safe_file_stem(utterance_id) + ".aud.feat");
}

NormalizeReport normalize_corpus(const CorpusManifest& manifest, const FactoredVae& model,
                                 ConversionMode mode, const NormalizeOptions& options,
                                 const VcFeatureSource& source) {
  if (!model.norm_stats) throw Error("FVAE checkpoint carries no normalization statistics");
  std::filesystem::create_directories(options.output_dir);
  NormalizeReport report;

  bool all_cached = true;
  for (const auto& r : manifest.records)
    all_cached = all_cached && std::filesystem::exists(converted_aud_path(options.output_dir, r.utterance_id));

  StyleEmbedding target;
  if (mode == ConversionMode::kVc) {
    const auto medoid_file = options.output_dir / "medoid.txt";
    if (all_cached && std::filesystem::exists(medoid_file)) {
      std::ifstream in(medoid_file);
      std::getline(in, report.medoid_id);
    } else {
      const StyleTable table = extract_styles(manifest, model, source);
      report.medoid_id = find_style_medoid(table);
      target.vector = table.entries.at(report.medoid_id);
      target.utterance_id = report.medoid_id;
      std::ofstream(medoid_file) << report.medoid_id << '\n';
    }
  }

  for (const auto& record : manifest.records) {
    const auto aud_path = converted_aud_path(options.output_dir, record.utterance_id);
    if (std::filesystem::exists(aud_path)) {
      ++report.reused;
      continue;
    }
    try {
      const auto stem = safe_file_stem(record.utterance_id);
      const LogMelSpectrogram feats = source(record);
      LogMelSpectrogram converted = feats;
      converted.values = convert_utterance(feats.values, target, model, mode);
      converted = denormalize_per_band(converted, *model.norm_stats);
      converted.utterance_id = record.utterance_id;
      save_features(converted, options.output_dir / (stem + ".logmel80.feat"));

      LogMelSpectrogram aud;
      if (options.route == ConversionRoute::kAudio) {
        const VectorXd audio = invert_logmel(converted, options.griffin_lim_iterations);
        write_wav(options.output_dir / (stem + ".wav"), audio);
        aud = compute_logmel_aud(audio);
      } else {
        aud = regroup_to_aud(converted);
      }
      aud.utterance_id = record.utterance_id;
      if (aud.frames() != feats.frames())
        throw Error("converted frame count " + std::to_string(aud.frames()) + " != source " +
                    std::to_string(feats.frames()));
      // Write-then-rename so an interrupted run never leaves a partial cache entry.
      const auto tmp = aud_path.string() + ".tmp";
      save_features(aud, tmp);
      std::filesystem::rename(tmp, aud_path);
      ++report.converted;
    } catch (const std::exception& e) {
      AUD_WARN("conversion failed for " << record.utterance_id << ": " << e.what());
      report.failures.emplace_back(record.utterance_id, e.what());
    }
  }
  return report;
}

NormalizeReport normalize_corpus(const CorpusManifest& manifest, const FactoredVae& model,
                                 ConversionMode mode, const NormalizeOptions& options) {
  return normalize_corpus(manifest, model, mode, options, audio_feature_source(model));
}

void save_style_table(const StyleTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write style table " + path.string());
  out << std::setprecision(17);
  for (const auto& [id, v] : table.entries) {
    out << id;
    for (Eigen::Index i = 0; i < v.size(); ++i) out << ' ' << v[i];
    out << '\n';
  }
}

StyleTable load_style_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open style table " + path.string());
  StyleTable table;
  table.corpus = path.stem().string();
  std::string line;
  std::size_t line_no = 0;
  Eigen::Index dim = -1;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string id;
    if (!(ss >> id)) continue;
    std::vector<double> values;
    double v;
    while (ss >> v) values.push_back(v);
    if (!ss.eof()) throw ParseError(path.string(), line_no, "malformed number");
    if (dim >= 0 && static_cast<Eigen::Index>(values.size()) != dim)
      throw ParseError(path.string(), line_no, "vector length differs from previous lines");
    dim = static_cast<Eigen::Index>(values.size());
    if (!table.entries.emplace(id, Eigen::Map<VectorXd>(values.data(), dim)).second)
      throw ParseError(path.string(), line_no, "duplicate utterance_id " + id);
  }
  return table;
}

std::string hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::uint64_t hash = fnv1a64(nullptr, 0);
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) hash = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), hash);
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(hash));
  return hex;
}

void save_medoid_record(const MedoidRecord& record, const std::filesystem::path& path) {
  nlohmann::json j;
  j["corpus"] = record.corpus;
  j["medoid"] = record.medoid_id;
  j["checkpoint_hash"] = record.checkpoint_hash;
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

MedoidRecord load_medoid_record(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  const auto j = nlohmann::json::parse(in);
  return {j.at("corpus").get<std::string>(), j.at("medoid").get<std::string>(),
          j.at("checkpoint_hash").get<std::string>()};
}

}  // namespace aud
