// tools/aud_cli.cpp
//
// Command-line front end for the AUD experiment stages.

#include "aud/log.hpp"
#include "aud/pipeline.hpp"
#include "aud/synthetic.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace fs = std::filesystem;

namespace {

struct StageArgs {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string condition;
  std::vector<std::string> corpus;
  bool resume = false;
};

void add_stage_flags(CLI::App* cmd, StageArgs& args, const std::string& corpus_help) {
  cmd->add_option("--config", args.config, "experiment config file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seeds, "seed(s) to run; default: every configured seed");
  cmd->add_option("--condition", args.condition, "input condition: clean, rec or vc");
  cmd->add_option("--corpus", args.corpus, corpus_help);
  cmd->add_flag("--resume", args.resume, "continue interrupted training from its saved state");
}

aud::ExperimentConfig resolve_config(const StageArgs& args, bool corpus_is_vc) {
  auto config = aud::load_config(args.config);
  if (!args.condition.empty()) config.condition = aud::parse_input_condition(args.condition);
  if (!args.corpus.empty()) {
    if (corpus_is_vc) {
      config.vc_manifests.assign(args.corpus.begin(), args.corpus.end());
    } else {
      if (args.corpus.size() != 1) throw aud::Error("--corpus takes one manifest for this command");
      config.aud_manifest = args.corpus.front();
    }
  }
  if (!args.seeds.empty()) config.seeds = args.seeds;
  config.validate();
  return config;
}

void run_single_stage(const StageArgs& args, aud::Stage stage, bool corpus_is_vc = false) {
  const auto config = resolve_config(args, corpus_is_vc);
  for (const auto seed : config.seeds) {
    const bool ran = aud::run_stage(config, seed, stage, {args.resume});
    std::cout << aud::to_string(stage) << " seed " << seed << ": " << (ran ? "done" : "already complete") << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acoustic unit discovery with speaker normalization"};
  app.require_subcommand(1);
  int verbosity = 0;
  app.add_flag("-v,--verbose", verbosity, "log progress (repeat for debug output)");

  // ingest
  std::string ingest_in, ingest_out, ingest_audio;
  auto* ingest = app.add_subcommand("ingest", "validate a manifest and resample audio to 16 kHz");
  ingest->add_option("--corpus", ingest_in, "input manifest")->required()->check(CLI::ExistingFile);
  ingest->add_option("--output", ingest_out, "output manifest")->required();
  ingest->add_option("--audio-dir", ingest_audio, "directory for resampled audio (default: <output dir>/audio16k)");

  StageArgs train_vc_args, convert_args, train_aud_args, decode_args, evaluate_args, run_args, styles_args;
  add_stage_flags(app.add_subcommand("train-vc", "train the factorized VAE on the pooled corpora"), train_vc_args,
                  "FVAE training manifest(s), replacing data.vc_manifests");

  std::string styles_out;
  auto* styles = app.add_subcommand("extract-styles", "write the style embedding of every utterance");
  add_stage_flags(styles, styles_args, "corpus to embed (default: data.aud_manifest)");
  styles->add_option("--output", styles_out, "style table (default: <seed dir>/styles.txt)");

  std::string medoid_styles, medoid_out, medoid_ckpt;
  auto* medoid = app.add_subcommand("medoid", "pick the medoid style of a style table");
  medoid->add_option("--styles", medoid_styles, "style table")->required()->check(CLI::ExistingFile);
  medoid->add_option("--checkpoint", medoid_ckpt, "FVAE checkpoint the styles came from")->check(CLI::ExistingFile);
  medoid->add_option("--output", medoid_out, "medoid record (JSON); default: print only");

  add_stage_flags(app.add_subcommand("convert", "speaker-normalize the target corpus"), convert_args,
                  "target manifest, replacing data.aud_manifest");
  add_stage_flags(app.add_subcommand("train-aud", "pretrain and train the HMMVAE"), train_aud_args,
                  "target manifest, replacing data.aud_manifest");
  add_stage_flags(app.add_subcommand("decode", "transcribe the target corpus into units"), decode_args,
                  "target manifest, replacing data.aud_manifest");
  add_stage_flags(app.add_subcommand("evaluate", "score unit transcriptions against the reference"), evaluate_args,
                  "target manifest, replacing data.aud_manifest");
  add_stage_flags(app.add_subcommand("run", "run every stage for every seed"), run_args,
                  "target manifest, replacing data.aud_manifest");

  std::vector<std::string> report_dirs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "aggregate metrics over seeds");
  report->add_option("runs", report_dirs, "run directories")->required()->check(CLI::ExistingPath);
  report->add_option("--output", report_out, "directory for report.txt, report.json and plots");

  aud::SyntheticCorpusOptions synth_opts;
  std::string synth_dir;
  auto* synth = app.add_subcommand("synth", "generate a synthetic two-speaker corpus");
  synth->add_option("--output", synth_dir, "output directory")->required();
  synth->add_option("--utterances", synth_opts.num_utterances, "number of utterances");
  synth->add_option("--seconds", synth_opts.seconds, "utterance length in seconds");
  synth->add_option("--phones", synth_opts.num_phones, "phone inventory size");
  synth->add_option("--speakers", synth_opts.num_speakers, "number of pseudo-speakers");
  synth->add_option("--language", synth_opts.language, "language tag");
  synth->add_option("--name", synth_opts.name, "corpus name and id prefix");
  synth->add_option("--seed", synth_opts.seed, "random seed");

  CLI11_PARSE(app, argc, argv);
  aud::set_log_level(verbosity >= 2 ? aud::LogLevel::kDebug
                                    : verbosity == 1 ? aud::LogLevel::kInfo : aud::LogLevel::kWarning);

  try {
    if (ingest->parsed()) {
      const auto manifest = aud::load_manifest(ingest_in);
      const fs::path out(ingest_out);
      const fs::path audio_dir = ingest_audio.empty() ? out.parent_path() / "audio16k" : fs::path(ingest_audio);
      const auto ingested = aud::ingest_corpus(manifest, audio_dir);
      aud::save_manifest(ingested, out);
      std::cout << "ingested " << ingested.records.size() << " utterances into " << out.string() << "\n";
    } else if (app.got_subcommand("train-vc")) {
      run_single_stage(train_vc_args, aud::Stage::kTrainVc, true);
    } else if (styles->parsed()) {
      const auto config = resolve_config(styles_args, false);
      const auto manifest = aud::load_manifest(config.aud_manifest);
      for (const auto seed : config.seeds) {
        const auto ckpt = aud::fvae_checkpoint_for(config, seed);
        const auto table = aud::extract_styles(manifest, aud::load_fvae(ckpt));
        const fs::path out = styles_out.empty() ? aud::seed_dir(config, seed) / "styles.txt" : fs::path(styles_out);
        fs::create_directories(out.parent_path().empty() ? fs::path(".") : out.parent_path());
        aud::save_style_table(table, out);
        std::cout << "wrote " << table.entries.size() << " styles to " << out.string() << "\n";
      }
    } else if (medoid->parsed()) {
      const auto table = aud::load_style_table(medoid_styles);
      aud::MedoidRecord record{table.corpus, aud::find_style_medoid(table),
                               medoid_ckpt.empty() ? std::string() : aud::hash_file(medoid_ckpt)};
      if (!medoid_out.empty()) aud::save_medoid_record(record, medoid_out);
      std::cout << record.medoid_id << "\n";
    } else if (app.got_subcommand("convert")) {
      run_single_stage(convert_args, aud::Stage::kConvert);
    } else if (app.got_subcommand("train-aud")) {
      run_single_stage(train_aud_args, aud::Stage::kTrainAud);
    } else if (app.got_subcommand("decode")) {
      run_single_stage(decode_args, aud::Stage::kDecode);
    } else if (app.got_subcommand("evaluate")) {
      run_single_stage(evaluate_args, aud::Stage::kEvaluate);
      const auto config = resolve_config(evaluate_args, false);
      for (const auto seed : config.seeds) {
        const auto m = aud::load_metrics(aud::seed_dir(config, seed) / "metrics.json");
        std::cout << "seed " << seed << ": NMI " << m.result.nmi << " CP " << m.result.purity << " BFS "
                  << m.result.boundary.fscore << "\n";
      }
    } else if (app.got_subcommand("run")) {
      const auto config = resolve_config(run_args, false);
      for (const auto& run : aud::run_experiment(config, {run_args.resume})) {
        std::cout << "seed " << run.seed << ": NMI " << run.metrics.result.nmi << " CP "
                  << run.metrics.result.purity << " BFS " << run.metrics.result.boundary.fscore << "\n";
      }
    } else if (report->parsed()) {
      std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
      const auto rows = aud::collect_report(dirs);
      if (rows.empty()) throw aud::Error("no completed runs under the given directories");
      std::cout << aud::format_report_text(rows);
      if (!report_out.empty()) aud::write_report(rows, report_out);
    } else if (synth->parsed()) {
      const auto corpus = aud::generate_synthetic_corpus(synth_opts, synth_dir);
      std::cout << "wrote " << corpus.manifest.records.size() << " utterances to " << synth_dir << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return EXIT_FAILURE;
  }
  return EXIT_SUCCESS;
}
