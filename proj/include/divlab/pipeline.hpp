#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "divlab/corpus.hpp"
#include "divlab/decode.hpp"
#include "divlab/eval.hpp"
#include "divlab/model.hpp"
#include "divlab/synthdiv.hpp"
#include "divlab/toy.hpp"

// Experiment orchestration behind the divlab binary. Every stage reads the
// previous stage's files under out_dir and skips outputs that already exist:
//   out_dir/corpora      corrupted corpora, mixtures, BPE model
//   out_dir/checkpoints  one JSON bundle per (variant, kind, fraction, seed)
//   out_dir/logs         training CSVs and decode logs
//   out_dir/reports      corruption stats, metrics CSV, plot JSON
namespace divlab::pipeline {

enum class Variant { EQUIVALENTS, DIV_AGNOSTIC, DIV_TAGGED, DIV_FACTORIZED };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct CorpusPaths {
  std::string train_src, train_tgt;
  std::string dev_src, dev_tgt;
  std::string test_src, test_tgt;
};

struct CorruptionConfig {
  std::vector<corpus::CorruptionKind> kinds{corpus::CorruptionKind::LexSub};
  synthdiv::CorruptionParams params;
  std::string lexicon;  // JSON lexicon, needed by LEX_SUB
  std::uint64_t seed = 1;
};

struct BpeConfig {
  int merges = 1000;
  int min_frequency = 2;
};

struct MetricsConfig {
  bool bleu = true;
  bool degeneration = true;
  bool calibration = true;
  bool profiles = true;
  int calibration_bins = 10;
  eval::BleuSmoothing bleu_smoothing = eval::BleuSmoothing::None;
  int degen_n_min = 2;
  int degen_n_max = 4;
  std::string stoplist;  // empty: built-in list
  int profile_max_step = 30;
  std::size_t profile_min_support = 1;
};

struct ExperimentConfig {
  CorpusPaths corpus;
  CorruptionConfig corruption;
  std::vector<double> fractions{0.0, 0.5, 1.0};
  std::vector<Variant> variants{Variant::EQUIVALENTS, Variant::DIV_AGNOSTIC, Variant::DIV_TAGGED,
                                Variant::DIV_FACTORIZED};
  model::ModelConfig model;
  model::OptimConfig optim;
  BpeConfig bpe;
  std::vector<int> beams{1, 5, 10};
  int max_len = 80;
  bool length_norm = false;
  MetricsConfig metrics;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string out_dir = "out";

  /// Throws Error on an empty grid, a fraction outside [0, 1] or no seeds.
  void validate() const;

  /// Relative corpus, lexicon and stoplist paths resolve against base_dir.
  static ExperimentConfig from_json(const std::string& text, const std::string& base_dir = ".");
  static ExperimentConfig load(const std::string& path);
};

/// File stem of one grid cell, e.g. "DIV_AGNOSTIC__lex_sub__f0.50__s1".
std::string cell_name(Variant v, corpus::CorruptionKind kind, double fraction, std::uint64_t seed);

struct StageSummary {
  std::vector<std::string> written;
  std::vector<std::string> skipped;
};

/// Corrupts the training corpus once per kind and writes, per kind, the
/// corrupted corpus, the index-aligned equivalents it came from, and a stats
/// CSV with an equivalents row plus one row per kind.
StageSummary cmd_corrupt(const ExperimentConfig& cfg);

/// One mixture per (kind, fraction, seed).
StageSummary cmd_mix(const ExperimentConfig& cfg);

/// Trains every configured variant on every (kind, fraction, seed) cell.
/// EQUIVALENTS trains on the clean corpus once per seed and is reused across
/// kinds and fractions. Pass `only` to restrict to one variant.
StageSummary cmd_train(const ExperimentConfig& cfg, std::optional<Variant> only = std::nullopt);

/// One free-decoding log per (checkpoint, beam) plus one forced-decoding log
/// per checkpoint.
StageSummary cmd_decode(const ExperimentConfig& cfg);

/// reports/metrics.csv with one row per (variant, kind, fraction, seed, beam)
/// followed by mean and stdev rows over seeds; reports/plots.json with
/// confidence profiles, calibration bins and degeneration by beam.
StageSummary cmd_report(const ExperimentConfig& cfg);

/// corrupt, mix, train, decode and report in sequence.
StageSummary run_all(const ExperimentConfig& cfg);

struct ToyDataOptions {
  std::size_t train = 2000;
  std::size_t dev = 200;
  std::size_t test = 200;
  std::uint64_t seed = 11;
  toy::ToyOptions language;
  bool noun_lexicon = false;  // one hypernym per noun instead of the demo lexicon
};

/// Writes train/dev/test annotated corpora and a lexicon (lexicon.json) into
/// dir.
StageSummary write_toy_data(const std::string& dir, const ToyDataOptions& options);

}  // namespace divlab::pipeline
