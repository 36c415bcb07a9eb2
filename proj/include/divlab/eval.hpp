#pragma once

#include <set>
#include <string>
#include <vector>

#include "divlab/decode.hpp"

namespace divlab::eval {

using Tokens = std::vector<std::string>;

// ---------------------------------------------------------------------------
// Degeneration

struct DegenConfig {
  int n_min = 2;
  int n_max = 4;
  std::set<std::string> stoplist;

  void validate() const;
  /// One entry per line; blank lines and lines starting with '#' are skipped.
  static std::set<std::string> load_stoplist(const std::string& path);
  /// n in [2, 4] with the stoplist shipped in data/stoplist.txt.
  static DegenConfig defaults();
};

/// English and French punctuation and conjunctions.
const std::set<std::string>& default_stoplist();

/// True when, after dropping stoplist tokens, some n-gram with
/// n_min <= n <= n_max occurs at least twice in hyp and at most once in ref.
bool is_degenerated(const Tokens& hyp, const Tokens& ref, const DegenConfig& cfg);

/// Percentage of free-decoding records whose detokenized hypothesis is
/// degenerated against its reference.
double degeneration_rate(const std::vector<decode::DecodeRecord>& records, const DegenConfig& cfg);

// ---------------------------------------------------------------------------
// Confidence profiles

struct ProfilePoint {
  int step = 0;
  double mean_prob = 0.0;
  std::size_t support = 0;
};

struct ConfidenceProfile {
  std::string mode;
  std::vector<ProfilePoint> points;
};

/// Mean token probability per time step over records of the given mode
/// ("free" or "forced"), for steps < max_step with at least min_support
/// sentences.
ConfidenceProfile confidence_profile(const std::vector<decode::DecodeRecord>& records, const std::string& mode,
                                     int max_step, std::size_t min_support = 1);

// ---------------------------------------------------------------------------
// TER alignment

enum class EditOp { MATCH, SUB, INS, DEL, SHIFT };

/// One step of an edit script that rewrites the hypothesis into the
/// reference. SHIFT moves hypothesis tokens [start, start + length) so that
/// they begin at index `to` of the sequence with the span removed. MATCH, SUB
/// and DEL consume one token of the shifted hypothesis; MATCH, SUB and INS
/// produce one reference token.
struct TerEdit {
  EditOp op = EditOp::MATCH;
  int start = 0;
  int length = 0;
  int to = 0;
  std::string token;  // reference token for SUB and INS
};

struct TerOptions {
  bool case_sensitive = false;
  int max_shift_size = 10;
  int max_shift_distance = 50;
};

struct TerAlignment {
  std::vector<TerEdit> script;
  int shifts = 0;
  int edits = 0;  // substitutions + insertions + deletions
  double ter_score = 0.0;
  std::vector<bool> hyp_matched;  // per original hypothesis token
};

/// Greedy block-shift search followed by a Levenshtein alignment. Each round
/// applies the shift that lowers the edit distance the most; a shifted span
/// must equal some reference span and contain a token not currently matched.
/// An empty reference scores |hyp| edits over 1.
TerAlignment ter_align(const Tokens& hyp, const Tokens& ref, const TerOptions& options = {});

/// Applies an edit script to a hypothesis.
Tokens apply_script(const Tokens& hyp, const std::vector<TerEdit>& script);

/// Word-level Levenshtein distance.
int edit_distance(const Tokens& hyp, const Tokens& ref);

/// Matched flag per hypothesis token.
std::vector<bool> token_accuracy(const TerAlignment& alignment);
double accuracy(const std::vector<bool>& matched);

// ---------------------------------------------------------------------------
// Calibration

struct TokenRecord {
  double confidence = 0.0;
  bool correct = false;
};

struct CalibrationBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double mean_conf = 0.0;
  double mean_acc = 0.0;
};

struct CalibrationReport {
  std::vector<CalibrationBin> bins;
  double inf_ece = 0.0;
  double overall_conf = 0.0;
  double overall_acc = 0.0;
  std::size_t total = 0;
};

/// Equal-width bins over [0, 1]; a confidence of exactly 1 falls in the last
/// bin. inf_ece = sum_k (count_k / total) * |acc_k - conf_k|.
CalibrationReport inf_ece(const std::vector<TokenRecord>& tokens, int bins = 10);

/// Token records of free-decoding logs: each hypothesis subword is scored
/// correct when the TER alignment against the reference subwords matches it.
std::vector<TokenRecord> token_records(const std::vector<decode::DecodeRecord>& records,
                                       const TerOptions& options = {});

// ---------------------------------------------------------------------------
// BLEU and length

enum class BleuSmoothing { None, Exp };

/// Corpus BLEU in [0, 100]: geometric mean of clipped n-gram precisions times
/// the brevity penalty. Exp smoothing halves the pseudo-count of every
/// successive zero-match order.
double corpus_bleu(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs, int max_n = 4,
                   BleuSmoothing smoothing = BleuSmoothing::None);

/// sum |hyp| / sum |ref|.
double length_ratio(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs);

// ---------------------------------------------------------------------------
// Per-log summary

struct SystemMetrics {
  std::size_t sentences = 0;
  double bleu = 0.0;
  double degeneration = 0.0;
  double length_ratio = 0.0;
  double token_accuracy = 0.0;
  double confidence = 0.0;
  double inf_ece = 0.0;
};

/// Metrics of one free-decoding log. BLEU, degeneration and length use
/// detokenized words; accuracy, confidence and InfECE use subwords.
SystemMetrics evaluate_log(const std::vector<decode::DecodeRecord>& records, const DegenConfig& degen,
                           int calibration_bins = 10, BleuSmoothing smoothing = BleuSmoothing::None);

/// Mean reference-token probability of a forced-decoding log.
double mean_forced_confidence(const std::vector<decode::DecodeRecord>& records);

std::string calibration_to_json(const CalibrationReport& report);
std::string profile_to_json(const ConfidenceProfile& profile);

}  // namespace divlab::eval
