#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "divlab/model.hpp"

namespace divlab::decode {

using model::ModelParams;

/// Length-matched all-EQ factors for an inference-time source sentence.
std::vector<corpus::Factor> tag_inference_source(std::size_t length);
std::vector<corpus::Factor> tag_inference_source(const std::vector<std::string>& tokens);

struct Hypothesis {
  std::vector<int> tokens;
  std::vector<double> token_probs;
  std::vector<int> factors;
  double score = 0.0;
  bool finished = false;
};

struct BeamOptions {
  int beam = 5;
  int max_len = 80;
  bool length_norm = false;
  /// Ending token; without one every hypothesis runs to max_len.
  std::optional<int> eos_id = corpus::BpeModel::kEos;
  int bos_id = corpus::BpeModel::kBos;
};

/// Beam search over tokens. Factor labels ride along greedily: the label of
/// the token committed at step t is the EQ/DIV argmax of the factor head at
/// step t + 1 (ties go to EQ), and is fed back as decoder input one step later.
/// Finished hypotheses stay in the beam and compete on their final score;
/// search stops when the best candidate is finished or at max_len. Returns
/// every surviving hypothesis, best first.
std::vector<Hypothesis> beam_search(const ModelParams<float>& params, const std::vector<int>& src_ids,
                                    const std::vector<int>& src_factors, const BeamOptions& options);

/// Argmax decoding with the lowest id winning ties.
Hypothesis greedy_decode(const ModelParams<float>& params, const std::vector<int>& src_ids,
                         const std::vector<int>& src_factors, const BeamOptions& options);

struct ForcedResult {
  std::vector<double> probs;  // p(y_t | y_<t, x) for every reference position
  std::vector<int> factors;   // greedy factor labels along the forced prefix
};

/// Teacher-forced pass over the reference ids (EOS included if present).
ForcedResult forced_decode(const ModelParams<float>& params, const std::vector<int>& src_ids,
                           const std::vector<int>& src_factors, const std::vector<int>& ref_ids,
                           int bos_id = corpus::BpeModel::kBos);

// ---------------------------------------------------------------------------
// Decode logs: one JSON object per line. hyp_tokens, token_probs and factors
// are aligned and exclude EOS; eos_prob holds the EOS probability of a
// finished hypothesis, so score = sum(log token_probs) + log(eos_prob).

struct DecodeRecord {
  std::size_t id = 0;
  std::string src;
  std::string ref;
  std::vector<std::string> ref_tokens;
  std::vector<std::string> hyp_tokens;
  std::string hyp;
  std::vector<double> token_probs;
  std::vector<std::string> factors;
  std::optional<double> eos_prob;
  double score = 0.0;
  int beam = 0;
  std::string mode = "free";  // "free" or "forced"
  std::string variant;
  std::string kind;
  double fraction = 0.0;
  std::uint64_t seed = 0;
};

std::string to_json_line(const DecodeRecord& r);
DecodeRecord from_json_line(const std::string& line);
std::string to_jsonl(const std::vector<DecodeRecord>& records);
std::vector<DecodeRecord> parse_jsonl(const std::string& text);
std::vector<DecodeRecord> read_decode_log(const std::string& path);
void write_decode_log(const std::string& path, const std::vector<DecodeRecord>& records);

struct DecodeJob {
  std::string variant;
  std::string kind;
  double fraction = 0.0;
  std::uint64_t seed = 0;
  bool tag_source = false;  // prepend <EQ> as the DIV_TAGGED models expect
};

/// Free decoding of every pair of a test corpus. Sentences run in parallel;
/// records come back in corpus order.
std::vector<DecodeRecord> decode_corpus(const ModelParams<float>& params, const corpus::BpeModel& bpe,
                                        const corpus::Corpus& test, const BeamOptions& options,
                                        const DecodeJob& job);

/// Forced decoding of every reference; token_probs hold the reference token
/// probabilities.
std::vector<DecodeRecord> forced_decode_corpus(const ModelParams<float>& params, const corpus::BpeModel& bpe,
                                               const corpus::Corpus& test, const DecodeJob& job);

}  // namespace divlab::decode
