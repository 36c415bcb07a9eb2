#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "divlab/corpus.hpp"

namespace divlab::corpus {

/// Joint byte-pair-encoding model. Symbols are UTF-8 code points and their
/// merges; a word-final symbol carries the internal suffix "</w>". Model-side
/// tokens mark non-final pieces with a trailing "@@".
class BpeModel {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kEqTagId = 4;
  static constexpr int kDivTagId = 5;
  static constexpr int kFirstRegular = 6;

  static constexpr std::string_view kEndOfWord = "</w>";
  static constexpr std::string_view kContinuation = "@@";

  BpeModel();
  BpeModel(std::vector<std::pair<std::string, std::string>> merges, std::map<std::string, int> vocab);

  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
  const std::map<std::string, int>& vocab() const { return vocab_; }
  int vocab_size() const { return static_cast<int>(id_to_token_.size()); }

  /// Plain pieces of one word (no markers); reserved tags stay whole.
  std::vector<std::string> segment_word(const std::string& word) const;

  int id(const std::string& model_token) const;
  const std::string& token(int id) const;
  std::vector<int> encode(const std::vector<std::string>& model_tokens) const;
  std::vector<std::string> decode(std::span<const int> ids) const;

  std::string to_json() const;
  static BpeModel from_json(const std::string& text);
  void save(const std::string& path) const;
  static BpeModel load(const std::string& path);

 private:
  void index();

  std::vector<std::pair<std::string, std::string>> merges_;
  std::map<std::pair<std::string, std::string>, int> rank_;
  std::map<std::string, int> vocab_;
  std::vector<std::string> id_to_token_;
};

/// Learns merges over the joint source+target word stream. Ties on pair
/// frequency go to the lexicographically smallest pair; learning stops early
/// when no pair occurs at least min_frequency times. Throws on an empty corpus.
BpeModel learn_bpe(const Corpus& c, int num_merges, int min_frequency = 2);

struct SegmentedSentence {
  std::vector<std::string> pieces;  // plain pieces, no markers
  std::vector<int> splits;          // number of pieces per word

  /// Pieces with "@@" on every non-final piece of a word.
  std::vector<std::string> model_tokens() const;
};

struct SegmentedPair {
  SegmentedSentence src;
  SegmentedSentence tgt;
};

SegmentedSentence apply_bpe(const std::vector<std::string>& words, const BpeModel& model);
SegmentedPair apply_bpe(const AnnotatedSentencePair& pair, const BpeModel& model);

/// Every subword inherits the tag of the word it came from.
std::vector<Factor> project_factors_to_subwords(std::span<const Factor> word_factors,
                                                std::span<const int> splits);

/// Joins model tokens back into words by removing "@@" continuations.
std::vector<std::string> detokenize(const std::vector<std::string>& model_tokens);

/// Token ids and per-subword factors of one pair, ready for batching. Target
/// ids end with EOS; the EOS factor is EQ.
struct EncodedPair {
  std::vector<int> src_ids;
  std::vector<Factor> src_factors;
  std::vector<int> tgt_ids;
  std::vector<Factor> tgt_factors;
};

EncodedPair encode_pair(const AnnotatedSentencePair& pair, const BpeModel& model);

}  // namespace divlab::corpus
