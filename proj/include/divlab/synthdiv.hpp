#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "divlab/corpus.hpp"

namespace divlab::synthdiv {

using corpus::AnnotatedSentencePair;
using corpus::Corpus;
using corpus::CorruptionKind;
using corpus::CorruptionRecord;
using corpus::Side;

struct LexiconEntry {
  std::vector<std::string> hypernyms;
  std::vector<std::string> hyponyms;
};

/// Word -> hypernym/hyponym lists. Loaded from
/// {"word": {"hypernyms": [...], "hyponyms": [...]}}.
class Lexicon {
 public:
  Lexicon() = default;
  explicit Lexicon(std::map<std::string, LexiconEntry> entries);

  static Lexicon from_json(const std::string& text);
  static Lexicon load(const std::string& path);
  std::string to_json() const;

  /// Union of hypernyms and hyponyms, in file order; empty when unknown.
  std::vector<std::string> substitutes(const std::string& word) const;
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::map<std::string, LexiconEntry>& entries() const { return entries_; }

 private:
  std::map<std::string, LexiconEntry> entries_;
};

/// POS sequence -> distinct token sequences seen with that POS sequence.
class PhraseTable {
 public:
  using Key = std::vector<std::string>;
  using Phrase = std::vector<std::string>;

  void add(const Key& pos, const Phrase& phrase);
  const std::vector<Phrase>* find(const Key& pos) const;
  std::size_t size() const { return table_.size(); }
  bool empty() const { return table_.empty(); }
  const std::map<Key, std::vector<Phrase>>& entries() const { return table_; }

 private:
  std::map<Key, std::vector<Phrase>> table_;
};

/// Indexes every n-gram with min_len <= n <= max_len on one side by its POS
/// sequence. Throws on an empty corpus.
PhraseTable build_phrase_table(const Corpus& c, int min_len, int max_len, Side side = Side::TGT);

struct Corrupted {
  AnnotatedSentencePair pair;
  CorruptionRecord record;
};

enum class SideChoice { SRC, TGT, RANDOM };

struct CorruptionParams {
  Side side = Side::TGT;                    // lexical substitution, phrase replacement
  SideChoice deletion_side = SideChoice::TGT;  // subtree deletion
  int max_subs = 2;
  int min_subtree = 1;
  double max_subtree_frac = 0.4;
  int phrase_min = 2;
  int phrase_max = 4;
};

/// Replaces 1..max_subs words that have lexicon entries by a uniformly drawn
/// hypernym or hyponym and tags them DIV. nullopt when nothing is covered.
std::optional<Corrupted> lexical_substitution(const AnnotatedSentencePair& pair, const Lexicon& lexicon,
                                              Rng& rng, Side side, int max_subs);

/// Replaces one span by a different phrase with the same POS sequence. Only the
/// positions whose surface changes are tagged DIV and recorded.
std::optional<Corrupted> phrase_replacement(const AnnotatedSentencePair& pair, const PhraseTable& table,
                                            Rng& rng, Side side, int min_len = 2, int max_len = 4);

/// Deletes a uniformly drawn dependency subtree whose size lies in
/// [min_size, max_frac * length]; the root is never deleted. Tokens on the
/// other side whose alignment links all pointed into the deleted subtree
/// become DIV.
std::optional<Corrupted> subtree_deletion(const AnnotatedSentencePair& pair, Rng& rng, SideChoice side,
                                          int min_size, double max_frac);

/// Subtree (node plus descendants, 1-based ids) of every node of a valid tree,
/// or nullopt when the heads do not form a single rooted tree.
std::optional<std::vector<std::vector<int>>> subtrees(const corpus::Sentence& s);

/// True when heads form one rooted tree covering every token.
bool is_valid_tree(const corpus::Sentence& s);

struct CorruptionInputs {
  const Lexicon* lexicon = nullptr;
  const PhraseTable* phrases = nullptr;
};

struct CorruptionOutcome {
  Corpus corpus;
  std::vector<std::size_t> kept;  // index of each output pair in the input
};

/// Applies one corruption kind to every pair using the per-pair stream
/// derive_seed(seed, index). Pairs where the corruption does not apply are
/// dropped.
CorruptionOutcome corrupt_corpus_indexed(const Corpus& c, CorruptionKind kind, const CorruptionParams& params,
                                         const CorruptionInputs& inputs, std::uint64_t seed);
Corpus corrupt_corpus(const Corpus& c, CorruptionKind kind, const CorruptionParams& params,
                      const CorruptionInputs& inputs, std::uint64_t seed);

/// Marks as DIV every token aligned to a DIV token on the other side, so both
/// sides of a divergence carry the tag.
AnnotatedSentencePair mirror_div_tags(const AnnotatedSentencePair& pair);

struct CorruptionStats {
  std::size_t sentences = 0;
  std::size_t tokens = 0;
  std::size_t types = 0;
  double mean_length = 0.0;
  double pct_corrupted = 0.0;
};

/// Corpus statistics on one side. The corrupted share of a sentence is its DIV
/// token count over its length; for deletions on that side it is the number of
/// deleted tokens over the pre-deletion length.
CorruptionStats corruption_stats(const Corpus& c, Side side = Side::TGT);

std::string stats_csv_header();
std::string stats_csv_row(const std::string& name, const CorruptionStats& s);

}  // namespace divlab::synthdiv
