#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "divlab/util.hpp"

namespace divlab::corpus {

enum class Factor : std::uint8_t { EQ = 0, DIV = 1 };
enum class Side : std::uint8_t { SRC, TGT };
enum class CorruptionKind : std::uint8_t { LexSub, PhraseRep, SubtreeDel };

inline constexpr std::string_view kEqTag = "<EQ>";
inline constexpr std::string_view kDivTag = "<DIV>";

std::string to_string(Factor f);
std::string to_string(Side s);
std::string to_string(CorruptionKind k);
Factor parse_factor(std::string_view s);
Side parse_side(std::string_view s);
CorruptionKind parse_corruption_kind(std::string_view s);
inline Side opposite(Side s) { return s == Side::SRC ? Side::TGT : Side::SRC; }

struct AnnotatedToken {
  std::string surface;
  std::string pos;
  int head = -1;  // 1-based head, 0 = root, -1 = unannotated
  std::string deprel;
  std::vector<int> align;  // 0-based indices into the opposite side
};

using Sentence = std::vector<AnnotatedToken>;

/// Half-open token range [start, end).
struct TokenSpan {
  int start = 0;
  int end = 0;
  bool operator==(const TokenSpan&) const = default;
};

/// Provenance of one synthetic divergence. For deletions the spans index the
/// sentence as it was before the deletion.
struct CorruptionRecord {
  CorruptionKind kind = CorruptionKind::LexSub;
  Side side = Side::TGT;
  std::vector<TokenSpan> affected_spans;
  std::vector<std::string> original_tokens;

  std::string to_json() const;
  static CorruptionRecord from_json(std::string_view text);
};

struct AnnotatedSentencePair {
  Sentence src;
  Sentence tgt;
  std::vector<Factor> src_factors;
  std::vector<Factor> tgt_factors;
  std::optional<CorruptionRecord> provenance;

  Sentence& side(Side s) { return s == Side::SRC ? src : tgt; }
  const Sentence& side(Side s) const { return s == Side::SRC ? src : tgt; }
  std::vector<Factor>& factors(Side s) { return s == Side::SRC ? src_factors : tgt_factors; }
  const std::vector<Factor>& factors(Side s) const { return s == Side::SRC ? src_factors : tgt_factors; }

  /// True when every factor on both sides is EQ.
  bool all_eq() const;
  /// Throws Error describing the first broken invariant.
  void validate() const;
};

/// Builds a pair with every factor EQ and no provenance.
AnnotatedSentencePair make_pair(Sentence src, Sentence tgt);

struct Corpus {
  std::string name;
  std::vector<AnnotatedSentencePair> pairs;
  /// Set when the input carried an explicit factor column.
  bool factor_tagged = false;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

std::vector<std::string> surfaces(const Sentence& s);

/// Sentence from whitespace-separated surfaces; no annotations.
Sentence sentence_from_text(std::string_view text);

// ---------------------------------------------------------------------------
// Annotated parallel files: one token per line,
//   INDEX SURFACE POS HEAD DEPREL ALIGN [FACTOR]
// tab separated, blank line between sentences, "_" for empty fields. ALIGN
// holds 1-based indices into the opposite file. A "# divergence = {...}"
// comment before a sentence carries its CorruptionRecord.

class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

Corpus parse_parallel(const std::string& src_file, const std::string& tgt_file);
/// Same as parse_parallel on in-memory text; names are used in error messages.
Corpus parse_parallel_text(std::string_view src_text, std::string_view tgt_text,
                           const std::string& src_name = "<src>",
                           const std::string& tgt_name = "<tgt>");

std::string format_side(const Corpus& c, Side side);
void write_parallel(const Corpus& c, const std::string& src_file, const std::string& tgt_file);

// ---------------------------------------------------------------------------

struct FilterConfig {
  int min_len = 3;
  int max_len = 80;
  double numeric_ratio_max = 0.5;
  double copy_edit_ratio_min = 0.1;
};

struct FilterStats {
  std::size_t input = 0;
  std::size_t kept = 0;
  std::size_t too_short = 0;
  std::size_t too_long = 0;
  std::size_t numeric = 0;
  std::size_t near_copy = 0;
};

/// A token counts as numeric when it has a digit and otherwise only
/// separators such as . , : / -
bool is_numeric_token(std::string_view token);

/// Character edit distance between the space-joined sentences divided by the
/// longer length; 0 for identical strings.
double copy_edit_ratio(const AnnotatedSentencePair& pair);

/// Drops pairs that are too short/long, mostly numbers, or near copies. Each
/// removed pair is counted under the first rule it breaks.
std::pair<Corpus, FilterStats> heuristic_filter(const Corpus& c, const FilterConfig& cfg);

/// Replaces round(N * fraction) pairs of `equivalents` by their corrupted
/// counterparts from `divergents` (same index), then shuffles. Both corpora
/// must be index aligned: the uncorrupted side of every divergent pair matches
/// the equivalent pair at the same index.
Corpus mix_corpora(const Corpus& equivalents, const Corpus& divergents, double divergent_fraction,
                   std::uint64_t seed);

/// Inserts <EQ> or <DIV> at source position 0 (factor EQ). Throws if the pair
/// already starts with a reserved tag.
AnnotatedSentencePair prepend_sentence_tag(const AnnotatedSentencePair& pair, Factor tag);

}  // namespace divlab::corpus
