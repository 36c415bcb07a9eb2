#pragma once

#include <cstdint>

#include "divlab/corpus.hpp"
#include "divlab/synthdiv.hpp"

// Synthetic annotated parallel language used by the demo data and the
// end-to-end checks. The source side is a French-like word-for-word mapping of
// an English target with noun-adjective reordering; both sides carry POS tags,
// dependency trees and 1:1 alignments.
namespace divlab::toy {

struct ToyOptions {
  int min_clauses = 1;
  int max_clauses = 4;
  double adjective_prob = 0.4;
  double pp_prob = 0.4;
  bool reorder_adjectives = true;
};

corpus::Corpus generate(std::size_t pairs, std::uint64_t seed, const ToyOptions& options = {});

/// Hypernym/hyponym lexicon over the English side (about a hundred entries).
synthdiv::Lexicon demo_lexicon();

/// One hypernym per English noun; used for the mitigation experiment where a
/// covered word must be substituted more often than not.
synthdiv::Lexicon noun_hypernym_lexicon();

}  // namespace divlab::toy
