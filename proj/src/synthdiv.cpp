#include "divlab/synthdiv.hpp"

#include <set>
#include <sstream>

#include <json.hpp>

namespace divlab::synthdiv {

using corpus::AnnotatedToken;
using corpus::Factor;
using corpus::Sentence;
using corpus::TokenSpan;
using nlohmann::json;

Lexicon::Lexicon(std::map<std::string, LexiconEntry> entries) : entries_(std::move(entries)) {
  for (const auto& [word, e] : entries_) {
    for (const auto* list : {&e.hypernyms, &e.hyponyms}) {
      for (const auto& w : *list) {
        if (w == word) throw Error("lexicon entry '" + word + "' lists itself as a substitute");
      }
    }
  }
}

Lexicon Lexicon::from_json(const std::string& text) {
  std::map<std::string, LexiconEntry> entries;
  try {
    const json j = json::parse(text);
    for (const auto& [word, v] : j.items()) {
      LexiconEntry e;
      if (v.contains("hypernyms")) e.hypernyms = v.at("hypernyms").get<std::vector<std::string>>();
      if (v.contains("hyponyms")) e.hyponyms = v.at("hyponyms").get<std::vector<std::string>>();
      entries.emplace(word, std::move(e));
    }
  } catch (const json::exception& e) {
    throw Error(std::string("bad lexicon: ") + e.what());
  }
  return Lexicon(std::move(entries));
}

Lexicon Lexicon::load(const std::string& path) { return from_json(read_file(path)); }

std::string Lexicon::to_json() const {
  json j = json::object();
  for (const auto& [word, e] : entries_) j[word] = {{"hypernyms", e.hypernyms}, {"hyponyms", e.hyponyms}};
  return j.dump(1);
}

std::vector<std::string> Lexicon::substitutes(const std::string& word) const {
  auto it = entries_.find(word);
  if (it == entries_.end()) return {};
  std::vector<std::string> out = it->second.hypernyms;
  out.insert(out.end(), it->second.hyponyms.begin(), it->second.hyponyms.end());
  return out;
}

void PhraseTable::add(const Key& pos, const Phrase& phrase) {
  auto& list = table_[pos];
  if (std::find(list.begin(), list.end(), phrase) == list.end()) list.push_back(phrase);
}

const std::vector<PhraseTable::Phrase>* PhraseTable::find(const Key& pos) const {
  auto it = table_.find(pos);
  return it == table_.end() ? nullptr : &it->second;
}

namespace {

bool has_pos(const Sentence& s, int start, int len) {
  for (int i = start; i < start + len; ++i)
    if (s[i].pos.empty()) return false;
  return true;
}

PhraseTable::Key pos_key(const Sentence& s, int start, int len) {
  PhraseTable::Key k;
  for (int i = start; i < start + len; ++i) k.push_back(s[i].pos);
  return k;
}

PhraseTable::Phrase surface_span(const Sentence& s, int start, int len) {
  PhraseTable::Phrase p;
  for (int i = start; i < start + len; ++i) p.push_back(s[i].surface);
  return p;
}

std::vector<TokenSpan> runs(const std::vector<int>& sorted_positions) {
  std::vector<TokenSpan> out;
  for (int p : sorted_positions) {
    if (!out.empty() && out.back().end == p) {
      ++out.back().end;
    } else {
      out.push_back({p, p + 1});
    }
  }
  return out;
}

void require_equivalent(const AnnotatedSentencePair& pair) {
  if (pair.provenance || !pair.all_eq()) throw Error("corruption expects an equivalent pair");
}

}  // namespace

PhraseTable build_phrase_table(const Corpus& c, int min_len, int max_len, Side side) {
  if (c.empty()) throw Error("cannot build a phrase table from an empty corpus");
  PhraseTable table;
  for (const auto& p : c.pairs) {
    const auto& s = p.side(side);
    const int n = static_cast<int>(s.size());
    for (int len = min_len; len <= max_len; ++len) {
      for (int start = 0; start + len <= n; ++start) {
        if (has_pos(s, start, len)) table.add(pos_key(s, start, len), surface_span(s, start, len));
      }
    }
  }
  return table;
}

std::optional<Corrupted> lexical_substitution(const AnnotatedSentencePair& pair, const Lexicon& lexicon,
                                              Rng& rng, Side side, int max_subs) {
  require_equivalent(pair);
  if (max_subs < 1) throw Error("max_subs must be at least 1");
  const auto& sent = pair.side(side);
  std::vector<int> candidates;
  for (int i = 0; i < static_cast<int>(sent.size()); ++i) {
    if (!lexicon.substitutes(sent[i].surface).empty()) candidates.push_back(i);
  }
  if (candidates.empty()) return std::nullopt;

  const std::size_t upper = std::min<std::size_t>(static_cast<std::size_t>(max_subs), candidates.size());
  const std::size_t count = 1 + uniform_index(rng, upper);
  const auto picks = sample_without_replacement(rng, candidates.size(), count);

  Corrupted out{pair, {}};
  out.record.kind = CorruptionKind::LexSub;
  out.record.side = side;
  auto& target = out.pair.side(side);
  auto& factors = out.pair.factors(side);
  for (std::size_t k : picks) {
    const int i = candidates[k];
    const auto subs = lexicon.substitutes(target[i].surface);
    out.record.original_tokens.push_back(target[i].surface);
    out.record.affected_spans.push_back({i, i + 1});
    target[i].surface = subs[uniform_index(rng, subs.size())];
    factors[i] = Factor::DIV;
  }
  out.pair.provenance = out.record;
  return out;
}

std::optional<Corrupted> phrase_replacement(const AnnotatedSentencePair& pair, const PhraseTable& table,
                                            Rng& rng, Side side, int min_len, int max_len) {
  require_equivalent(pair);
  const auto& sent = pair.side(side);
  const int n = static_cast<int>(sent.size());

  struct Candidate {
    int start;
    int len;
    std::vector<const PhraseTable::Phrase*> alternatives;
  };
  std::vector<Candidate> candidates;
  for (int len = min_len; len <= max_len; ++len) {
    for (int start = 0; start + len <= n; ++start) {
      if (!has_pos(sent, start, len)) continue;
      const auto* phrases = table.find(pos_key(sent, start, len));
      if (phrases == nullptr) continue;
      const auto original = surface_span(sent, start, len);
      Candidate cand{start, len, {}};
      for (const auto& ph : *phrases) {
        if (ph != original) cand.alternatives.push_back(&ph);
      }
      if (!cand.alternatives.empty()) candidates.push_back(std::move(cand));
    }
  }
  if (candidates.empty()) return std::nullopt;

  const auto& chosen = candidates[uniform_index(rng, candidates.size())];
  const auto& replacement = *chosen.alternatives[uniform_index(rng, chosen.alternatives.size())];

  Corrupted out{pair, {}};
  out.record.kind = CorruptionKind::PhraseRep;
  out.record.side = side;
  auto& target = out.pair.side(side);
  auto& factors = out.pair.factors(side);
  std::vector<int> changed;
  for (int k = 0; k < chosen.len; ++k) {
    const int i = chosen.start + k;
    if (target[i].surface != replacement[k]) {
      changed.push_back(i);
      out.record.original_tokens.push_back(target[i].surface);
      target[i].surface = replacement[k];
      factors[i] = Factor::DIV;
    }
  }
  out.record.affected_spans = runs(changed);
  out.pair.provenance = out.record;
  return out;
}

std::optional<std::vector<std::vector<int>>> subtrees(const Sentence& s) {
  const int n = static_cast<int>(s.size());
  if (n == 0) return std::nullopt;
  std::vector<std::vector<int>> children(n + 1);
  int roots = 0;
  for (int i = 1; i <= n; ++i) {
    const int h = s[i - 1].head;
    if (h < 0 || h > n || h == i) return std::nullopt;
    if (h == 0) ++roots;
    children[h].push_back(i);
  }
  if (roots != 1) return std::nullopt;
  // Every node must reach the root without revisiting a node.
  for (int i = 1; i <= n; ++i) {
    int cur = i;
    int steps = 0;
    while (cur != 0) {
      cur = s[cur - 1].head;
      if (++steps > n) return std::nullopt;
    }
  }
  std::vector<std::vector<int>> out(n + 1);
  for (int v = 1; v <= n; ++v) {
    std::vector<int> stack{v};
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      out[v].push_back(u);
      for (int ch : children[u]) stack.push_back(ch);
    }
    std::sort(out[v].begin(), out[v].end());
  }
  return out;
}

bool is_valid_tree(const Sentence& s) { return subtrees(s).has_value(); }

std::optional<Corrupted> subtree_deletion(const AnnotatedSentencePair& pair, Rng& rng, SideChoice choice,
                                          int min_size, double max_frac) {
  Side side = Side::TGT;
  switch (choice) {
    case SideChoice::SRC:
      side = Side::SRC;
      break;
    case SideChoice::TGT:
      side = Side::TGT;
      break;
    case SideChoice::RANDOM:
      side = uniform_index(rng, 2) == 0 ? Side::SRC : Side::TGT;
      break;
  }
  const auto& sent = pair.side(side);
  const int n = static_cast<int>(sent.size());
  for (const auto& t : sent) {
    if (t.head == -1) return std::nullopt;
  }
  const auto trees = subtrees(sent);
  if (!trees) return std::nullopt;

  std::vector<int> candidates;
  for (int v = 1; v <= n; ++v) {
    const auto size = static_cast<double>((*trees)[v].size());
    if (sent[v - 1].head == 0) continue;
    if (size >= min_size && size <= max_frac * n) candidates.push_back(v);
  }
  if (candidates.empty()) return std::nullopt;
  const int victim = candidates[uniform_index(rng, candidates.size())];
  const auto& removed = (*trees)[victim];  // sorted, 1-based

  std::vector<bool> gone(n, false);
  for (int id : removed) gone[id - 1] = true;
  std::vector<int> remap(n, -1);  // old 0-based -> new 0-based
  int next = 0;
  for (int i = 0; i < n; ++i) {
    if (!gone[i]) remap[i] = next++;
  }

  Corrupted out{pair, {}};
  out.record.kind = CorruptionKind::SubtreeDel;
  out.record.side = side;
  std::vector<int> positions;
  for (int id : removed) {
    positions.push_back(id - 1);
    out.record.original_tokens.push_back(sent[id - 1].surface);
  }
  out.record.affected_spans = runs(positions);

  Sentence kept;
  std::vector<Factor> kept_factors;
  const auto& old_factors = pair.factors(side);
  for (int i = 0; i < n; ++i) {
    if (gone[i]) continue;
    AnnotatedToken t = sent[i];
    if (t.head > 0) t.head = remap[t.head - 1] + 1;
    kept.push_back(std::move(t));
    kept_factors.push_back(old_factors[i]);
  }
  out.pair.side(side) = std::move(kept);
  out.pair.factors(side) = std::move(kept_factors);

  auto& other = out.pair.side(corpus::opposite(side));
  auto& other_factors = out.pair.factors(corpus::opposite(side));
  for (std::size_t j = 0; j < other.size(); ++j) {
    auto& t = other[j];
    if (t.align.empty()) continue;
    bool all_gone = true;
    std::vector<int> survivors;
    for (int a : t.align) {
      if (gone[a]) continue;
      all_gone = false;
      survivors.push_back(remap[a]);
    }
    if (all_gone) other_factors[j] = Factor::DIV;
    t.align = std::move(survivors);
  }
  out.pair.provenance = out.record;
  return out;
}

CorruptionOutcome corrupt_corpus_indexed(const Corpus& c, CorruptionKind kind, const CorruptionParams& params,
                                         const CorruptionInputs& inputs, std::uint64_t seed) {
  if (kind == CorruptionKind::LexSub && inputs.lexicon == nullptr) throw Error("lexical substitution needs a lexicon");
  if (kind == CorruptionKind::PhraseRep && inputs.phrases == nullptr) {
    throw Error("phrase replacement needs a phrase table");
  }
  const long n = static_cast<long>(c.size());
  std::vector<std::optional<Corrupted>> results(c.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (long i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const auto& p = c.pairs[i];
    switch (kind) {
      case CorruptionKind::LexSub:
        results[i] = lexical_substitution(p, *inputs.lexicon, rng, params.side, params.max_subs);
        break;
      case CorruptionKind::PhraseRep:
        results[i] = phrase_replacement(p, *inputs.phrases, rng, params.side, params.phrase_min, params.phrase_max);
        break;
      case CorruptionKind::SubtreeDel:
        results[i] = subtree_deletion(p, rng, params.deletion_side, params.min_subtree, params.max_subtree_frac);
        break;
    }
  }
  CorruptionOutcome out;
  out.corpus.name = c.name + "." + to_lower_ascii(corpus::to_string(kind));
  out.corpus.factor_tagged = true;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!results[i]) continue;
    out.corpus.pairs.push_back(std::move(results[i]->pair));
    out.kept.push_back(i);
  }
  return out;
}

Corpus corrupt_corpus(const Corpus& c, CorruptionKind kind, const CorruptionParams& params,
                      const CorruptionInputs& inputs, std::uint64_t seed) {
  return corrupt_corpus_indexed(c, kind, params, inputs, seed).corpus;
}

AnnotatedSentencePair mirror_div_tags(const AnnotatedSentencePair& pair) {
  AnnotatedSentencePair out = pair;
  for (Side side : {Side::SRC, Side::TGT}) {
    const auto& sent = pair.side(side);
    const auto& factors = pair.factors(side);
    auto& other = out.factors(corpus::opposite(side));
    for (std::size_t i = 0; i < sent.size(); ++i) {
      if (factors[i] != Factor::DIV) continue;
      for (int a : sent[i].align) other[a] = Factor::DIV;
    }
  }
  return out;
}

CorruptionStats corruption_stats(const Corpus& c, Side side) {
  CorruptionStats s;
  std::set<std::string> types;
  double share_sum = 0.0;
  for (const auto& p : c.pairs) {
    const auto& sent = p.side(side);
    const auto& factors = p.factors(side);
    s.tokens += sent.size();
    for (const auto& t : sent) types.insert(t.surface);
    double share = 0.0;
    if (p.provenance && p.provenance->kind == CorruptionKind::SubtreeDel && p.provenance->side == side) {
      const double deleted = static_cast<double>(p.provenance->original_tokens.size());
      share = deleted / (static_cast<double>(sent.size()) + deleted);
    } else if (!sent.empty()) {
      const auto div = std::count(factors.begin(), factors.end(), Factor::DIV);
      share = static_cast<double>(div) / static_cast<double>(sent.size());
    }
    share_sum += share;
  }
  s.sentences = c.size();
  s.types = types.size();
  if (s.sentences > 0) {
    s.mean_length = static_cast<double>(s.tokens) / static_cast<double>(s.sentences);
    s.pct_corrupted = 100.0 * share_sum / static_cast<double>(s.sentences);
  }
  return s;
}

std::string stats_csv_header() { return "corpus,sentences,tokens,types,length,pct_corr"; }

std::string stats_csv_row(const std::string& name, const CorruptionStats& s) {
  std::ostringstream out;
  out << name << ',' << s.sentences << ',' << s.tokens << ',' << s.types << ',' << format_fixed(s.mean_length, 1)
      << ',' << format_fixed(s.pct_corrupted, 2);
  return out.str();
}

}  // namespace divlab::synthdiv
