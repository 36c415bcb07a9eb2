#include "divlab/toy.hpp"

#include <array>
#include <map>
#include <set>

namespace divlab::toy {

namespace {

struct WordPair {
  const char* en;
  const char* src;
};

constexpr std::array<WordPair, 4> kDets{{{"the", "le"}, {"a", "un"}, {"this", "ce"}, {"every", "chaque"}}};
constexpr std::array<WordPair, 20> kNouns{{{"dog", "chien"},       {"cat", "chat"},     {"bird", "oiseau"},
                                           {"horse", "cheval"},    {"man", "homme"},    {"woman", "femme"},
                                           {"child", "enfant"},    {"teacher", "professeur"},
                                           {"car", "voiture"},     {"house", "maison"}, {"apple", "pomme"},
                                           {"book", "livre"},      {"river", "fleuve"}, {"city", "ville"},
                                           {"tree", "arbre"},      {"flower", "fleur"}, {"desk", "bureau"},
                                           {"chair", "chaise"},    {"ship", "navire"},  {"song", "chanson"}}};
constexpr std::array<WordPair, 10> kAdjs{{{"big", "grand"},
                                          {"small", "petit"},
                                          {"red", "rouge"},
                                          {"old", "vieux"},
                                          {"young", "jeune"},
                                          {"happy", "heureux"},
                                          {"quiet", "calme"},
                                          {"green", "vert"},
                                          {"dark", "sombre"},
                                          {"tall", "haut"}}};
constexpr std::array<WordPair, 10> kVerbs{{{"sees", "voit"},
                                           {"likes", "aime"},
                                           {"finds", "trouve"},
                                           {"takes", "prend"},
                                           {"watches", "regarde"},
                                           {"follows", "suit"},
                                           {"paints", "peint"},
                                           {"carries", "porte"},
                                           {"draws", "dessine"},
                                           {"hears", "entend"}}};
constexpr std::array<WordPair, 5> kAdps{
    {{"near", "pres"}, {"behind", "derriere"}, {"under", "sous"}, {"with", "avec"}, {"beside", "contre"}}};

struct Node {
  std::string en;
  std::string src;
  std::string pos;
  std::string deprel;
  int head = -1;  // node id, -1 = root
};

struct Builder {
  std::vector<Node> nodes;
  std::vector<int> en_order;
  std::vector<int> src_order;

  int add(const WordPair& w, const char* pos, const char* deprel, int head) {
    nodes.push_back({w.en, w.src, pos, deprel, head});
    return static_cast<int>(nodes.size()) - 1;
  }
};

template <std::size_t N>
const WordPair& pick(const std::array<WordPair, N>& words, Rng& rng) {
  return words[uniform_index(rng, N)];
}

// Noun phrase headed by `head`; appends to both word orders.
void noun_phrase(Builder& b, Rng& rng, const ToyOptions& opt, int head, const char* deprel, const WordPair* adp) {
  const auto& noun_word = pick(kNouns, rng);
  const auto& det_word = pick(kDets, rng);
  const bool has_adj = uniform_unit(rng) < opt.adjective_prob;
  const WordPair* adj_word = has_adj ? &pick(kAdjs, rng) : nullptr;

  const int noun = b.add(noun_word, "NOUN", deprel, head);
  int case_marker = -1;
  if (adp != nullptr) case_marker = b.add(*adp, "ADP", "case", noun);
  const int det = b.add(det_word, "DET", "det", noun);
  const int adj = adj_word ? b.add(*adj_word, "ADJ", "amod", noun) : -1;

  if (case_marker >= 0) {
    b.en_order.push_back(case_marker);
    b.src_order.push_back(case_marker);
  }
  b.en_order.push_back(det);
  b.src_order.push_back(det);
  if (adj >= 0) b.en_order.push_back(adj);
  b.en_order.push_back(noun);
  if (adj >= 0 && opt.reorder_adjectives) {
    b.src_order.push_back(noun);
    b.src_order.push_back(adj);
  } else {
    if (adj >= 0) b.src_order.push_back(adj);
    b.src_order.push_back(noun);
  }
}

corpus::Sentence linearize(const Builder& b, const std::vector<int>& order, const std::vector<int>& other_order,
                           bool english) {
  std::vector<int> position(b.nodes.size(), -1);
  std::vector<int> other_position(b.nodes.size(), -1);
  for (std::size_t i = 0; i < order.size(); ++i) position[order[i]] = static_cast<int>(i);
  for (std::size_t i = 0; i < other_order.size(); ++i) other_position[other_order[i]] = static_cast<int>(i);
  corpus::Sentence s;
  for (int id : order) {
    const auto& n = b.nodes[id];
    corpus::AnnotatedToken t;
    t.surface = english ? n.en : n.src;
    t.pos = n.pos;
    t.deprel = n.deprel;
    t.head = n.head < 0 ? 0 : position[n.head] + 1;
    t.align = {other_position[id]};
    s.push_back(std::move(t));
  }
  return s;
}

}  // namespace

corpus::Corpus generate(std::size_t pairs, std::uint64_t seed, const ToyOptions& options) {
  corpus::Corpus c;
  c.name = "toy";
  c.pairs.reserve(pairs);
  static const WordPair kAnd{"and", "et"};
  static const WordPair kStop{".", "."};
  for (std::size_t i = 0; i < pairs; ++i) {
    Rng rng(derive_seed(seed, i));
    Builder b;
    const int clauses =
        options.min_clauses + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(options.max_clauses - options.min_clauses + 1)));
    int main_verb = -1;
    for (int k = 0; k < clauses; ++k) {
      const auto& verb_word = pick(kVerbs, rng);
      int verb = -1;
      if (k == 0) {
        verb = b.add(verb_word, "VERB", "root", -1);
        main_verb = verb;
      } else {
        verb = b.add(verb_word, "VERB", "conj", main_verb);
        const int cc = b.add(kAnd, "CCONJ", "cc", verb);
        b.en_order.push_back(cc);
        b.src_order.push_back(cc);
      }
      noun_phrase(b, rng, options, verb, "nsubj", nullptr);
      b.en_order.push_back(verb);
      b.src_order.push_back(verb);
      noun_phrase(b, rng, options, verb, "obj", nullptr);
      if (uniform_unit(rng) < options.pp_prob) noun_phrase(b, rng, options, verb, "obl", &pick(kAdps, rng));
    }
    const int stop = b.add(kStop, "PUNCT", "punct", main_verb);
    b.en_order.push_back(stop);
    b.src_order.push_back(stop);
    c.pairs.push_back(corpus::make_pair(linearize(b, b.src_order, b.en_order, false),
                                        linearize(b, b.en_order, b.src_order, true)));
  }
  return c;
}

namespace {

struct BaseEntry {
  const char* word;
  std::vector<const char*> hypernyms;
  std::vector<const char*> hyponyms;
};

const std::vector<BaseEntry>& base_entries() {
  static const std::vector<BaseEntry> entries = {
      {"dog", {"animal", "pet"}, {"puppy", "terrier"}},
      {"cat", {"animal", "pet"}, {"kitten"}},
      {"bird", {"animal"}, {"sparrow", "crow"}},
      {"horse", {"animal"}, {"pony", "stallion"}},
      {"man", {"person", "adult"}, {"father", "farmer"}},
      {"woman", {"person", "adult"}, {"mother", "nurse"}},
      {"child", {"person"}, {"boy", "girl"}},
      {"teacher", {"worker", "person"}, {"tutor"}},
      {"car", {"vehicle"}, {"taxi", "truck"}},
      {"house", {"building"}, {"cottage", "villa"}},
      {"apple", {"fruit", "food"}, {"pippin"}},
      {"book", {"text"}, {"novel", "manual"}},
      {"river", {"stream"}, {"creek"}},
      {"city", {"place"}, {"capital", "town"}},
      {"tree", {"plant"}, {"oak", "pine"}},
      {"flower", {"plant"}, {"rose", "tulip"}},
      {"desk", {"furniture", "table"}, {"bench"}},
      {"chair", {"furniture", "seat"}, {"stool"}},
      {"ship", {"vessel", "boat"}, {"ferry"}},
      {"song", {"music", "tune"}, {"ballad", "anthem"}},
      {"sees", {"perceives"}, {"spots", "glimpses"}},
      {"likes", {"feels"}, {"loves", "enjoys"}},
      {"finds", {"gets"}, {"discovers"}},
      {"takes", {"gets"}, {"grabs", "steals"}},
      {"watches", {"observes"}, {"studies"}},
      {"follows", {"moves"}, {"chases", "tracks"}},
      {"paints", {"makes"}, {"colours"}},
      {"carries", {"moves"}, {"lifts", "hauls"}},
      {"draws", {"makes"}, {"sketches"}},
      {"hears", {"perceives"}, {"overhears"}},
  };
  return entries;
}

}  // namespace

synthdiv::Lexicon demo_lexicon() {
  std::map<std::string, synthdiv::LexiconEntry> entries;
  auto add_unique = [](std::vector<std::string>& list, const std::string& w) {
    if (std::find(list.begin(), list.end(), w) == list.end()) list.push_back(w);
  };
  for (const auto& e : base_entries()) {
    auto& entry = entries[e.word];
    for (const char* h : e.hypernyms) {
      add_unique(entry.hypernyms, h);
      add_unique(entries[h].hyponyms, e.word);
    }
    for (const char* h : e.hyponyms) {
      add_unique(entry.hyponyms, h);
      add_unique(entries[h].hypernyms, e.word);
    }
  }
  return synthdiv::Lexicon(std::move(entries));
}

synthdiv::Lexicon noun_hypernym_lexicon() {
  std::map<std::string, synthdiv::LexiconEntry> entries;
  for (const auto& noun : kNouns) {
    for (const auto& e : base_entries()) {
      if (std::string(e.word) == noun.en) entries[noun.en].hypernyms = {e.hypernyms.front()};
    }
  }
  return synthdiv::Lexicon(std::move(entries));
}

}  // namespace divlab::toy
