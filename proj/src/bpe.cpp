#include "divlab/bpe.hpp"

#include <set>

#include <json.hpp>

namespace divlab::corpus {

using nlohmann::json;

namespace {

bool is_reserved(const std::string& w) { return w == kEqTag || w == kDivTag; }

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<std::string> initial_symbols(const std::string& word) {
  auto chars = utf8_chars(word);
  if (!chars.empty()) chars.back() += BpeModel::kEndOfWord;
  return chars;
}

void merge_pair(std::vector<std::string>& symbols, const std::string& left, const std::string& right) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      out.push_back(left + right);
      ++i;
    } else {
      out.push_back(symbols[i]);
    }
  }
  symbols = std::move(out);
}

std::string model_form(const std::string& symbol) {
  if (ends_with(symbol, BpeModel::kEndOfWord)) {
    return symbol.substr(0, symbol.size() - BpeModel::kEndOfWord.size());
  }
  return symbol + std::string(BpeModel::kContinuation);
}

}  // namespace

BpeModel::BpeModel() {
  vocab_ = {{"<pad>", kPad}, {"<s>", kBos}, {"</s>", kEos}, {"<unk>", kUnk},
            {std::string(kEqTag), kEqTagId}, {std::string(kDivTag), kDivTagId}};
  index();
}

BpeModel::BpeModel(std::vector<std::pair<std::string, std::string>> merges,
                   std::map<std::string, int> vocab)
    : merges_(std::move(merges)), vocab_(std::move(vocab)) {
  index();
}

void BpeModel::index() {
  rank_.clear();
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    if (!rank_.emplace(merges_[i], static_cast<int>(i)).second) {
      throw Error("duplicate merge rule '" + merges_[i].first + "' + '" + merges_[i].second + "'");
    }
  }
  id_to_token_.assign(vocab_.size(), std::string());
  std::vector<bool> seen(vocab_.size(), false);
  for (const auto& [tok, id] : vocab_) {
    if (id < 0 || id >= static_cast<int>(vocab_.size()) || seen[id]) {
      throw Error("vocabulary ids must be a permutation of 0..n-1");
    }
    seen[id] = true;
    id_to_token_[id] = tok;
  }
}

std::vector<std::string> BpeModel::segment_word(const std::string& word) const {
  if (is_reserved(word)) return {word};
  auto symbols = initial_symbols(word);
  while (symbols.size() > 1) {
    int best = -1;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = rank_.find({symbols[i], symbols[i + 1]});
      if (it != rank_.end() && (best < 0 || it->second < best)) best = it->second;
    }
    if (best < 0) break;
    const auto pair = merges_[best];
    merge_pair(symbols, pair.first, pair.second);
  }
  if (!symbols.empty()) {
    auto& last = symbols.back();
    last.resize(last.size() - kEndOfWord.size());
  }
  return symbols;
}

int BpeModel::id(const std::string& model_token) const {
  auto it = vocab_.find(model_token);
  return it == vocab_.end() ? kUnk : it->second;
}

const std::string& BpeModel::token(int id) const {
  if (id < 0 || id >= vocab_size()) throw Error("token id " + std::to_string(id) + " out of range");
  return id_to_token_[id];
}

std::vector<int> BpeModel::encode(const std::vector<std::string>& model_tokens) const {
  std::vector<int> ids;
  ids.reserve(model_tokens.size());
  for (const auto& t : model_tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> BpeModel::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

std::string BpeModel::to_json() const {
  json j;
  json merges = json::array();
  for (const auto& [l, r] : merges_) merges.push_back({l, r});
  j["merges"] = merges;
  j["vocab"] = vocab_;
  return j.dump(1);
}

BpeModel BpeModel::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    std::vector<std::pair<std::string, std::string>> merges;
    for (const auto& m : j.at("merges")) merges.emplace_back(m.at(0).get<std::string>(), m.at(1).get<std::string>());
    auto vocab = j.at("vocab").get<std::map<std::string, int>>();
    return BpeModel(std::move(merges), std::move(vocab));
  } catch (const json::exception& e) {
    throw Error(std::string("bad BPE model: ") + e.what());
  }
}

void BpeModel::save(const std::string& path) const { write_file(path, to_json()); }
BpeModel BpeModel::load(const std::string& path) { return from_json(read_file(path)); }

BpeModel learn_bpe(const Corpus& c, int num_merges, int min_frequency) {
  if (c.empty()) throw Error("cannot learn BPE from an empty corpus");
  if (num_merges < 0) throw Error("num_merges must be non-negative");

  std::map<std::string, long> word_freq;
  for (const auto& p : c.pairs) {
    for (const auto* side : {&p.src, &p.tgt}) {
      for (const auto& t : *side) {
        if (!is_reserved(t.surface)) ++word_freq[t.surface];
      }
    }
  }
  std::vector<std::vector<std::string>> words;
  std::vector<long> freqs;
  std::set<std::string> alphabet;
  for (const auto& [w, f] : word_freq) {
    for (auto& ch : utf8_chars(w)) alphabet.insert(ch);
    words.push_back(initial_symbols(w));
    freqs.push_back(f);
  }

  std::vector<std::pair<std::string, std::string>> merges;
  for (int m = 0; m < num_merges; ++m) {
    std::map<std::pair<std::string, std::string>, long> counts;
    for (std::size_t w = 0; w < words.size(); ++w) {
      const auto& s = words[w];
      for (std::size_t i = 0; i + 1 < s.size(); ++i) counts[{s[i], s[i + 1]}] += freqs[w];
    }
    const std::pair<std::string, std::string>* best = nullptr;
    long best_count = 0;
    for (const auto& [pair, count] : counts) {
      if (count > best_count) {
        best = &pair;
        best_count = count;
      }
    }
    if (best == nullptr || best_count < min_frequency) break;
    const auto chosen = *best;
    merges.push_back(chosen);
    for (auto& s : words) merge_pair(s, chosen.first, chosen.second);
  }

  std::set<std::string> tokens;
  for (const auto& ch : alphabet) {
    tokens.insert(ch);
    tokens.insert(ch + std::string(BpeModel::kContinuation));
  }
  for (const auto& s : words) {
    for (const auto& sym : s) tokens.insert(model_form(sym));
  }
  BpeModel base;
  auto vocab = base.vocab();
  int next = BpeModel::kFirstRegular;
  for (const auto& t : tokens) {
    if (vocab.emplace(t, next).second) ++next;
  }
  return BpeModel(std::move(merges), std::move(vocab));
}

std::vector<std::string> SegmentedSentence::model_tokens() const {
  std::vector<std::string> out;
  out.reserve(pieces.size());
  std::size_t k = 0;
  for (int count : splits) {
    for (int j = 0; j < count; ++j, ++k) {
      out.push_back(j + 1 < count ? pieces[k] + std::string(BpeModel::kContinuation) : pieces[k]);
    }
  }
  return out;
}

SegmentedSentence apply_bpe(const std::vector<std::string>& words, const BpeModel& model) {
  SegmentedSentence out;
  for (const auto& w : words) {
    auto pieces = model.segment_word(w);
    out.splits.push_back(static_cast<int>(pieces.size()));
    for (auto& p : pieces) out.pieces.push_back(std::move(p));
  }
  return out;
}

SegmentedPair apply_bpe(const AnnotatedSentencePair& pair, const BpeModel& model) {
  return {apply_bpe(surfaces(pair.src), model), apply_bpe(surfaces(pair.tgt), model)};
}

std::vector<Factor> project_factors_to_subwords(std::span<const Factor> word_factors,
                                                std::span<const int> splits) {
  if (word_factors.size() != splits.size()) throw Error("factor/word count mismatch");
  std::vector<Factor> out;
  for (std::size_t w = 0; w < splits.size(); ++w) out.insert(out.end(), splits[w], word_factors[w]);
  return out;
}

std::vector<std::string> detokenize(const std::vector<std::string>& model_tokens) {
  std::vector<std::string> words;
  std::string cur;
  bool open = false;
  for (const auto& t : model_tokens) {
    if (ends_with(t, BpeModel::kContinuation)) {
      cur += t.substr(0, t.size() - BpeModel::kContinuation.size());
      open = true;
    } else {
      cur += t;
      words.push_back(std::move(cur));
      cur.clear();
      open = false;
    }
  }
  if (open) words.push_back(std::move(cur));
  return words;
}

EncodedPair encode_pair(const AnnotatedSentencePair& pair, const BpeModel& model) {
  const auto seg = apply_bpe(pair, model);
  EncodedPair e;
  e.src_ids = model.encode(seg.src.model_tokens());
  e.src_factors = project_factors_to_subwords(pair.src_factors, seg.src.splits);
  e.tgt_ids = model.encode(seg.tgt.model_tokens());
  e.tgt_factors = project_factors_to_subwords(pair.tgt_factors, seg.tgt.splits);
  e.tgt_ids.push_back(BpeModel::kEos);
  e.tgt_factors.push_back(Factor::EQ);
  return e;
}

}  // namespace divlab::corpus
