#pragma once

// Hand-rolled generators shared by the unit tests.

#include <map>
#include <string>
#include <vector>

#include "divlab/bpe.hpp"
#include "divlab/corpus.hpp"
#include "divlab/model.hpp"
#include "divlab/util.hpp"

namespace divlab::testing {

inline std::vector<std::string> random_words(Rng& rng, int vocab, std::size_t len) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < len; ++i) out.push_back(std::string(1, static_cast<char>('a' + uniform_index(rng, vocab))));
  return out;
}

/// CoNLL-like block for one sentence: flat tree rooted at the last token,
/// 1:1 alignment, no factor column.
inline std::string flat_block(const std::vector<std::string>& words, const std::string& pos = "X") {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    const bool last = i + 1 == words.size();
    out += std::to_string(i + 1) + "\t" + words[i] + "\t" + pos + "\t" + (last ? "0" : std::to_string(words.size())) +
           "\t" + (last ? "root" : "dep") + "\t" + std::to_string(i + 1) + "\n";
  }
  return out + "\n";
}

inline corpus::AnnotatedSentencePair flat_pair(const std::vector<std::string>& src, const std::vector<std::string>& tgt) {
  auto sent = [](const std::vector<std::string>& w, std::size_t other) {
    corpus::Sentence s;
    for (std::size_t i = 0; i < w.size(); ++i) {
      corpus::AnnotatedToken t;
      t.surface = w[i];
      t.pos = "X";
      t.head = i + 1 == w.size() ? 0 : static_cast<int>(w.size());
      if (i < other) t.align = {static_cast<int>(i)};
      s.push_back(t);
    }
    return s;
  };
  return corpus::make_pair(sent(src, tgt.size()), sent(tgt, src.size()));
}

/// Random encoded pairs over regular ids [6, vocab) with EOS-terminated
/// targets and random factors.
inline std::vector<corpus::EncodedPair> random_encoded(Rng& rng, std::size_t n, int src_vocab, int tgt_vocab,
                                                       int max_len) {
  std::vector<corpus::EncodedPair> out;
  for (std::size_t b = 0; b < n; ++b) {
    corpus::EncodedPair e;
    const int ls = 1 + static_cast<int>(uniform_index(rng, max_len));
    const int lt = 1 + static_cast<int>(uniform_index(rng, max_len));
    for (int i = 0; i < ls; ++i) {
      e.src_ids.push_back(6 + static_cast<int>(uniform_index(rng, src_vocab - 6)));
      e.src_factors.push_back(static_cast<corpus::Factor>(uniform_index(rng, 2)));
    }
    for (int i = 0; i < lt; ++i) {
      e.tgt_ids.push_back(i + 1 == lt ? corpus::BpeModel::kEos : 6 + static_cast<int>(uniform_index(rng, tgt_vocab - 6)));
      e.tgt_factors.push_back(static_cast<corpus::Factor>(uniform_index(rng, 2)));
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline model::ModelConfig tiny_config(int d_token, int d_factor, int layers, int vocab = 12) {
  model::ModelConfig c;
  c.src_vocab = vocab;
  c.tgt_vocab = vocab;
  c.d_token_embed = d_token;
  c.d_factor_embed = d_factor;
  c.n_layers = layers;
  c.n_heads = 4;
  c.d_ff = 32;
  c.dropout = 0.0;
  c.label_smoothing = 0.1;
  return c;
}

inline std::map<std::string, Matrix<float>> by_name(const model::ModelParams<float>& p) {
  std::map<std::string, Matrix<float>> out;
  p.for_each([&](const std::string& n, const Matrix<float>& m) { out[n] = m; });
  return out;
}

// Unfactored parameters whose token embeddings are [token row | factor row 0]
// of a singleton-factor model; every other tensor is copied by name.
inline model::ModelParams<float> widen(const model::ModelParams<float>& p) {
  const auto src = by_name(p);
  model::ModelConfig uc = model::unfactored(p.config);
  auto q = model::ModelParams<float>::zeros(uc);
  auto concat = [](const Matrix<float>& tok, const Matrix<float>& fac) {
    Matrix<float> out(tok.rows, tok.cols + fac.cols);
    for (int r = 0; r < tok.rows; ++r) {
      for (int c = 0; c < tok.cols; ++c) out(r, c) = tok(r, c);
      for (int c = 0; c < fac.cols; ++c) out(r, tok.cols + c) = fac(0, c);
    }
    return out;
  };
  q.for_each([&](const std::string& n, Matrix<float>& m) {
    if (m.size() == 0) return;
    if (n == "src_embed") {
      m = concat(p.src_embed, p.src_factor_embed);
    } else if (n == "tgt_embed") {
      m = concat(p.tgt_embed, p.tgt_factor_embed);
    } else {
      const auto it = src.find(n);
      if (it == src.end() || !it->second.same_shape(m)) throw Error("widen: no matching tensor " + n);
      m = it->second;
    }
  });
  return q;
}

}  // namespace divlab::testing
