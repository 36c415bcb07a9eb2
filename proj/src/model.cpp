#include "divlab/model.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <json.hpp>

#include "divlab/kernels.hpp"

namespace divlab::model {

using json = nlohmann::json;
using corpus::EncodedPair;

// ---------------------------------------------------------------------------
// Configuration

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error("invalid model config: " + msg); };
  if (src_vocab <= 0 || tgt_vocab <= 0) fail("vocabulary sizes must be positive");
  if (d_token_embed <= 0 || d_factor_embed < 0) fail("embedding widths must be positive");
  if (n_layers < 1) fail("n_layers must be >= 1");
  if (n_heads < 1 || d_model() % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (d_ff < 1) fail("d_ff must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) fail("label_smoothing must lie in [0, 1)");
  if (factor_vocab < 0) fail("factor_vocab must be >= 0");
  if (factor_vocab == 0 && d_factor_embed != 0) fail("unfactored models need d_factor_embed = 0");
  if (tie_target_embeddings && factored()) fail("factored models cannot tie target embeddings");
}

std::string ModelConfig::to_json() const {
  json j = {{"src_vocab", src_vocab},
            {"tgt_vocab", tgt_vocab},
            {"d_token_embed", d_token_embed},
            {"d_factor_embed", d_factor_embed},
            {"n_layers", n_layers},
            {"n_heads", n_heads},
            {"d_ff", d_ff},
            {"dropout", dropout},
            {"label_smoothing", label_smoothing},
            {"tie_target_embeddings", tie_target_embeddings},
            {"factor_vocab", factor_vocab}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  ModelConfig c;
  c.src_vocab = j.value("src_vocab", c.src_vocab);
  c.tgt_vocab = j.value("tgt_vocab", c.tgt_vocab);
  c.d_token_embed = j.value("d_token_embed", c.d_token_embed);
  c.d_factor_embed = j.value("d_factor_embed", c.d_factor_embed);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.dropout = j.value("dropout", c.dropout);
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  c.tie_target_embeddings = j.value("tie_target_embeddings", c.tie_target_embeddings);
  c.factor_vocab = j.value("factor_vocab", c.factor_vocab);
  return c;
}

ModelConfig unfactored(const ModelConfig& config) {
  ModelConfig c = config;
  c.d_token_embed = config.d_model();
  c.d_factor_embed = 0;
  c.factor_vocab = 0;
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

template <typename T>
NormWeights<T> make_norm(int d) {
  return {Matrix<T>(1, d), Matrix<T>(1, d)};
}

template <typename T>
AttentionWeights<T> make_attention(int d) {
  return {Matrix<T>(d, d), Matrix<T>(1, d), Matrix<T>(d, d), Matrix<T>(1, d),
          Matrix<T>(d, d), Matrix<T>(1, d), Matrix<T>(d, d), Matrix<T>(1, d)};
}

template <typename T>
FeedForwardWeights<T> make_ffn(int d, int ff) {
  return {Matrix<T>(d, ff), Matrix<T>(1, ff), Matrix<T>(ff, d), Matrix<T>(1, d)};
}

template <typename M, typename F>
void visit_norm(const std::string& prefix, M& n, F& fn) {
  fn(prefix + ".gamma", n.gamma);
  fn(prefix + ".beta", n.beta);
}

template <typename M, typename F>
void visit_attention(const std::string& prefix, M& a, F& fn) {
  fn(prefix + ".wq", a.wq);
  fn(prefix + ".bq", a.bq);
  fn(prefix + ".wk", a.wk);
  fn(prefix + ".bk", a.bk);
  fn(prefix + ".wv", a.wv);
  fn(prefix + ".bv", a.bv);
  fn(prefix + ".wo", a.wo);
  fn(prefix + ".bo", a.bo);
}

template <typename M, typename F>
void visit_ffn(const std::string& prefix, M& f, F& fn) {
  fn(prefix + ".w1", f.w1);
  fn(prefix + ".b1", f.b1);
  fn(prefix + ".w2", f.w2);
  fn(prefix + ".b2", f.b2);
}

template <typename P, typename F>
void visit_params(P& p, F& fn) {
  fn(std::string("src_embed"), p.src_embed);
  fn(std::string("tgt_embed"), p.tgt_embed);
  fn(std::string("src_factor_embed"), p.src_factor_embed);
  fn(std::string("tgt_factor_embed"), p.tgt_factor_embed);
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    const std::string pre = "encoder." + std::to_string(i);
    visit_norm(pre + ".norm1", p.encoder[i].norm1, fn);
    visit_attention(pre + ".self_attn", p.encoder[i].self_attn, fn);
    visit_norm(pre + ".norm2", p.encoder[i].norm2, fn);
    visit_ffn(pre + ".ffn", p.encoder[i].ffn, fn);
  }
  visit_norm("encoder_norm", p.encoder_norm, fn);
  for (std::size_t i = 0; i < p.decoder.size(); ++i) {
    const std::string pre = "decoder." + std::to_string(i);
    visit_norm(pre + ".norm1", p.decoder[i].norm1, fn);
    visit_attention(pre + ".self_attn", p.decoder[i].self_attn, fn);
    visit_norm(pre + ".norm2", p.decoder[i].norm2, fn);
    visit_attention(pre + ".cross_attn", p.decoder[i].cross_attn, fn);
    visit_norm(pre + ".norm3", p.decoder[i].norm3, fn);
    visit_ffn(pre + ".ffn", p.decoder[i].ffn, fn);
  }
  visit_norm("decoder_norm", p.decoder_norm, fn);
  fn(std::string("out_w"), p.out_w);
  fn(std::string("out_b"), p.out_b);
  fn(std::string("factor_w"), p.factor_w);
  fn(std::string("factor_b"), p.factor_b);
}

template <typename T>
std::vector<Matrix<T>*> tensors(ModelParams<T>& p) {
  std::vector<Matrix<T>*> out;
  auto fn = [&](const std::string&, Matrix<T>& m) { out.push_back(&m); };
  visit_params(p, fn);
  return out;
}

template <typename T>
std::vector<const Matrix<T>*> tensors(const ModelParams<T>& p) {
  std::vector<const Matrix<T>*> out;
  auto fn = [&](const std::string&, const Matrix<T>& m) { out.push_back(&m); };
  visit_params(p, fn);
  return out;
}

double normal(Rng& rng) {
  double u1 = uniform_unit(rng);
  const double u2 = uniform_unit(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const ModelConfig& config) {
  config.validate();
  const int d = config.d_model();
  ModelParams<T> p;
  p.config = config;
  p.src_embed = Matrix<T>(config.src_vocab, config.d_token_embed);
  p.tgt_embed = Matrix<T>(config.tgt_vocab, config.d_token_embed);
  if (config.factored() && config.d_factor_embed > 0) {
    p.src_factor_embed = Matrix<T>(config.factor_vocab, config.d_factor_embed);
    p.tgt_factor_embed = Matrix<T>(config.factor_vocab, config.d_factor_embed);
  }
  for (int l = 0; l < config.n_layers; ++l) {
    p.encoder.push_back({make_norm<T>(d), make_attention<T>(d), make_norm<T>(d), make_ffn<T>(d, config.d_ff)});
    p.decoder.push_back({make_norm<T>(d), make_attention<T>(d), make_norm<T>(d), make_attention<T>(d),
                         make_norm<T>(d), make_ffn<T>(d, config.d_ff)});
  }
  p.encoder_norm = make_norm<T>(d);
  p.decoder_norm = make_norm<T>(d);
  if (!config.tie_target_embeddings) p.out_w = Matrix<T>(d, config.tgt_vocab);
  p.out_b = Matrix<T>(1, config.tgt_vocab);
  if (config.factored()) {
    p.factor_w = Matrix<T>(d, config.factor_vocab);
    p.factor_b = Matrix<T>(1, config.factor_vocab);
  }
  return p;
}

template <typename T>
void ModelParams<T>::for_each(const std::function<void(const std::string&, Matrix<T>&)>& fn) {
  auto f = [&](const std::string& name, Matrix<T>& m) { fn(name, m); };
  visit_params(*this, f);
}

template <typename T>
void ModelParams<T>::for_each(const std::function<void(const std::string&, const Matrix<T>&)>& fn) const {
  auto f = [&](const std::string& name, const Matrix<T>& m) { fn(name, m); };
  visit_params(*this, f);
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* m : tensors(*this)) n += m->size();
  return n;
}

template <typename T>
void ModelParams<T>::set_zero() {
  for (auto* m : tensors(*this)) m->fill(T(0));
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out = ModelParams<U>::zeros(config);
  const auto src = tensors(*this);
  const auto dst = tensors(out);
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
  return out;
}

ModelParams<float> init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams<float> p = ModelParams<float>::zeros(config);
  Rng rng(seed);
  const double embed_std = 1.0 / std::sqrt(static_cast<double>(config.d_model()));
  p.for_each([&](const std::string& name, Matrix<float>& m) {
    if (m.size() == 0) return;
    const std::string leaf = name.substr(name.rfind('.') + 1);
    if (name.find("embed") != std::string::npos) {
      for (float& v : m.data) v = static_cast<float>(embed_std * normal(rng));
    } else if (leaf == "gamma") {
      m.fill(1.0f);
    } else if (leaf[0] == 'w' || leaf.ends_with("_w")) {
      const double limit = std::sqrt(6.0 / (m.rows + m.cols));
      for (float& v : m.data) v = static_cast<float>((2.0 * uniform_unit(rng) - 1.0) * limit);
    }
  });
  return p;
}

// ---------------------------------------------------------------------------
// Batches

int FactoredBatch::src_len(int b) const {
  int n = 0;
  for (int t = 0; t < src_time; ++t) n += src_mask[static_cast<std::size_t>(b) * src_time + t];
  return n;
}

int FactoredBatch::tgt_len(int b) const {
  int n = 0;
  for (int t = 0; t < tgt_time; ++t) n += tgt_mask[static_cast<std::size_t>(b) * tgt_time + t];
  return n;
}

int FactoredBatch::target_tokens() const {
  int n = 0;
  for (int m : tgt_mask) n += m;
  return n;
}

void FactoredBatch::validate() const {
  const std::size_t ns = static_cast<std::size_t>(batch) * src_time;
  const std::size_t nt = static_cast<std::size_t>(batch) * tgt_time;
  if (src_ids.size() != ns || src_factor_ids.size() != ns || src_mask.size() != ns) {
    throw Error("batch: source grids do not match (batch, src_time)");
  }
  if (tgt_ids.size() != nt || tgt_factor_ids.size() != nt || shifted_factor_targets.size() != nt ||
      tgt_mask.size() != nt) {
    throw Error("batch: target grids do not match (batch, tgt_time)");
  }
  auto check_prefix = [](const std::vector<int>& mask, int b, int time, const char* which) {
    bool seen_pad = false;
    for (int t = 0; t < time; ++t) {
      const int m = mask[static_cast<std::size_t>(b) * time + t];
      if (m != 0 && m != 1) throw Error(std::string("batch: ") + which + " mask must be 0/1");
      if (m == 0) seen_pad = true;
      if (m == 1 && seen_pad) throw Error(std::string("batch: ") + which + " padding must be trailing");
    }
  };
  for (int b = 0; b < batch; ++b) {
    check_prefix(src_mask, b, src_time, "source");
    check_prefix(tgt_mask, b, tgt_time, "target");
    if (tgt_len(b) == 0) throw Error("batch: empty target sentence");
    const std::size_t row = static_cast<std::size_t>(b) * tgt_time;
    const int len = tgt_len(b);
    if (shifted_factor_targets[row] != kFactorBegin) throw Error("batch: shifted factor stream must start with BEGIN");
    for (int t = 1; t < len; ++t) {
      if (shifted_factor_targets[row + t] != tgt_factor_ids[row + t - 1]) {
        throw Error("batch: shifted factor stream is not the target factors delayed by one step");
      }
    }
  }
}

FactoredBatch make_batch(const std::vector<EncodedPair>& pairs) {
  FactoredBatch b;
  b.batch = static_cast<int>(pairs.size());
  for (const auto& p : pairs) {
    if (p.tgt_ids.empty()) throw Error("batch: empty target sentence");
    b.src_time = std::max(b.src_time, static_cast<int>(p.src_ids.size()));
    b.tgt_time = std::max(b.tgt_time, static_cast<int>(p.tgt_ids.size()));
  }
  const std::size_t ns = static_cast<std::size_t>(b.batch) * b.src_time;
  const std::size_t nt = static_cast<std::size_t>(b.batch) * b.tgt_time;
  b.src_ids.assign(ns, corpus::BpeModel::kPad);
  b.src_factor_ids.assign(ns, kFactorEq);
  b.src_mask.assign(ns, 0);
  b.tgt_ids.assign(nt, corpus::BpeModel::kPad);
  b.tgt_factor_ids.assign(nt, kFactorEq);
  b.shifted_factor_targets.assign(nt, kFactorEq);
  b.tgt_mask.assign(nt, 0);
  for (int i = 0; i < b.batch; ++i) {
    const auto& p = pairs[i];
    if (p.src_factors.size() != p.src_ids.size() || p.tgt_factors.size() != p.tgt_ids.size()) {
      throw Error("batch: factor sequence length differs from token sequence length");
    }
    const std::size_t rs = static_cast<std::size_t>(i) * b.src_time;
    for (std::size_t t = 0; t < p.src_ids.size(); ++t) {
      b.src_ids[rs + t] = p.src_ids[t];
      b.src_factor_ids[rs + t] = static_cast<int>(p.src_factors[t]);
      b.src_mask[rs + t] = 1;
    }
    const std::size_t rt = static_cast<std::size_t>(i) * b.tgt_time;
    for (std::size_t t = 0; t < p.tgt_ids.size(); ++t) {
      b.tgt_ids[rt + t] = p.tgt_ids[t];
      b.tgt_factor_ids[rt + t] = static_cast<int>(p.tgt_factors[t]);
      b.shifted_factor_targets[rt + t] = t == 0 ? kFactorBegin : static_cast<int>(p.tgt_factors[t - 1]);
      b.tgt_mask[rt + t] = 1;
    }
  }
  return b;
}

Example example_at(const FactoredBatch& batch, int b) {
  Example e;
  const int ls = batch.src_len(b);
  const int lt = batch.tgt_len(b);
  const std::size_t rs = static_cast<std::size_t>(b) * batch.src_time;
  const std::size_t rt = static_cast<std::size_t>(b) * batch.tgt_time;
  e.src_ids.assign(batch.src_ids.begin() + rs, batch.src_ids.begin() + rs + ls);
  e.src_factors.assign(batch.src_factor_ids.begin() + rs, batch.src_factor_ids.begin() + rs + ls);
  e.tgt_ids.assign(batch.tgt_ids.begin() + rt, batch.tgt_ids.begin() + rt + lt);
  e.factor_targets.assign(batch.shifted_factor_targets.begin() + rt, batch.shifted_factor_targets.begin() + rt + lt);
  e.dec_tokens.push_back(corpus::BpeModel::kBos);
  e.dec_factors.push_back(kFactorBegin);
  for (int t = 0; t + 1 < lt; ++t) {
    e.dec_tokens.push_back(e.tgt_ids[t]);
    e.dec_factors.push_back(e.factor_targets[t]);
  }
  return e;
}

// ---------------------------------------------------------------------------
// Graph construction

namespace {

template <typename T>
Matrix<T> positional_encoding(int len, int d) {
  Matrix<T> pe(len, d);
  for (int pos = 0; pos < len; ++pos) {
    for (int i = 0; i < d; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d);
      pe(pos, i) = static_cast<T>(std::sin(angle));
      if (i + 1 < d) pe(pos, i + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

template <typename T>
ParamRef<T> ref(const Matrix<T>& v, Matrix<T>* g) {
  return {&v, g};
}

#define DIVLAB_REF(w, gw, field) ref((w).field, (gw) ? &(gw)->field : nullptr)

template <typename T>
struct Builder {
  using Var = typename Graph<T>::Var;

  Graph<T>& g;
  const ModelParams<T>& p;
  ModelParams<T>* gp;  // gradient buffer, or null
  T dropout;
  Rng* rng;

  Var drop(Var x) { return (dropout > T(0) && rng) ? g.dropout(x, dropout, *rng) : x; }

  Var norm(Var x, const NormWeights<T>& w, NormWeights<T>* gw) {
    return g.layer_norm(x, DIVLAB_REF(w, gw, gamma), DIVLAB_REF(w, gw, beta));
  }

  Var attention(Var x, Var memory, const AttentionWeights<T>& w, AttentionWeights<T>* gw, bool causal) {
    const Var q = g.linear(x, DIVLAB_REF(w, gw, wq), DIVLAB_REF(w, gw, bq));
    const Var k = g.linear(memory, DIVLAB_REF(w, gw, wk), DIVLAB_REF(w, gw, bk));
    const Var v = g.linear(memory, DIVLAB_REF(w, gw, wv), DIVLAB_REF(w, gw, bv));
    const Var o = g.attention(q, k, v, p.config.n_heads, causal);
    return g.linear(o, DIVLAB_REF(w, gw, wo), DIVLAB_REF(w, gw, bo));
  }

  Var ffn(Var x, const FeedForwardWeights<T>& w, FeedForwardWeights<T>* gw) {
    const Var h = g.relu(g.linear(x, DIVLAB_REF(w, gw, w1), DIVLAB_REF(w, gw, b1)));
    return g.linear(drop(h), DIVLAB_REF(w, gw, w2), DIVLAB_REF(w, gw, b2));
  }

  Var embed(std::span<const int> ids, std::span<const int> factors, const Matrix<T>& table, Matrix<T>* gtable,
            const Matrix<T>& ftable, Matrix<T>* gftable) {
    Var x = g.gather_rows(ref(table, gtable), ids);
    if (p.config.factored() && p.config.d_factor_embed > 0) {
      x = g.concat_cols(x, g.gather_rows(ref(ftable, gftable), factors));
    }
    x = g.scale(x, static_cast<T>(std::sqrt(static_cast<double>(p.config.d_model()))));
    x = g.add_constant(x, positional_encoding<T>(static_cast<int>(ids.size()), p.config.d_model()));
    return drop(x);
  }

  Var encoder(std::span<const int> ids, std::span<const int> factors) {
    Var x = embed(ids, factors, p.src_embed, gp ? &gp->src_embed : nullptr, p.src_factor_embed,
                  gp ? &gp->src_factor_embed : nullptr);
    for (std::size_t l = 0; l < p.encoder.size(); ++l) {
      const auto& w = p.encoder[l];
      auto* gw = gp ? &gp->encoder[l] : nullptr;
      const Var h = norm(x, w.norm1, gw ? &gw->norm1 : nullptr);
      x = g.add(x, drop(attention(h, h, w.self_attn, gw ? &gw->self_attn : nullptr, false)));
      x = g.add(x, drop(ffn(norm(x, w.norm2, gw ? &gw->norm2 : nullptr), w.ffn, gw ? &gw->ffn : nullptr)));
    }
    return norm(x, p.encoder_norm, gp ? &gp->encoder_norm : nullptr);
  }

  std::pair<Var, Var> decoder(Var memory, std::span<const int> ids, std::span<const int> factors) {
    Var y = embed(ids, factors, p.tgt_embed, gp ? &gp->tgt_embed : nullptr, p.tgt_factor_embed,
                  gp ? &gp->tgt_factor_embed : nullptr);
    for (std::size_t l = 0; l < p.decoder.size(); ++l) {
      const auto& w = p.decoder[l];
      auto* gw = gp ? &gp->decoder[l] : nullptr;
      const Var h = norm(y, w.norm1, gw ? &gw->norm1 : nullptr);
      y = g.add(y, drop(attention(h, h, w.self_attn, gw ? &gw->self_attn : nullptr, true)));
      const Var c = norm(y, w.norm2, gw ? &gw->norm2 : nullptr);
      y = g.add(y, drop(attention(c, memory, w.cross_attn, gw ? &gw->cross_attn : nullptr, false)));
      y = g.add(y, drop(ffn(norm(y, w.norm3, gw ? &gw->norm3 : nullptr), w.ffn, gw ? &gw->ffn : nullptr)));
    }
    const Var state = norm(y, p.decoder_norm, gp ? &gp->decoder_norm : nullptr);
    Var token = -1;
    if (p.config.tie_target_embeddings) {
      token = g.linear_transposed(state, ref(p.tgt_embed, gp ? &gp->tgt_embed : nullptr),
                                  ref(p.out_b, gp ? &gp->out_b : nullptr));
    } else {
      token = g.linear(state, ref(p.out_w, gp ? &gp->out_w : nullptr), ref(p.out_b, gp ? &gp->out_b : nullptr));
    }
    Var factor = -1;
    if (p.config.factored()) {
      factor = g.linear(state, ref(p.factor_w, gp ? &gp->factor_w : nullptr),
                        ref(p.factor_b, gp ? &gp->factor_b : nullptr));
    }
    return {token, factor};
  }
};

#undef DIVLAB_REF

/// Factor ids clamped into the configured label set, so a singleton factor
/// vocabulary sees only label 0.
void collapse_factors(Example& e, int vocab) {
  if (vocab <= 0) return;
  for (auto* ids : {&e.src_factors, &e.dec_factors, &e.factor_targets})
    for (int& v : *ids) v = std::min(v, vocab - 1);
}

void check_example(const Example& e) {
  if (e.src_ids.empty()) throw Error("forward: empty source sentence");
  if (e.tgt_ids.empty()) throw Error("forward: empty target sentence");
}

}  // namespace

// ---------------------------------------------------------------------------
// Embeddings, forward and loss

namespace {

template <typename T>
Tensor3<T> embed_grid(const FactoredBatch& batch, const ModelParams<T>& p, bool source) {
  const int time = source ? batch.src_time : batch.tgt_time;
  const Matrix<T>& table = source ? p.src_embed : p.tgt_embed;
  const Matrix<T>& ftable = source ? p.src_factor_embed : p.tgt_factor_embed;
  const auto& ids = source ? batch.src_ids : batch.tgt_ids;
  const auto& fids = source ? batch.src_factor_ids : batch.tgt_factor_ids;
  const auto& mask = source ? batch.src_mask : batch.tgt_mask;
  Tensor3<T> out(batch.batch, time, p.config.d_model());
  for (int b = 0; b < batch.batch; ++b) {
    for (int t = 0; t < time; ++t) {
      const std::size_t i = static_cast<std::size_t>(b) * time + t;
      if (mask[i] == 0) continue;
      if (ids[i] < 0 || ids[i] >= table.rows) throw Error("embedding: token id " + std::to_string(ids[i]) + " out of range");
      auto dst = out.vec(b, t);
      std::copy(table.row(ids[i]).begin(), table.row(ids[i]).end(), dst.begin());
      if (ftable.size() == 0) continue;
      if (fids[i] < 0 || fids[i] >= ftable.rows) throw Error("embedding: factor id " + std::to_string(fids[i]) + " out of range");
      std::copy(ftable.row(fids[i]).begin(), ftable.row(fids[i]).end(), dst.begin() + table.cols);
    }
  }
  return out;
}

}  // namespace

template <typename T>
Tensor3<T> embed_source(const FactoredBatch& batch, const ModelParams<T>& params) {
  return embed_grid(batch, params, true);
}

template <typename T>
Tensor3<T> embed_target(const FactoredBatch& batch, const ModelParams<T>& params) {
  return embed_grid(batch, params, false);
}

template <typename T>
Logits<T> forward(const FactoredBatch& batch, const ModelParams<T>& params, bool train_mode,
                  std::uint64_t dropout_seed) {
  batch.validate();
  const int fv = params.config.factored() ? params.config.factor_vocab : 0;
  Logits<T> out{Tensor3<T>(batch.batch, batch.tgt_time, params.config.tgt_vocab),
                Tensor3<T>(batch.batch, batch.tgt_time, fv)};
  for (int b = 0; b < batch.batch; ++b) {
    Example e = example_at(batch, b);
    check_example(e);
    collapse_factors(e, params.config.factor_vocab);
    Graph<T> g(false);
    Rng rng(derive_seed(dropout_seed, static_cast<std::uint64_t>(b)));
    Builder<T> bld{g, params, nullptr, train_mode ? static_cast<T>(params.config.dropout) : T(0),
                   train_mode ? &rng : nullptr};
    const auto memory = bld.encoder(e.src_ids, e.src_factors);
    const auto [tok, fac] = bld.decoder(memory, e.dec_tokens, e.dec_factors);
    const Matrix<T>& tv = g.value(tok);
    for (int t = 0; t < tv.rows; ++t) std::copy(tv.row(t).begin(), tv.row(t).end(), out.token.vec(b, t).begin());
    if (fac >= 0) {
      const Matrix<T>& fvv = g.value(fac);
      for (int t = 0; t < fvv.rows; ++t)
        std::copy(fvv.row(t).begin(), fvv.row(t).end(), out.factor.vec(b, t).begin());
    }
  }
  return out;
}

namespace {

double smoothed_nll(std::span<const double> logits, int target, double smoothing) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : logits) {
    if (!std::isfinite(v)) throw Error("loss: non-finite logit");
    m = std::max(m, v);
  }
  double s = 0;
  for (double v : logits) s += std::exp(v - m);
  const double lse = m + std::log(s);
  double loss = (1.0 - smoothing) * (lse - logits[target]);
  if (smoothing > 0) {
    double mean = 0;
    for (double v : logits) mean += lse - v;
    loss += smoothing * mean / static_cast<double>(logits.size());
  }
  return loss;
}

}  // namespace

template <typename T>
LossBreakdown divergent_aware_loss(const Logits<T>& logits, const FactoredBatch& batch, double label_smoothing) {
  batch.validate();
  LossBreakdown out;
  const int tokens = batch.target_tokens();
  if (tokens == 0) return out;
  std::vector<double> row;
  for (int b = 0; b < batch.batch; ++b) {
    for (int t = 0; t < batch.tgt_len(b); ++t) {
      const std::size_t i = static_cast<std::size_t>(b) * batch.tgt_time + t;
      auto tv = logits.token.vec(b, t);
      row.assign(tv.begin(), tv.end());
      out.mt_loss += smoothed_nll(row, batch.tgt_ids[i], label_smoothing);
      if (logits.factor.width > 0) {
        auto fv = logits.factor.vec(b, t);
        row.assign(fv.begin(), fv.end());
        const int target = std::min(batch.shifted_factor_targets[i], logits.factor.width - 1);
        out.factor_loss += smoothed_nll(row, target, label_smoothing);
      }
    }
  }
  out.mt_loss /= tokens;
  out.factor_loss /= tokens;
  return out;
}

namespace {

template <typename T>
LossBreakdown accumulate(const FactoredBatch& batch, const ModelParams<T>& params, ModelParams<T>* grad,
                         double smoothing, bool train_mode, std::uint64_t dropout_seed, double loss_scale) {
  batch.validate();
  LossBreakdown out;
  const int tokens = batch.target_tokens();
  if (tokens == 0) return out;
  const int fv = params.config.factor_vocab;
  for (int b = 0; b < batch.batch; ++b) {
    Example e = example_at(batch, b);
    check_example(e);
    collapse_factors(e, fv);
    Graph<T> g(grad != nullptr);
    Rng rng(derive_seed(dropout_seed, static_cast<std::uint64_t>(b)));
    Builder<T> bld{g, params, grad, train_mode ? static_cast<T>(params.config.dropout) : T(0),
                   train_mode ? &rng : nullptr};
    const auto memory = bld.encoder(e.src_ids, e.src_factors);
    const auto [tok, fac] = bld.decoder(memory, e.dec_tokens, e.dec_factors);
    const auto mt = g.cross_entropy(tok, e.tgt_ids, static_cast<T>(smoothing));
    out.mt_loss += static_cast<double>(g.value(mt).data[0]);
    auto total = mt;
    if (fac >= 0) {
      const auto fl = g.cross_entropy(fac, e.factor_targets, static_cast<T>(smoothing));
      out.factor_loss += static_cast<double>(g.value(fl).data[0]);
      total = g.add(mt, fl);
    }
    if (grad != nullptr) g.backward(total, static_cast<T>(loss_scale / tokens));
  }
  out.mt_loss /= tokens;
  out.factor_loss /= tokens;
  return out;
}

}  // namespace

template <typename T>
LossAndGrad<T> loss_and_grad(const FactoredBatch& batch, const ModelParams<T>& params, double label_smoothing,
                             bool train_mode, std::uint64_t dropout_seed, double loss_scale) {
  LossAndGrad<T> out{{}, ModelParams<T>::zeros(params.config)};
  out.loss = accumulate(batch, params, &out.grad, label_smoothing, train_mode, dropout_seed, loss_scale);
  out.grad.for_each([](const std::string& name, const Matrix<T>& m) {
    for (T v : m.data) {
      if (!std::isfinite(v)) throw Error("non-finite gradient in parameter " + name);
    }
  });
  return out;
}

template <typename T>
LossBreakdown batch_loss(const FactoredBatch& batch, const ModelParams<T>& params, double label_smoothing) {
  return accumulate<T>(batch, params, nullptr, label_smoothing, false, 0, 1.0);
}

GradCheckResult grad_check(const ModelParams<double>& params, const FactoredBatch& batch, double eps,
                           std::size_t samples, std::uint64_t seed, double floor) {
  const double smoothing = params.config.label_smoothing;
  const auto analytic = loss_and_grad(batch, params, smoothing, false);
  ModelParams<double> probe = params;

  struct Slot {
    std::string name;
    Matrix<double>* value;
    const Matrix<double>* grad;
  };
  std::vector<Slot> slots;
  std::vector<std::string> names;
  probe.for_each([&](const std::string& name, Matrix<double>&) { names.push_back(name); });
  {
    auto values = tensors(probe);
    auto grads = tensors(analytic.grad);
    for (std::size_t i = 0; i < values.size(); ++i) slots.push_back({names[i], values[i], grads[i]});
  }
  std::vector<std::pair<std::size_t, std::size_t>> scalars;
  for (std::size_t s = 0; s < slots.size(); ++s)
    for (std::size_t i = 0; i < slots[s].value->size(); ++i) scalars.emplace_back(s, i);

  Rng rng(seed);
  const auto picks = sample_without_replacement(rng, scalars.size(), std::min(samples, scalars.size()));
  GradCheckResult result;
  for (std::size_t pick : picks) {
    const auto [s, i] = scalars[pick];
    double& v = slots[s].value->data[i];
    const double saved = v;
    v = saved + eps;
    const double up = batch_loss(batch, probe, smoothing).total();
    v = saved - eps;
    const double down = batch_loss(batch, probe, smoothing).total();
    v = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = slots[s].grad->data[i];
    const double denom = std::max(std::abs(a) + std::abs(numeric), floor);
    const double err = denom > 0.0 ? std::abs(a - numeric) / denom : 0.0;
    if (err > result.max_relative_error || result.worst_parameter.empty()) {
      result.max_relative_error = err;
      result.worst_parameter = slots[s].name + "[" + std::to_string(i) + "]";
    }
    ++result.checked;
    if (std::abs(a) > floor) ++result.nonzero;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Inference entry points

template <typename T>
Matrix<T> encode(const ModelParams<T>& params, std::span<const int> src_ids, std::span<const int> src_factors) {
  if (src_ids.empty()) throw Error("encode: empty source sentence");
  if (src_factors.size() != src_ids.size()) throw Error("encode: factor count differs from token count");
  Graph<T> g(false);
  Builder<T> bld{g, params, nullptr, T(0), nullptr};
  const auto memory = bld.encoder(src_ids, src_factors);
  return g.value(memory);
}

template <typename T>
std::vector<StepOutput> decode_prefix(const ModelParams<T>& params, const Matrix<T>& memory,
                                      std::span<const int> dec_tokens, std::span<const int> dec_factors) {
  if (dec_tokens.empty() || dec_tokens.size() != dec_factors.size()) throw Error("decode_prefix: bad prefix");
  Graph<T> g(false);
  Builder<T> bld{g, params, nullptr, T(0), nullptr};
  const auto mem = g.constant(memory);
  const auto [tok, fac] = bld.decoder(mem, dec_tokens, dec_factors);
  std::vector<StepOutput> out(dec_tokens.size());
  auto log_softmax = [](std::span<const T> row) {
    const T lse = log_sum_exp<T>(row);
    std::vector<double> lp(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) lp[i] = static_cast<double>(row[i] - lse);
    return lp;
  };
  for (std::size_t t = 0; t < out.size(); ++t) {
    out[t].token_log_probs = log_softmax(g.value(tok).row(static_cast<int>(t)));
    if (fac >= 0) out[t].factor_log_probs = log_softmax(g.value(fac).row(static_cast<int>(t)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

OptimConfig OptimConfig::full_scale() {
  OptimConfig o;
  o.lr = 2e-4;
  o.batch_tokens = 4096;
  o.lr_reduce_factor = 0.7;
  o.lr_patience = 4;
  o.stop_patience = 20;
  return o;
}

std::string OptimConfig::to_json() const {
  json j = {{"lr", lr},
            {"beta1", beta1},
            {"beta2", beta2},
            {"adam_eps", adam_eps},
            {"batch_tokens", batch_tokens},
            {"checkpoint_every", checkpoint_every},
            {"lr_reduce_factor", lr_reduce_factor},
            {"lr_patience", lr_patience},
            {"stop_patience", stop_patience},
            {"max_updates", max_updates}};
  return j.dump();
}

OptimConfig OptimConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  OptimConfig o;
  o.lr = j.value("lr", o.lr);
  o.beta1 = j.value("beta1", o.beta1);
  o.beta2 = j.value("beta2", o.beta2);
  o.adam_eps = j.value("adam_eps", o.adam_eps);
  o.batch_tokens = j.value("batch_tokens", o.batch_tokens);
  o.checkpoint_every = j.value("checkpoint_every", o.checkpoint_every);
  o.lr_reduce_factor = j.value("lr_reduce_factor", o.lr_reduce_factor);
  o.lr_patience = j.value("lr_patience", o.lr_patience);
  o.stop_patience = j.value("stop_patience", o.stop_patience);
  o.max_updates = j.value("max_updates", o.max_updates);
  return o;
}

std::string TrainingLog::to_csv() const {
  std::string out = "checkpoint,mt_loss,factor_loss,dev_ppl,lr\n";
  for (const auto& r : records) {
    out += std::to_string(r.checkpoint) + "," + format_fixed(r.mt_loss, 6) + "," + format_fixed(r.factor_loss, 6) +
           "," + format_fixed(r.dev_ppl, 6) + "," + format_fixed(r.lr, 8) + "\n";
  }
  return out;
}

TrainingDiverged::TrainingDiverged(int checkpoint, const std::string& what)
    : Error("training diverged at checkpoint " + std::to_string(checkpoint) + ": " + what), checkpoint_(checkpoint) {}

double perplexity(const ModelParams<float>& params, const std::vector<EncodedPair>& pairs) {
  if (pairs.empty()) throw Error("perplexity: empty set");
  double nll = 0.0;
  long tokens = 0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < pairs.size(); start += kChunk) {
    const std::vector<EncodedPair> chunk(pairs.begin() + start, pairs.begin() + std::min(pairs.size(), start + kChunk));
    const FactoredBatch b = make_batch(chunk);
    const int n = b.target_tokens();
    nll += batch_loss(b, params, 0.0).mt_loss * n;
    tokens += n;
  }
  return std::exp(nll / static_cast<double>(tokens));
}

namespace {

std::vector<std::vector<std::size_t>> make_batches(const std::vector<EncodedPair>& data, int batch_tokens, Rng& rng) {
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(order, rng);
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> current;
  int tokens = 0;
  for (std::size_t i : order) {
    current.push_back(i);
    tokens += static_cast<int>(data[i].tgt_ids.size());
    if (tokens >= batch_tokens) {
      batches.push_back(std::move(current));
      current.clear();
      tokens = 0;
    }
  }
  if (!current.empty()) batches.push_back(std::move(current));
  return batches;
}

struct Adam {
  std::vector<Matrix<float>*> params;
  std::vector<Matrix<float>> m, v;
  int step = 0;

  explicit Adam(ModelParams<float>& p) : params(tensors(p)) {
    for (auto* t : params) {
      m.emplace_back(t->rows, t->cols);
      v.emplace_back(t->rows, t->cols);
    }
  }

  void update(ModelParams<float>& grad, const OptimConfig& o, double lr) {
    ++step;
    const double c1 = 1.0 - std::pow(o.beta1, step);
    const double c2 = 1.0 - std::pow(o.beta2, step);
    const auto grads = tensors(grad);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& pd = params[k]->data;
      const auto& gd = grads[k]->data;
      auto& md = m[k].data;
      auto& vd = v[k].data;
      for (std::size_t i = 0; i < pd.size(); ++i) {
        const double gi = gd[i];
        md[i] = static_cast<float>(o.beta1 * md[i] + (1.0 - o.beta1) * gi);
        vd[i] = static_cast<float>(o.beta2 * vd[i] + (1.0 - o.beta2) * gi * gi);
        const double mhat = md[i] / c1;
        const double vhat = vd[i] / c2;
        pd[i] = static_cast<float>(pd[i] - lr * mhat / (std::sqrt(vhat) + o.adam_eps));
      }
    }
  }
};

}  // namespace

TrainResult train(const std::vector<EncodedPair>& train_set, const std::vector<EncodedPair>& dev_set,
                  const ModelConfig& config, const OptimConfig& optim, std::uint64_t seed, const UpdateHook& hook) {
  if (train_set.empty()) throw Error("train: empty training set");
  if (dev_set.empty()) throw Error("train: empty dev set");
  if (optim.batch_tokens < 1 || optim.checkpoint_every < 1 || optim.max_updates < 1) {
    throw Error("train: batch_tokens, checkpoint_every and max_updates must be positive");
  }
  config.validate();

  TrainResult result;
  ModelParams<float> params = init_params(config, derive_seed(seed, 0));
  result.params = params;
  Adam adam(params);
  double lr = optim.lr;
  double best_ppl = std::numeric_limits<double>::infinity();
  int bad_checkpoints = 0;
  int since_reduce = 0;
  int updates = 0;
  int checkpoint = 0;
  double mt_sum = 0.0;
  double factor_sum = 0.0;
  int window = 0;
  bool stop = false;

  for (std::uint64_t epoch = 0; !stop; ++epoch) {
    Rng rng(derive_seed(seed, 1000 + epoch));
    for (const auto& idx : make_batches(train_set, optim.batch_tokens, rng)) {
      std::vector<EncodedPair> members;
      members.reserve(idx.size());
      for (std::size_t i : idx) members.push_back(train_set[i]);
      const FactoredBatch batch = make_batch(members);
      LossAndGrad<float> lg;
      try {
        lg = loss_and_grad(batch, params, config.label_smoothing, config.dropout > 0.0,
                           derive_seed(derive_seed(seed, 2), static_cast<std::uint64_t>(updates)));
      } catch (const TrainingDiverged&) {
        throw;
      } catch (const Error& e) {
        if (std::string(e.what()).find("non-finite") != std::string::npos) throw TrainingDiverged(checkpoint + 1, e.what());
        throw;
      }
      if (!std::isfinite(lg.loss.total())) throw TrainingDiverged(checkpoint + 1, "non-finite loss");
      adam.update(lg.grad, optim, lr);
      ++updates;
      if (hook) hook(updates, lg.loss);
      mt_sum += lg.loss.mt_loss;
      factor_sum += lg.loss.factor_loss;
      ++window;

      const bool at_cap = updates >= optim.max_updates;
      if (updates % optim.checkpoint_every == 0 || at_cap) {
        ++checkpoint;
        const double ppl = perplexity(params, dev_set);
        if (!std::isfinite(ppl)) throw TrainingDiverged(checkpoint, "non-finite dev perplexity");
        result.log.records.push_back({checkpoint, updates, mt_sum / window, factor_sum / window, ppl, lr});
        mt_sum = factor_sum = 0.0;
        window = 0;
        if (ppl < best_ppl) {
          best_ppl = ppl;
          result.params = params;
          result.log.best_checkpoint = checkpoint;
          bad_checkpoints = 0;
          since_reduce = 0;
        } else {
          ++bad_checkpoints;
          if (++since_reduce >= optim.lr_patience) {
            lr *= optim.lr_reduce_factor;
            since_reduce = 0;
          }
          if (bad_checkpoints >= optim.stop_patience) stop = true;
        }
      }
      if (at_cap) stop = true;
      if (stop) break;
    }
  }
  return result;
}

TrainResult train_unfactored(const std::vector<EncodedPair>& train_set, const std::vector<EncodedPair>& dev_set,
                             const ModelConfig& config, const OptimConfig& optim, std::uint64_t seed,
                             const UpdateHook& hook) {
  return train(train_set, dev_set, unfactored(config), optim, seed, hook);
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string params_to_json(const ModelParams<float>& params) {
  json tensors_json = json::object();
  params.for_each([&](const std::string& name, const Matrix<float>& m) {
    tensors_json[name] = {{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
  });
  json j = {{"config", json::parse(params.config.to_json())}, {"tensors", tensors_json}};
  return j.dump();
}

ModelParams<float> params_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("checkpoint: ") + e.what());
  }
  if (!j.contains("config") || !j.contains("tensors")) throw Error("checkpoint: missing config or tensors");
  const ModelConfig config = ModelConfig::from_json(j["config"].dump());
  ModelParams<float> p = ModelParams<float>::zeros(config);
  const json& t = j["tensors"];
  p.for_each([&](const std::string& name, Matrix<float>& m) {
    if (!t.contains(name)) throw Error("checkpoint: missing tensor " + name);
    const json& e = t[name];
    if (e["rows"].get<int>() != m.rows || e["cols"].get<int>() != m.cols) {
      throw Error("checkpoint: tensor " + name + " has the wrong shape");
    }
    m.data = e["data"].get<std::vector<float>>();
    if (m.data.size() != m.size() || static_cast<int>(m.data.size()) != m.rows * m.cols) {
      throw Error("checkpoint: tensor " + name + " has the wrong size");
    }
  });
  return p;
}

// ---------------------------------------------------------------------------
// Instantiations

#define DIVLAB_INSTANTIATE_MODEL(T)                                                                          \
  template struct ModelParams<T>;                                                                           \
  template Tensor3<T> embed_source<T>(const FactoredBatch&, const ModelParams<T>&);                         \
  template Tensor3<T> embed_target<T>(const FactoredBatch&, const ModelParams<T>&);                         \
  template Logits<T> forward<T>(const FactoredBatch&, const ModelParams<T>&, bool, std::uint64_t);          \
  template LossBreakdown divergent_aware_loss<T>(const Logits<T>&, const FactoredBatch&, double);           \
  template LossAndGrad<T> loss_and_grad<T>(const FactoredBatch&, const ModelParams<T>&, double, bool,       \
                                           std::uint64_t, double);                                          \
  template LossBreakdown batch_loss<T>(const FactoredBatch&, const ModelParams<T>&, double);                \
  template Matrix<T> encode<T>(const ModelParams<T>&, std::span<const int>, std::span<const int>);          \
  template std::vector<StepOutput> decode_prefix<T>(const ModelParams<T>&, const Matrix<T>&,                \
                                                    std::span<const int>, std::span<const int>);

DIVLAB_INSTANTIATE_MODEL(float)
DIVLAB_INSTANTIATE_MODEL(double)
template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

}  // namespace divlab::model
