#include "divlab/decode.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace divlab::decode {

using json = nlohmann::json;
using corpus::BpeModel;
using corpus::Factor;

std::vector<Factor> tag_inference_source(std::size_t length) { return std::vector<Factor>(length, Factor::EQ); }

std::vector<Factor> tag_inference_source(const std::vector<std::string>& tokens) {
  return tag_inference_source(tokens.size());
}

namespace {

void check_options(const BeamOptions& o) {
  if (o.beam < 1) throw Error("beam size must be >= 1");
  if (o.max_len < 1) throw Error("max_len must be >= 1");
}

/// EQ/DIV argmax of a factor distribution, EQ on ties; EQ for models without
/// a factor head.
int factor_argmax(const std::vector<double>& log_probs) {
  if (log_probs.size() < 2) return model::kFactorEq;
  return log_probs[model::kFactorDiv] > log_probs[model::kFactorEq] ? model::kFactorDiv : model::kFactorEq;
}

struct State {
  Hypothesis hyp;
  std::vector<int> dec_factors;  // decoder factor inputs, one per prefix position
  double raw_score = 0.0;
};

double ranked(const State& s, bool length_norm) {
  if (!length_norm || s.hyp.tokens.empty()) return s.raw_score;
  return s.raw_score / static_cast<double>(s.hyp.tokens.size());
}

std::vector<int> prefix_tokens(const State& s, int bos) {
  std::vector<int> p{bos};
  p.insert(p.end(), s.hyp.tokens.begin(), s.hyp.tokens.end());
  return p;
}

/// Factor label of the last token, read one position past the hypothesis.
void close_factors(const ModelParams<float>& params, const Matrix<float>& memory, State& s, int bos) {
  if (s.hyp.factors.size() == s.hyp.tokens.size()) return;
  if (!params.config.factored()) {
    s.hyp.factors.push_back(model::kFactorEq);
    return;
  }
  const auto out = model::decode_prefix(params, memory, prefix_tokens(s, bos), s.dec_factors);
  s.hyp.factors.push_back(factor_argmax(out.back().factor_log_probs));
}

}  // namespace

std::vector<Hypothesis> beam_search(const ModelParams<float>& params, const std::vector<int>& src_ids,
                                    const std::vector<int>& src_factors, const BeamOptions& options) {
  check_options(options);
  const Matrix<float> memory = model::encode(params, src_ids, src_factors);
  const int bos = options.bos_id;

  std::vector<State> beams(1);
  beams[0].dec_factors = {model::kFactorBegin};

  struct Candidate {
    std::size_t parent;
    int token;
    double log_prob;
    double score;
  };

  for (int step = 0; step < options.max_len; ++step) {
    std::vector<State> next;
    std::vector<Candidate> cands;
    std::vector<int> pending_factor(beams.size(), -1);
    for (std::size_t b = 0; b < beams.size(); ++b) {
      const State& s = beams[b];
      if (s.hyp.finished) {
        cands.push_back({b, -1, 0.0, s.raw_score});
        continue;
      }
      const auto out = model::decode_prefix(params, memory, prefix_tokens(s, bos), s.dec_factors);
      const auto& last = out.back();
      if (!s.hyp.tokens.empty()) pending_factor[b] = factor_argmax(last.factor_log_probs);
      // Only the best `beam` tokens of one parent can survive.
      std::vector<int> order(last.token_log_probs.size());
      for (std::size_t v = 0; v < order.size(); ++v) order[v] = static_cast<int>(v);
      const std::size_t keep = std::min<std::size_t>(options.beam, order.size());
      std::partial_sort(order.begin(), order.begin() + keep, order.end(), [&](int a, int c) {
        if (last.token_log_probs[a] != last.token_log_probs[c]) return last.token_log_probs[a] > last.token_log_probs[c];
        return a < c;
      });
      for (std::size_t i = 0; i < keep; ++i) {
        const int v = order[i];
        cands.push_back({b, v, last.token_log_probs[v], s.raw_score + last.token_log_probs[v]});
      }
    }

    auto rank_of = [&](const Candidate& c) {
      const State& s = beams[c.parent];
      if (c.token < 0) return ranked(s, options.length_norm);
      if (!options.length_norm) return c.score;
      return c.score / static_cast<double>(s.hyp.tokens.size() + 1);
    };
    std::stable_sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& c) {
      const double ra = rank_of(a);
      const double rc = rank_of(c);
      if (ra != rc) return ra > rc;
      if (a.parent != c.parent) return a.parent < c.parent;
      return a.token < c.token;
    });
    if (cands.size() > static_cast<std::size_t>(options.beam)) cands.resize(options.beam);

    for (const auto& c : cands) {
      State s = beams[c.parent];
      if (c.token >= 0) {
        if (pending_factor[c.parent] >= 0) s.hyp.factors.push_back(pending_factor[c.parent]);
        s.dec_factors.push_back(s.hyp.tokens.empty() ? model::kFactorBegin : s.hyp.factors.back());
        s.hyp.tokens.push_back(c.token);
        s.hyp.token_probs.push_back(std::exp(c.log_prob));
        s.raw_score = c.score;
        if (options.eos_id && c.token == *options.eos_id) s.hyp.finished = true;
      }
      next.push_back(std::move(s));
    }
    beams = std::move(next);
    if (beams.front().hyp.finished) break;
  }

  std::vector<Hypothesis> out;
  for (State& s : beams) {
    close_factors(params, memory, s, bos);
    s.hyp.score = ranked(s, options.length_norm);
    out.push_back(std::move(s.hyp));
  }
  std::stable_sort(out.begin(), out.end(), [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
  return out;
}

Hypothesis greedy_decode(const ModelParams<float>& params, const std::vector<int>& src_ids,
                         const std::vector<int>& src_factors, const BeamOptions& options) {
  check_options(options);
  const Matrix<float> memory = model::encode(params, src_ids, src_factors);
  State s;
  s.dec_factors = {model::kFactorBegin};
  for (int step = 0; step < options.max_len; ++step) {
    const auto out = model::decode_prefix(params, memory, prefix_tokens(s, options.bos_id), s.dec_factors);
    const auto& lp = out.back().token_log_probs;
    if (!s.hyp.tokens.empty()) s.hyp.factors.push_back(factor_argmax(out.back().factor_log_probs));
    int best = 0;
    for (int v = 1; v < static_cast<int>(lp.size()); ++v)
      if (lp[v] > lp[best]) best = v;
    s.dec_factors.push_back(s.hyp.tokens.empty() ? model::kFactorBegin : s.hyp.factors.back());
    s.hyp.tokens.push_back(best);
    s.hyp.token_probs.push_back(std::exp(lp[best]));
    s.raw_score += lp[best];
    if (options.eos_id && best == *options.eos_id) {
      s.hyp.finished = true;
      break;
    }
  }
  close_factors(params, memory, s, options.bos_id);
  s.hyp.score = ranked(s, options.length_norm);
  return s.hyp;
}

ForcedResult forced_decode(const ModelParams<float>& params, const std::vector<int>& src_ids,
                           const std::vector<int>& src_factors, const std::vector<int>& ref_ids, int bos_id) {
  if (ref_ids.empty()) throw Error("forced_decode: empty reference");
  const Matrix<float> memory = model::encode(params, src_ids, src_factors);
  ForcedResult r;
  std::vector<int> tokens{bos_id};
  std::vector<int> factors{model::kFactorBegin};
  if (!params.config.factored()) {
    // Decoder factor inputs are ignored, so one pass covers every position.
    tokens.insert(tokens.end(), ref_ids.begin(), ref_ids.end() - 1);
    factors.assign(tokens.size(), model::kFactorEq);
    const auto out = model::decode_prefix(params, memory, tokens, factors);
    for (std::size_t t = 0; t < ref_ids.size(); ++t) {
      r.probs.push_back(std::exp(out[t].token_log_probs[ref_ids[t]]));
      r.factors.push_back(model::kFactorEq);
    }
    return r;
  }
  for (std::size_t t = 0; t < ref_ids.size(); ++t) {
    const auto out = model::decode_prefix(params, memory, tokens, factors);
    const auto& last = out.back();
    r.probs.push_back(std::exp(last.token_log_probs[ref_ids[t]]));
    if (t > 0) r.factors.push_back(factor_argmax(last.factor_log_probs));
    factors.push_back(t == 0 ? model::kFactorBegin : r.factors.back());
    tokens.push_back(ref_ids[t]);
  }
  const auto out = model::decode_prefix(params, memory, tokens, factors);
  r.factors.push_back(factor_argmax(out.back().factor_log_probs));
  return r;
}

// ---------------------------------------------------------------------------
// Logs

std::string to_json_line(const DecodeRecord& r) {
  json j = {{"id", r.id},
            {"src", r.src},
            {"ref", r.ref},
            {"ref_tokens", r.ref_tokens},
            {"hyp_tokens", r.hyp_tokens},
            {"hyp", r.hyp},
            {"token_probs", r.token_probs},
            {"factors", r.factors},
            {"score", r.score},
            {"beam", r.beam},
            {"mode", r.mode},
            {"variant", r.variant},
            {"kind", r.kind},
            {"fraction", r.fraction},
            {"seed", r.seed}};
  j["eos_prob"] = r.eos_prob ? json(*r.eos_prob) : json(nullptr);
  return j.dump();
}

DecodeRecord from_json_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw Error(std::string("decode log: ") + e.what());
  }
  DecodeRecord r;
  try {
    r.id = j.value("id", std::size_t{0});
    r.src = j.at("src").get<std::string>();
    r.ref = j.at("ref").get<std::string>();
    r.hyp_tokens = j.at("hyp_tokens").get<std::vector<std::string>>();
    r.token_probs = j.at("token_probs").get<std::vector<double>>();
    r.factors = j.at("factors").get<std::vector<std::string>>();
    r.score = j.at("score").get<double>();
    r.beam = j.at("beam").get<int>();
    r.ref_tokens = j.value("ref_tokens", split_whitespace(r.ref));
    r.hyp = j.value("hyp", join(r.hyp_tokens, " "));
    r.mode = j.value("mode", std::string("free"));
    r.variant = j.value("variant", std::string());
    r.kind = j.value("kind", std::string());
    r.fraction = j.value("fraction", 0.0);
    r.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("eos_prob") && !j["eos_prob"].is_null()) r.eos_prob = j["eos_prob"].get<double>();
  } catch (const json::exception& e) {
    throw Error(std::string("decode log: ") + e.what());
  }
  if (r.token_probs.size() != r.hyp_tokens.size()) throw Error("decode log: token_probs and hyp_tokens differ in length");
  return r;
}

std::string to_jsonl(const std::vector<DecodeRecord>& records) {
  std::string out;
  for (const auto& r : records) out += to_json_line(r) + "\n";
  return out;
}

std::vector<DecodeRecord> parse_jsonl(const std::string& text) {
  std::vector<DecodeRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      out.push_back(from_json_line(line));
    } catch (const Error& e) {
      throw Error(std::string(e.what()) + " (line " + std::to_string(n) + ")");
    }
  }
  return out;
}

std::vector<DecodeRecord> read_decode_log(const std::string& path) { return parse_jsonl(read_file(path)); }

void write_decode_log(const std::string& path, const std::vector<DecodeRecord>& records) {
  write_file(path, to_jsonl(records));
}

// ---------------------------------------------------------------------------
// Corpus-level drivers

namespace {

struct PreparedSource {
  std::vector<int> ids;
  std::vector<int> factors;
};

PreparedSource prepare_source(const corpus::AnnotatedSentencePair& pair, const BpeModel& bpe, bool tag) {
  std::vector<std::string> words = corpus::surfaces(pair.src);
  if (tag) words.insert(words.begin(), std::string(corpus::kEqTag));
  const auto seg = corpus::apply_bpe(words, bpe);
  PreparedSource p;
  p.ids = bpe.encode(seg.model_tokens());
  for (Factor f : tag_inference_source(p.ids.size())) p.factors.push_back(static_cast<int>(f));
  return p;
}

DecodeRecord base_record(std::size_t i, const corpus::AnnotatedSentencePair& pair, const BpeModel& bpe,
                         const DecodeJob& job) {
  DecodeRecord r;
  r.id = i;
  r.src = join(corpus::surfaces(pair.src), " ");
  r.ref = join(corpus::surfaces(pair.tgt), " ");
  r.ref_tokens = corpus::apply_bpe(corpus::surfaces(pair.tgt), bpe).model_tokens();
  r.variant = job.variant;
  r.kind = job.kind;
  r.fraction = job.fraction;
  r.seed = job.seed;
  return r;
}

std::string factor_name(int f) { return f == model::kFactorDiv ? "DIV" : "EQ"; }

}  // namespace

std::vector<DecodeRecord> decode_corpus(const ModelParams<float>& params, const BpeModel& bpe,
                                        const corpus::Corpus& test, const BeamOptions& options,
                                        const DecodeJob& job) {
  check_options(options);
  std::vector<DecodeRecord> out(test.size());
  const long n = static_cast<long>(test.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    const auto& pair = test.pairs[i];
    const PreparedSource src = prepare_source(pair, bpe, job.tag_source);
    const Hypothesis h = options.beam == 1 ? greedy_decode(params, src.ids, src.factors, options)
                                           : beam_search(params, src.ids, src.factors, options).front();
    DecodeRecord r = base_record(static_cast<std::size_t>(i), pair, bpe, job);
    r.beam = options.beam;
    r.score = h.score;
    for (std::size_t t = 0; t < h.tokens.size(); ++t) {
      if (h.finished && t + 1 == h.tokens.size()) {
        r.eos_prob = h.token_probs[t];
        break;
      }
      r.hyp_tokens.push_back(bpe.token(h.tokens[t]));
      r.token_probs.push_back(h.token_probs[t]);
      r.factors.push_back(factor_name(h.factors[t]));
    }
    r.hyp = join(corpus::detokenize(r.hyp_tokens), " ");
    out[i] = std::move(r);
  }
  return out;
}

std::vector<DecodeRecord> forced_decode_corpus(const ModelParams<float>& params, const BpeModel& bpe,
                                               const corpus::Corpus& test, const DecodeJob& job) {
  std::vector<DecodeRecord> out(test.size());
  const long n = static_cast<long>(test.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    const auto& pair = test.pairs[i];
    const PreparedSource src = prepare_source(pair, bpe, job.tag_source);
    DecodeRecord r = base_record(static_cast<std::size_t>(i), pair, bpe, job);
    std::vector<int> ref_ids = bpe.encode(r.ref_tokens);
    ref_ids.push_back(BpeModel::kEos);
    const ForcedResult f = forced_decode(params, src.ids, src.factors, ref_ids);
    r.mode = "forced";
    r.beam = 0;
    r.hyp_tokens = r.ref_tokens;
    r.hyp = r.ref;
    r.token_probs.assign(f.probs.begin(), f.probs.end() - 1);
    r.eos_prob = f.probs.back();
    for (std::size_t t = 0; t + 1 < f.factors.size(); ++t) r.factors.push_back(factor_name(f.factors[t]));
    double score = 0.0;
    for (double p : f.probs) score += std::log(p);
    r.score = score;
    out[i] = std::move(r);
  }
  return out;
}

}  // namespace divlab::decode
