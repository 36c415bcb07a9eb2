#include <doctest.h>

#include <cmath>

#include "divlab/decode.hpp"
#include "divlab/toy.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace divlab;
using namespace divlab::decode;
using divlab::testing::tiny_config;

namespace {

std::vector<int> random_source(Rng& rng, int vocab, int len) {
  std::vector<int> out;
  for (int i = 0; i < len; ++i) out.push_back(static_cast<int>(uniform_index(rng, vocab)));
  return out;
}

std::vector<int> eq_factors(std::size_t n) { return std::vector<int>(n, model::kFactorEq); }

model::ModelParams<float> random_model(std::uint64_t seed, int vocab, bool factored) {
  auto cfg = tiny_config(12, 4, 1, vocab);
  if (!factored) cfg = model::unfactored(cfg);
  auto p = model::init_params(cfg, seed);
  // Sharpen the output distribution so hypotheses separate.
  for (auto& v : p.out_w.data) v *= 4.0f;
  return p;
}

}  // namespace

TEST_CASE("tag_inference_source") {
  CHECK(tag_inference_source(4) == std::vector<corpus::Factor>(4, corpus::Factor::EQ));
  CHECK(tag_inference_source(0).empty());
  CHECK(tag_inference_source(std::vector<std::string>{"a", "b"}) == std::vector<corpus::Factor>(2, corpus::Factor::EQ));
}

TEST_CASE("beam search option errors") {
  const auto p = random_model(1, 8, true);
  BeamOptions o;
  o.beam = 0;
  CHECK_THROWS_AS(beam_search(p, {6}, {0}, o), Error);
  o.beam = 1;
  o.max_len = 0;
  CHECK_THROWS_AS(beam_search(p, {6}, {0}, o), Error);
  CHECK_THROWS_AS(forced_decode(p, {6}, {0}, {}), Error);
}

TEST_CASE("beam 1 equals greedy decoding") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_model(10 + trial, 10, trial % 2 == 0);
    const auto src = random_source(rng, 10, 1 + static_cast<int>(uniform_index(rng, 5)));
    BeamOptions o;
    o.beam = 1;
    o.max_len = 8;
    const auto b = beam_search(p, src, eq_factors(src.size()), o);
    const auto g = greedy_decode(p, src, eq_factors(src.size()), o);
    REQUIRE(b.size() == 1);
    CHECK(b[0].tokens == g.tokens);
    CHECK(b[0].factors == g.factors);
    CHECK(b[0].score == doctest::Approx(g.score).epsilon(1e-12));
  }
}

TEST_CASE("exhaustive beam equals enumeration over every sequence") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const bool factored = trial % 2 == 0;
    const auto p = random_model(100 + trial, 3, factored);
    const auto src = random_source(rng, 3, 1 + static_cast<int>(uniform_index(rng, 4)));
    BeamOptions o;
    o.beam = 27;
    o.max_len = 3;
    o.eos_id.reset();
    o.bos_id = 0;
    const auto hyps = beam_search(p, src, eq_factors(src.size()), o);
    REQUIRE(!hyps.empty());
    const auto [arg, best] = oracle::best_sequence(p, src, 3, 3, 0);
    CHECK(hyps[0].tokens == arg);
    CHECK(hyps[0].score == doctest::Approx(best).epsilon(1e-5));
    CHECK(hyps.size() == 27);
  }
}

TEST_CASE("hypothesis invariants and score consistency") {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = random_model(200 + trial, 9, true);
    const auto src = random_source(rng, 9, 3);
    BeamOptions o;
    o.beam = 4;
    o.max_len = 6;
    const auto hyps = beam_search(p, src, eq_factors(3), o);
    for (std::size_t i = 0; i < hyps.size(); ++i) {
      const auto& h = hyps[i];
      CHECK(h.tokens.size() == h.token_probs.size());
      CHECK(h.tokens.size() == h.factors.size());
      double s = 0.0;
      for (double q : h.token_probs) {
        CHECK(q > 0.0);
        CHECK(q <= 1.0);
        s += std::log(q);
      }
      CHECK(std::abs(s - h.score) < 1e-6);
      for (int f : h.factors) CHECK((f == model::kFactorEq || f == model::kFactorDiv));
      if (i > 0) CHECK(hyps[i - 1].score >= h.score);
    }
  }
}

TEST_CASE("wider beams never find a worse best hypothesis") {
  Rng rng(8);
  int violations = 0, comparisons = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_model(300 + trial, 6, trial % 2 == 0);
    const auto src = random_source(rng, 6, 3);
    BeamOptions o;
    o.max_len = 4;
    o.eos_id.reset();
    double prev = -1e300;
    for (int b = 1; b <= 6; ++b) {
      o.beam = b;
      const double best = beam_search(p, src, eq_factors(3), o)[0].score;
      ++comparisons;
      if (best < prev - 1e-9) ++violations;
      prev = best;
    }
  }
  MESSAGE("monotone-beam violations without EOS: " << violations << " of " << comparisons);
  CHECK(violations == 0);
}

TEST_CASE("forced decoding") {
  SUBCASE("uniform model gives 1/|V| everywhere") {
    auto cfg = tiny_config(12, 4, 1, 4);
    auto p = model::init_params(cfg, 1);
    p.out_w.fill(0.0f);
    p.out_b.fill(0.0f);
    const auto r = forced_decode(p, {3, 1}, {0, 0}, {3, 3, 2});
    REQUIRE(r.probs.size() == 3);
    for (double q : r.probs) CHECK(q == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(r.factors.size() == 3);
  }

  SUBCASE("forced probabilities match the decoder on the same prefix") {
    const auto p = random_model(9, 9, true);
    const std::vector<int> src{6, 7}, ref{8, 6, 2};
    const auto r = forced_decode(p, src, eq_factors(2), ref);
    double lp = 0;
    for (double q : r.probs) {
      CHECK(q > 0.0);
      CHECK(q <= 1.0);
      lp += std::log(q);
    }
    CHECK(lp == doctest::Approx(oracle::sequence_log_prob(p, src, ref, corpus::BpeModel::kBos)).epsilon(1e-5));
  }
}

TEST_CASE("decode logs") {
  DecodeRecord r;
  r.id = 3;
  r.src = "a b";
  r.ref = "c d";
  r.ref_tokens = {"c", "d"};
  r.hyp_tokens = {"c", "e"};
  r.hyp = "c e";
  r.token_probs = {0.5, 0.25};
  r.factors = {"EQ", "DIV"};
  r.eos_prob = 0.125;
  r.score = std::log(0.5 * 0.25 * 0.125);
  r.beam = 5;
  r.variant = "DIV_FACTORIZED";
  r.kind = "lex_sub";
  r.fraction = 0.5;
  r.seed = 2;
  const auto line = to_json_line(r);
  CHECK(line.find('\n') == std::string::npos);
  CHECK(to_json_line(from_json_line(line)) == line);
  const auto many = parse_jsonl(to_jsonl({r, r}));
  CHECK(many.size() == 2);
  CHECK_THROWS_AS(parse_jsonl("{\"bad\": 1}\n"), Error);
}

TEST_CASE("corpus decoding is deterministic and matches single-sentence search") {
  const auto test = toy::generate(12, 4);
  const auto bpe = corpus::learn_bpe(test, 50);
  auto cfg = tiny_config(12, 4, 1, bpe.vocab_size());
  const auto p = model::init_params(cfg, 3);
  BeamOptions o;
  o.beam = 3;
  o.max_len = 6;
  const auto logs = decode_corpus(p, bpe, test, o, {"DIV_FACTORIZED", "lex_sub", 1.0, 1, false});
  CHECK(to_jsonl(logs) == to_jsonl(decode_corpus(p, bpe, test, o, {"DIV_FACTORIZED", "lex_sub", 1.0, 1, false})));
  REQUIRE(logs.size() == test.size());
  for (std::size_t i = 0; i < logs.size(); ++i) {
    const auto e = corpus::encode_pair(test.pairs[i], bpe);
    std::vector<int> f(e.src_ids.size(), model::kFactorEq);
    const auto h = beam_search(p, e.src_ids, f, o)[0];
    std::vector<std::string> expect_factors;
    for (int z : h.factors) expect_factors.push_back(z == model::kFactorDiv ? "DIV" : "EQ");
    CHECK(logs[i].id == i);
    CHECK(logs[i].factors == expect_factors);
    CHECK(logs[i].mode == "free");
    double s = 0;
    for (double q : logs[i].token_probs) s += std::log(q);
    if (logs[i].eos_prob) s += std::log(*logs[i].eos_prob);
    CHECK(std::abs(s - logs[i].score) < 1e-6);
  }
  auto greedy = o;
  greedy.beam = 1;
  const auto g1 = decode_corpus(p, bpe, test, greedy, {});
  for (std::size_t i = 0; i < g1.size(); ++i) {
    const auto e = corpus::encode_pair(test.pairs[i], bpe);
    const auto g = greedy_decode(p, e.src_ids, std::vector<int>(e.src_ids.size(), 0), greedy);
    CHECK(g1[i].hyp_tokens.size() == g.tokens.size());
  }
  const auto forced = forced_decode_corpus(p, bpe, test, {});
  for (const auto& r : forced) {
    CHECK(r.mode == "forced");
    CHECK(r.token_probs.size() == r.ref_tokens.size());
  }
}
