#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "divlab/eval.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace divlab;
using namespace divlab::eval;
using divlab::testing::random_words;

namespace {

Tokens words(const std::string& s) { return split_whitespace(s); }

decode::DecodeRecord record(const std::string& hyp, const std::string& ref) {
  decode::DecodeRecord r;
  r.hyp = hyp;
  r.ref = ref;
  r.hyp_tokens = words(hyp);
  r.ref_tokens = words(ref);
  r.token_probs.assign(r.hyp_tokens.size(), 1.0);
  return r;
}

int count_matches(const TerAlignment& a) {
  return static_cast<int>(std::count_if(a.script.begin(), a.script.end(), [](const TerEdit& e) { return e.op == EditOp::MATCH; }));
}

}  // namespace

TEST_CASE("degeneration") {
  const auto cfg = DegenConfig::defaults();
  CHECK(is_degenerated(words("the sculpture , engineering and architecture , and the engineering and architecture"),
                       words("the sculpture , engineering and architecture"), cfg));
  CHECK_FALSE(is_degenerated(words("a b a b c"), words("a b a b c"), cfg));

  DegenConfig bigram;
  bigram.n_min = bigram.n_max = 2;
  CHECK(is_degenerated(words("a b a b"), words("a b"), bigram));
  CHECK_FALSE(is_degenerated(words("a b c d"), words("a b"), bigram));

  DegenConfig bad;
  bad.n_min = 3;
  bad.n_max = 2;
  CHECK_THROWS_AS(bad.validate(), Error);

  SUBCASE("agrees with brute-force counting") {
    Rng rng(21);
    const std::set<std::string> stop{"e"};
    for (int n_min = 2; n_min <= 4; ++n_min) {
      DegenConfig c;
      c.n_min = c.n_max = n_min;
      c.stoplist = stop;
      for (int i = 0; i < 1000; ++i) {
        const auto h = random_words(rng, 5, uniform_index(rng, 13));
        const auto r = random_words(rng, 5, uniform_index(rng, 13));
        REQUIRE(is_degenerated(h, r, c) == oracle::degenerated(h, r, n_min, n_min, stop));
      }
    }
  }

  SUBCASE("rate") {
    std::vector<decode::DecodeRecord> log;
    for (int i = 0; i < 49; ++i) log.push_back(record("x y z", "x y z"));
    CHECK(degeneration_rate(log, cfg) == 0.0);
    log.push_back(record("a b a b", "a b"));
    CHECK(degeneration_rate(log, cfg) == doctest::Approx(2.0));
  }
}

TEST_CASE("TER alignment examples") {
  const auto same = ter_align(words("a b c"), words("a b c"));
  CHECK(same.edits == 0);
  CHECK(same.shifts == 0);
  CHECK(same.hyp_matched == std::vector<bool>{true, true, true});

  const auto swap = ter_align(words("b a"), words("a b"));
  CHECK(swap.shifts == 1);
  CHECK(swap.edits == 0);
  CHECK(swap.ter_score == doctest::Approx(0.5));

  const auto sub = ter_align(words("a x"), words("a b"));
  CHECK(sub.shifts == 0);
  CHECK(sub.edits == 1);
  CHECK(token_accuracy(sub) == std::vector<bool>{true, false});
  CHECK(accuracy(token_accuracy(sub)) == doctest::Approx(0.5));

  CHECK(ter_align(words("A b"), words("a B")).edits == 0);
  CHECK(ter_align({}, words("a b")).edits == 2);
  CHECK(ter_align(words("a b c"), {}).ter_score == doctest::Approx(3.0));
  CHECK(token_accuracy(ter_align({}, words("a"))).empty());
}

TEST_CASE("TER against exhaustive shift search on curated sentences") {
  for (const auto& [h, r] : oracle::curated_ter_cases()) {
    const auto hyp = words(h), ref = words(r);
    const auto a = ter_align(hyp, ref);
    INFO(h, " / ", r);
    CHECK(a.shifts + a.edits == oracle::exhaustive_ter_edits(hyp, ref));
    CHECK(a.ter_score == doctest::Approx(static_cast<double>(a.shifts + a.edits) / ref.size()));
  }
}

TEST_CASE("TER properties on random pairs") {
  Rng rng(31);
  int gaps = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto hyp = random_words(rng, 4, uniform_index(rng, 9));
    const auto ref = random_words(rng, 4, 1 + uniform_index(rng, 8));
    const auto a = ter_align(hyp, ref);
    const int lev = oracle::levenshtein(hyp, ref);
    REQUIRE(edit_distance(hyp, ref) == lev);
    REQUIRE(a.shifts + a.edits <= lev);
    REQUIRE(apply_script(hyp, a.script) == ref);
    const auto matched = token_accuracy(a);
    REQUIRE(matched.size() == hyp.size());
    REQUIRE(std::count(matched.begin(), matched.end(), true) == count_matches(a));
    if (hyp.size() <= 6 && ref.size() <= 6 && a.shifts + a.edits > oracle::exhaustive_ter_edits(hyp, ref)) ++gaps;
  }
  MESSAGE("greedy TER above the exhaustive optimum on " << gaps << " of 1000 random pairs");
}

TEST_CASE("calibration") {
  const auto hand = inf_ece({{0.8, true}, {0.6, false}}, 1);
  CHECK(hand.inf_ece == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(hand.overall_conf == doctest::Approx(0.7));
  CHECK(hand.overall_acc == doctest::Approx(0.5));
  CHECK_THROWS_AS(inf_ece({{0.5, true}}, 0), Error);
  CHECK_THROWS_AS(inf_ece({{1.5, true}}, 10), Error);
  CHECK(inf_ece({{1.0, true}, {1.0, true}}, 10).inf_ece == 0.0);

  const auto edge = inf_ece({{1.0, true}, {0.0, false}, {0.1, false}}, 10);
  CHECK(edge.bins.size() == 10);
  CHECK(edge.bins.back().count == 1);
  CHECK(edge.bins[1].count == 1);
  CHECK(edge.total == 3);

  Rng rng(41);
  std::vector<TokenRecord> tokens(1'000'000);
  for (auto& t : tokens) {
    t.confidence = uniform_unit(rng);
    t.correct = uniform_unit(rng) < t.confidence;
  }
  const auto calibrated = inf_ece(tokens);
  CHECK(calibrated.inf_ece < 0.01);
  std::size_t sum = 0;
  for (const auto& b : calibrated.bins) sum += b.count;
  CHECK(sum == tokens.size());

  std::vector<TokenRecord> small(tokens.begin(), tokens.begin() + 2000);
  for (auto& t : small) t.correct = uniform_unit(rng) < 0.3;
  const double before = inf_ece(small).inf_ece;
  std::vector<std::size_t> order(small.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(order, rng);
  std::vector<TokenRecord> permuted;
  for (auto i : order) permuted.push_back(small[i]);
  CHECK(inf_ece(permuted).inf_ece == doctest::Approx(before).epsilon(1e-12));
}

TEST_CASE("BLEU") {
  // Values from an independent reference implementation, tokenize=none.
  const std::vector<Tokens> h1{words("the cat sat on the mat"), words("a dog runs in the park today")};
  const std::vector<Tokens> r1{words("the cat sat on a mat"), words("the dog runs in the big park")};
  CHECK(corpus_bleu(h1, r1) == doctest::Approx(48.04422172878307).epsilon(1e-9));

  const std::vector<Tokens> h2{words("a b c d"), words("x y")};
  const std::vector<Tokens> r2{words("a b x d"), words("x y z w")};
  CHECK(corpus_bleu(h2, r2) == 0.0);
  CHECK(corpus_bleu(h2, r2, 4, BleuSmoothing::Exp) == doctest::Approx(28.784080898931943).epsilon(1e-9));

  CHECK(corpus_bleu(r1, r1) == doctest::Approx(100.0));
  CHECK(corpus_bleu({words("p q r s")}, {words("a b c d")}) == 0.0);

  Rng rng(51);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Tokens> refs;
    for (int i = 0; i < 3; ++i) refs.push_back(random_words(rng, 6, 4 + uniform_index(rng, 6)));
    auto hyps = refs;
    double prev = corpus_bleu(hyps, refs);
    CHECK(prev == doctest::Approx(100.0));
    for (int k = 0; k < 4; ++k) {
      auto& sent = hyps[uniform_index(rng, hyps.size())];
      sent[uniform_index(rng, sent.size())] = "#";
      const double now = corpus_bleu(hyps, refs, 4, BleuSmoothing::Exp);
      CHECK(now >= 0.0);
      CHECK(now <= prev + 1e-9);
      prev = now;
    }
  }
}

TEST_CASE("length ratio") {
  const std::vector<Tokens> refs{words("a b c"), words("d")};
  CHECK(length_ratio(refs, refs) == 1.0);
  CHECK(length_ratio({words("a b c a b c"), words("d d")}, refs) == 2.0);
  CHECK(length_ratio({words("a"), words("d e")}, refs) == doctest::Approx(0.75));
}

TEST_CASE("confidence profiles") {
  CHECK(confidence_profile({}, "free", 10).points.empty());

  auto one = record("a b c", "a b c");
  one.token_probs = {0.9, 0.5, 0.7};
  const auto single = confidence_profile({one}, "free", 10);
  REQUIRE(single.points.size() == 3);
  CHECK(single.points[1].mean_prob == doctest::Approx(0.5));

  std::vector<decode::DecodeRecord> uniform;
  for (int len = 1; len <= 5; ++len) {
    auto r = record(std::string(2 * len - 1, 'a'), "a");
    r.hyp_tokens.assign(len, "a");
    r.token_probs.assign(len, 0.25);
    r.mode = "forced";
    uniform.push_back(r);
  }
  const auto flat = confidence_profile(uniform, "forced", 10);
  REQUIRE(flat.points.size() == 5);
  for (const auto& p : flat.points) CHECK(p.mean_prob == doctest::Approx(0.25));
  CHECK(flat.points[0].support == 5);
  CHECK(confidence_profile(uniform, "forced", 10, 3).points.size() == 3);
  CHECK(confidence_profile(uniform, "free", 10).points.empty());
  CHECK(confidence_profile(uniform, "forced", 2).points.size() == 2);
}

TEST_CASE("log summary") {
  std::vector<decode::DecodeRecord> perfect;
  for (const char* s : {"the cat sat on the mat", "a dog runs in the park", "one two three four"})
    perfect.push_back(record(s, s));
  const auto m = evaluate_log(perfect, DegenConfig::defaults());
  CHECK(m.sentences == 3);
  CHECK(m.bleu == doctest::Approx(100.0));
  CHECK(m.degeneration == 0.0);
  CHECK(m.length_ratio == 1.0);
  CHECK(m.token_accuracy == 1.0);
  CHECK(m.confidence == 1.0);
  CHECK(m.inf_ece == 0.0);

  auto forced = perfect;
  for (auto& r : forced) {
    r.mode = "forced";
    std::fill(r.token_probs.begin(), r.token_probs.end(), 0.5);
  }
  CHECK(mean_forced_confidence(forced) == doctest::Approx(0.5));

  const auto token_recs = token_records({record("a x", "a b")});
  REQUIRE(token_recs.size() == 2);
  CHECK(token_recs[0].correct);
  CHECK_FALSE(token_recs[1].correct);
}
