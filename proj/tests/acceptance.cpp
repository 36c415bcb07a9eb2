// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "divlab/decode.hpp"
#include "divlab/eval.hpp"
#include "divlab/model.hpp"
#include "divlab/pipeline.hpp"
#include "divlab/synthdiv.hpp"
#include "divlab/toy.hpp"
#include "oracles.hpp"
#include "pipeline_fixture.hpp"
#include "support.hpp"

using namespace divlab;
using divlab::testing::random_encoded;
using divlab::testing::random_words;
using divlab::testing::tiny_config;

namespace {

// Tolerances.
constexpr double kGradTolerance = 1e-4;
constexpr double kGradEps = 1e-4;
constexpr double kReductionTolerance = 1e-6;
constexpr double kCalibratedEceMax = 0.01;
constexpr double kHandEceTolerance = 1e-12;
constexpr double kScoreTolerance = 1e-5;
constexpr double kCorruptionBandLo = 5.0;
constexpr double kCorruptionBandHi = 20.0;
constexpr double kGapRecoveryMin = 0.5;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail << "first failure: " << what << "; ";
    pass = pass && ok;
  }
};

Outcome c1_gradients() {
  Outcome o;
  struct Shape {
    int d_token, d_factor, layers;
  };
  const std::vector<Shape> shapes{{12, 4, 1}, {12, 4, 2}, {28, 4, 1}, {28, 4, 2}, {24, 8, 1}};
  Rng rng(101);
  double worst = 0.0;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    auto cfg = tiny_config(shapes[i].d_token, shapes[i].d_factor, shapes[i].layers, 14);
    cfg.dropout = 0.0;
    const auto p = model::init_params(cfg, 500 + i).cast<double>();
    const auto batch = model::make_batch(random_encoded(rng, 3, 14, 14, 6));
    const auto r = model::grad_check(p, batch, kGradEps, 200, i);
    worst = std::max(worst, r.max_relative_error);
    o.require(r.max_relative_error < kGradTolerance, "d_model " + std::to_string(cfg.d_model()) + " worst " +
                                                         r.worst_parameter);
    o.require(r.nonzero > r.checked / 2, "too few nonzero gradients sampled");
  }
  o.detail << "5 configs, max relative error " << worst << " (< " << kGradTolerance << ")";
  return o;
}

Outcome c2_reduction() {
  Outcome o;
  Rng rng(202);
  double worst = 0.0;
  for (int b = 0; b < 100; ++b) {
    auto cfg = tiny_config(12, 4, 1 + b % 2, 12);
    cfg.factor_vocab = 1;
    cfg.label_smoothing = 0.0;
    const auto p = model::init_params(cfg, 900 + b);
    const auto q = testing::widen(p);
    const auto batch = model::make_batch(random_encoded(rng, 1 + uniform_index(rng, 4), 12, 12, 7));
    const auto lf = model::batch_loss(batch, p.cast<double>(), 0.0);
    const auto lu = model::batch_loss(batch, q.cast<double>(), 0.0);
    worst = std::max(worst, std::abs(lf.total() - lu.total()));
  }
  o.require(worst < kReductionTolerance, "loss gap");
  o.detail << "100 batches, max |factored - unfactored| " << worst << " (< " << kReductionTolerance << ")";
  return o;
}

Outcome c3_degeneration() {
  Outcome o;
  const std::set<std::string> stop{"e"};
  Rng rng(303);
  int agree = 0, total = 0;
  for (int n = 2; n <= 4; ++n) {
    eval::DegenConfig cfg;
    cfg.n_min = cfg.n_max = n;
    cfg.stoplist = stop;
    for (int i = 0; i < 1000; ++i) {
      const auto h = random_words(rng, 5, uniform_index(rng, 13));
      const auto r = random_words(rng, 5, uniform_index(rng, 13));
      ++total;
      agree += eval::is_degenerated(h, r, cfg) == oracle::degenerated(h, r, n, n, stop);
    }
  }
  const auto cfg = eval::DegenConfig::defaults();
  const bool footnote = eval::is_degenerated(
      split_whitespace("the sculpture , engineering and architecture , and the engineering and architecture"),
      split_whitespace("the sculpture , engineering and architecture"), cfg);
  o.require(agree == total, "oracle disagreement");
  o.require(footnote, "footnote example not degenerated");
  o.detail << agree << "/" << total << " agree with brute force; footnote example "
           << (footnote ? "degenerated" : "not degenerated");
  return o;
}

Outcome c4_ter() {
  Outcome o;
  int curated = 0, equal = 0;
  for (const auto& [h, r] : oracle::curated_ter_cases()) {
    const auto hyp = split_whitespace(h), ref = split_whitespace(r);
    const auto a = eval::ter_align(hyp, ref);
    ++curated;
    equal += a.shifts + a.edits == oracle::exhaustive_ter_edits(hyp, ref);
  }
  const auto swap = eval::ter_align({"b", "a"}, {"a", "b"});
  o.require(std::abs(swap.ter_score - 0.5) < 1e-12, "\"b a\"/\"a b\" TER");
  o.require(equal == curated, "curated mismatch");
  Rng rng(404);
  int bounded = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto hyp = random_words(rng, 4, uniform_index(rng, 9));
    const auto ref = random_words(rng, 4, 1 + uniform_index(rng, 8));
    const auto a = eval::ter_align(hyp, ref);
    bounded += a.shifts + a.edits <= oracle::levenshtein(hyp, ref) && eval::apply_script(hyp, a.script) == ref;
  }
  o.require(bounded == 1000, "Levenshtein bound");
  o.detail << equal << "/" << curated << " curated equal exhaustive search, \"b a\"/\"a b\" TER " << swap.ter_score
           << ", " << bounded << "/1000 within Levenshtein";
  return o;
}

Outcome c5_calibration() {
  Outcome o;
  Rng rng(505);
  std::vector<eval::TokenRecord> tokens(1'000'000);
  for (auto& t : tokens) {
    t.confidence = uniform_unit(rng);
    t.correct = uniform_unit(rng) < t.confidence;
  }
  const double calibrated = eval::inf_ece(tokens).inf_ece;
  const double hand = eval::inf_ece({{0.8, true}, {0.6, false}}, 1).inf_ece;
  o.require(calibrated < kCalibratedEceMax, "calibrated InfECE");
  o.require(std::abs(hand - 0.2) < kHandEceTolerance, "hand case");
  o.detail << "calibrated InfECE " << calibrated << " (< " << kCalibratedEceMax << "), hand case " << hand;
  return o;
}

model::ModelParams<float> sharp_model(std::uint64_t seed, int vocab, bool factored) {
  auto cfg = tiny_config(12, 4, 1, vocab);
  if (!factored) cfg = model::unfactored(cfg);
  auto p = model::init_params(cfg, seed);
  for (auto& v : p.out_w.data) v *= 4.0f;
  return p;
}

Outcome c6_beam() {
  Outcome o;
  Rng rng(606);
  int exact = 0, greedy_equal = 0, greedy_total = 0;
  for (int m = 0; m < 50; ++m) {
    const auto p = sharp_model(7000 + m, 3, m % 2 == 0);
    std::vector<int> src;
    for (std::size_t k = 0, n = 1 + uniform_index(rng, 4); k < n; ++k) src.push_back(uniform_index(rng, 3));
    const std::vector<int> factors(src.size(), model::kFactorEq);
    decode::BeamOptions bo;
    bo.beam = 27;
    bo.max_len = 3;
    bo.eos_id.reset();
    bo.bos_id = 0;
    const auto top = decode::beam_search(p, src, factors, bo).front();
    const auto [best, best_lp] = oracle::best_sequence(p, src, 3, 3, 0);
    exact += top.tokens == best && std::abs(top.score - best_lp) < kScoreTolerance;

    for (int vocab : {3, 9}) {
      const auto q = vocab == 3 ? p : sharp_model(8000 + m, vocab, m % 2 == 1);
      for (int eos : {0, 1}) {
        decode::BeamOptions g;
        g.beam = 1;
        g.max_len = 6;
        if (eos == 0) g.eos_id.reset();
        if (vocab == 3) g.bos_id = 0;
        if (vocab == 3 && eos == 1) g.eos_id = 2;
        const auto b1 = decode::beam_search(q, src, factors, g).front();
        const auto gd = decode::greedy_decode(q, src, factors, g);
        ++greedy_total;
        greedy_equal += b1.tokens == gd.tokens && b1.factors == gd.factors && b1.score == gd.score;
      }
    }
  }
  o.require(exact == 50, "exhaustive mismatch");
  o.require(greedy_equal == greedy_total, "beam 1 differs from greedy");
  o.detail << exact << "/50 models match exhaustive enumeration, beam 1 equals greedy " << greedy_equal << "/"
           << greedy_total;
  return o;
}

bool inside(const std::vector<corpus::TokenSpan>& spans, int i) {
  for (const auto& s : spans)
    if (i >= s.start && i < s.end) return true;
  return false;
}

Outcome c7_corruption() {
  Outcome o;
  using corpus::CorruptionKind;
  const auto c = toy::generate(500, 707);
  const auto lex = toy::demo_lexicon();
  const synthdiv::CorruptionParams params;
  const auto table = synthdiv::build_phrase_table(c, params.phrase_min, params.phrase_max, params.side);
  const synthdiv::CorruptionInputs in{&lex, &table};
  for (auto kind : {CorruptionKind::LexSub, CorruptionKind::PhraseRep, CorruptionKind::SubtreeDel}) {
    const auto out = synthdiv::corrupt_corpus_indexed(c, kind, params, in, 77);
    bool spans_only = true, pos_kept = true, trees_valid = true;
    for (std::size_t i = 0; i < out.corpus.size(); ++i) {
      const auto& p = out.corpus.pairs[i];
      const auto& orig = c.pairs[out.kept[i]];
      if (!p.provenance) {
        spans_only = false;
        continue;
      }
      const auto side = p.provenance->side;
      const auto& spans = p.provenance->affected_spans;
      spans_only = spans_only &&
                   corpus::surfaces(p.side(corpus::opposite(side))) == corpus::surfaces(orig.side(corpus::opposite(side)));
      const auto& now = p.side(side);
      const auto& was = orig.side(side);
      if (kind == CorruptionKind::SubtreeDel) {
        std::vector<std::string> expect;
        for (int k = 0; k < static_cast<int>(was.size()); ++k)
          if (!inside(spans, k)) expect.push_back(was[k].surface);
        spans_only = spans_only && corpus::surfaces(now) == expect;
        trees_valid = trees_valid && synthdiv::is_valid_tree(now);
        continue;
      }
      if (now.size() != was.size()) {
        spans_only = false;
        continue;
      }
      for (int k = 0; k < static_cast<int>(now.size()); ++k) {
        spans_only = spans_only && (now[k].surface != was[k].surface) == inside(spans, k);
        pos_kept = pos_kept && now[k].pos == was[k].pos;
      }
    }
    const double pct = synthdiv::corruption_stats(out.corpus, params.side).pct_corrupted;
    const std::string name = corpus::to_string(kind);
    o.require(out.corpus.size() > 0, name + " produced nothing");
    o.require(spans_only, name + " changed tokens outside its spans");
    if (kind == CorruptionKind::PhraseRep) o.require(pos_kept, name + " changed POS");
    if (kind == CorruptionKind::SubtreeDel) o.require(trees_valid, name + " left an invalid tree");
    o.require(pct >= kCorruptionBandLo && pct <= kCorruptionBandHi, name + " %Corr outside band");
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s %%Corr %.2f (%zu pairs); ", name.c_str(), pct, out.corpus.size());
    o.detail << buf;
  }
  o.detail << "band [" << kCorruptionBandLo << ", " << kCorruptionBandHi << "]";
  return o;
}

// variant -> per-seed values of one metrics column
using Columns = std::map<std::string, std::map<std::string, std::vector<double>>>;

Columns read_metrics(const std::string& path) {
  Columns out;
  const auto lines = split(testing::slurp(path), '\n');
  const auto header = split(lines.at(0), ',');
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto cols = split(lines[i], ',');
    if (cols[3] == "mean" || cols[3] == "stdev") continue;
    for (std::size_t c = 6; c < cols.size(); ++c) out[cols[0]][header[c]].push_back(std::stod(cols[c]));
  }
  return out;
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

Outcome c8_directional() {
  Outcome o;
  testing::TempDir dir("acceptance_c8");
  auto cfg = pipeline::ExperimentConfig::load(std::string(DIVLAB_SOURCE_DIR) + "/configs/mitigation.json");
  cfg.out_dir = dir / "out";
  cfg.variants = {pipeline::Variant::EQUIVALENTS, pipeline::Variant::DIV_AGNOSTIC, pipeline::Variant::DIV_FACTORIZED};
  o.require(cfg.seeds.size() == 3, "three seeds");
  o.require(cfg.model.d_model() == 32, "d_model 32");
  o.require(cfg.fractions == std::vector<double>{1.0}, "100% corruption");
  pipeline::run_all(cfg);
  auto m = read_metrics(cfg.out_dir + "/reports/metrics.csv");
  auto& eq = m["EQUIVALENTS"];
  auto& ag = m["DIV_AGNOSTIC"];
  auto& fa = m["DIV_FACTORIZED"];
  for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
    o.require(ag["token_accuracy"].at(s) < eq["token_accuracy"].at(s), "(a) accuracy, seed " + std::to_string(s + 1));
    o.require(ag["forced_confidence"].at(s) < eq["forced_confidence"].at(s),
              "(a) forced confidence, seed " + std::to_string(s + 1));
  }
  const double gap = mean(eq["token_accuracy"]) - mean(ag["token_accuracy"]);
  const double recovered = gap > 0 ? (mean(fa["token_accuracy"]) - mean(ag["token_accuracy"])) / gap : 0.0;
  o.require(recovered >= kGapRecoveryMin, "(b) accuracy gap recovery");
  o.require(mean(fa["inf_ece"]) < mean(ag["inf_ece"]), "(b) InfECE");
  char buf[400];
  std::snprintf(buf, sizeof buf,
                "accuracy EQ %.4f / AGN %.4f / FACT %.4f (gap recovered %.0f%%); forced conf EQ %.4f / AGN %.4f; "
                "InfECE AGN %.4f / FACT %.4f",
                mean(eq["token_accuracy"]), mean(ag["token_accuracy"]), mean(fa["token_accuracy"]), 100 * recovered,
                mean(eq["forced_confidence"]), mean(ag["forced_confidence"]), mean(ag["inf_ece"]),
                mean(fa["inf_ece"]));
  o.detail << buf;
  return o;
}

Outcome c9_determinism() {
  Outcome o;
  testing::TempDir dir("acceptance_c9");
  auto cfg = testing::tiny_experiment(dir);
  const std::vector<std::string> reports{"metrics.csv", "plots.json", "corruption_stats.csv"};
  std::vector<std::string> first;
  for (int run = 0; run < 2; ++run) {
    cfg.out_dir = dir / ("run" + std::to_string(run));
    pipeline::run_all(cfg);
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const auto text = testing::slurp(cfg.out_dir + "/reports/" + reports[i]);
      o.require(!text.empty(), reports[i] + " empty");
      if (run == 0) first.push_back(text);
      else o.require(text == first[i], reports[i] + " differs");
    }
  }
  o.detail << "two full runs, " << reports.size() << " report files byte-identical";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient fidelity", c1_gradients},   {"singleton-factor reduction", c2_reduction},
      {"degeneration oracle", c3_degeneration}, {"TER oracle", c4_ter},
      {"calibration identities", c5_calibration}, {"beam-search oracle", c6_beam},
      {"corruption soundness", c7_corruption}, {"directional end-to-end", c8_directional},
      {"determinism", c9_determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("%s %zu %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.str().c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
