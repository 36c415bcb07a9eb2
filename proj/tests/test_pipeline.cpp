#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>
#include <filesystem>

#include <json.hpp>

#include "divlab/pipeline.hpp"
#include "pipeline_fixture.hpp"

using namespace divlab;
using namespace divlab::pipeline;
using divlab::testing::slurp;
using divlab::testing::TempDir;
using divlab::testing::tiny_experiment;
namespace fs = std::filesystem;

namespace {

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& line : split(text, '\n'))
    if (!line.empty()) rows.push_back(split(line, ','));
  return rows;
}

std::size_t count_files(const std::string& dir, const std::string& needle) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().filename().string().find(needle) != std::string::npos) ++n;
  return n;
}

decode::DecodeRecord perfect_record(std::size_t id, const std::string& sentence, const std::string& mode) {
  decode::DecodeRecord r;
  r.id = id;
  r.ref = r.hyp = sentence;
  r.ref_tokens = r.hyp_tokens = split_whitespace(sentence);
  r.token_probs.assign(r.hyp_tokens.size(), 1.0);
  r.factors.assign(r.hyp_tokens.size(), "EQ");
  r.mode = mode;
  return r;
}

}  // namespace

TEST_CASE("experiment config") {
  ExperimentConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.fractions = {1.5};
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.fractions = {};
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.fractions = {0.5};
  cfg.seeds = {};
  CHECK_THROWS_AS(cfg.validate(), Error);

  const auto parsed = ExperimentConfig::from_json(
      R"({"corpus": {"train_src": "a.src", "train_tgt": "a.tgt", "dev_src": "b.src", "dev_tgt": "b.tgt",
          "test_src": "c.src", "test_tgt": "c.tgt"},
          "corruption": {"kinds": ["subtree_del"], "lexicon": "lex.json"},
          "variants": ["DIV_FACTORIZED"], "beams": [3], "seeds": [4, 5], "out_dir": "o"})",
      "/base");
  CHECK(parsed.corpus.train_src == "/base/a.src");
  CHECK(parsed.corruption.lexicon == "/base/lex.json");
  CHECK(parsed.corruption.kinds == std::vector<corpus::CorruptionKind>{corpus::CorruptionKind::SubtreeDel});
  CHECK(parsed.variants == std::vector<Variant>{Variant::DIV_FACTORIZED});
  CHECK(parsed.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK(parsed.out_dir == "o");
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"variants": ["NOPE"]})"), Error);
  CHECK_THROWS_AS(ExperimentConfig::from_json("{"), Error);

  CHECK(cell_name(Variant::DIV_AGNOSTIC, corpus::CorruptionKind::LexSub, 0.5, 1) == "DIV_AGNOSTIC__lex_sub__f0.50__s1");
  CHECK(cell_name(Variant::EQUIVALENTS, corpus::CorruptionKind::PhraseRep, 0.5, 2) == "EQUIVALENTS__clean__f0.00__s2");
  for (auto v : {Variant::EQUIVALENTS, Variant::DIV_AGNOSTIC, Variant::DIV_TAGGED, Variant::DIV_FACTORIZED})
    CHECK(parse_variant(to_string(v)) == v);
}

TEST_CASE("corrupt stage") {
  TempDir dir("corrupt");
  auto cfg = tiny_experiment(dir);
  cmd_corrupt(cfg);
  const auto stats = csv_rows(slurp(cfg.out_dir + "/reports/corruption_stats.csv"));
  REQUIRE(stats.size() == 4);
  CHECK(stats[1][0] == "equivalents");
  CHECK(std::stod(stats[1].back()) == 0.0);
  for (std::size_t i = 2; i < stats.size(); ++i) CHECK(std::stod(stats[i].back()) > 0.0);

  const auto again = cmd_corrupt(cfg);
  CHECK(again.written.empty());

  SUBCASE("LEX_SUB without a lexicon") {
    auto c = cfg;
    c.out_dir = dir / "nolex";
    c.corruption.kinds = {corpus::CorruptionKind::LexSub};
    c.corruption.lexicon.clear();
    CHECK_THROWS_AS(cmd_corrupt(c), Error);
  }

  SUBCASE("SUBTREE_DEL on an unannotated corpus") {
    auto plain = corpus::parse_parallel(cfg.corpus.train_src, cfg.corpus.train_tgt);
    for (auto& p : plain.pairs)
      for (auto* side : {&p.src, &p.tgt})
        for (auto& t : *side) t.head = -1;
    corpus::write_parallel(plain, dir / "plain.src", dir / "plain.tgt");
    auto c = cfg;
    c.out_dir = dir / "plain_out";
    c.corpus.train_src = dir / "plain.src";
    c.corpus.train_tgt = dir / "plain.tgt";
    c.corruption.kinds = {corpus::CorruptionKind::SubtreeDel};
    CHECK_THROWS_AS(cmd_corrupt(c), Error);
  }
}

TEST_CASE("mix stage") {
  TempDir dir("mix");
  auto cfg = tiny_experiment(dir);
  cfg.fractions = {0.0, 0.25, 1.0};
  cmd_corrupt(cfg);
  const auto s = cmd_mix(cfg);
  const std::string corpora = cfg.out_dir + "/corpora";
  CHECK(count_files(corpora, "mix__") ==
        2 * cfg.corruption.kinds.size() * cfg.fractions.size() * cfg.seeds.size());

  const auto equivalents = corpus::parse_parallel(corpora + "/train.lex_sub.eq.src", corpora + "/train.lex_sub.eq.tgt");
  for (double f : cfg.fractions) {
    const std::string stem = corpora + "/mix__lex_sub__f" + format_fixed(f, 2) + "__s1";
    const auto mix = corpus::parse_parallel(stem + ".src", stem + ".tgt");
    CHECK(mix.size() == equivalents.size());
    std::size_t div = 0;
    for (const auto& p : mix.pairs) div += p.all_eq() ? 0 : 1;
    const auto expected = static_cast<std::size_t>(std::llround(f * static_cast<double>(equivalents.size())));
    CHECK(div == expected);
  }
  CHECK(cmd_mix(cfg).written.empty());
}

TEST_CASE("DIV_FACTORIZED refuses corpora without factor tags") {
  TempDir dir("untagged");
  auto cfg = tiny_experiment(dir);
  for (const char* side : {"src", "tgt"}) {
    std::string text;
    for (const auto& line : split(slurp(dir / (std::string("data/train.") + side)), '\n')) {
      auto cols = split(line, '\t');
      if (cols.size() == 7) cols.pop_back();
      text += join(cols, "\t") + "\n";
    }
    std::ofstream(dir / (std::string("plain.") + side)) << text;
  }
  CHECK_FALSE(corpus::parse_parallel(dir / "plain.src", dir / "plain.tgt").factor_tagged);
  cfg.corpus.train_src = dir / "plain.src";
  cfg.corpus.train_tgt = dir / "plain.tgt";
  cfg.variants = {Variant::DIV_FACTORIZED};
  cfg.corruption.kinds = {corpus::CorruptionKind::LexSub};
  cmd_corrupt(cfg);
  cmd_mix(cfg);
  CHECK_THROWS_AS(cmd_train(cfg), Error);
}

TEST_CASE("full grid, resume and report shape") {
  TempDir dir("grid");
  auto cfg = tiny_experiment(dir);
  const auto first = run_all(cfg);
  CHECK(!first.written.empty());

  const std::string ck = cfg.out_dir + "/checkpoints";
  // EQUIVALENTS once per seed; other variants per kind, fraction and seed.
  const std::size_t cells = cfg.corruption.kinds.size() * cfg.fractions.size() * cfg.seeds.size();
  CHECK(count_files(ck, "EQUIVALENTS__") == cfg.seeds.size());
  CHECK(count_files(ck, "DIV_AGNOSTIC__") == cells);
  CHECK(count_files(ck, "DIV_TAGGED__") == cells);
  CHECK(count_files(ck, "DIV_FACTORIZED__") == cells);
  const std::size_t checkpoints = cfg.seeds.size() + 3 * cells;
  CHECK(count_files(cfg.out_dir + "/logs", "__b") == checkpoints * cfg.beams.size());
  CHECK(count_files(cfg.out_dir + "/logs", "__forced") == checkpoints);

  const auto rows = csv_rows(slurp(cfg.out_dir + "/reports/metrics.csv"));
  const std::size_t per_seed =
      cfg.corruption.kinds.size() * cfg.variants.size() * cfg.fractions.size() * cfg.seeds.size() * cfg.beams.size();
  std::size_t seed_rows = 0, mean_rows = 0, stdev_rows = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    REQUIRE(rows[i].size() == rows[0].size());
    if (rows[i][3] == "mean") ++mean_rows;
    else if (rows[i][3] == "stdev") ++stdev_rows;
    else ++seed_rows;
  }
  CHECK(seed_rows == per_seed);
  CHECK(mean_rows == per_seed / cfg.seeds.size());
  CHECK(stdev_rows == mean_rows);

  const auto plots = nlohmann::json::parse(slurp(cfg.out_dir + "/reports/plots.json"));
  CHECK(plots.at("profiles").size() == checkpoints * (cfg.beams.size() + 1));
  CHECK(plots.at("calibration").size() == checkpoints * cfg.beams.size());
  CHECK(plots.at("degeneration").size() == checkpoints * cfg.beams.size());

  const auto metrics_before = slurp(cfg.out_dir + "/reports/metrics.csv");
  const auto second = run_all(cfg);
  for (const auto& p : second.written) CHECK(p.find("/reports/") != std::string::npos);
  CHECK(slurp(cfg.out_dir + "/reports/metrics.csv") == metrics_before);

  SUBCASE("a deleted decode log is regenerated identically") {
    const std::string log = cfg.out_dir + "/logs/DIV_AGNOSTIC__lex_sub__f1.00__s2__b2.jsonl";
    const auto before = slurp(log);
    fs::remove(log);
    const auto s = cmd_decode(cfg);
    CHECK(s.written.size() == 1);
    CHECK(slurp(log) == before);
  }

  SUBCASE("beam 1 logs equal greedy decoding") {
    const auto bundle = nlohmann::json::parse(slurp(ck + "/DIV_FACTORIZED__subtree_del__f1.00__s1.json"));
    const auto params = model::params_from_json(bundle.at("model").dump());
    const auto bpe = corpus::BpeModel::from_json(bundle.at("bpe").dump());
    const auto log = decode::read_decode_log(cfg.out_dir + "/logs/DIV_FACTORIZED__subtree_del__f1.00__s1__b1.jsonl");
    const auto test = corpus::parse_parallel(cfg.corpus.test_src, cfg.corpus.test_tgt);
    REQUIRE(log.size() == test.size());
    decode::BeamOptions o;
    o.beam = 1;
    o.max_len = cfg.max_len;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const auto e = corpus::encode_pair(test.pairs[i], bpe);
      const auto g = decode::greedy_decode(params, e.src_ids, std::vector<int>(e.src_ids.size(), model::kFactorEq), o);
      CHECK(log[i].hyp_tokens.size() == g.tokens.size());
      CHECK(log[i].score == doctest::Approx(g.score).epsilon(1e-9));
    }
  }
}

TEST_CASE("report on perfect logs") {
  TempDir dir("perfect");
  auto cfg = tiny_experiment(dir, 20);
  cfg.variants = {Variant::EQUIVALENTS, Variant::DIV_AGNOSTIC};
  cfg.corruption.kinds = {corpus::CorruptionKind::LexSub};
  cfg.fractions = {0.5};
  cfg.seeds = {1, 2, 3};
  cfg.beams = {5};
  fs::create_directories(cfg.out_dir + "/logs");
  const std::vector<std::string> sentences{"the cat sat on the mat", "a dog runs in the park", "one two three four"};
  for (auto v : cfg.variants)
    for (auto seed : cfg.seeds) {
      const auto cell = cell_name(v, corpus::CorruptionKind::LexSub, 0.5, seed);
      std::vector<decode::DecodeRecord> free, forced;
      for (std::size_t i = 0; i < sentences.size(); ++i) {
        free.push_back(perfect_record(i, sentences[i], "free"));
        forced.push_back(perfect_record(i, sentences[i], "forced"));
      }
      decode::write_decode_log(cfg.out_dir + "/logs/" + cell + "__b5.jsonl", free);
      decode::write_decode_log(cfg.out_dir + "/logs/" + cell + "__forced.jsonl", forced);
    }
  cmd_report(cfg);
  const auto rows = csv_rows(slurp(cfg.out_dir + "/reports/metrics.csv"));
  CHECK(rows[0] == split("variant,kind,fraction,seed,beam,sentences,bleu,degeneration,length_ratio,token_accuracy,"
                         "confidence,inf_ece,forced_confidence",
                         ','));
  REQUIRE(rows.size() == 1 + 2 * (3 + 2));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r[3] == "stdev") {
      for (std::size_t c = 6; c < r.size(); ++c) CHECK(std::stod(r[c]) == 0.0);
      continue;
    }
    CHECK(r[5] == "3");
    CHECK(r[6] == "100.0000");
    CHECK(r[7] == "0.0000");
    CHECK(r[8] == "1.0000");
    CHECK(r[9] == "1.0000");
    CHECK(r[11] == "0.0000");
    CHECK(r[12] == "1.0000");
  }

  SUBCASE("mean row is the hand average over seeds") {
    const auto cell = cell_name(Variant::DIV_AGNOSTIC, corpus::CorruptionKind::LexSub, 0.5, 3);
    std::vector<decode::DecodeRecord> forced;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      auto r = perfect_record(i, sentences[i], "forced");
      std::fill(r.token_probs.begin(), r.token_probs.end(), 0.4);
      forced.push_back(r);
    }
    decode::write_decode_log(cfg.out_dir + "/logs/" + cell + "__forced.jsonl", forced);
    cmd_report(cfg);
    const auto again = csv_rows(slurp(cfg.out_dir + "/reports/metrics.csv"));
    bool seen = false;
    for (const auto& r : again)
      if (r[0] == "DIV_AGNOSTIC" && r[3] == "mean") {
        CHECK(r[12] == format_fixed((1.0 + 1.0 + 0.4) / 3.0, 4));
        seen = true;
      } else if (r[0] == "DIV_AGNOSTIC" && r[3] == "stdev") {
        CHECK(std::stod(r[12]) == doctest::Approx(std::sqrt(0.24 / 2.0)).epsilon(1e-3));
      }
    CHECK(seen);
  }

  SUBCASE("disabled metrics print NA") {
    cfg.metrics.calibration = false;
    cmd_report(cfg);
    const auto r = csv_rows(slurp(cfg.out_dir + "/reports/metrics.csv"))[1];
    CHECK(r[9] == "NA");
    CHECK(r[12] == "NA");
    CHECK(r[6] == "100.0000");
  }

  SUBCASE("missing logs are an error") {
    cfg.seeds = {9};
    CHECK_THROWS_AS(cmd_report(cfg), Error);
  }
}

#ifdef DIVLAB_CLI_PATH
TEST_CASE("CLI error line and exit code") {
  TempDir dir("cli");
  const std::string cfg_path = dir / "bad.json";
  {
    std::ofstream(cfg_path) << R"({"fractions": [2.0]})";
  }
  const std::string err = dir / "err.txt";
  const std::string cmd = std::string(DIVLAB_CLI_PATH) + " report --config " + cfg_path + " 2> " + err;
  const int status = std::system(cmd.c_str());
  CHECK(WEXITSTATUS(status) == 1);
  const auto text = slurp(err);
  REQUIRE(text.rfind("error: ", 0) == 0);
  const auto j = nlohmann::json::parse(text.substr(7));
  CHECK(j.at("command") == "report");
  CHECK(!j.at("message").get<std::string>().empty());
}
#endif
