// divlab: synthetic divergence experiments from corpus to report.
//
//   divlab toy --dir data/toy
//   divlab run --config configs/demo.json --out out/demo
//   divlab train --config configs/demo.json --variant DIV_FACTORIZED

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "divlab/pipeline.hpp"

namespace {

using namespace divlab;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::vector<double> fractions;
  std::vector<int> beams;
  std::vector<std::string> variants;
  std::vector<std::string> kinds;
  std::optional<int> max_updates;
  std::optional<double> lr;
  std::optional<int> max_len;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "run a single seed (config: seeds)");
  app->add_option("--seeds", o.seeds, "seed list (config: seeds)");
  app->add_option("--out", o.out, "output directory (config: out_dir)");
  app->add_option("--fractions", o.fractions, "divergent fractions (config: fractions)");
  app->add_option("--beams", o.beams, "beam sizes (config: beams)");
  app->add_option("--variants", o.variants, "model variants (config: variants)");
  app->add_option("--kinds", o.kinds, "corruption kinds (config: corruption.kinds)");
  app->add_option("--max-updates", o.max_updates, "update cap (config: optim.max_updates)");
  app->add_option("--lr", o.lr, "learning rate (config: optim.lr)");
  app->add_option("--max-len", o.max_len, "decode length cap (config: max_len)");
}

pipeline::ExperimentConfig load(const Overrides& o) {
  auto cfg = pipeline::ExperimentConfig::load(o.config);
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (o.seed) cfg.seeds = {*o.seed};
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (!o.fractions.empty()) cfg.fractions = o.fractions;
  if (!o.beams.empty()) cfg.beams = o.beams;
  if (!o.variants.empty()) {
    cfg.variants.clear();
    for (const auto& v : o.variants) cfg.variants.push_back(pipeline::parse_variant(v));
  }
  if (!o.kinds.empty()) {
    cfg.corruption.kinds.clear();
    for (const auto& k : o.kinds) cfg.corruption.kinds.push_back(corpus::parse_corruption_kind(k));
  }
  if (o.max_updates) cfg.optim.max_updates = *o.max_updates;
  if (o.lr) cfg.optim.lr = *o.lr;
  if (o.max_len) cfg.max_len = *o.max_len;
  cfg.validate();
  return cfg;
}

void print(const pipeline::StageSummary& s) {
  for (const auto& p : s.written) std::cout << "wrote " << p << '\n';
  for (const auto& p : s.skipped) std::cout << "skip  " << p << '\n';
  std::cout << s.written.size() << " written, " << s.skipped.size() << " skipped\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"divlab: fine-grained divergence experiments"};
  app.require_subcommand(1);

  Overrides o;
  std::string only_variant;
  auto* corrupt = app.add_subcommand("corrupt", "corrupt the training corpus and write stats");
  auto* mix = app.add_subcommand("mix", "build mixtures for every fraction and seed");
  auto* train = app.add_subcommand("train", "train every variant of the grid");
  auto* decode = app.add_subcommand("decode", "free and forced decoding of the test set");
  auto* report = app.add_subcommand("report", "metrics CSV and plot JSON");
  auto* run = app.add_subcommand("run", "corrupt, mix, train, decode and report");
  for (auto* sub : {corrupt, mix, train, decode, report, run}) add_common(sub, o);
  train->add_option("--variant", only_variant, "train this variant only");

  pipeline::ToyDataOptions toy_opts;
  std::string toy_dir;
  auto* toy = app.add_subcommand("toy", "write the synthetic toy corpus");
  toy->add_option("--dir", toy_dir, "output directory")->required();
  toy->add_option("--train", toy_opts.train, "training pairs");
  toy->add_option("--dev", toy_opts.dev, "dev pairs");
  toy->add_option("--test", toy_opts.test, "test pairs");
  toy->add_option("--seed", toy_opts.seed, "generator seed");
  toy->add_option("--min-clauses", toy_opts.language.min_clauses, "clauses per sentence, lower bound");
  toy->add_option("--max-clauses", toy_opts.language.max_clauses, "clauses per sentence, upper bound");
  toy->add_option("--adjective-prob", toy_opts.language.adjective_prob, "probability of an adjective");
  toy->add_option("--pp-prob", toy_opts.language.pp_prob, "probability of a prepositional phrase");
  toy->add_flag("--noun-lexicon", toy_opts.noun_lexicon, "one hypernym per noun");

  CLI11_PARSE(app, argc, argv);

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "toy") {
      print(pipeline::write_toy_data(toy_dir, toy_opts));
      return 0;
    }
    const auto cfg = load(o);
    if (command == "corrupt") print(pipeline::cmd_corrupt(cfg));
    if (command == "mix") print(pipeline::cmd_mix(cfg));
    if (command == "train") {
      std::optional<pipeline::Variant> only;
      if (!only_variant.empty()) only = pipeline::parse_variant(only_variant);
      print(pipeline::cmd_train(cfg, only));
    }
    if (command == "decode") print(pipeline::cmd_decode(cfg));
    if (command == "report") print(pipeline::cmd_report(cfg));
    if (command == "run") print(pipeline::run_all(cfg));
  } catch (const std::exception& e) {
    const nlohmann::json line = {{"command", command}, {"message", e.what()}};
    std::cerr << "error: " << line.dump() << '\n';
    return 1;
  }
  return 0;
}
