#include "divlab/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>

#include <json.hpp>

#include "divlab/bpe.hpp"

namespace divlab::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;
using corpus::Corpus;
using corpus::CorruptionKind;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::EQUIVALENTS:
      return "EQUIVALENTS";
    case Variant::DIV_AGNOSTIC:
      return "DIV_AGNOSTIC";
    case Variant::DIV_TAGGED:
      return "DIV_TAGGED";
    case Variant::DIV_FACTORIZED:
      return "DIV_FACTORIZED";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  std::string u = s;
  for (auto& c : u) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (u == "EQUIVALENTS") return Variant::EQUIVALENTS;
  if (u == "DIV_AGNOSTIC") return Variant::DIV_AGNOSTIC;
  if (u == "DIV_TAGGED") return Variant::DIV_TAGGED;
  if (u == "DIV_FACTORIZED") return Variant::DIV_FACTORIZED;
  throw Error("unknown variant '" + s + "'");
}

namespace {

std::string resolve(const std::string& path, const std::string& base) {
  if (path.empty() || fs::path(path).is_absolute()) return path;
  return (fs::path(base) / path).lexically_normal().string();
}

synthdiv::SideChoice parse_side_choice(const std::string& s) {
  const auto l = to_lower_ascii(s);
  if (l == "src") return synthdiv::SideChoice::SRC;
  if (l == "tgt") return synthdiv::SideChoice::TGT;
  if (l == "random") return synthdiv::SideChoice::RANDOM;
  throw Error("unknown deletion side '" + s + "'");
}

eval::BleuSmoothing parse_smoothing(const std::string& s) {
  const auto l = to_lower_ascii(s);
  if (l == "none") return eval::BleuSmoothing::None;
  if (l == "exp") return eval::BleuSmoothing::Exp;
  throw Error("unknown BLEU smoothing '" + s + "'");
}

std::string kind_name(CorruptionKind k) { return to_lower_ascii(corpus::to_string(k)); }

std::string fraction_tag(double f) { return "f" + format_fixed(f, 2); }

bool exists(const std::string& p) { return fs::exists(p); }

// Writes through a temporary file so an interrupted run never leaves a
// truncated output that a resumed run would skip.
void write_atomic(const std::string& path, std::string_view content) {
  fs::create_directories(fs::path(path).parent_path());
  const std::string tmp = path + ".tmp";
  write_file(tmp, content);
  fs::rename(tmp, path);
}

void write_corpus_atomic(const Corpus& c, const std::string& stem) {
  write_atomic(stem + ".src", corpus::format_side(c, corpus::Side::SRC));
  write_atomic(stem + ".tgt", corpus::format_side(c, corpus::Side::TGT));
}

bool corpus_exists(const std::string& stem) { return exists(stem + ".src") && exists(stem + ".tgt"); }

Corpus read_corpus(const std::string& stem) { return corpus::parse_parallel(stem + ".src", stem + ".tgt"); }

struct Layout {
  std::string corpora, checkpoints, logs, reports;

  explicit Layout(const std::string& out)
      : corpora((fs::path(out) / "corpora").string()),
        checkpoints((fs::path(out) / "checkpoints").string()),
        logs((fs::path(out) / "logs").string()),
        reports((fs::path(out) / "reports").string()) {}

  std::string corrupted(CorruptionKind k) const { return corpora + "/train." + kind_name(k); }
  std::string aligned_equivalents(CorruptionKind k) const { return corrupted(k) + ".eq"; }
  std::string mixture(CorruptionKind k, double f, std::uint64_t seed) const {
    return corpora + "/mix__" + kind_name(k) + "__" + fraction_tag(f) + "__s" + std::to_string(seed);
  }
  std::string bpe() const { return corpora + "/bpe.json"; }
  std::string checkpoint(const std::string& cell) const { return checkpoints + "/" + cell + ".json"; }
  std::string train_log(const std::string& cell) const { return logs + "/" + cell + ".train.csv"; }
  std::string decode_log(const std::string& cell, int beam) const {
    return logs + "/" + cell + "__b" + std::to_string(beam) + ".jsonl";
  }
  std::string forced_log(const std::string& cell) const { return logs + "/" + cell + "__forced.jsonl"; }
};

// One trained model. EQUIVALENTS models are keyed by seed only.
struct Checkpoint {
  Variant variant;
  std::optional<CorruptionKind> kind;
  double fraction = 0.0;
  std::uint64_t seed = 0;
  std::string name;

  std::string kind_label() const { return kind ? kind_name(*kind) : "clean"; }
};

Checkpoint checkpoint_for(Variant v, CorruptionKind kind, double fraction, std::uint64_t seed) {
  Checkpoint c{v, kind, fraction, seed, cell_name(v, kind, fraction, seed)};
  if (v == Variant::EQUIVALENTS) {
    c.kind.reset();
    c.fraction = 0.0;
  }
  return c;
}

std::vector<Checkpoint> unique_checkpoints(const ExperimentConfig& cfg, std::optional<Variant> only = std::nullopt) {
  std::vector<Checkpoint> out;
  std::set<std::string> seen;
  for (auto kind : cfg.corruption.kinds)
    for (auto v : cfg.variants) {
      if (only && v != *only) continue;
      for (double f : cfg.fractions)
        for (auto seed : cfg.seeds) {
          auto c = checkpoint_for(v, kind, f, seed);
          if (seen.insert(c.name).second) out.push_back(c);
        }
    }
  return out;
}

void check_annotations(const Corpus& c, CorruptionKind kind, const CorruptionConfig& cc) {
  using corpus::Side;
  auto require = [&](Side side, bool heads) {
    for (std::size_t i = 0; i < c.size(); ++i)
      for (const auto& t : c.pairs[i].side(side)) {
        if (heads && t.head < 0) {
          throw Error(corpus::to_string(kind) + " needs dependency heads on the " + corpus::to_string(side) +
                      " side; pair " + std::to_string(i + 1) + " is unannotated");
        }
        if (!heads && t.pos.empty()) {
          throw Error(corpus::to_string(kind) + " needs POS tags on the " + corpus::to_string(side) +
                      " side; pair " + std::to_string(i + 1) + " is unannotated");
        }
      }
  };
  switch (kind) {
    case CorruptionKind::LexSub:
      if (cc.lexicon.empty()) throw Error("LEX_SUB needs a lexicon (corruption.lexicon)");
      break;
    case CorruptionKind::PhraseRep:
      require(cc.params.side, false);
      break;
    case CorruptionKind::SubtreeDel:
      if (cc.params.deletion_side != synthdiv::SideChoice::SRC) require(Side::TGT, true);
      if (cc.params.deletion_side != synthdiv::SideChoice::TGT) require(Side::SRC, true);
      break;
  }
}

void merge(StageSummary& into, const StageSummary& from) {
  into.written.insert(into.written.end(), from.written.begin(), from.written.end());
  into.skipped.insert(into.skipped.end(), from.skipped.begin(), from.skipped.end());
}

corpus::BpeModel ensure_bpe(const ExperimentConfig& cfg, const Layout& L, StageSummary& summary) {
  if (exists(L.bpe())) {
    summary.skipped.push_back(L.bpe());
    return corpus::BpeModel::load(L.bpe());
  }
  Corpus all = corpus::parse_parallel(cfg.corpus.train_src, cfg.corpus.train_tgt);
  for (auto kind : cfg.corruption.kinds) {
    const Corpus div = read_corpus(L.corrupted(kind));
    all.pairs.insert(all.pairs.end(), div.pairs.begin(), div.pairs.end());
  }
  auto bpe = corpus::learn_bpe(all, cfg.bpe.merges, cfg.bpe.min_frequency);
  write_atomic(L.bpe(), bpe.to_json());
  summary.written.push_back(L.bpe());
  return bpe;
}

std::vector<corpus::EncodedPair> encode_all(const Corpus& c, const corpus::BpeModel& bpe) {
  std::vector<corpus::EncodedPair> out;
  out.reserve(c.size());
  for (const auto& p : c.pairs) out.push_back(corpus::encode_pair(p, bpe));
  return out;
}

struct LoadedCheckpoint {
  model::ModelParams<float> params;
  corpus::BpeModel bpe;
};

LoadedCheckpoint load_checkpoint(const std::string& path) {
  const json j = json::parse(read_file(path));
  return {model::params_from_json(j.at("model").dump()), corpus::BpeModel::from_json(j.at("bpe").dump())};
}

void train_checkpoint(const ExperimentConfig& cfg, const Layout& L, const Checkpoint& ck,
                      const corpus::BpeModel& bpe) {
  Corpus train = ck.kind ? read_corpus(L.mixture(*ck.kind, ck.fraction, ck.seed))
                         : corpus::parse_parallel(cfg.corpus.train_src, cfg.corpus.train_tgt);
  Corpus dev = corpus::parse_parallel(cfg.corpus.dev_src, cfg.corpus.dev_tgt);

  if (ck.variant == Variant::DIV_TAGGED) {
    for (auto& p : train.pairs)
      p = corpus::prepend_sentence_tag(p, p.all_eq() ? corpus::Factor::EQ : corpus::Factor::DIV);
    for (auto& p : dev.pairs) p = corpus::prepend_sentence_tag(p, corpus::Factor::EQ);
  } else if (ck.variant == Variant::DIV_FACTORIZED) {
    const bool tagged =
        ck.kind ? corpus::parse_parallel(cfg.corpus.train_src, cfg.corpus.train_tgt).factor_tagged : train.factor_tagged;
    if (!tagged) throw Error("DIV_FACTORIZED needs a factor-tagged training corpus (" + cfg.corpus.train_src + ")");
    for (auto& p : train.pairs) p = synthdiv::mirror_div_tags(p);
  }

  model::ModelConfig mc = cfg.model;
  mc.src_vocab = bpe.vocab_size();
  mc.tgt_vocab = bpe.vocab_size();
  const auto train_set = encode_all(train, bpe);
  const auto dev_set = encode_all(dev, bpe);
  const auto result = ck.variant == Variant::DIV_FACTORIZED
                          ? model::train(train_set, dev_set, mc, cfg.optim, ck.seed)
                          : model::train_unfactored(train_set, dev_set, mc, cfg.optim, ck.seed);

  write_atomic(L.train_log(ck.name), result.log.to_csv());
  json header;
  header["variant"] = to_string(ck.variant);
  header["kind"] = ck.kind_label();
  header["fraction"] = ck.fraction;
  header["seed"] = ck.seed;
  std::string bundle = header.dump();
  bundle.pop_back();
  bundle += ",\"model\":" + model::params_to_json(result.params) + ",\"bpe\":" + bpe.to_json() + "}\n";
  write_atomic(L.checkpoint(ck.name), bundle);
}

decode::DecodeJob job_for(const Checkpoint& ck) {
  return {to_string(ck.variant), ck.kind_label(), ck.fraction, ck.seed, ck.variant == Variant::DIV_TAGGED};
}

eval::DegenConfig degen_config(const MetricsConfig& m) {
  eval::DegenConfig d;
  d.n_min = m.degen_n_min;
  d.n_max = m.degen_n_max;
  d.stoplist = m.stoplist.empty() ? eval::default_stoplist() : eval::DegenConfig::load_stoplist(m.stoplist);
  d.validate();
  return d;
}

const char* const kMetricsHeader =
    "variant,kind,fraction,seed,beam,sentences,bleu,degeneration,length_ratio,token_accuracy,confidence,"
    "inf_ece,forced_confidence\n";

struct Row {
  eval::SystemMetrics m;
  double forced_confidence = 0.0;
};

std::string num(double v, bool enabled) { return enabled ? format_fixed(v, 4) : "NA"; }

std::string metric_fields(const std::vector<double>& v, const MetricsConfig& mc) {
  // v: bleu, degeneration, length_ratio, token_accuracy, confidence, inf_ece, forced_confidence
  return num(v[0], mc.bleu) + "," + num(v[1], mc.degeneration) + "," + num(v[2], true) + "," +
         num(v[3], mc.calibration) + "," + num(v[4], mc.calibration) + "," + num(v[5], mc.calibration) + "," +
         num(v[6], mc.calibration);
}

std::vector<double> as_vector(const Row& r) {
  return {r.m.bleu, r.m.degeneration, r.m.length_ratio, r.m.token_accuracy, r.m.confidence, r.m.inf_ece,
          r.forced_confidence};
}

json cell_json(const Checkpoint& ck) {
  return {{"variant", to_string(ck.variant)}, {"kind", ck.kind_label()}, {"fraction", ck.fraction}, {"seed", ck.seed}};
}

}  // namespace

void ExperimentConfig::validate() const {
  if (corruption.kinds.empty()) throw Error("config: corruption.kinds is empty");
  if (fractions.empty()) throw Error("config: fractions is empty");
  for (double f : fractions)
    if (!(f >= 0.0 && f <= 1.0)) throw Error("config: fraction " + std::to_string(f) + " outside [0, 1]");
  if (variants.empty()) throw Error("config: variants is empty");
  if (beams.empty()) throw Error("config: beams is empty");
  for (int b : beams)
    if (b < 1) throw Error("config: beam sizes must be >= 1");
  if (seeds.empty()) throw Error("config: at least one seed is required");
  if (max_len < 1) throw Error("config: max_len must be >= 1");
  if (metrics.calibration_bins < 1) throw Error("config: metrics.calibration_bins must be >= 1");
  if (bpe.merges < 0) throw Error("config: bpe.merges must be >= 0");
  if (out_dir.empty()) throw Error("config: out_dir is empty");
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text, const std::string& base_dir) {
  ExperimentConfig c;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  try {
    if (j.contains("corpus")) {
      const auto& p = j["corpus"];
      auto get = [&](const char* key) { return resolve(p.value(key, std::string()), base_dir); };
      c.corpus = {get("train_src"), get("train_tgt"), get("dev_src"), get("dev_tgt"), get("test_src"), get("test_tgt")};
    }
    if (j.contains("corruption")) {
      const auto& k = j["corruption"];
      if (k.contains("kinds")) {
        c.corruption.kinds.clear();
        for (const auto& s : k["kinds"]) c.corruption.kinds.push_back(corpus::parse_corruption_kind(s.get<std::string>()));
      }
      auto& pr = c.corruption.params;
      if (k.contains("side")) pr.side = corpus::parse_side(k["side"].get<std::string>());
      if (k.contains("deletion_side")) pr.deletion_side = parse_side_choice(k["deletion_side"].get<std::string>());
      pr.max_subs = k.value("max_subs", pr.max_subs);
      pr.min_subtree = k.value("min_subtree", pr.min_subtree);
      pr.max_subtree_frac = k.value("max_subtree_frac", pr.max_subtree_frac);
      pr.phrase_min = k.value("phrase_min", pr.phrase_min);
      pr.phrase_max = k.value("phrase_max", pr.phrase_max);
      c.corruption.lexicon = resolve(k.value("lexicon", std::string()), base_dir);
      c.corruption.seed = k.value("seed", c.corruption.seed);
    }
    if (j.contains("fractions")) c.fractions = j["fractions"].get<std::vector<double>>();
    if (j.contains("variants")) {
      c.variants.clear();
      for (const auto& s : j["variants"]) c.variants.push_back(parse_variant(s.get<std::string>()));
    }
    if (j.contains("model")) c.model = model::ModelConfig::from_json(j["model"].dump());
    if (j.contains("optim")) c.optim = model::OptimConfig::from_json(j["optim"].dump());
    if (j.contains("bpe")) {
      c.bpe.merges = j["bpe"].value("merges", c.bpe.merges);
      c.bpe.min_frequency = j["bpe"].value("min_frequency", c.bpe.min_frequency);
    }
    if (j.contains("beams")) c.beams = j["beams"].get<std::vector<int>>();
    c.max_len = j.value("max_len", c.max_len);
    c.length_norm = j.value("length_norm", c.length_norm);
    if (j.contains("metrics")) {
      const auto& m = j["metrics"];
      auto& mc = c.metrics;
      mc.bleu = m.value("bleu", mc.bleu);
      mc.degeneration = m.value("degeneration", mc.degeneration);
      mc.calibration = m.value("calibration", mc.calibration);
      mc.profiles = m.value("profiles", mc.profiles);
      mc.calibration_bins = m.value("calibration_bins", mc.calibration_bins);
      if (m.contains("bleu_smoothing")) mc.bleu_smoothing = parse_smoothing(m["bleu_smoothing"].get<std::string>());
      mc.degen_n_min = m.value("degen_n_min", mc.degen_n_min);
      mc.degen_n_max = m.value("degen_n_max", mc.degen_n_max);
      mc.stoplist = resolve(m.value("stoplist", std::string()), base_dir);
      mc.profile_max_step = m.value("profile_max_step", mc.profile_max_step);
      mc.profile_min_support = m.value("profile_min_support", mc.profile_min_support);
    }
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    c.out_dir = j.value("out_dir", c.out_dir);
  } catch (const json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  const auto base = fs::path(path).parent_path().string();
  return from_json(read_file(path), base.empty() ? "." : base);
}

std::string cell_name(Variant v, CorruptionKind kind, double fraction, std::uint64_t seed) {
  if (v == Variant::EQUIVALENTS) return "EQUIVALENTS__clean__f0.00__s" + std::to_string(seed);
  return to_string(v) + "__" + kind_name(kind) + "__" + fraction_tag(fraction) + "__s" + std::to_string(seed);
}

StageSummary cmd_corrupt(const ExperimentConfig& cfg) {
  const Layout L(cfg.out_dir);
  StageSummary summary;
  const Corpus train = corpus::parse_parallel(cfg.corpus.train_src, cfg.corpus.train_tgt);
  std::optional<synthdiv::Lexicon> lexicon;
  std::optional<synthdiv::PhraseTable> phrases;

  for (std::size_t i = 0; i < cfg.corruption.kinds.size(); ++i) {
    const auto kind = cfg.corruption.kinds[i];
    const std::string stem = L.corrupted(kind);
    if (corpus_exists(stem) && corpus_exists(L.aligned_equivalents(kind))) {
      summary.skipped.push_back(stem);
      continue;
    }
    check_annotations(train, kind, cfg.corruption);
    synthdiv::CorruptionInputs inputs;
    if (kind == CorruptionKind::LexSub) {
      if (!lexicon) lexicon = synthdiv::Lexicon::load(cfg.corruption.lexicon);
      inputs.lexicon = &*lexicon;
    }
    if (kind == CorruptionKind::PhraseRep) {
      if (!phrases) phrases = synthdiv::build_phrase_table(train, cfg.corruption.params.phrase_min,
                                                           cfg.corruption.params.phrase_max,
                                                           cfg.corruption.params.side);
      inputs.phrases = &*phrases;
    }
    const auto outcome = synthdiv::corrupt_corpus_indexed(train, kind, cfg.corruption.params, inputs,
                                                          derive_seed(cfg.corruption.seed, i));
    Corpus eq;
    eq.name = train.name;
    eq.factor_tagged = train.factor_tagged;
    for (auto k : outcome.kept) eq.pairs.push_back(train.pairs[k]);
    write_corpus_atomic(eq, L.aligned_equivalents(kind));
    write_corpus_atomic(outcome.corpus, stem);
    summary.written.push_back(stem);
  }

  const std::string stats_path = L.reports + "/corruption_stats.csv";
  if (exists(stats_path)) {
    summary.skipped.push_back(stats_path);
  } else {
    std::string csv = synthdiv::stats_csv_header() + "\n";
    csv += synthdiv::stats_csv_row("equivalents", synthdiv::corruption_stats(train)) + "\n";
    for (auto kind : cfg.corruption.kinds)
      csv += synthdiv::stats_csv_row(kind_name(kind), synthdiv::corruption_stats(read_corpus(L.corrupted(kind)))) + "\n";
    write_atomic(stats_path, csv);
    summary.written.push_back(stats_path);
  }
  return summary;
}

StageSummary cmd_mix(const ExperimentConfig& cfg) {
  const Layout L(cfg.out_dir);
  StageSummary summary;
  for (auto kind : cfg.corruption.kinds) {
    std::optional<Corpus> eq, div;
    for (double f : cfg.fractions)
      for (auto seed : cfg.seeds) {
        const std::string stem = L.mixture(kind, f, seed);
        if (corpus_exists(stem)) {
          summary.skipped.push_back(stem);
          continue;
        }
        if (!eq) {
          eq = read_corpus(L.aligned_equivalents(kind));
          div = read_corpus(L.corrupted(kind));
        }
        write_corpus_atomic(corpus::mix_corpora(*eq, *div, f, seed), stem);
        summary.written.push_back(stem);
      }
  }
  return summary;
}

StageSummary cmd_train(const ExperimentConfig& cfg, std::optional<Variant> only) {
  const Layout L(cfg.out_dir);
  StageSummary summary;
  std::optional<corpus::BpeModel> bpe;
  for (const auto& ck : unique_checkpoints(cfg, only)) {
    const std::string path = L.checkpoint(ck.name);
    if (exists(path)) {
      summary.skipped.push_back(path);
      continue;
    }
    if (!bpe) bpe = ensure_bpe(cfg, L, summary);
    train_checkpoint(cfg, L, ck, *bpe);
    summary.written.push_back(path);
  }
  return summary;
}

StageSummary cmd_decode(const ExperimentConfig& cfg) {
  const Layout L(cfg.out_dir);
  StageSummary summary;
  std::optional<Corpus> test;
  for (const auto& ck : unique_checkpoints(cfg)) {
    std::optional<LoadedCheckpoint> loaded;
    auto ensure = [&] {
      if (!loaded) {
        const std::string path = L.checkpoint(ck.name);
        if (!exists(path)) throw Error("missing checkpoint " + path + " (run train first)");
        loaded = load_checkpoint(path);
      }
      if (!test) test = corpus::parse_parallel(cfg.corpus.test_src, cfg.corpus.test_tgt);
    };
    const auto job = job_for(ck);
    for (int beam : cfg.beams) {
      const std::string path = L.decode_log(ck.name, beam);
      if (exists(path)) {
        summary.skipped.push_back(path);
        continue;
      }
      ensure();
      decode::BeamOptions opts;
      opts.beam = beam;
      opts.max_len = cfg.max_len;
      opts.length_norm = cfg.length_norm;
      write_atomic(path, decode::to_jsonl(decode::decode_corpus(loaded->params, loaded->bpe, *test, opts, job)));
      summary.written.push_back(path);
    }
    const std::string forced = L.forced_log(ck.name);
    if (exists(forced)) {
      summary.skipped.push_back(forced);
      continue;
    }
    ensure();
    write_atomic(forced, decode::to_jsonl(decode::forced_decode_corpus(loaded->params, loaded->bpe, *test, job)));
    summary.written.push_back(forced);
  }
  return summary;
}

StageSummary cmd_report(const ExperimentConfig& cfg) {
  const Layout L(cfg.out_dir);
  const MetricsConfig& mc = cfg.metrics;
  const auto degen = degen_config(mc);
  StageSummary summary;

  auto read_log = [&](const std::string& path) {
    if (!exists(path)) throw Error("missing decode log " + path + " (run decode first)");
    return decode::read_decode_log(path);
  };

  std::map<std::string, Row> rows;  // by checkpoint name and beam
  json profiles = json::array(), calibration = json::array(), degeneration = json::array();
  for (const auto& ck : unique_checkpoints(cfg)) {
    const auto forced = read_log(L.forced_log(ck.name));
    const double forced_conf = mc.calibration ? eval::mean_forced_confidence(forced) : 0.0;
    if (mc.profiles) {
      json e = cell_json(ck);
      e["beam"] = nullptr;
      e["profile"] = json::parse(eval::profile_to_json(
          eval::confidence_profile(forced, "forced", mc.profile_max_step, mc.profile_min_support)));
      profiles.push_back(e);
    }
    for (int beam : cfg.beams) {
      const auto records = read_log(L.decode_log(ck.name, beam));
      Row r;
      r.m = eval::evaluate_log(records, degen, mc.calibration_bins, mc.bleu_smoothing);
      r.forced_confidence = forced_conf;
      rows[ck.name + "#" + std::to_string(beam)] = r;
      json e = cell_json(ck);
      e["beam"] = beam;
      if (mc.profiles) {
        json p = e;
        p["profile"] = json::parse(eval::profile_to_json(
            eval::confidence_profile(records, "free", mc.profile_max_step, mc.profile_min_support)));
        profiles.push_back(p);
      }
      if (mc.calibration) {
        json c = e;
        c["report"] = json::parse(
            eval::calibration_to_json(eval::inf_ece(eval::token_records(records), mc.calibration_bins)));
        calibration.push_back(c);
      }
      if (mc.degeneration) {
        json d = e;
        d["rate"] = r.m.degeneration;
        degeneration.push_back(d);
      }
    }
  }

  std::string csv = kMetricsHeader;
  std::string aggregates;
  for (auto kind : cfg.corruption.kinds)
    for (auto v : cfg.variants)
      for (double f : cfg.fractions)
        for (int beam : cfg.beams) {
          std::vector<std::vector<double>> values;
          std::size_t sentences = 0;
          const std::string prefix = to_string(v) + "," + kind_name(kind) + "," + format_fixed(f, 2) + ",";
          for (auto seed : cfg.seeds) {
            const auto& r = rows.at(checkpoint_for(v, kind, f, seed).name + "#" + std::to_string(beam));
            values.push_back(as_vector(r));
            sentences = r.m.sentences;
            csv += prefix + std::to_string(seed) + "," + std::to_string(beam) + "," + std::to_string(r.m.sentences) +
                   "," + metric_fields(values.back(), mc) + "\n";
          }
          const std::size_t n = values.size(), k = values.front().size();
          std::vector<double> mean(k, 0.0), sd(k, 0.0);
          for (std::size_t c = 0; c < k; ++c) {
            for (const auto& row : values) mean[c] += row[c];
            mean[c] /= static_cast<double>(n);
            if (n > 1) {
              for (const auto& row : values) sd[c] += (row[c] - mean[c]) * (row[c] - mean[c]);
              sd[c] = std::sqrt(sd[c] / static_cast<double>(n - 1));
            }
          }
          const std::string tail = "," + std::to_string(beam) + "," + std::to_string(sentences) + ",";
          aggregates += prefix + "mean" + tail + metric_fields(mean, mc) + "\n";
          aggregates += prefix + "stdev" + tail + metric_fields(sd, mc) + "\n";
        }
  const std::string metrics_path = L.reports + "/metrics.csv";
  write_atomic(metrics_path, csv + aggregates);
  summary.written.push_back(metrics_path);

  json plots;
  plots["profiles"] = profiles;
  plots["calibration"] = calibration;
  plots["degeneration"] = degeneration;
  const std::string plots_path = L.reports + "/plots.json";
  write_atomic(plots_path, plots.dump(1) + "\n");
  summary.written.push_back(plots_path);
  return summary;
}

StageSummary run_all(const ExperimentConfig& cfg) {
  StageSummary s;
  merge(s, cmd_corrupt(cfg));
  merge(s, cmd_mix(cfg));
  merge(s, cmd_train(cfg));
  merge(s, cmd_decode(cfg));
  merge(s, cmd_report(cfg));
  return s;
}

StageSummary write_toy_data(const std::string& dir, const ToyDataOptions& options) {
  StageSummary s;
  fs::create_directories(dir);
  const std::pair<const char*, std::size_t> splits[] = {
      {"train", options.train}, {"dev", options.dev}, {"test", options.test}};
  std::uint64_t index = 0;
  for (const auto& [name, n] : splits) {
    const Corpus c = toy::generate(n, derive_seed(options.seed, index++), options.language);
    const std::string stem = (fs::path(dir) / name).string();
    corpus::write_parallel(c, stem + ".src", stem + ".tgt");
    s.written.push_back(stem);
  }
  const auto lexicon = options.noun_lexicon ? toy::noun_hypernym_lexicon() : toy::demo_lexicon();
  const std::string lex = (fs::path(dir) / "lexicon.json").string();
  write_file(lex, lexicon.to_json());
  s.written.push_back(lex);
  return s;
}

}  // namespace divlab::pipeline
