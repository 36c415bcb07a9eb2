#include "divlab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <json.hpp>

namespace divlab::eval {

using json = nlohmann::json;
using decode::DecodeRecord;

// ---------------------------------------------------------------------------
// Degeneration

void DegenConfig::validate() const {
  if (n_min < 1 || n_min > n_max) throw Error("degeneration config needs 1 <= n_min <= n_max");
}

std::set<std::string> DegenConfig::load_stoplist(const std::string& path) {
  std::set<std::string> out;
  for (const auto& line : split(read_file(path), '\n')) {
    const std::string entry = trim(line);
    if (entry.empty() || entry[0] == '#') continue;
    out.insert(entry);
  }
  return out;
}

const std::set<std::string>& default_stoplist() {
  static const std::set<std::string> words = {
      ".", ",", ";", ":", "!", "?", "...", "-", "--", "(", ")", "\"", "'", "«", "»", "“", "”", "‘", "’",
      "and", "or", "but", "nor", "yet", "because", "although",
      "et", "ou", "mais", "ni", "car", "donc", "que", "qu'", "puisque", "lorsque"};
  return words;
}

DegenConfig DegenConfig::defaults() {
  DegenConfig c;
  c.stoplist = default_stoplist();
  return c;
}

namespace {

using NgramCounts = std::map<Tokens, int>;

NgramCounts count_ngrams(const Tokens& tokens, int n) {
  NgramCounts counts;
  if (n <= 0 || static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++counts[Tokens(tokens.begin() + i, tokens.begin() + i + n)];
  return counts;
}

Tokens drop_stopwords(const Tokens& tokens, const std::set<std::string>& stoplist) {
  Tokens out;
  for (const auto& t : tokens)
    if (!stoplist.count(t)) out.push_back(t);
  return out;
}

}  // namespace

bool is_degenerated(const Tokens& hyp, const Tokens& ref, const DegenConfig& cfg) {
  cfg.validate();
  const Tokens h = drop_stopwords(hyp, cfg.stoplist);
  const Tokens r = drop_stopwords(ref, cfg.stoplist);
  for (int n = cfg.n_min; n <= cfg.n_max; ++n) {
    const NgramCounts hc = count_ngrams(h, n);
    const NgramCounts rc = count_ngrams(r, n);
    for (const auto& [gram, count] : hc) {
      if (count < 2) continue;
      const auto it = rc.find(gram);
      if (it == rc.end() || it->second <= 1) return true;
    }
  }
  return false;
}

double degeneration_rate(const std::vector<DecodeRecord>& records, const DegenConfig& cfg) {
  std::size_t total = 0;
  std::size_t degenerate = 0;
  for (const auto& r : records) {
    if (r.mode != "free") continue;
    ++total;
    if (is_degenerated(split_whitespace(r.hyp), split_whitespace(r.ref), cfg)) ++degenerate;
  }
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(degenerate) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Confidence profiles

ConfidenceProfile confidence_profile(const std::vector<DecodeRecord>& records, const std::string& mode, int max_step,
                                     std::size_t min_support) {
  ConfidenceProfile profile;
  profile.mode = mode;
  if (max_step <= 0) return profile;
  std::vector<double> sums(static_cast<std::size_t>(max_step), 0.0);
  std::vector<std::size_t> support(static_cast<std::size_t>(max_step), 0);
  for (const auto& r : records) {
    if (r.mode != mode) continue;
    for (std::size_t t = 0; t < r.token_probs.size() && t < sums.size(); ++t) {
      sums[t] += r.token_probs[t];
      ++support[t];
    }
  }
  for (int t = 0; t < max_step; ++t) {
    if (support[t] == 0 || support[t] < min_support) continue;
    profile.points.push_back({t, sums[t] / static_cast<double>(support[t]), support[t]});
  }
  return profile;
}

// ---------------------------------------------------------------------------
// TER

namespace {

struct Lev {
  int cost = 0;
  std::vector<EditOp> ops;
  std::vector<bool> matched;  // per hyp position
};

std::vector<int> lev_table(const Tokens& hyp, const Tokens& ref) {
  const std::size_t n = hyp.size();
  const std::size_t m = ref.size();
  std::vector<int> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> int& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = static_cast<int>(i);
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j) {
      const int diag = at(i - 1, j - 1) + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  return d;
}

int lev_cost(const Tokens& hyp, const Tokens& ref) {
  // Two-row version for the inner loop of the shift search.
  std::vector<int> prev(ref.size() + 1);
  std::vector<int> cur(ref.size() + 1);
  for (std::size_t j = 0; j <= ref.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= hyp.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= ref.size(); ++j) {
      const int diag = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      cur[j] = std::min({diag, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[ref.size()];
}

Lev levenshtein_align(const Tokens& hyp, const Tokens& ref) {
  const std::size_t m = ref.size();
  const auto d = lev_table(hyp, ref);
  auto at = [&](std::size_t i, std::size_t j) { return d[i * (m + 1) + j]; };
  Lev out;
  out.cost = at(hyp.size(), m);
  out.matched.assign(hyp.size(), false);
  std::size_t i = hyp.size();
  std::size_t j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = hyp[i - 1] == ref[j - 1];
      if (at(i, j) == at(i - 1, j - 1) + (same ? 0 : 1)) {
        out.ops.push_back(same ? EditOp::MATCH : EditOp::SUB);
        if (same) out.matched[i - 1] = true;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      out.ops.push_back(EditOp::DEL);
      --i;
      continue;
    }
    out.ops.push_back(EditOp::INS);
    --j;
  }
  std::reverse(out.ops.begin(), out.ops.end());
  return out;
}

bool is_ref_substring(const Tokens& ref, const Tokens& seq, std::size_t start, std::size_t len) {
  if (len > ref.size()) return false;
  for (std::size_t r = 0; r + len <= ref.size(); ++r) {
    if (std::equal(seq.begin() + start, seq.begin() + start + len, ref.begin() + r)) return true;
  }
  return false;
}

template <typename V>
V move_span(const V& seq, int start, int length, int to) {
  V rest;
  rest.reserve(seq.size());
  rest.insert(rest.end(), seq.begin(), seq.begin() + start);
  rest.insert(rest.end(), seq.begin() + start + length, seq.end());
  V out(rest.begin(), rest.begin() + to);
  out.insert(out.end(), seq.begin() + start, seq.begin() + start + length);
  out.insert(out.end(), rest.begin() + to, rest.end());
  return out;
}

}  // namespace

int edit_distance(const Tokens& hyp, const Tokens& ref) { return lev_cost(hyp, ref); }

TerAlignment ter_align(const Tokens& hyp_in, const Tokens& ref_in, const TerOptions& options) {
  auto norm = [&](const Tokens& t) {
    if (options.case_sensitive) return t;
    Tokens out;
    out.reserve(t.size());
    for (const auto& s : t) out.push_back(to_lower_ascii(s));
    return out;
  };
  Tokens cur = norm(hyp_in);
  const Tokens ref = norm(ref_in);
  std::vector<int> origin(cur.size());
  for (std::size_t i = 0; i < origin.size(); ++i) origin[i] = static_cast<int>(i);

  TerAlignment a;
  const int n = static_cast<int>(cur.size());
  while (true) {
    const Lev lev = levenshtein_align(cur, ref);
    if (lev.cost == 0) break;
    int best_cost = lev.cost;
    int best_start = -1;
    int best_len = 0;
    int best_to = 0;
    for (int start = 0; start < n; ++start) {
      for (int len = 1; len <= options.max_shift_size && start + len <= n; ++len) {
        if (!is_ref_substring(ref, cur, static_cast<std::size_t>(start), static_cast<std::size_t>(len))) break;
        bool misaligned = false;
        for (int k = start; k < start + len; ++k) misaligned = misaligned || !lev.matched[k];
        if (!misaligned) continue;
        for (int to = 0; to <= n - len; ++to) {
          if (to == start || std::abs(to - start) > options.max_shift_distance) continue;
          const int c = lev_cost(move_span(cur, start, len, to), ref);
          if (c < best_cost) {
            best_cost = c;
            best_start = start;
            best_len = len;
            best_to = to;
          }
        }
      }
    }
    if (best_start < 0) break;
    cur = move_span(cur, best_start, best_len, best_to);
    origin = move_span(origin, best_start, best_len, best_to);
    TerEdit e;
    e.op = EditOp::SHIFT;
    e.start = best_start;
    e.length = best_len;
    e.to = best_to;
    a.script.push_back(e);
    ++a.shifts;
  }

  const Lev lev = levenshtein_align(cur, ref);
  std::size_t j = 0;
  for (EditOp op : lev.ops) {
    TerEdit e;
    e.op = op;
    if (op != EditOp::DEL) e.token = ref_in[j++];
    if (op == EditOp::SUB || op == EditOp::INS || op == EditOp::DEL) ++a.edits;
    a.script.push_back(e);
  }
  a.hyp_matched.assign(hyp_in.size(), false);
  for (std::size_t i = 0; i < cur.size(); ++i) a.hyp_matched[origin[i]] = lev.matched[i];
  const double denom = ref.empty() ? 1.0 : static_cast<double>(ref.size());
  a.ter_score = static_cast<double>(a.shifts + a.edits) / denom;
  return a;
}

Tokens apply_script(const Tokens& hyp, const std::vector<TerEdit>& script) {
  Tokens cur = hyp;
  Tokens out;
  std::size_t i = 0;
  for (const auto& e : script) {
    switch (e.op) {
      case EditOp::SHIFT:
        if (e.start < 0 || e.length < 1 || e.start + e.length > static_cast<int>(cur.size()) || e.to < 0 ||
            e.to > static_cast<int>(cur.size()) - e.length) {
          throw Error("edit script: shift out of range");
        }
        cur = move_span(cur, e.start, e.length, e.to);
        break;
      case EditOp::MATCH:
      case EditOp::SUB:
        if (i >= cur.size()) throw Error("edit script: ran past the hypothesis");
        ++i;
        out.push_back(e.token);
        break;
      case EditOp::DEL:
        if (i >= cur.size()) throw Error("edit script: ran past the hypothesis");
        ++i;
        break;
      case EditOp::INS:
        out.push_back(e.token);
        break;
    }
  }
  if (i != cur.size()) throw Error("edit script leaves hypothesis tokens unconsumed");
  return out;
}

std::vector<bool> token_accuracy(const TerAlignment& alignment) { return alignment.hyp_matched; }

double accuracy(const std::vector<bool>& matched) {
  if (matched.empty()) return 0.0;
  return static_cast<double>(std::count(matched.begin(), matched.end(), true)) / static_cast<double>(matched.size());
}

// ---------------------------------------------------------------------------
// Calibration

CalibrationReport inf_ece(const std::vector<TokenRecord>& tokens, int bins) {
  if (bins < 1) throw Error("inf_ece: number of bins must be >= 1");
  CalibrationReport rep;
  rep.bins.resize(static_cast<std::size_t>(bins));
  std::vector<double> conf_sum(bins, 0.0);
  std::vector<double> acc_sum(bins, 0.0);
  for (int k = 0; k < bins; ++k) {
    rep.bins[k].lo = static_cast<double>(k) / bins;
    rep.bins[k].hi = static_cast<double>(k + 1) / bins;
  }
  for (const auto& t : tokens) {
    if (!(t.confidence >= 0.0 && t.confidence <= 1.0)) throw Error("inf_ece: confidence outside [0, 1]");
    const int k = std::min(bins - 1, static_cast<int>(t.confidence * bins));
    ++rep.bins[k].count;
    conf_sum[k] += t.confidence;
    acc_sum[k] += t.correct ? 1.0 : 0.0;
    rep.overall_conf += t.confidence;
    rep.overall_acc += t.correct ? 1.0 : 0.0;
  }
  rep.total = tokens.size();
  if (rep.total == 0) return rep;
  const double total = static_cast<double>(rep.total);
  for (int k = 0; k < bins; ++k) {
    auto& b = rep.bins[k];
    if (b.count == 0) continue;
    b.mean_conf = conf_sum[k] / static_cast<double>(b.count);
    b.mean_acc = acc_sum[k] / static_cast<double>(b.count);
    rep.inf_ece += static_cast<double>(b.count) / total * std::abs(b.mean_acc - b.mean_conf);
  }
  rep.overall_conf /= total;
  rep.overall_acc /= total;
  return rep;
}

std::vector<TokenRecord> token_records(const std::vector<DecodeRecord>& records, const TerOptions& options) {
  std::vector<std::vector<TokenRecord>> per(records.size());
  const long n = static_cast<long>(records.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    const auto& r = records[i];
    if (r.mode != "free") continue;
    const auto matched = ter_align(r.hyp_tokens, r.ref_tokens, options).hyp_matched;
    for (std::size_t t = 0; t < matched.size(); ++t) per[i].push_back({r.token_probs[t], matched[t]});
  }
  std::vector<TokenRecord> out;
  for (auto& p : per) out.insert(out.end(), p.begin(), p.end());
  return out;
}

// ---------------------------------------------------------------------------
// BLEU

double corpus_bleu(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs, int max_n,
                   BleuSmoothing smoothing) {
  if (hyps.size() != refs.size()) throw Error("corpus_bleu: hypothesis and reference counts differ");
  if (max_n < 1) throw Error("corpus_bleu: max_n must be >= 1");
  std::vector<double> matches(max_n, 0.0);
  std::vector<double> totals(max_n, 0.0);
  double hyp_len = 0.0;
  double ref_len = 0.0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    hyp_len += static_cast<double>(hyps[s].size());
    ref_len += static_cast<double>(refs[s].size());
    for (int n = 1; n <= max_n; ++n) {
      const auto hc = count_ngrams(hyps[s], n);
      const auto rc = count_ngrams(refs[s], n);
      for (const auto& [gram, c] : hc) {
        const auto it = rc.find(gram);
        matches[n - 1] += std::min(c, it == rc.end() ? 0 : it->second);
        totals[n - 1] += c;
      }
    }
  }
  if (hyp_len == 0.0) return 0.0;
  double log_sum = 0.0;
  double pseudo = 1.0;
  for (int n = 0; n < max_n; ++n) {
    double p = 0.0;
    if (totals[n] == 0.0) return 0.0;
    if (matches[n] > 0.0) {
      p = matches[n] / totals[n];
    } else if (smoothing == BleuSmoothing::Exp) {
      pseudo *= 2.0;
      p = 1.0 / (pseudo * totals[n]);
    } else {
      return 0.0;
    }
    log_sum += std::log(p);
  }
  const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return 100.0 * bp * std::exp(log_sum / max_n);
}

double length_ratio(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs) {
  if (hyps.size() != refs.size()) throw Error("length_ratio: hypothesis and reference counts differ");
  double h = 0.0;
  double r = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    h += static_cast<double>(hyps[i].size());
    r += static_cast<double>(refs[i].size());
  }
  if (r == 0.0) throw Error("length_ratio: references are empty");
  return h / r;
}

// ---------------------------------------------------------------------------
// Summaries

SystemMetrics evaluate_log(const std::vector<DecodeRecord>& records, const DegenConfig& degen, int calibration_bins,
                           BleuSmoothing smoothing) {
  SystemMetrics m;
  std::vector<Tokens> hyps;
  std::vector<Tokens> refs;
  for (const auto& r : records) {
    if (r.mode != "free") continue;
    hyps.push_back(split_whitespace(r.hyp));
    refs.push_back(split_whitespace(r.ref));
  }
  m.sentences = hyps.size();
  if (hyps.empty()) return m;
  m.bleu = corpus_bleu(hyps, refs, 4, smoothing);
  m.degeneration = degeneration_rate(records, degen);
  m.length_ratio = length_ratio(hyps, refs);
  const auto tokens = token_records(records);
  const auto cal = inf_ece(tokens, calibration_bins);
  m.token_accuracy = cal.overall_acc;
  m.confidence = cal.overall_conf;
  m.inf_ece = cal.inf_ece;
  return m;
}

double mean_forced_confidence(const std::vector<DecodeRecord>& records) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : records) {
    if (r.mode != "forced") continue;
    for (double p : r.token_probs) {
      sum += p;
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

std::string calibration_to_json(const CalibrationReport& report) {
  json bins = json::array();
  for (const auto& b : report.bins) {
    bins.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"mean_conf", b.mean_conf}, {"mean_acc", b.mean_acc}});
  }
  json j = {{"bins", bins},
            {"inf_ece", report.inf_ece},
            {"overall_conf", report.overall_conf},
            {"overall_acc", report.overall_acc},
            {"total", report.total}};
  return j.dump();
}

std::string profile_to_json(const ConfidenceProfile& profile) {
  json steps = json::array();
  json probs = json::array();
  json support = json::array();
  for (const auto& p : profile.points) {
    steps.push_back(p.step);
    probs.push_back(p.mean_prob);
    support.push_back(p.support);
  }
  json j = {{"mode", profile.mode}, {"step", steps}, {"mean_prob", probs}, {"support", support}};
  return j.dump();
}

}  // namespace divlab::eval
