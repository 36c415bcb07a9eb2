#include "divlab/corpus.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace divlab::corpus {

using nlohmann::json;

std::string to_string(Factor f) { return f == Factor::EQ ? "EQ" : "DIV"; }
std::string to_string(Side s) { return s == Side::SRC ? "SRC" : "TGT"; }

std::string to_string(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::LexSub:
      return "LEX_SUB";
    case CorruptionKind::PhraseRep:
      return "PHRASE_REP";
    case CorruptionKind::SubtreeDel:
      return "SUBTREE_DEL";
  }
  return "?";
}

Factor parse_factor(std::string_view s) {
  if (s == "EQ") return Factor::EQ;
  if (s == "DIV") return Factor::DIV;
  throw Error("unknown factor '" + std::string(s) + "'");
}

Side parse_side(std::string_view s) {
  const auto l = to_lower_ascii(s);
  if (l == "src") return Side::SRC;
  if (l == "tgt") return Side::TGT;
  throw Error("unknown side '" + std::string(s) + "'");
}

CorruptionKind parse_corruption_kind(std::string_view s) {
  const auto l = to_lower_ascii(s);
  if (l == "lex_sub") return CorruptionKind::LexSub;
  if (l == "phrase_rep") return CorruptionKind::PhraseRep;
  if (l == "subtree_del") return CorruptionKind::SubtreeDel;
  throw Error("unknown corruption kind '" + std::string(s) + "'");
}

std::string CorruptionRecord::to_json() const {
  json j;
  j["kind"] = to_string(kind);
  j["side"] = to_string(side);
  json spans = json::array();
  for (const auto& sp : affected_spans) spans.push_back({sp.start, sp.end});
  j["spans"] = spans;
  j["original"] = original_tokens;
  return j.dump();
}

CorruptionRecord CorruptionRecord::from_json(std::string_view text) {
  CorruptionRecord r;
  try {
    const json j = json::parse(text);
    r.kind = parse_corruption_kind(j.at("kind").get<std::string>());
    r.side = parse_side(j.at("side").get<std::string>());
    for (const auto& sp : j.at("spans")) r.affected_spans.push_back({sp.at(0).get<int>(), sp.at(1).get<int>()});
    r.original_tokens = j.at("original").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(std::string("bad divergence record: ") + e.what());
  }
  return r;
}

bool AnnotatedSentencePair::all_eq() const {
  for (auto f : src_factors)
    if (f != Factor::EQ) return false;
  for (auto f : tgt_factors)
    if (f != Factor::EQ) return false;
  return true;
}

namespace {

void validate_side(const Sentence& s, std::size_t opposite_len, const char* name) {
  const int n = static_cast<int>(s.size());
  for (int i = 0; i < n; ++i) {
    const auto& t = s[i];
    if (t.head < -1 || t.head > n) {
      throw Error(std::string(name) + " token " + std::to_string(i + 1) + ": head out of range");
    }
    if (t.head == i + 1) {
      throw Error(std::string(name) + " token " + std::to_string(i + 1) + ": self-loop head");
    }
    for (int a : t.align) {
      if (a < 0 || a >= static_cast<int>(opposite_len)) {
        throw Error(std::string(name) + " token " + std::to_string(i + 1) + ": alignment out of range");
      }
    }
  }
}

}  // namespace

void AnnotatedSentencePair::validate() const {
  if (src_factors.size() != src.size()) throw Error("source factor count mismatch");
  if (tgt_factors.size() != tgt.size()) throw Error("target factor count mismatch");
  validate_side(src, tgt.size(), "source");
  validate_side(tgt, src.size(), "target");
  if (!provenance && !all_eq()) throw Error("DIV factors on a pair without a divergence record");
}

AnnotatedSentencePair make_pair(Sentence src, Sentence tgt) {
  AnnotatedSentencePair p;
  p.src_factors.assign(src.size(), Factor::EQ);
  p.tgt_factors.assign(tgt.size(), Factor::EQ);
  p.src = std::move(src);
  p.tgt = std::move(tgt);
  return p;
}

std::vector<std::string> surfaces(const Sentence& s) {
  std::vector<std::string> out;
  out.reserve(s.size());
  for (const auto& t : s) out.push_back(t.surface);
  return out;
}

Sentence sentence_from_text(std::string_view text) {
  Sentence s;
  for (auto& w : split_whitespace(text)) {
    AnnotatedToken t;
    t.surface = std::move(w);
    s.push_back(std::move(t));
  }
  return s;
}

// ---------------------------------------------------------------------------

ParseError::ParseError(const std::string& file, std::size_t line, const std::string& what)
    : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

namespace {

struct RawSentence {
  Sentence tokens;
  std::vector<Factor> factors;
  std::vector<std::size_t> lines;  // source line of each token
  std::optional<CorruptionRecord> record;
  bool has_factor_column = false;
};

bool parse_int(std::string_view s, int& out) {
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::vector<RawSentence> parse_side_text(std::string_view text, const std::string& name) {
  std::vector<RawSentence> out;
  RawSentence cur;
  bool open = false;
  std::optional<CorruptionRecord> pending;
  std::size_t line_no = 0;

  auto close = [&](std::size_t at_line) {
    if (!open) return;
    const int n = static_cast<int>(cur.tokens.size());
    for (int i = 0; i < n; ++i) {
      const int h = cur.tokens[i].head;
      if (h > n) throw ParseError(name, cur.lines[i], "head index " + std::to_string(h) + " exceeds sentence length " + std::to_string(n));
      if (h == i + 1) throw ParseError(name, cur.lines[i], "token is its own head");
    }
    (void)at_line;
    out.push_back(std::move(cur));
    cur = RawSentence{};
    open = false;
  };

  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    const bool at_end = nl == text.size();
    pos = nl + 1;

    if (trim(line).empty()) {
      close(line_no);
      if (at_end) break;
      continue;
    }
    if (line.front() == '#') {
      const auto body = trim(line.substr(1));
      const std::string key = "divergence";
      if (body.rfind(key, 0) == 0) {
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ParseError(name, line_no, "malformed divergence comment");
        try {
          pending = CorruptionRecord::from_json(trim(std::string_view(body).substr(eq + 1)));
        } catch (const Error& e) {
          throw ParseError(name, line_no, e.what());
        }
      }
      if (at_end) break;
      continue;
    }
    auto cols = split(line, '\t');
    if (cols.size() != 6 && cols.size() != 7) {
      throw ParseError(name, line_no, "expected 6 or 7 tab-separated columns, got " + std::to_string(cols.size()));
    }
    if (!open) {
      open = true;
      cur.record = std::move(pending);
      pending.reset();
      cur.has_factor_column = cols.size() == 7;
    } else if (cur.has_factor_column != (cols.size() == 7)) {
      throw ParseError(name, line_no, "inconsistent column count within sentence");
    }
    int index = 0;
    if (!parse_int(cols[0], index) || index != static_cast<int>(cur.tokens.size()) + 1) {
      throw ParseError(name, line_no, "token index '" + cols[0] + "' out of sequence");
    }
    AnnotatedToken t;
    t.surface = cols[1];
    if (t.surface.empty()) throw ParseError(name, line_no, "empty surface");
    t.pos = cols[2] == "_" ? "" : cols[2];
    if (cols[3] == "_") {
      t.head = -1;
    } else if (!parse_int(cols[3], t.head) || t.head < -1) {
      throw ParseError(name, line_no, "bad head '" + cols[3] + "'");
    }
    t.deprel = cols[4] == "_" ? "" : cols[4];
    if (cols[5] != "_") {
      for (const auto& a : split(cols[5], ',')) {
        int idx = 0;
        if (!parse_int(a, idx) || idx < 1) throw ParseError(name, line_no, "bad alignment '" + cols[5] + "'");
        t.align.push_back(idx - 1);
      }
    }
    Factor f = Factor::EQ;
    if (cols.size() == 7 && cols[6] != "_") {
      try {
        f = parse_factor(cols[6]);
      } catch (const Error& e) {
        throw ParseError(name, line_no, e.what());
      }
    }
    cur.tokens.push_back(std::move(t));
    cur.factors.push_back(f);
    cur.lines.push_back(line_no);
    if (at_end) break;
  }
  close(line_no);
  return out;
}

void check_alignment(const RawSentence& s, std::size_t opposite_len, const std::string& name) {
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    for (int a : s.tokens[i].align) {
      if (a >= static_cast<int>(opposite_len)) {
        throw ParseError(name, s.lines[i], "alignment index " + std::to_string(a + 1) + " exceeds opposite sentence length " + std::to_string(opposite_len));
      }
    }
  }
}

}  // namespace

Corpus parse_parallel_text(std::string_view src_text, std::string_view tgt_text,
                           const std::string& src_name, const std::string& tgt_name) {
  auto src = parse_side_text(src_text, src_name);
  auto tgt = parse_side_text(tgt_text, tgt_name);
  if (src.size() != tgt.size()) {
    throw Error("sentence count mismatch: " + src_name + " has " + std::to_string(src.size()) + ", " +
                tgt_name + " has " + std::to_string(tgt.size()));
  }
  Corpus c;
  c.name = src_name;
  c.factor_tagged = !src.empty();
  for (std::size_t i = 0; i < src.size(); ++i) {
    check_alignment(src[i], tgt[i].tokens.size(), src_name);
    check_alignment(tgt[i], src[i].tokens.size(), tgt_name);
    c.factor_tagged = c.factor_tagged && src[i].has_factor_column && tgt[i].has_factor_column;
    AnnotatedSentencePair p;
    p.src = std::move(src[i].tokens);
    p.tgt = std::move(tgt[i].tokens);
    p.src_factors = std::move(src[i].factors);
    p.tgt_factors = std::move(tgt[i].factors);
    p.provenance = src[i].record ? std::move(src[i].record) : std::move(tgt[i].record);
    if (!p.provenance && !p.all_eq()) {
      const std::size_t line = src[i].lines.empty() ? 0 : src[i].lines.front();
      throw ParseError(src_name, line, "DIV factors without a divergence record");
    }
    c.pairs.push_back(std::move(p));
  }
  return c;
}

Corpus parse_parallel(const std::string& src_file, const std::string& tgt_file) {
  return parse_parallel_text(read_file(src_file), read_file(tgt_file), src_file, tgt_file);
}

std::string format_side(const Corpus& c, Side side) {
  std::ostringstream out;
  for (const auto& p : c.pairs) {
    if (p.provenance) out << "# divergence = " << p.provenance->to_json() << '\n';
    const auto& s = p.side(side);
    const auto& f = p.factors(side);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto& t = s[i];
      out << (i + 1) << '\t' << t.surface << '\t' << (t.pos.empty() ? "_" : t.pos) << '\t';
      if (t.head < 0) {
        out << '_';
      } else {
        out << t.head;
      }
      out << '\t' << (t.deprel.empty() ? "_" : t.deprel) << '\t';
      if (t.align.empty()) {
        out << '_';
      } else {
        for (std::size_t k = 0; k < t.align.size(); ++k) out << (k ? "," : "") << (t.align[k] + 1);
      }
      out << '\t' << to_string(f[i]) << '\n';
    }
    out << '\n';
  }
  return out.str();
}

void write_parallel(const Corpus& c, const std::string& src_file, const std::string& tgt_file) {
  write_file(src_file, format_side(c, Side::SRC));
  write_file(tgt_file, format_side(c, Side::TGT));
}

// ---------------------------------------------------------------------------

bool is_numeric_token(std::string_view token) {
  bool digit = false;
  for (char ch : token) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isdigit(c)) {
      digit = true;
    } else if (c != '.' && c != ',' && c != ':' && c != '/' && c != '-') {
      return false;
    }
  }
  return digit;
}

namespace {

double numeric_ratio(const Sentence& s) {
  if (s.empty()) return 0.0;
  std::size_t n = 0;
  for (const auto& t : s) n += is_numeric_token(t.surface) ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(s.size());
}

enum class FilterVerdict { Keep, TooShort, TooLong, Numeric, NearCopy };

FilterVerdict judge(const AnnotatedSentencePair& p, const FilterConfig& cfg) {
  const int ls = static_cast<int>(p.src.size());
  const int lt = static_cast<int>(p.tgt.size());
  if (ls < cfg.min_len || lt < cfg.min_len) return FilterVerdict::TooShort;
  if (ls > cfg.max_len || lt > cfg.max_len) return FilterVerdict::TooLong;
  if (numeric_ratio(p.src) > cfg.numeric_ratio_max || numeric_ratio(p.tgt) > cfg.numeric_ratio_max) {
    return FilterVerdict::Numeric;
  }
  if (copy_edit_ratio(p) < cfg.copy_edit_ratio_min) return FilterVerdict::NearCopy;
  return FilterVerdict::Keep;
}

}  // namespace

double copy_edit_ratio(const AnnotatedSentencePair& pair) {
  const auto a = utf8_chars(join(surfaces(pair.src), " "));
  const auto b = utf8_chars(join(surfaces(pair.tgt), " "));
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 0.0;
  const auto d = levenshtein<std::string>(a, b);
  return static_cast<double>(d) / static_cast<double>(longest);
}

std::pair<Corpus, FilterStats> heuristic_filter(const Corpus& c, const FilterConfig& cfg) {
  const long n = static_cast<long>(c.pairs.size());
  std::vector<FilterVerdict> verdicts(c.pairs.size());
#pragma omp parallel for schedule(dynamic, 64)
  for (long i = 0; i < n; ++i) verdicts[i] = judge(c.pairs[i], cfg);

  Corpus out;
  out.name = c.name;
  out.factor_tagged = c.factor_tagged;
  FilterStats stats;
  stats.input = c.pairs.size();
  for (std::size_t i = 0; i < c.pairs.size(); ++i) {
    switch (verdicts[i]) {
      case FilterVerdict::Keep:
        out.pairs.push_back(c.pairs[i]);
        break;
      case FilterVerdict::TooShort:
        ++stats.too_short;
        break;
      case FilterVerdict::TooLong:
        ++stats.too_long;
        break;
      case FilterVerdict::Numeric:
        ++stats.numeric;
        break;
      case FilterVerdict::NearCopy:
        ++stats.near_copy;
        break;
    }
  }
  stats.kept = out.pairs.size();
  return {std::move(out), stats};
}

Corpus mix_corpora(const Corpus& equivalents, const Corpus& divergents, double divergent_fraction,
                   std::uint64_t seed) {
  if (divergent_fraction < 0.0 || divergent_fraction > 1.0) {
    throw Error("divergent fraction must lie in [0, 1]");
  }
  if (equivalents.size() != divergents.size()) {
    throw Error("index misalignment: " + std::to_string(equivalents.size()) + " equivalents vs " +
                std::to_string(divergents.size()) + " divergents");
  }
  for (std::size_t i = 0; i < divergents.size(); ++i) {
    const auto& d = divergents.pairs[i];
    if (!d.provenance) continue;
    const Side kept = opposite(d.provenance->side);
    if (surfaces(d.side(kept)) != surfaces(equivalents.pairs[i].side(kept))) {
      throw Error("index misalignment at pair " + std::to_string(i) + ": uncorrupted side differs");
    }
  }
  const std::size_t n = equivalents.size();
  const auto k = static_cast<std::size_t>(std::lround(static_cast<double>(n) * divergent_fraction));
  Rng pick(derive_seed(seed, 0));
  const auto chosen = sample_without_replacement(pick, n, k);

  Corpus out;
  out.name = equivalents.name + "+div";
  out.factor_tagged = equivalents.factor_tagged && divergents.factor_tagged;
  out.pairs.reserve(n);
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (next < chosen.size() && chosen[next] == i) {
      out.pairs.push_back(divergents.pairs[i]);
      ++next;
    } else {
      out.pairs.push_back(equivalents.pairs[i]);
    }
  }
  Rng order(derive_seed(seed, 1));
  shuffle(out.pairs, order);
  return out;
}

AnnotatedSentencePair prepend_sentence_tag(const AnnotatedSentencePair& pair, Factor tag) {
  if (!pair.src.empty() && (pair.src.front().surface == kEqTag || pair.src.front().surface == kDivTag)) {
    throw Error("pair already carries a sentence tag");
  }
  AnnotatedSentencePair out = pair;
  for (auto& t : out.src) {
    if (t.head > 0) ++t.head;
  }
  for (auto& t : out.tgt) {
    for (auto& a : t.align) ++a;
  }
  AnnotatedToken tag_token;
  tag_token.surface = std::string(tag == Factor::EQ ? kEqTag : kDivTag);
  out.src.insert(out.src.begin(), tag_token);
  out.src_factors.insert(out.src_factors.begin(), Factor::EQ);
  if (out.provenance && out.provenance->side == Side::SRC) {
    for (auto& sp : out.provenance->affected_spans) {
      ++sp.start;
      ++sp.end;
    }
  }
  return out;
}

}  // namespace divlab::corpus
