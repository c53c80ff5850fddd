#include "punctasr/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace punctasr {

namespace {

// Words of a punctuated sequence with the class of the mark after each. Marks
// not directly after a word are tallied separately as strays.
struct Slots {
  TokenSeq words;
  PunctClassSeq classes;
  std::array<std::int64_t, 3> strays{};
};

Slots slot_view(const TokenSeq& seq, const Vocab& vocab) {
  Slots s;
  bool after_word = false;
  for (TokenId id : seq) {
    const auto cls = vocab.punct_class(id);
    if (!cls) {
      s.words.push_back(vocab.to_unpunctuated(id));
      s.classes.push_back(PunctClass::kO);
      after_word = true;
    } else if (after_word) {
      s.classes.back() = *cls;
      after_word = false;
    } else {
      ++s.strays[static_cast<int>(*cls) - 1];
    }
  }
  return s;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

// When diag is not optimal but INS and DEL both are, `mirror` consumes the
// larger token id first. That choice is invariant under swapping hyp and ref,
// unlike the fixed INS-before-DEL order.
AlignmentOps align_impl(const TokenSeq& hyp, const TokenSeq& ref, bool mirror) {
  const std::size_t n = hyp.size();
  const std::size_t m = ref.size();
  std::vector<int> cost((n + 1) * (m + 1));
  const auto at = [&](std::size_t i, std::size_t j) -> int& { return cost[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = static_cast<int>(i);
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const int diag = at(i - 1, j - 1) + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }

  AlignmentOps ops;
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = hyp[i - 1] == ref[j - 1];
      if (at(i, j) == at(i - 1, j - 1) + (same ? 0 : 1)) {
        ops.push_back({same ? EditOp::kMatch : EditOp::kSub, static_cast<int>(i - 1), static_cast<int>(j - 1)});
        --i;
        --j;
        continue;
      }
    }
    const bool ins_ok = i > 0 && at(i, j) == at(i - 1, j) + 1;
    const bool del_ok = j > 0 && at(i, j) == at(i, j - 1) + 1;
    const bool take_ins = ins_ok && !(mirror && del_ok && hyp[i - 1] < ref[j - 1]);
    if (take_ins) {
      ops.push_back({EditOp::kIns, static_cast<int>(i - 1), -1});
      --i;
    } else {
      ops.push_back({EditOp::kDel, -1, static_cast<int>(j - 1)});
      --j;
    }
  }
  std::reverse(ops.begin(), ops.end());
  return ops;
}

}  // namespace

AlignmentOps align(const TokenSeq& hyp, const TokenSeq& ref) { return align_impl(hyp, ref, false); }

double ErrorCounts::rate() const {
  return static_cast<double>(errors()) / static_cast<double>(std::max<std::int64_t>(1, ref_words));
}

ErrorCounts& ErrorCounts::operator+=(const ErrorCounts& o) {
  sub += o.sub;
  ins += o.ins;
  del += o.del;
  ref_words += o.ref_words;
  return *this;
}

ErrorCounts count_word_errors(const TokenSeq& hyp_pnct, const TokenSeq& ref_pnct, const Vocab& vocab) {
  const TokenSeq hyp = strip_punctuation(hyp_pnct, vocab);
  const TokenSeq ref = strip_punctuation(ref_pnct, vocab);
  ErrorCounts c;
  c.ref_words = static_cast<std::int64_t>(ref.size());
  for (const auto& p : align(hyp, ref)) {
    switch (p.op) {
      case EditOp::kMatch:
        break;
      case EditOp::kSub:
        ++c.sub;
        break;
      case EditOp::kIns:
        ++c.ins;
        break;
      case EditOp::kDel:
        ++c.del;
        break;
    }
  }
  return c;
}

double wer(const TokenSeq& hyp_pnct, const TokenSeq& ref_pnct, const Vocab& vocab) {
  return count_word_errors(hyp_pnct, ref_pnct, vocab).rate();
}

double ClassCounts::precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp); }
double ClassCounts::recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn); }
double ClassCounts::f1() const {
  const double p = precision();
  const double r = recall();
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

double PunctCounts::macro_f1() const {
  double sum = 0.0;
  int scored = 0;
  for (const auto& c : per_class) {
    if (c.tp + c.fp + c.fn == 0) continue;
    sum += c.f1();
    ++scored;
  }
  return scored == 0 ? 0.0 : sum / scored;
}

double PunctCounts::micro_f1() const {
  ClassCounts pooled;
  for (const auto& c : per_class) {
    pooled.tp += c.tp;
    pooled.fp += c.fp;
    pooled.fn += c.fn;
  }
  return pooled.f1();
}

PunctCounts& PunctCounts::operator+=(const PunctCounts& o) {
  for (std::size_t k = 0; k < per_class.size(); ++k) {
    per_class[k].tp += o.per_class[k].tp;
    per_class[k].fp += o.per_class[k].fp;
    per_class[k].fn += o.per_class[k].fn;
  }
  return *this;
}

PunctCounts punct_f1(const TokenSeq& hyp_pnct, const TokenSeq& ref_pnct, const Vocab& vocab) {
  const Slots hyp = slot_view(hyp_pnct, vocab);
  const Slots ref = slot_view(ref_pnct, vocab);
  PunctCounts counts;
  for (std::size_t k = 0; k < 3; ++k) {
    counts.per_class[k].fp += hyp.strays[k];
    counts.per_class[k].fn += ref.strays[k];
  }
  const auto predicted = [&](PunctClass c) {
    if (c != PunctClass::kO) ++counts.at(c).fp;
  };
  const auto missed = [&](PunctClass c) {
    if (c != PunctClass::kO) ++counts.at(c).fn;
  };
  for (const auto& p : align_impl(hyp.words, ref.words, true)) {
    if (p.op == EditOp::kIns) {
      predicted(hyp.classes[p.hyp]);
    } else if (p.op == EditOp::kDel) {
      missed(ref.classes[p.ref]);
    } else {
      const PunctClass h = hyp.classes[p.hyp];
      const PunctClass r = ref.classes[p.ref];
      if (h == r) {
        if (h != PunctClass::kO) ++counts.at(h).tp;
      } else {
        predicted(h);
        missed(r);
      }
    }
  }
  return counts;
}

EvalReport evaluate_system(const std::string& system, const std::vector<TokenSeq>& hyps,
                           const std::vector<TokenSeq>& refs, const Vocab& vocab, std::int64_t params) {
  if (hyps.size() != refs.size()) {
    throw InvalidInput("evaluate_system: " + std::to_string(hyps.size()) + " hypotheses for " +
                       std::to_string(refs.size()) + " references");
  }
  EvalReport r;
  r.system = system;
  r.params = params;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    r.errors += count_word_errors(hyps[i], refs[i], vocab);
    r.punct += punct_f1(hyps[i], refs[i], vocab);
  }
  return r;
}

std::string report_tsv_header() {
  return "system\twer\tf1_comma\tf1_period\tf1_question\tf1_avg\tf1_micro\tparams\tsub\tins\tdel\tref_words"
         "\ttp_comma\tfp_comma\tfn_comma\ttp_period\tfp_period\tfn_period\ttp_question\tfp_question\tfn_question";
}

std::string report_tsv_row(const EvalReport& r) {
  std::ostringstream out;
  out << r.system << '\t' << fmt(r.wer());
  for (const auto& c : r.punct.per_class) out << '\t' << fmt(c.f1());
  out << '\t' << fmt(r.punct.macro_f1()) << '\t' << fmt(r.punct.micro_f1()) << '\t' << r.params;
  out << '\t' << r.errors.sub << '\t' << r.errors.ins << '\t' << r.errors.del << '\t' << r.errors.ref_words;
  for (const auto& c : r.punct.per_class) out << '\t' << c.tp << '\t' << c.fp << '\t' << c.fn;
  return out.str();
}

EvalReport parse_report_tsv_row(const std::string& line) {
  std::vector<std::string> cols;
  std::istringstream in(line);
  for (std::string cell; std::getline(in, cell, '\t');) cols.push_back(cell);
  if (cols.size() != 21) throw InvalidInput("report row: expected 21 columns, got " + std::to_string(cols.size()));
  EvalReport r;
  r.system = cols[0];
  r.params = std::stoll(cols[7]);
  r.errors = {std::stoll(cols[8]), std::stoll(cols[9]), std::stoll(cols[10]), std::stoll(cols[11])};
  for (int k = 0; k < 3; ++k) {
    r.punct.per_class[k] = {std::stoll(cols[12 + 3 * k]), std::stoll(cols[13 + 3 * k]),
                            std::stoll(cols[14 + 3 * k])};
  }
  // the metric columns are derived; a row whose metrics disagree with its counts is corrupt
  if (report_tsv_row(r) != line) throw InvalidInput("report row: metrics do not match counts");
  return r;
}

void write_reports_tsv(const std::filesystem::path& path, const std::vector<EvalReport>& reports) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << report_tsv_header() << '\n';
  for (const auto& r : reports) out << report_tsv_row(r) << '\n';
}

std::vector<EvalReport> read_reports_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != report_tsv_header()) throw InvalidInput("report: bad header");
  std::vector<EvalReport> out;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse_report_tsv_row(line));
  }
  return out;
}

std::string format_report_table(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-28s %8s %8s %8s %8s %8s %10s\n", "System", "WER(%)", ",", ".", "?", "avg",
                "#Params");
  out << buf;
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof(buf), "%-28s %8.2f %8.2f %8.2f %8.2f %8.2f %10lld\n", r.system.c_str(),
                  100.0 * r.wer(), 100.0 * r.punct.per_class[0].f1(), 100.0 * r.punct.per_class[1].f1(),
                  100.0 * r.punct.per_class[2].f1(), 100.0 * r.punct.macro_f1(), static_cast<long long>(r.params));
    out << buf;
  }
  return out.str();
}

}  // namespace punctasr
