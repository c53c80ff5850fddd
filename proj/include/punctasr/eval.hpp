#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "punctasr/corpus.hpp"

namespace punctasr {

// INS: a hypothesis token with no reference counterpart. DEL: a reference
// token the hypothesis dropped.
enum class EditOp : std::uint8_t { kMatch, kSub, kIns, kDel };

struct AlignedPair {
  EditOp op;
  int hyp = -1;  // index into hyp, -1 for DEL
  int ref = -1;  // index into ref, -1 for INS

  friend bool operator==(const AlignedPair&, const AlignedPair&) = default;
};

using AlignmentOps = std::vector<AlignedPair>;

// Minimal unit-cost Levenshtein alignment. Among equal-cost alignments the
// backtrace prefers MATCH/SUB, then INS, then DEL.
AlignmentOps align(const TokenSeq& hyp, const TokenSeq& ref);

struct ErrorCounts {
  std::int64_t sub = 0;
  std::int64_t ins = 0;
  std::int64_t del = 0;
  std::int64_t ref_words = 0;

  std::int64_t errors() const { return sub + ins + del; }
  // errors / max(1, ref_words): 0 for empty-vs-empty, I for empty reference.
  double rate() const;
  ErrorCounts& operator+=(const ErrorCounts& o);
  friend bool operator==(const ErrorCounts&, const ErrorCounts&) = default;
};

// Both inputs over the punctuated view; marks are stripped before alignment.
ErrorCounts count_word_errors(const TokenSeq& hyp_pnct, const TokenSeq& ref_pnct, const Vocab& vocab);
double wer(const TokenSeq& hyp_pnct, const TokenSeq& ref_pnct, const Vocab& vocab);

struct ClassCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;

  double precision() const;
  double recall() const;
  double f1() const;  // 2PR / (P + R), 0 when P + R = 0
  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

// Indexed by comma, period, question.
struct PunctCounts {
  std::array<ClassCounts, 3> per_class;

  ClassCounts& at(PunctClass c) { return per_class[static_cast<int>(c) - 1]; }
  const ClassCounts& at(PunctClass c) const { return per_class[static_cast<int>(c) - 1]; }
  // Mean F1 over classes seen in the hypothesis or the reference; a class
  // with no TP, FP or FN at all is left out rather than scored 0.
  double macro_f1() const;
  double micro_f1() const;
  PunctCounts& operator+=(const PunctCounts& o);
  friend bool operator==(const PunctCounts&, const PunctCounts&) = default;
};

// Slot scoring: align the word sequences and compare the class following each
// aligned word. The word alignment breaks INS/DEL ties by token id rather than
// INS first, so swapping hyp and ref swaps FP and FN exactly. A wrong non-O class counts FP for the hypothesis class and FN
// for the reference class. Marks on inserted words are FP, marks on deleted
// words FN. Marks that do not directly follow a word (leading, or a second
// mark in a row) count FP in the hypothesis and FN in the reference.
PunctCounts punct_f1(const TokenSeq& hyp_pnct, const TokenSeq& ref_pnct, const Vocab& vocab);

struct EvalReport {
  std::string system;
  ErrorCounts errors;
  PunctCounts punct;
  std::int64_t params = 0;

  double wer() const { return errors.rate(); }
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// Pools error and punctuation counts over the corpus (micro pooling).
EvalReport evaluate_system(const std::string& system, const std::vector<TokenSeq>& hyps,
                           const std::vector<TokenSeq>& refs, const Vocab& vocab, std::int64_t params);

std::string report_tsv_header();
std::string report_tsv_row(const EvalReport& r);
EvalReport parse_report_tsv_row(const std::string& line);
void write_reports_tsv(const std::filesystem::path& path, const std::vector<EvalReport>& reports);
std::vector<EvalReport> read_reports_tsv(const std::filesystem::path& path);

// Fixed-width table: error rate, per-class F1, average F1, #params.
std::string format_report_table(const std::vector<EvalReport>& reports);

}  // namespace punctasr
