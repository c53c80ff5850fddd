#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "punctasr/types.hpp"
#include "punctasr/vocab.hpp"

namespace punctasr {

class MalformedTranscript : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using PunctClassSeq = std::vector<PunctClass>;

// One utterance in both label views. y_unpnct is over vocab.unpunctuated().
struct TranscriptPair {
  TokenSeq y_pnct;
  TokenSeq y_unpnct;

  friend bool operator==(const TranscriptPair&, const TranscriptPair&) = default;
};

// Builds the pair from a punctuated sequence and checks every pair invariant
// (no blanks, no leading or adjacent marks).
TranscriptPair make_transcript_pair(const TokenSeq& y_pnct, const Vocab& vocab);

// Drops every mark from y_pnct and re-indexes into the unpunctuated view.
TokenSeq strip_punctuation(const TokenSeq& y_pnct, const Vocab& vocab);

// One class per word: the mark immediately after it, or O.
PunctClassSeq derive_punct_classes(const TokenSeq& y_pnct, const Vocab& vocab);

// Inverse of derive_punct_classes. y_unpnct is over the unpunctuated view; the
// result is over the punctuated view.
TokenSeq apply_punct_classes(const TokenSeq& y_unpnct, const PunctClassSeq& classes, const Vocab& vocab);

struct CorpusConfig {
  int n_utterances = 2000;
  int vocab_words = 30;
  int min_len = 3;  // words per utterance
  int max_len = 8;
  // Probability that a non-final word is followed by comma / period / question.
  std::array<double, 3> punct_rates = {0.15, 0.04, 0.03};
  // Probability that the final word carries a terminal mark. The terminal mark
  // is a question with probability question / (period + question), a period
  // when both rates are zero.
  double end_mark_rate = 1.0;
  std::uint64_t rng_seed = 1;
  PunctSymbols symbols;

  void validate() const;
};

// Word inventory of the synthetic grammar. Question sentences open with a
// wh-word, statements with a starter, and a word after a comma is always a
// conjunction; every other position draws from the content words.
struct WordCategories {
  std::vector<std::string> wh;
  std::vector<std::string> starters;
  std::vector<std::string> conjunctions;
  std::vector<std::string> content;

  std::vector<std::string> all() const;
};

WordCategories make_word_categories(int vocab_words);

Vocab make_corpus_vocab(const CorpusConfig& config);

struct Corpus {
  Vocab vocab;
  std::vector<TranscriptPair> utterances;
};

Corpus generate_corpus(const CorpusConfig& config);

// One utterance per line, tokens separated by single spaces.
void write_transcripts(const std::filesystem::path& path, const std::vector<TranscriptPair>& utts,
                       const Vocab& vocab);
std::vector<TranscriptPair> read_transcripts(const std::filesystem::path& path, const Vocab& vocab);

}  // namespace punctasr
