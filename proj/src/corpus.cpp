#include "punctasr/corpus.hpp"

#include <fstream>
#include <random>
#include <sstream>

namespace punctasr {

namespace {

void check_known(const TokenSeq& seq, const Vocab& vocab) {
  for (TokenId id : seq) {
    if (!vocab.contains(id)) throw InvalidInput("unknown token id " + std::to_string(id));
  }
}

}  // namespace

TokenSeq strip_punctuation(const TokenSeq& y_pnct, const Vocab& vocab) {
  check_known(y_pnct, vocab);
  TokenSeq out;
  out.reserve(y_pnct.size());
  for (TokenId id : y_pnct) {
    if (!vocab.is_punct(id)) out.push_back(vocab.to_unpunctuated(id));
  }
  return out;
}

PunctClassSeq derive_punct_classes(const TokenSeq& y_pnct, const Vocab& vocab) {
  check_known(y_pnct, vocab);
  PunctClassSeq classes;
  bool prev_was_mark = true;  // a mark at position 0 is "leading"
  for (std::size_t i = 0; i < y_pnct.size(); ++i) {
    const auto cls = vocab.punct_class(y_pnct[i]);
    if (!cls) {
      classes.push_back(PunctClass::kO);
      prev_was_mark = false;
      continue;
    }
    if (i == 0) throw MalformedTranscript("transcript begins with punctuation");
    if (prev_was_mark) throw MalformedTranscript("adjacent punctuation at position " + std::to_string(i));
    classes.back() = *cls;
    prev_was_mark = true;
  }
  return classes;
}

TokenSeq apply_punct_classes(const TokenSeq& y_unpnct, const PunctClassSeq& classes, const Vocab& vocab) {
  if (y_unpnct.size() != classes.size()) {
    throw InvalidInput("apply_punct_classes: " + std::to_string(y_unpnct.size()) + " tokens but " +
                       std::to_string(classes.size()) + " classes");
  }
  TokenSeq out;
  out.reserve(y_unpnct.size() * 2);
  for (std::size_t i = 0; i < y_unpnct.size(); ++i) {
    out.push_back(vocab.to_punctuated(y_unpnct[i]));
    if (classes[i] != PunctClass::kO) out.push_back(vocab.punct_id(classes[i]));
  }
  return out;
}

TranscriptPair make_transcript_pair(const TokenSeq& y_pnct, const Vocab& vocab) {
  for (TokenId id : y_pnct) {
    if (id == kBlankId) throw MalformedTranscript("transcript contains the blank token");
  }
  derive_punct_classes(y_pnct, vocab);  // throws on leading/adjacent marks
  return TranscriptPair{y_pnct, strip_punctuation(y_pnct, vocab)};
}

void CorpusConfig::validate() const {
  if (n_utterances < 0) throw InvalidInput("corpus: n_utterances must be >= 0");
  if (vocab_words < 14) throw InvalidInput("corpus: vocab_words must be >= 14");
  if (min_len < 1 || max_len < min_len) throw InvalidInput("corpus: need 1 <= min_len <= max_len");
  double sum = 0.0;
  for (double r : punct_rates) {
    if (!(r >= 0.0 && r <= 1.0)) throw InvalidInput("corpus: punct_rates must lie in [0, 1]");
    sum += r;
  }
  if (!(sum < 1.0)) throw InvalidInput("corpus: punct_rates must sum to less than 1");
  if (!(end_mark_rate >= 0.0 && end_mark_rate <= 1.0)) {
    throw InvalidInput("corpus: end_mark_rate must lie in [0, 1]");
  }
}

std::vector<std::string> WordCategories::all() const {
  std::vector<std::string> out;
  for (const auto* group : {&wh, &starters, &conjunctions, &content}) {
    out.insert(out.end(), group->begin(), group->end());
  }
  return out;
}

WordCategories make_word_categories(int vocab_words) {
  if (vocab_words < 14) throw InvalidInput("corpus: vocab_words must be >= 14");
  static const std::vector<std::string> kWh = {"what", "where", "who", "why", "how", "which", "when"};
  static const std::vector<std::string> kStarters = {"i", "we", "you", "they", "it", "she", "he"};
  static const std::vector<std::string> kConj = {"but", "and", "so", "or", "then"};
  static const std::vector<std::string> kContent = {
      "is",   "was",  "go",    "see",   "make", "know", "think", "want",  "like",  "good",
      "time", "day",  "work",  "home",  "people", "place", "thing", "way", "year", "talk",
      "water", "world", "city", "story", "idea", "money", "music", "light", "car", "book"};

  const auto take = [](const std::vector<std::string>& pool, int n, const std::string& prefix) {
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) {
      out.push_back(i < static_cast<int>(pool.size()) ? pool[i] : prefix + std::to_string(i));
    }
    return out;
  };

  const int n_wh = std::max(1, std::min<int>(kWh.size(), vocab_words / 6));
  const int n_start = std::max(1, std::min<int>(kStarters.size(), vocab_words / 6));
  const int n_conj = std::max(1, std::min<int>(kConj.size(), vocab_words / 10));
  const int n_content = vocab_words - n_wh - n_start - n_conj;

  WordCategories cats;
  cats.wh = take(kWh, n_wh, "wh");
  cats.starters = take(kStarters, n_start, "st");
  cats.conjunctions = take(kConj, n_conj, "cj");
  cats.content = take(kContent, n_content, "w");
  return cats;
}

Vocab make_corpus_vocab(const CorpusConfig& config) {
  return Vocab::punctuated(make_word_categories(config.vocab_words).all(), config.symbols);
}

Corpus generate_corpus(const CorpusConfig& config) {
  config.validate();
  const WordCategories cats = make_word_categories(config.vocab_words);
  Corpus corpus{Vocab::punctuated(cats.all(), config.symbols), {}};
  const Vocab& vocab = corpus.vocab;

  std::mt19937_64 rng(config.rng_seed);
  std::uniform_int_distribution<int> length_dist(config.min_len, config.max_len);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto pick = [&](const std::vector<std::string>& pool) {
    std::uniform_int_distribution<std::size_t> d(0, pool.size() - 1);
    return vocab.id(pool[d(rng)]);
  };

  const auto [comma_rate, period_rate, question_rate] = config.punct_rates;
  const double terminal_question =
      period_rate + question_rate > 0.0 ? question_rate / (period_rate + question_rate) : 0.0;

  corpus.utterances.reserve(config.n_utterances);
  for (int u = 0; u < config.n_utterances; ++u) {
    const int n = length_dist(rng);
    PunctClassSeq classes(n, PunctClass::kO);
    for (int i = 0; i + 1 < n; ++i) {
      const double r = unit(rng);
      if (r < comma_rate) {
        classes[i] = PunctClass::kComma;
      } else if (r < comma_rate + period_rate) {
        classes[i] = PunctClass::kPeriod;
      } else if (r < comma_rate + period_rate + question_rate) {
        classes[i] = PunctClass::kQuestion;
      }
    }
    if (unit(rng) < config.end_mark_rate) {
      classes[n - 1] = unit(rng) < terminal_question ? PunctClass::kQuestion : PunctClass::kPeriod;
    }

    TokenSeq words(n);
    int sentence_start = 0;
    for (int i = 0; i < n; ++i) {
      if (i == sentence_start) {
        int end = i;
        while (end + 1 < n && classes[end] != PunctClass::kPeriod && classes[end] != PunctClass::kQuestion) ++end;
        words[i] = pick(classes[end] == PunctClass::kQuestion ? cats.wh : cats.starters);
      } else if (classes[i - 1] == PunctClass::kComma) {
        words[i] = pick(cats.conjunctions);
      } else {
        // previous word has no mark, so avoid an adjacent repeat
        do {
          words[i] = pick(cats.content);
        } while (words[i] == words[i - 1]);
      }
      if (classes[i] == PunctClass::kPeriod || classes[i] == PunctClass::kQuestion) sentence_start = i + 1;
    }

    TokenSeq y_unpnct(n);
    for (int i = 0; i < n; ++i) y_unpnct[i] = vocab.to_unpunctuated(words[i]);
    corpus.utterances.push_back(make_transcript_pair(apply_punct_classes(y_unpnct, classes, vocab), vocab));
  }
  return corpus;
}

void write_transcripts(const std::filesystem::path& path, const std::vector<TranscriptPair>& utts,
                       const Vocab& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& u : utts) out << vocab.decode_text(u.y_pnct) << '\n';
}

std::vector<TranscriptPair> read_transcripts(const std::filesystem::path& path, const Vocab& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<TranscriptPair> out;
  for (std::string line; std::getline(in, line);) {
    out.push_back(make_transcript_pair(vocab.encode_text(line), vocab));
  }
  return out;
}

}  // namespace punctasr
