#include <doctest.h>

#include <filesystem>

#include "punctasr/corpus.hpp"
#include "punctasr/features.hpp"

using namespace punctasr;

namespace {

const Vocab& vocab() {
  static const Vocab v = Vocab::punctuated({"yes", "it", "is"});
  return v;
}

}  // namespace

TEST_CASE("zero noise repeats the prototype") {
  SynthConfig cfg;
  cfg.noise_std = 0.0;
  cfg.frames_per_word = {3, 3};
  const Synthesizer s(vocab(), cfg);
  const FeatureSequence x = s.synthesize(vocab().encode_text("yes"), 5);
  REQUIRE(x.frame_count() == 3);
  CHECK(x.dim() == cfg.dim);
  for (int t = 0; t < 3; ++t) CHECK(x.frames.row(t) == s.prototypes().row(vocab().id("yes")));
  CHECK(s.prototypes().row(vocab().id("yes")).norm() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(s.prototypes()(vocab().id("yes"), s.cue_channel()) == 0.0);
}

TEST_CASE("a period contributes exactly its pause frames") {
  SynthConfig cfg;
  cfg.frames_per_word = {4, 4};
  cfg.pause_frames[1] = {5, 5};
  const Synthesizer s(vocab(), cfg);
  const FeatureSequence words = s.synthesize(vocab().encode_text("yes it"), 9);
  const FeatureSequence with_period = s.synthesize(vocab().encode_text("yes it ."), 9);
  CHECK(words.frame_count() == 8);
  CHECK(with_period.frame_count() == 13);
  // pause frames: low energy outside the cue channel, cue near the period level
  for (int t = 8; t < 13; ++t) {
    const auto row = with_period.frames.row(t);
    CHECK(row.head(cfg.dim - 1).norm() < 1.0);
    CHECK(std::abs(row(s.cue_channel()) - cfg.cue_levels[1]) < 5 * cfg.noise_std);
  }
}

TEST_CASE("frame count is the sum of token contributions") {
  const Synthesizer s(vocab(), {});
  const TokenSeq y = vocab().encode_text("yes , it is ?");
  const auto counts = s.token_frames(y, 42);
  int total = 0;
  for (int c : counts) total += c;
  CHECK(s.synthesize(y, 42).frame_count() == total);
}

TEST_CASE("synthesis is deterministic and seed-dependent") {
  CorpusConfig cc;
  cc.n_utterances = 40;
  const Corpus c = generate_corpus(cc);
  const Synthesizer a(c.vocab, {});
  const Synthesizer b(c.vocab, {});
  for (std::size_t i = 0; i < c.utterances.size(); ++i) {
    const FeatureSequence x = a.synthesize(c.utterances[i].y_pnct, i);
    CHECK(x == b.synthesize(c.utterances[i].y_pnct, i));
    CHECK(x.frames.allFinite());
  }
  CHECK(!(a.synthesize(c.utterances[0].y_pnct, 1) == a.synthesize(c.utterances[0].y_pnct, 2)));
}

TEST_CASE("synthesize rejects bad input") {
  const Synthesizer s(vocab(), {});
  CHECK_THROWS_AS(s.synthesize({}, 1), InvalidInput);
  CHECK_THROWS_AS(s.synthesize({0}, 1), InvalidInput);
  SynthConfig bad;
  bad.frames_per_word = {3, 2};
  CHECK_THROWS_AS(Synthesizer(vocab(), bad), InvalidInput);
}

TEST_CASE("mask_augment") {
  const Synthesizer s(vocab(), {});
  const FeatureSequence x = s.synthesize(vocab().encode_text("yes it is ."), 3);

  SUBCASE("no masks is the identity") {
    std::mt19937_64 rng(1);
    CHECK(mask_augment(x, {0, 0, 3}, rng) == x);
  }
  SUBCASE("same seed, same masks; input untouched") {
    const FeatureSequence copy = x;
    std::mt19937_64 r1(5), r2(5);
    const FeatureSequence a = mask_augment(x, {2, 2, 3}, r1);
    const FeatureSequence b = mask_augment(x, {2, 2, 3}, r2);
    CHECK(a == b);
    CHECK(x == copy);
  }
  SUBCASE("a time mask never covers every frame") {
    const int t = x.frame_count();
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      std::mt19937_64 rng(seed);
      const FeatureSequence m = mask_augment(x, {1, 0, t - 1}, rng);
      int zeroed = 0;
      for (int r = 0; r < t; ++r) zeroed += m.frames.row(r).isZero(0.0);
      CHECK(zeroed <= t - 1);
    }
  }
  SUBCASE("masked cells are zero, the rest unchanged") {
    std::mt19937_64 rng(9);
    const FeatureSequence m = mask_augment(x, {2, 2, 3}, rng);
    for (Eigen::Index i = 0; i < x.frames.size(); ++i) {
      const double v = m.frames.data()[i];
      CHECK((v == 0.0 || v == x.frames.data()[i]));
    }
  }
}

TEST_CASE("normalizer gives zero mean and unit variance on its fit data") {
  CorpusConfig cc;
  cc.n_utterances = 60;
  const Corpus c = generate_corpus(cc);
  const Synthesizer s(c.vocab, {});
  std::vector<FeatureSequence> xs;
  for (std::size_t i = 0; i < c.utterances.size(); ++i) xs.push_back(s.synthesize(c.utterances[i].y_pnct, i));
  const FeatureNormalizer norm = FeatureNormalizer::fit(xs);
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(xs[0].dim());
  Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(xs[0].dim());
  double n = 0;
  for (const auto& x : xs) {
    const FeatureSequence y = norm.apply(x);
    sum += y.frames.colwise().sum();
    sq += y.frames.array().square().matrix().colwise().sum();
    n += y.frame_count();
  }
  for (int c2 = 0; c2 < sum.size(); ++c2) {
    CHECK(std::abs(sum[c2] / n) < 1e-9);
    CHECK(sq[c2] / n == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("feature files round-trip exactly") {
  const Synthesizer s(vocab(), {});
  const FeatureSequence x = s.synthesize(vocab().encode_text("yes , it is ?"), 77);
  const auto path = std::filesystem::temp_directory_path() / "punctasr_feat_rt.feat";
  write_features(path, x);
  CHECK(read_features(path) == x);
  std::filesystem::remove(path);
}

TEST_CASE("noise-free frames decode back to the words by nearest prototype") {
  CorpusConfig cc;
  cc.n_utterances = 100;
  const Corpus c = generate_corpus(cc);
  SynthConfig cfg;
  cfg.noise_std = 0.0;
  const Synthesizer s(c.vocab, cfg);
  const Matrix& protos = s.prototypes();
  for (std::size_t u = 0; u < c.utterances.size(); ++u) {
    const TranscriptPair& p = c.utterances[u];
    const FeatureSequence x = s.synthesize(p.y_pnct, u);
    TokenSeq words;
    TokenId prev = -1;
    for (int t = 0; t < x.frame_count(); ++t) {
      const auto row = x.frames.row(t);
      if (row(s.cue_channel()) > 0.5) {
        prev = -1;  // pause frame ends the run
        continue;
      }
      TokenId best = -1;
      double best_d = 0.0;
      for (TokenId id = 1; id < c.vocab.size(); ++id) {
        if (c.vocab.is_punct(id)) continue;
        const double d = (row - protos.row(id)).squaredNorm();
        if (best < 0 || d < best_d) {
          best = id;
          best_d = d;
        }
      }
      if (best != prev) words.push_back(c.vocab.to_unpunctuated(best));
      prev = best;
    }
    CHECK(words == p.y_unpnct);
  }
}
