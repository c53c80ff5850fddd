#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "punctasr/adam.hpp"
#include "punctasr/corpus.hpp"
#include "punctasr/model.hpp"

namespace punctasr {

// Text-only token classifier for the cascade: unpunctuated tokens in, one of
// {O, COMMA, PERIOD, QUESTION} per token out. Attention is bidirectional.
struct ClassifierConfig {
  static constexpr int kClasses = kNumPunctClasses;

  int layers = 2;
  int hidden = 64;
  int heads = 4;
  int ff_dim = 128;
  int vocab = 0;  // unpunctuated vocabulary size

  void validate() const;
};

nlohmann::json to_json(const ClassifierConfig& cfg);
ClassifierConfig classifier_config_from_json(const nlohmann::json& j);

struct ClassifierParams {
  Matrix embedding;  // vocab x hidden
  std::vector<nn::EncoderLayer> layers;
  nn::LayerNorm norm;
  nn::Linear head;  // hidden x 4
};

template <nn::Viewing<ClassifierParams> P, class F>
void visit(P& p, F&& f) {
  f("embedding", p.embedding);
  for (std::size_t i = 0; i < p.layers.size(); ++i) nn::visit(p.layers[i], "layer" + std::to_string(i), f);
  nn::visit(p.norm, "norm", f);
  nn::visit(p.head, "head", f);
}

struct ClassifierCache;

struct ClassifierOutputs {
  Matrix logits;  // N x 4
  std::shared_ptr<const ClassifierCache> cache;
};

class PunctClassifier {
 public:
  PunctClassifier(ClassifierConfig config, ClassifierParams params);
  static PunctClassifier init(const ClassifierConfig& config, std::uint64_t seed);

  const ClassifierConfig& config() const { return config_; }
  const ClassifierParams& params() const { return params_; }
  ClassifierParams& mutable_params() { return params_; }

  ClassifierOutputs forward(const TokenSeq& y_unpnct, bool train_mode) const;
  ClassifierParams backward(const ClassifierOutputs& out, const Matrix& grad_logits) const;
  // Per-token argmax, ties to the lowest class.
  PunctClassSeq predict(const TokenSeq& y_unpnct) const;

  std::size_t count_params() const { return punctasr::count_params(params_); }

 private:
  ClassifierConfig config_;
  ClassifierParams params_;
};

// Mean over tokens of -log softmax(logits)[target]. Fills grad (d loss /
// d logits) when given.
double ce_loss(const Matrix& logits, const PunctClassSeq& targets, Matrix* grad = nullptr);

struct ClassifierTrainConfig {
  int epochs = 8;
  int batch_size = 32;
  AdamHyper adam{1e-3, 0.9, 0.98, 1e-9, 100};
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const ClassifierTrainConfig& cfg);
ClassifierTrainConfig classifier_train_config_from_json(const nlohmann::json& j);

// Fraction of tokens whose predicted class matches the reference.
double token_accuracy(const PunctClassifier& clf, const std::vector<TranscriptPair>& pairs, const Vocab& vocab);

using ClassifierLogFn = std::function<void(int epoch, double train_loss, double dev_accuracy)>;

// Trains on ground-truth transcripts. With a dev set, the parameters with the
// best dev accuracy are returned.
PunctClassifier train_classifier(const std::vector<TranscriptPair>& train, const std::vector<TranscriptPair>& dev,
                                 const Vocab& vocab, const ClassifierConfig& cfg,
                                 const ClassifierTrainConfig& train_cfg, const ClassifierLogFn& log = {});

// Greedy ASR decode (unpunctuated head), then per-token classes, then the
// marks are inserted. Output is over the punctuated view.
TokenSeq cascade_infer(const AsrModel& asr, const PunctClassifier& clf, const FeatureSequence& x,
                       const Vocab& vocab);

// Applies classifier punctuation to an unpunctuated hypothesis.
TokenSeq punctuate(const PunctClassifier& clf, const TokenSeq& y_unpnct, const Vocab& vocab);

void save_classifier(const std::filesystem::path& path, const PunctClassifier& clf);
PunctClassifier load_classifier(const std::filesystem::path& path);

}  // namespace punctasr
