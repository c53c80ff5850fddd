#include "punctasr/classifier.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "punctasr/checkpoint.hpp"
#include "punctasr/json_reader.hpp"
#include "punctasr/rng.hpp"

namespace punctasr {

struct ClassifierCache {
  const PunctClassifier* owner = nullptr;
  TokenSeq tokens;
  std::vector<nn::EncoderLayerCache> layers;
  nn::LayerNormCache norm;
  Matrix normed;
};

void ClassifierConfig::validate() const {
  if (layers < 1) throw InvalidInput("classifier: layers must be >= 1");
  if (hidden < 1 || heads < 1 || hidden % heads != 0) {
    throw InvalidInput("classifier: hidden must be a positive multiple of heads");
  }
  if (ff_dim < 1) throw InvalidInput("classifier: ff_dim must be >= 1");
  if (vocab < 2) throw InvalidInput("classifier: vocab must be >= 2");
}

nlohmann::json to_json(const ClassifierConfig& c) {
  return {{"layers", c.layers}, {"hidden", c.hidden}, {"heads", c.heads}, {"ff_dim", c.ff_dim}, {"vocab", c.vocab}};
}

ClassifierConfig classifier_config_from_json(const nlohmann::json& j) {
  ClassifierConfig c;
  JsonReader r(j, "classifier");
  r.optional("layers", c.layers)
      .optional("hidden", c.hidden)
      .optional("heads", c.heads)
      .optional("ff_dim", c.ff_dim)
      .optional("vocab", c.vocab);
  r.finish();
  return c;
}

void ClassifierTrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw InvalidInput("classifier training: epochs and batch_size must be >= 1");
  adam.validate();
}

nlohmann::json to_json(const ClassifierTrainConfig& c) {
  return {{"epochs", c.epochs},         {"batch_size", c.batch_size}, {"lr", c.adam.lr},
          {"beta1", c.adam.beta1},      {"beta2", c.adam.beta2},      {"eps", c.adam.eps},
          {"warmup_steps", c.adam.warmup_steps}, {"seed", c.seed}};
}

ClassifierTrainConfig classifier_train_config_from_json(const nlohmann::json& j) {
  ClassifierTrainConfig c;
  JsonReader r(j, "classifier_train");
  r.optional("epochs", c.epochs)
      .optional("batch_size", c.batch_size)
      .optional("lr", c.adam.lr)
      .optional("beta1", c.adam.beta1)
      .optional("beta2", c.adam.beta2)
      .optional("eps", c.adam.eps)
      .optional("warmup_steps", c.adam.warmup_steps)
      .optional("seed", c.seed);
  r.finish();
  return c;
}

PunctClassifier::PunctClassifier(ClassifierConfig config, ClassifierParams params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
}

PunctClassifier PunctClassifier::init(const ClassifierConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ClassifierParams p;
  const double limit = std::sqrt(6.0 / (config.vocab + config.hidden));
  std::uniform_real_distribution<double> dist(-limit, limit);
  p.embedding.resize(config.vocab, config.hidden);
  for (Eigen::Index i = 0; i < p.embedding.size(); ++i) p.embedding.data()[i] = dist(rng);
  for (int i = 0; i < config.layers; ++i) p.layers.push_back(nn::make_encoder_layer(config.hidden, config.ff_dim, rng));
  p.norm = nn::make_layer_norm(config.hidden);
  p.head = nn::make_linear(config.hidden, ClassifierConfig::kClasses, rng);
  // small head so an untrained classifier starts near uniform
  p.head.weight *= 0.1;
  return PunctClassifier(config, std::move(p));
}

ClassifierOutputs PunctClassifier::forward(const TokenSeq& y_unpnct, bool train_mode) const {
  if (y_unpnct.empty()) throw InvalidInput("classifier: empty input");
  const auto n = static_cast<Eigen::Index>(y_unpnct.size());
  Matrix h(n, config_.hidden);
  for (Eigen::Index i = 0; i < n; ++i) {
    const TokenId id = y_unpnct[i];
    if (id <= kBlankId || id >= config_.vocab) throw InvalidInput("classifier: token id out of range");
    h.row(i) = params_.embedding.row(id);
  }
  h += nn::sinusoidal_positions(static_cast<int>(n), config_.hidden);

  auto cache = train_mode ? std::make_shared<ClassifierCache>() : nullptr;
  if (cache) cache->layers.resize(config_.layers);
  for (int i = 0; i < config_.layers; ++i) {
    h = nn::encoder_layer_forward(params_.layers[i], config_.heads, h, cache ? &cache->layers[i] : nullptr);
  }
  Matrix normed = nn::layer_norm_forward(params_.norm, h, cache ? &cache->norm : nullptr);
  ClassifierOutputs out;
  out.logits = nn::linear_forward(params_.head, normed);
  if (cache) {
    cache->owner = this;
    cache->tokens = y_unpnct;
    cache->normed = std::move(normed);
    out.cache = std::move(cache);
  }
  return out;
}

ClassifierParams PunctClassifier::backward(const ClassifierOutputs& out, const Matrix& grad_logits) const {
  const ClassifierCache* cache = out.cache.get();
  if (cache == nullptr || cache->owner != this) {
    throw std::logic_error("classifier: backward needs a train-mode forward cache from this model");
  }
  ClassifierParams g = zeros_like(params_);
  Matrix dh = nn::linear_backward(params_.head, cache->normed, grad_logits, g.head);
  dh = nn::layer_norm_backward(params_.norm, cache->norm, dh, g.norm);
  for (int i = config_.layers - 1; i >= 0; --i) {
    dh = nn::encoder_layer_backward(params_.layers[i], config_.heads, cache->layers[i], dh, g.layers[i]);
  }
  for (std::size_t i = 0; i < cache->tokens.size(); ++i) {
    g.embedding.row(cache->tokens[i]) += dh.row(static_cast<Eigen::Index>(i));
  }
  return g;
}

PunctClassSeq PunctClassifier::predict(const TokenSeq& y_unpnct) const {
  if (y_unpnct.empty()) return {};
  const Matrix logits = forward(y_unpnct, false).logits;
  PunctClassSeq out(y_unpnct.size());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < logits.cols(); ++k) {
      if (logits(i, k) > logits(i, best)) best = k;
    }
    out[i] = static_cast<PunctClass>(best);
  }
  return out;
}

double ce_loss(const Matrix& logits, const PunctClassSeq& targets, Matrix* grad) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) {
    throw InvalidInput("ce_loss: " + std::to_string(logits.rows()) + " rows but " +
                       std::to_string(targets.size()) + " targets");
  }
  if (targets.empty()) {
    if (grad) grad->resize(0, logits.cols());
    return 0.0;
  }
  const Matrix logp = nn::log_softmax_rows(logits);
  const double n = static_cast<double>(targets.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) loss -= logp(static_cast<Eigen::Index>(i), static_cast<int>(targets[i]));
  if (grad) {
    *grad = logp.array().exp();
    for (std::size_t i = 0; i < targets.size(); ++i) (*grad)(static_cast<Eigen::Index>(i), static_cast<int>(targets[i])) -= 1.0;
    *grad /= n;
  }
  return loss / n;
}

double token_accuracy(const PunctClassifier& clf, const std::vector<TranscriptPair>& pairs, const Vocab& vocab) {
  std::int64_t correct = 0;
  std::int64_t total = 0;
  for (const auto& p : pairs) {
    if (p.y_unpnct.empty()) continue;
    const PunctClassSeq ref = derive_punct_classes(p.y_pnct, vocab);
    const PunctClassSeq hyp = clf.predict(p.y_unpnct);
    for (std::size_t i = 0; i < ref.size(); ++i) correct += hyp[i] == ref[i];
    total += static_cast<std::int64_t>(ref.size());
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / total;
}

PunctClassifier train_classifier(const std::vector<TranscriptPair>& train, const std::vector<TranscriptPair>& dev,
                                 const Vocab& vocab, const ClassifierConfig& cfg,
                                 const ClassifierTrainConfig& train_cfg, const ClassifierLogFn& log) {
  train_cfg.validate();
  PunctClassifier clf = PunctClassifier::init(cfg, mix_seed(train_cfg.seed, {0xc1a5}));

  std::vector<std::size_t> order;
  std::vector<PunctClassSeq> targets(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].y_unpnct.empty()) continue;
    targets[i] = derive_punct_classes(train[i].y_pnct, vocab);
    order.push_back(i);
  }

  AdamState state;
  ClassifierParams best = clf.params();
  double best_acc = -1.0;
  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    std::mt19937_64 rng(mix_seed(train_cfg.seed, {0xc1a5, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += train_cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + train_cfg.batch_size);
      ClassifierParams grad = zeros_like(clf.params());
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t u = order[b];
        const ClassifierOutputs out = clf.forward(train[u].y_unpnct, true);
        Matrix dlogits;
        epoch_loss += ce_loss(out.logits, targets[u], &dlogits);
        accumulate(grad, clf.backward(out, dlogits));
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      visit(grad, [&](const std::string&, Matrix& m) { m *= scale; });
      auto params = named_tensors(clf.mutable_params());
      auto grads = named_tensors(grad);
      std::vector<Matrix*> p_ptrs;
      std::vector<const Matrix*> g_ptrs;
      for (std::size_t i = 0; i < params.size(); ++i) {
        p_ptrs.push_back(params[i].second);
        g_ptrs.push_back(grads[i].second);
      }
      adam_step(p_ptrs, g_ptrs, state, train_cfg.adam);
    }
    const double acc = dev.empty() ? 0.0 : token_accuracy(clf, dev, vocab);
    if (log) log(epoch, epoch_loss / std::max<std::size_t>(1, order.size()), acc);
    if (!dev.empty() && acc > best_acc) {
      best_acc = acc;
      best = clf.params();
    }
  }
  if (!dev.empty()) clf.mutable_params() = std::move(best);
  return clf;
}

TokenSeq punctuate(const PunctClassifier& clf, const TokenSeq& y_unpnct, const Vocab& vocab) {
  if (y_unpnct.empty()) return {};
  return apply_punct_classes(y_unpnct, clf.predict(y_unpnct), vocab);
}

TokenSeq cascade_infer(const AsrModel& asr, const PunctClassifier& clf, const FeatureSequence& x,
                       const Vocab& vocab) {
  if (asr.config().final_vocab != vocab.unpunctuated_size()) {
    throw InvalidInput("cascade: ASR final head must cover the unpunctuated vocabulary");
  }
  const TokenSeq words = greedy_decode(asr.forward(x, false).final_lattice);
  return punctuate(clf, words, vocab);
}

void save_classifier(const std::filesystem::path& path, const PunctClassifier& clf) {
  Container c;
  c.meta = {{"kind", "classifier"}, {"config", to_json(clf.config())}};
  visit(clf.params(), [&](const std::string& name, const Matrix& m) { c.tensors.push_back({name, m}); });
  save_container(path, c);
}

PunctClassifier load_classifier(const std::filesystem::path& path) {
  const Container c = load_container(path);
  if (c.meta.value("kind", "") != "classifier") {
    throw InvalidInput("checkpoint " + path.string() + " is not a punctuation classifier");
  }
  PunctClassifier clf = PunctClassifier::init(classifier_config_from_json(c.meta.at("config")), 0);
  const auto targets = named_tensors(clf.mutable_params());
  if (c.tensors.size() != targets.size()) throw InvalidInput("checkpoint: tensor count mismatch");
  assign_tensors(c.tensors, 0, targets);
  return clf;
}

}  // namespace punctasr
