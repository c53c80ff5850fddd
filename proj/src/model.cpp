#include "punctasr/model.hpp"

#include <random>

#include "punctasr/checkpoint.hpp"
#include "punctasr/json_reader.hpp"

namespace punctasr {

struct ForwardCache {
  const AsrModel* model = nullptr;
  std::uint64_t version = 0;
  Matrix stacked;
  std::vector<nn::EncoderLayerCache> layers;
  nn::LayerNormCache mid_norm;
  Matrix mid_normed;
  nn::LayerNormCache final_norm;
  Matrix final_normed;
};

int ModelConfig::tap() const {
  if (tap_layer > 0) return tap_layer;
  return std::max(1, layers / 2);
}

void ModelConfig::validate() const {
  if (layers < 1) throw InvalidInput("model: layers must be >= 1");
  if (hidden < 1 || heads < 1 || hidden % heads != 0) {
    throw InvalidInput("model: hidden must be a positive multiple of heads");
  }
  if (ff_dim < 1 || input_dim < 1) throw InvalidInput("model: ff_dim and input_dim must be >= 1");
  if (stride < 1) throw InvalidInput("model: stride must be >= 1");
  if (final_vocab < 2 || mid_vocab < 2) throw InvalidInput("model: head vocabularies need blank plus a label");
  if (tap() < 1 || tap() > layers) throw InvalidInput("model: tap layer must lie in [1, layers]");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"layers", c.layers},         {"hidden", c.hidden},     {"heads", c.heads},
          {"ff_dim", c.ff_dim},         {"input_dim", c.input_dim}, {"stride", c.stride},
          {"final_vocab", c.final_vocab}, {"mid_vocab", c.mid_vocab}, {"tap_layer", c.tap_layer},
          {"positional", c.positional}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  JsonReader r(j, "model");
  r.optional("layers", c.layers)
      .optional("hidden", c.hidden)
      .optional("heads", c.heads)
      .optional("ff_dim", c.ff_dim)
      .optional("input_dim", c.input_dim)
      .optional("stride", c.stride)
      .optional("final_vocab", c.final_vocab)
      .optional("mid_vocab", c.mid_vocab)
      .optional("tap_layer", c.tap_layer)
      .optional("positional", c.positional);
  r.finish();
  return c;
}

std::size_t expected_param_count(const ModelConfig& c) {
  c.validate();
  const auto h = static_cast<std::size_t>(c.hidden);
  const auto f = static_cast<std::size_t>(c.ff_dim);
  const std::size_t input = static_cast<std::size_t>(c.stride * c.input_dim) * h + h;
  const std::size_t per_layer = 2 * h                // attn norm
                                + 4 * (h * h + h)    // q, k, v, output
                                + 2 * h              // ff norm
                                + (h * f + f) + (f * h + h);
  const auto head = [h](int vocab) { return 2 * h + h * static_cast<std::size_t>(vocab) + vocab; };
  return input + c.layers * per_layer + head(c.mid_vocab) + head(c.final_vocab);
}

Matrix stack_frames(const Matrix& frames, int stride) {
  const Eigen::Index t_in = frames.rows();
  const Eigen::Index d = frames.cols();
  const Eigen::Index t_out = (t_in + stride - 1) / stride;
  Matrix out = Matrix::Zero(t_out, stride * d);
  for (Eigen::Index t = 0; t < t_in; ++t) {
    out.block(t / stride, (t % stride) * d, 1, d) = frames.row(t);
  }
  return out;
}

AsrModel::AsrModel(ModelConfig config, ModelParams params) : config_(config), params_(std::move(params)) {
  config_.validate();
  if (static_cast<int>(params_.layers.size()) != config_.layers) {
    throw InvalidInput("model: parameter layer count does not match config");
  }
}

AsrModel AsrModel::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ModelParams p;
  p.input = nn::make_linear(config.stride * config.input_dim, config.hidden, rng);
  for (int i = 0; i < config.layers; ++i) p.layers.push_back(nn::make_encoder_layer(config.hidden, config.ff_dim, rng));
  p.mid_norm = nn::make_layer_norm(config.hidden);
  p.mid_head = nn::make_linear(config.hidden, config.mid_vocab, rng);
  p.final_norm = nn::make_layer_norm(config.hidden);
  p.final_head = nn::make_linear(config.hidden, config.final_vocab, rng);
  return AsrModel(config, std::move(p));
}

ForwardOutputs AsrModel::forward(const FeatureSequence& x, bool train_mode) const {
  if (x.dim() != config_.input_dim) {
    throw InvalidInput("model: feature dim " + std::to_string(x.dim()) + " != configured " +
                       std::to_string(config_.input_dim));
  }
  if (x.frame_count() < 1) throw InvalidInput("model: empty feature sequence");

  auto cache = train_mode ? std::make_shared<ForwardCache>() : nullptr;
  Matrix stacked = stack_frames(x.frames, config_.stride);
  Matrix h = nn::linear_forward(params_.input, stacked);
  if (config_.positional) h += nn::sinusoidal_positions(static_cast<int>(h.rows()), config_.hidden);

  ForwardOutputs out;
  Matrix tap_hidden;
  if (cache) cache->layers.resize(config_.layers);
  for (int i = 0; i < config_.layers; ++i) {
    h = nn::encoder_layer_forward(params_.layers[i], config_.heads, h, cache ? &cache->layers[i] : nullptr);
    if (i + 1 == config_.tap()) tap_hidden = h;
  }

  Matrix mid_normed = nn::layer_norm_forward(params_.mid_norm, tap_hidden, cache ? &cache->mid_norm : nullptr);
  out.mid_lattice = nn::log_softmax_rows(nn::linear_forward(params_.mid_head, mid_normed));
  Matrix final_normed = nn::layer_norm_forward(params_.final_norm, h, cache ? &cache->final_norm : nullptr);
  out.final_lattice = nn::log_softmax_rows(nn::linear_forward(params_.final_head, final_normed));
  out.final_hidden = std::move(h);

  if (cache) {
    cache->model = this;
    cache->version = version_;
    cache->stacked = std::move(stacked);
    cache->mid_normed = std::move(mid_normed);
    cache->final_normed = std::move(final_normed);
    out.cache = std::move(cache);
  }
  return out;
}

ModelParams AsrModel::backward(const ForwardOutputs& out, const Matrix& grad_final, const Matrix& grad_mid) const {
  const ForwardCache* cache = out.cache.get();
  if (cache == nullptr || cache->model != this || cache->version != version_) {
    throw std::logic_error("model: backward needs a cache from a train-mode forward on the current parameters");
  }
  if (grad_final.rows() != out.final_lattice.rows() || grad_final.cols() != out.final_lattice.cols()) {
    throw InvalidInput("model: grad_final shape mismatch");
  }
  const bool has_mid = grad_mid.size() > 0;
  if (has_mid && (grad_mid.rows() != out.mid_lattice.rows() || grad_mid.cols() != out.mid_lattice.cols())) {
    throw InvalidInput("model: grad_mid shape mismatch");
  }

  ModelParams g = zeros_like(params_);
  Matrix dh = nn::linear_backward(params_.final_head, cache->final_normed,
                                  nn::log_softmax_backward(out.final_lattice, grad_final), g.final_head);
  dh = nn::layer_norm_backward(params_.final_norm, cache->final_norm, dh, g.final_norm);

  Matrix dtap;
  if (has_mid) {
    dtap = nn::linear_backward(params_.mid_head, cache->mid_normed,
                               nn::log_softmax_backward(out.mid_lattice, grad_mid), g.mid_head);
    dtap = nn::layer_norm_backward(params_.mid_norm, cache->mid_norm, dtap, g.mid_norm);
  }

  for (int i = config_.layers - 1; i >= 0; --i) {
    if (has_mid && i + 1 == config_.tap()) dh += dtap;
    dh = nn::encoder_layer_backward(params_.layers[i], config_.heads, cache->layers[i], dh, g.layers[i]);
  }
  nn::linear_backward(params_.input, cache->stacked, dh, g.input);
  return g;
}

void save_model(const std::filesystem::path& path, const AsrModel& model) {
  Container c;
  c.meta = {{"kind", "asr"}, {"config", to_json(model.config())}};
  visit(model.params(), [&](const std::string& name, const Matrix& m) { c.tensors.push_back({name, m}); });
  save_container(path, c);
}

AsrModel load_model(const std::filesystem::path& path) {
  const Container c = load_container(path);
  if (c.meta.value("kind", "") != "asr") throw InvalidInput("checkpoint " + path.string() + " is not an ASR model");
  const ModelConfig cfg = model_config_from_json(c.meta.at("config"));
  AsrModel model = AsrModel::init(cfg, 0);
  const auto targets = named_tensors(model.mutable_params());
  if (c.tensors.size() != targets.size()) throw InvalidInput("checkpoint: tensor count mismatch");
  assign_tensors(c.tensors, 0, targets);
  return model;
}

}  // namespace punctasr
