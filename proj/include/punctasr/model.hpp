#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "punctasr/ctc.hpp"
#include "punctasr/features.hpp"
#include "punctasr/nn.hpp"

namespace punctasr {

struct ModelConfig {
  int layers = 6;
  int hidden = 64;
  int heads = 4;
  int ff_dim = 128;
  int input_dim = 16;
  int stride = 2;
  int final_vocab = 0;  // output size of the head on layer `layers`
  int mid_vocab = 0;    // output size of the head on layer tap()
  int tap_layer = 0;    // 0 selects floor(layers / 2), clamped to >= 1
  bool positional = true;

  int tap() const;
  // Output frames for an input of `frames` frames: ceil(frames / stride).
  int output_frames(int frames) const { return (frames + stride - 1) / stride; }
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Trunk plus two CTC heads. The tap head reads the residual stream after
// layer tap() through its own normalization; the final head reads the output
// of the last layer.
struct ModelParams {
  nn::Linear input;  // (stride * input_dim) x hidden
  std::vector<nn::EncoderLayer> layers;
  nn::LayerNorm mid_norm;
  nn::Linear mid_head;
  nn::LayerNorm final_norm;
  nn::Linear final_head;
};

template <nn::Viewing<ModelParams> P, class F>
void visit(P& p, F&& f) {
  nn::visit(p.input, "input", f);
  for (std::size_t i = 0; i < p.layers.size(); ++i) nn::visit(p.layers[i], "layer" + std::to_string(i), f);
  nn::visit(p.mid_norm, "mid_norm", f);
  nn::visit(p.mid_head, "mid_head", f);
  nn::visit(p.final_norm, "final_norm", f);
  nn::visit(p.final_head, "final_head", f);
}

template <class P>
std::vector<std::pair<std::string, Matrix*>> named_tensors(P& p) {
  std::vector<std::pair<std::string, Matrix*>> out;
  visit(p, [&](const std::string& name, Matrix& m) { out.emplace_back(name, &m); });
  return out;
}

template <class P>
std::size_t count_params(const P& p) {
  std::size_t n = 0;
  visit(p, [&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

// Same shapes, all zeros.
template <class P>
P zeros_like(const P& p) {
  P z = p;
  visit(z, [](const std::string&, Matrix& m) { m.setZero(); });
  return z;
}

// a += scale * b, tensor by tensor.
template <class P>
void accumulate(P& a, const P& b, double scale = 1.0) {
  auto dst = named_tensors(a);
  auto src = named_tensors(const_cast<P&>(b));
  for (std::size_t i = 0; i < dst.size(); ++i) *dst[i].second += scale * *src[i].second;
}

struct ForwardCache;

struct ForwardOutputs {
  LogProbLattice final_lattice;  // over the final head's vocabulary
  LogProbLattice mid_lattice;    // over the tap head's vocabulary
  Matrix final_hidden;           // last layer output before the final norm
  std::shared_ptr<const ForwardCache> cache;  // set only in train mode
};

class AsrModel {
 public:
  AsrModel(ModelConfig config, ModelParams params);

  // Seeded Xavier-uniform init, zero biases, unit norm gains.
  static AsrModel init(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const ModelParams& params() const { return params_; }
  ModelParams& mutable_params() { return params_; }
  // Invalidates caches held by earlier forward passes.
  void mark_updated() { ++version_; }
  std::uint64_t version() const { return version_; }

  ForwardOutputs forward(const FeatureSequence& x, bool train_mode) const;

  // Gradients of a loss whose derivatives with respect to the two lattices
  // are grad_final and grad_mid. An empty grad_mid counts as zero.
  ModelParams backward(const ForwardOutputs& out, const Matrix& grad_final, const Matrix& grad_mid) const;

  std::size_t count_params() const { return punctasr::count_params(params_); }

 private:
  ModelConfig config_;
  ModelParams params_;
  std::uint64_t version_ = 0;
};

// Closed-form parameter count for a config.
std::size_t expected_param_count(const ModelConfig& cfg);

// Stacks `stride` consecutive frames per row, zero-padding the tail.
Matrix stack_frames(const Matrix& frames, int stride);

void save_model(const std::filesystem::path& path, const AsrModel& model);
AsrModel load_model(const std::filesystem::path& path);

}  // namespace punctasr
