#pragma once

#include <concepts>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "punctasr/types.hpp"

namespace punctasr::nn {

template <typename T, typename U>
concept Viewing = std::same_as<std::remove_cvref_t<T>, U>;

// y = x W + b, W is in x out, b is 1 x out.
struct Linear {
  Matrix weight;
  Matrix bias;

  int in() const { return static_cast<int>(weight.rows()); }
  int out() const { return static_cast<int>(weight.cols()); }
};

struct LayerNorm {
  Matrix gain;   // 1 x H
  Matrix shift;  // 1 x H
};

struct SelfAttention {
  Linear query, key, value, output;
};

struct FeedForward {
  Linear up, down;
};

// Pre-norm residual block: h + attn(norm(h)), then h + ff(norm(h)).
struct EncoderLayer {
  LayerNorm attn_norm;
  SelfAttention attn;
  LayerNorm ff_norm;
  FeedForward ff;
};

template <Viewing<Linear> L, class F>
void visit(L& l, const std::string& prefix, F&& f) {
  f(prefix + ".weight", l.weight);
  f(prefix + ".bias", l.bias);
}

template <Viewing<LayerNorm> L, class F>
void visit(L& l, const std::string& prefix, F&& f) {
  f(prefix + ".gain", l.gain);
  f(prefix + ".shift", l.shift);
}

template <Viewing<SelfAttention> A, class F>
void visit(A& a, const std::string& prefix, F&& f) {
  visit(a.query, prefix + ".query", f);
  visit(a.key, prefix + ".key", f);
  visit(a.value, prefix + ".value", f);
  visit(a.output, prefix + ".output", f);
}

template <Viewing<FeedForward> L, class F>
void visit(L& l, const std::string& prefix, F&& f) {
  visit(l.up, prefix + ".up", f);
  visit(l.down, prefix + ".down", f);
}

template <Viewing<EncoderLayer> L, class F>
void visit(L& l, const std::string& prefix, F&& f) {
  visit(l.attn_norm, prefix + ".attn_norm", f);
  visit(l.attn, prefix + ".attn", f);
  visit(l.ff_norm, prefix + ".ff_norm", f);
  visit(l.ff, prefix + ".ff", f);
}

// Xavier-uniform weights, zero bias.
Linear make_linear(int in, int out, std::mt19937_64& rng);
LayerNorm make_layer_norm(int dim);
EncoderLayer make_encoder_layer(int hidden, int ff_dim, std::mt19937_64& rng);

Matrix linear_forward(const Linear& l, const Matrix& x);
// Accumulates into grad and returns dx.
Matrix linear_backward(const Linear& l, const Matrix& x, const Matrix& dy, Linear& grad);

struct LayerNormCache {
  Matrix normalized;
  Eigen::VectorXd inv_std;
};

Matrix layer_norm_forward(const LayerNorm& ln, const Matrix& x, LayerNormCache* cache);
Matrix layer_norm_backward(const LayerNorm& ln, const LayerNormCache& cache, const Matrix& dy, LayerNorm& grad);

struct AttentionCache {
  Matrix input, q, k, v, context;
  std::vector<Matrix> probs;  // one T x T matrix per head
};

Matrix attention_forward(const SelfAttention& a, int heads, const Matrix& x, AttentionCache* cache);
Matrix attention_backward(const SelfAttention& a, int heads, const AttentionCache& cache, const Matrix& dy,
                          SelfAttention& grad);

struct FeedForwardCache {
  Matrix input, pre, act;
};

Matrix feed_forward(const FeedForward& ff, const Matrix& x, FeedForwardCache* cache);
Matrix feed_forward_backward(const FeedForward& ff, const FeedForwardCache& cache, const Matrix& dy,
                             FeedForward& grad);

struct EncoderLayerCache {
  LayerNormCache attn_norm;
  AttentionCache attn;
  LayerNormCache ff_norm;
  FeedForwardCache ff;
};

Matrix encoder_layer_forward(const EncoderLayer& layer, int heads, const Matrix& x, EncoderLayerCache* cache);
Matrix encoder_layer_backward(const EncoderLayer& layer, int heads, const EncoderLayerCache& cache,
                              const Matrix& dy, EncoderLayer& grad);

// tanh-approximated GELU.
double gelu(double x);
double gelu_grad(double x);

Matrix log_softmax_rows(const Matrix& z);
// Given d loss / d log_softmax(z) and log_softmax(z), returns d loss / dz.
Matrix log_softmax_backward(const Matrix& logp, const Matrix& dlogp);

// Fixed sinusoidal table, rows are positions.
Matrix sinusoidal_positions(int frames, int dim);

}  // namespace punctasr::nn
