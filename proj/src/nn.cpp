#include "punctasr/nn.hpp"

#include <cmath>
#include <numbers>

#include "punctasr/vocab.hpp"

namespace punctasr::nn {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.044715;

}  // namespace

Linear make_linear(int in, int out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / (in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Linear l{Matrix(in, out), Matrix::Zero(1, out)};
  for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = dist(rng);
  return l;
}

LayerNorm make_layer_norm(int dim) { return {Matrix::Ones(1, dim), Matrix::Zero(1, dim)}; }

EncoderLayer make_encoder_layer(int hidden, int ff_dim, std::mt19937_64& rng) {
  EncoderLayer layer;
  layer.attn_norm = make_layer_norm(hidden);
  layer.attn.query = make_linear(hidden, hidden, rng);
  layer.attn.key = make_linear(hidden, hidden, rng);
  layer.attn.value = make_linear(hidden, hidden, rng);
  layer.attn.output = make_linear(hidden, hidden, rng);
  layer.ff_norm = make_layer_norm(hidden);
  layer.ff.up = make_linear(hidden, ff_dim, rng);
  layer.ff.down = make_linear(ff_dim, hidden, rng);
  return layer;
}

Matrix linear_forward(const Linear& l, const Matrix& x) {
  if (x.cols() != l.weight.rows()) throw InvalidInput("linear: input width mismatch");
  Matrix y(x.rows(), l.weight.cols());
  y.noalias() = x * l.weight;
  y.rowwise() += l.bias.row(0);
  return y;
}

Matrix linear_backward(const Linear& l, const Matrix& x, const Matrix& dy, Linear& grad) {
  grad.weight.noalias() += x.transpose() * dy;
  grad.bias += dy.colwise().sum();
  Matrix dx(dy.rows(), l.weight.rows());
  dx.noalias() = dy * l.weight.transpose();
  return dx;
}

Matrix layer_norm_forward(const LayerNorm& ln, const Matrix& x, LayerNormCache* cache) {
  const double width = static_cast<double>(x.cols());
  const Eigen::VectorXd mean = x.rowwise().sum() / width;
  Matrix centered = x.colwise() - mean;
  const Eigen::VectorXd var = centered.array().square().rowwise().sum() / width;
  const Eigen::VectorXd inv_std = (var.array() + kLayerNormEps).rsqrt();
  centered.array().colwise() *= inv_std.array();
  Matrix y = centered.array().rowwise() * ln.gain.row(0).array();
  y.rowwise() += ln.shift.row(0);
  if (cache != nullptr) {
    cache->normalized = std::move(centered);
    cache->inv_std = inv_std;
  }
  return y;
}

Matrix layer_norm_backward(const LayerNorm& ln, const LayerNormCache& cache, const Matrix& dy, LayerNorm& grad) {
  const Matrix& xhat = cache.normalized;
  grad.gain += (dy.array() * xhat.array()).colwise().sum().matrix();
  grad.shift += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * ln.gain.row(0).array();
  const double width = static_cast<double>(dy.cols());
  const Eigen::VectorXd mean_d = dxhat.rowwise().sum() / width;
  const Eigen::VectorXd mean_dx = (dxhat.array() * xhat.array()).rowwise().sum() / width;
  Matrix dx = dxhat.colwise() - mean_d;
  dx -= (xhat.array().colwise() * mean_dx.array()).matrix();
  dx.array().colwise() *= cache.inv_std.array();
  return dx;
}

Matrix attention_forward(const SelfAttention& a, int heads, const Matrix& x, AttentionCache* cache) {
  const Eigen::Index frames = x.rows();
  const Eigen::Index hidden = a.query.weight.cols();
  const Eigen::Index head_dim = hidden / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Matrix q = linear_forward(a.query, x);
  Matrix k = linear_forward(a.key, x);
  Matrix v = linear_forward(a.value, x);
  Matrix context(frames, hidden);
  std::vector<Matrix> probs(heads);
  for (int h = 0; h < heads; ++h) {
    const auto cols = Eigen::seqN(h * head_dim, head_dim);
    Matrix scores(frames, frames);
    scores.noalias() = q(Eigen::all, cols) * k(Eigen::all, cols).transpose();
    scores *= scale;
    const Eigen::VectorXd row_max = scores.rowwise().maxCoeff();
    scores = (scores.colwise() - row_max).array().exp();
    const Eigen::VectorXd row_sum = scores.rowwise().sum();
    scores.array().colwise() /= row_sum.array();
    context(Eigen::all, cols).noalias() = scores * v(Eigen::all, cols);
    probs[h] = std::move(scores);
  }
  Matrix y = linear_forward(a.output, context);
  if (cache != nullptr) {
    cache->input = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->context = std::move(context);
    cache->probs = std::move(probs);
  }
  return y;
}

Matrix attention_backward(const SelfAttention& a, int heads, const AttentionCache& cache, const Matrix& dy,
                          SelfAttention& grad) {
  const Eigen::Index frames = cache.input.rows();
  const Eigen::Index hidden = a.query.weight.cols();
  const Eigen::Index head_dim = hidden / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  const Matrix dcontext = linear_backward(a.output, cache.context, dy, grad.output);
  Matrix dq(frames, hidden), dk(frames, hidden), dv(frames, hidden);
  for (int h = 0; h < heads; ++h) {
    const auto cols = Eigen::seqN(h * head_dim, head_dim);
    const Matrix& p = cache.probs[h];
    const Matrix dch = dcontext(Eigen::all, cols);
    dv(Eigen::all, cols).noalias() = p.transpose() * dch;
    Matrix dp(frames, frames);
    dp.noalias() = dch * cache.v(Eigen::all, cols).transpose();
    const Eigen::VectorXd inner = (dp.array() * p.array()).rowwise().sum();
    Matrix ds = (p.array() * (dp.colwise() - inner).array()).matrix() * scale;
    dq(Eigen::all, cols).noalias() = ds * cache.k(Eigen::all, cols);
    dk(Eigen::all, cols).noalias() = ds.transpose() * cache.q(Eigen::all, cols);
  }
  Matrix dx = linear_backward(a.query, cache.input, dq, grad.query);
  dx += linear_backward(a.key, cache.input, dk, grad.key);
  dx += linear_backward(a.value, cache.input, dv, grad.value);
  return dx;
}

double gelu(double x) {
  const double c = std::sqrt(2.0 / std::numbers::pi);
  return 0.5 * x * (1.0 + std::tanh(c * (x + kGeluC * x * x * x)));
}

double gelu_grad(double x) {
  const double c = std::sqrt(2.0 / std::numbers::pi);
  const double th = std::tanh(c * (x + kGeluC * x * x * x));
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * c * (1.0 + 3.0 * kGeluC * x * x);
}

Matrix feed_forward(const FeedForward& ff, const Matrix& x, FeedForwardCache* cache) {
  Matrix pre = linear_forward(ff.up, x);
  Matrix act = pre.unaryExpr(&gelu);
  Matrix y = linear_forward(ff.down, act);
  if (cache != nullptr) {
    cache->input = x;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return y;
}

Matrix feed_forward_backward(const FeedForward& ff, const FeedForwardCache& cache, const Matrix& dy,
                             FeedForward& grad) {
  Matrix dact = linear_backward(ff.down, cache.act, dy, grad.down);
  dact.array() *= cache.pre.unaryExpr(&gelu_grad).array();
  return linear_backward(ff.up, cache.input, dact, grad.up);
}

Matrix encoder_layer_forward(const EncoderLayer& layer, int heads, const Matrix& x, EncoderLayerCache* cache) {
  const Matrix n1 = layer_norm_forward(layer.attn_norm, x, cache ? &cache->attn_norm : nullptr);
  Matrix h = x + attention_forward(layer.attn, heads, n1, cache ? &cache->attn : nullptr);
  const Matrix n2 = layer_norm_forward(layer.ff_norm, h, cache ? &cache->ff_norm : nullptr);
  h += feed_forward(layer.ff, n2, cache ? &cache->ff : nullptr);
  return h;
}

Matrix encoder_layer_backward(const EncoderLayer& layer, int heads, const EncoderLayerCache& cache,
                              const Matrix& dy, EncoderLayer& grad) {
  Matrix dh = dy;
  const Matrix dn2 = feed_forward_backward(layer.ff, cache.ff, dy, grad.ff);
  dh += layer_norm_backward(layer.ff_norm, cache.ff_norm, dn2, grad.ff_norm);
  const Matrix dn1 = attention_backward(layer.attn, heads, cache.attn, dh, grad.attn);
  dh += layer_norm_backward(layer.attn_norm, cache.attn_norm, dn1, grad.attn_norm);
  return dh;
}

Matrix log_softmax_rows(const Matrix& z) {
  const Eigen::VectorXd row_max = z.rowwise().maxCoeff();
  Matrix shifted = z.colwise() - row_max;
  const Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log();
  shifted.colwise() -= lse;
  return shifted;
}

Matrix log_softmax_backward(const Matrix& logp, const Matrix& dlogp) {
  const Eigen::VectorXd total = dlogp.rowwise().sum();
  return dlogp - (logp.array().exp().colwise() * total.array()).matrix();
}

Matrix sinusoidal_positions(int frames, int dim) {
  Matrix pe(frames, dim);
  for (int t = 0; t < frames; ++t) {
    for (int i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / dim);
      pe(t, i) = i % 2 == 0 ? std::sin(t * rate) : std::cos(t * rate);
    }
  }
  return pe;
}

}  // namespace punctasr::nn
