#include "rankvqa/layers.hpp"

#include <cmath>

namespace rankvqa {

Tensor glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows == 0 || cols == 0) {
    throw ShapeError("glorot_uniform: zero dimension in " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::vector<double> data(rows * cols);
  for (double& v : data) v = rng.uniform(-limit, limit);
  return Tensor::from_data({rows, cols}, std::move(data));
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != in_features()) {
    throw ShapeError("linear: input " + shape_str(x.shape()) +
                     " does not match weight " + shape_str(weight.shape()));
  }
  return add_rowwise(matmul(x, transpose(weight)), bias);
}

Linear make_linear(std::size_t in, std::size_t out, Rng& rng) {
  Linear layer;
  layer.weight = glorot_uniform(out, in, rng);
  layer.weight.set_requires_grad(true);
  layer.bias = Tensor::zeros({out});
  layer.bias.set_requires_grad(true);
  return layer;
}

Tensor Dropout::forward(const Tensor& x, Mode mode, Rng& rng) const {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout: rate " + std::to_string(rate) +
                      " must lie in [0, 1)");
  }
  if (mode == Mode::kEvaluation || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = rng.bernoulli(rate) ? 0.0 : keep_scale;
  return mul(x, Tensor::from_data(x.shape(), std::move(mask)));
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError("attention: q/k/v shapes disagree: " +
                     shape_str(q.shape()) + " vs " + shape_str(k.shape()) +
                     " vs " + shape_str(v.shape()));
  }
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Tensor weights = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_dk));
  return matmul(weights, v);
}

Tensor MultiHeadAttention::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != d_model) {
    throw ShapeError("multi_head_attention: input " + shape_str(x.shape()) +
                     " does not match d_model " + std::to_string(d_model));
  }
  Tensor q = w_q.forward(x);
  Tensor k = w_k.forward(x);
  Tensor v = w_v.forward(x);
  std::vector<Tensor> head_outputs;
  head_outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t start = h * d_k;
    head_outputs.push_back(attention(slice(q, 1, start, d_k),
                                     slice(k, 1, start, d_k),
                                     slice(v, 1, start, d_k)));
  }
  Tensor joined = heads == 1 ? head_outputs[0]
                             : concat(std::span<const Tensor>(head_outputs), 1);
  return w_o.forward(joined);
}

MultiHeadAttention make_multi_head_attention(std::size_t d_model,
                                             std::size_t heads, Rng& rng) {
  if (heads == 0 || d_model == 0 || d_model % heads != 0) {
    throw ConfigError("multi_head_attention: d_model " +
                      std::to_string(d_model) + " not divisible by heads " +
                      std::to_string(heads));
  }
  MultiHeadAttention mha;
  mha.heads = heads;
  mha.d_model = d_model;
  mha.d_k = d_model / heads;
  mha.w_q = make_linear(d_model, d_model, rng);
  mha.w_k = make_linear(d_model, d_model, rng);
  mha.w_v = make_linear(d_model, d_model, rng);
  mha.w_o = make_linear(d_model, d_model, rng);
  return mha;
}

Tensor FeedForward::forward(const Tensor& x) const {
  return w2.forward(relu(w1.forward(x)));
}

FeedForward make_feed_forward(std::size_t d_model, std::size_t d_ff, Rng& rng) {
  FeedForward ffn;
  ffn.w1 = make_linear(d_model, d_ff, rng);
  ffn.w2 = make_linear(d_ff, d_model, rng);
  return ffn;
}

Tensor Mlp::forward(const Tensor& x, Mode mode, Rng& rng) const {
  Tensor h = x;
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    h = dropout.forward(relu(layers[i].forward(h)), mode, rng);
  }
  return layers.back().forward(h);
}

Mlp make_mlp(std::size_t in, const std::vector<std::size_t>& hidden,
             std::size_t out, double dropout_rate, Rng& rng) {
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw ConfigError("mlp: dropout rate " + std::to_string(dropout_rate) +
                      " must lie in [0, 1)");
  }
  Mlp mlp;
  mlp.dropout.rate = dropout_rate;
  std::size_t width = in;
  for (std::size_t h : hidden) {
    mlp.layers.push_back(make_linear(width, h, rng));
    width = h;
  }
  mlp.layers.push_back(make_linear(width, out, rng));
  return mlp;
}

}  // namespace rankvqa
