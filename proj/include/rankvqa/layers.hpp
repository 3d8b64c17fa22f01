#pragma once

#include <cstddef>
#include <vector>

#include "rankvqa/rng.hpp"
#include "rankvqa/tensor.hpp"

namespace rankvqa {

// Forward-pass mode: training enables dropout, evaluation is deterministic.
enum class Mode { kTraining, kEvaluation };

// Glorot-uniform matrix [rows x cols]: entries ~ U(-L, L) with
// L = sqrt(6 / (rows + cols)), drawn row-major from rng.
Tensor glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng);

// Fully connected map. forward computes x . W^T + b per row.
struct Linear {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]

  std::size_t in_features() const { return weight.cols(); }
  std::size_t out_features() const { return weight.rows(); }
  Tensor forward(const Tensor& x) const;  // [L x in] -> [L x out]
};

// Glorot weights, zero bias; weight entries consumed from rng row-major.
Linear make_linear(std::size_t in, std::size_t out, Rng& rng);

// Inverted dropout: training zeroes each element with probability rate and
// scales survivors by 1/(1-rate); evaluation is exactly the identity.
struct Dropout {
  double rate = 0.5;
  Tensor forward(const Tensor& x, Mode mode, Rng& rng) const;
};

// Scaled dot-product attention: softmax_rows(q . k^T / sqrt(d_k)) . v,
// with q, k, v all [L x d_k].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

struct MultiHeadAttention {
  std::size_t heads = 1;
  std::size_t d_model = 0;
  std::size_t d_k = 0;  // d_model / heads
  Linear w_q, w_k, w_v, w_o;

  // Projects x by w_q/w_k/w_v, runs attention per contiguous column slice of
  // width d_k, concatenates the head outputs, applies w_o.
  Tensor forward(const Tensor& x) const;  // [L x d_model] -> [L x d_model]
};

MultiHeadAttention make_multi_head_attention(std::size_t d_model,
                                             std::size_t heads, Rng& rng);

// Position-wise feed-forward: relu(x . W1^T + b1) . W2^T + b2.
struct FeedForward {
  Linear w1;  // d_model -> d_ff
  Linear w2;  // d_ff -> d_model

  Tensor forward(const Tensor& x) const;
};

FeedForward make_feed_forward(std::size_t d_model, std::size_t d_ff, Rng& rng);

// Linear stack with ReLU between layers and dropout after each hidden layer;
// the final layer emits raw logits.
struct Mlp {
  std::vector<Linear> layers;
  Dropout dropout;

  Tensor forward(const Tensor& x, Mode mode, Rng& rng) const;
};

Mlp make_mlp(std::size_t in, const std::vector<std::size_t>& hidden,
             std::size_t out, double dropout_rate, Rng& rng);

}  // namespace rankvqa
