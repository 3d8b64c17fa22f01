#include "rankvqa/layers.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"
#include "rankvqa/rng.hpp"

using namespace rankvqa;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng) {
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = rng.normal();
  return Tensor::from_data(shape, std::move(data));
}

// Finite differences of eval_loss with respect to a live parameter tensor,
// perturbing it in place and restoring afterwards.
Tensor fd_for_param(Tensor param, const std::function<double()>& eval_loss,
                    double h = 1e-5) {
  const std::vector<double> original(param.data().begin(), param.data().end());
  Tensor probe = Tensor::from_data(param.shape(), original);
  Tensor fd = finite_diff_grad(
      [&](const Tensor& candidate) {
        auto dst = param.mutable_data();
        auto src = candidate.data();
        std::copy(src.begin(), src.end(), dst.begin());
        return eval_loss();
      },
      probe, h);
  auto dst = param.mutable_data();
  std::copy(original.begin(), original.end(), dst.begin());
  return fd;
}

}  // namespace

TEST_CASE("fresh linear layers have zero bias and seed-deterministic weights") {
  Rng rng_a(5), rng_b(5);
  Linear a = make_linear(7, 9, rng_a);
  Linear b = make_linear(7, 9, rng_b);
  for (double v : a.bias.data()) CHECK(v == 0.0);
  for (std::size_t i = 0; i < a.weight.numel(); ++i) {
    CHECK(a.weight.data()[i] == b.weight.data()[i]);
  }
  CHECK(a.weight.requires_grad());
  CHECK(a.bias.requires_grad());
}

TEST_CASE("glorot weights hit the expected variance on a 256x256 layer") {
  Rng rng(6);
  Linear layer = make_linear(256, 256, rng);
  double s1 = 0.0, s2 = 0.0;
  for (double v : layer.weight.data()) {
    s1 += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(layer.weight.numel());
  const double var = s2 / n - (s1 / n) * (s1 / n);
  const double target = 2.0 / (256.0 + 256.0);
  CHECK(std::abs(var - target) <= 0.2 * target);
}

TEST_CASE("linear rejects zero dimensions") {
  Rng rng(7);
  CHECK_THROWS_AS(make_linear(0, 3, rng), ShapeError);
  CHECK_THROWS_AS(make_linear(3, 0, rng), ShapeError);
}

TEST_CASE("attention with one position returns v exactly") {
  Rng rng(8);
  Tensor q = random_tensor({1, 4}, rng);
  Tensor k = random_tensor({1, 4}, rng);
  Tensor v = random_tensor({1, 4}, rng);
  Tensor out = attention(q, k, v);
  for (std::size_t j = 0; j < 4; ++j) CHECK(out.at(0, j) == v.at(0, j));
}

TEST_CASE("identical key rows give uniform attention weights") {
  Rng rng(9);
  Tensor q = random_tensor({3, 4}, rng);
  Tensor k_row = random_tensor({1, 4}, rng);
  Tensor k = concat(concat(k_row, k_row, 0), k_row, 0);
  Tensor v = random_tensor({3, 4}, rng);
  Tensor out = attention(q, k, v);
  // uniform weights average the value rows
  for (std::size_t j = 0; j < 4; ++j) {
    const double expected = (v.at(0, j) + v.at(1, j) + v.at(2, j)) / 3.0;
    CHECK(out.at(0, j) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(out.at(2, j) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("attention matches an independently scripted 2x2 evaluation") {
  Tensor eye = Tensor::from_rows({{1, 0}, {0, 1}});
  Tensor out = attention(eye, eye, eye);

  // scores = I / sqrt(2); each row softmaxes [s, 0] or [0, s]
  const double s = 1.0 / std::sqrt(2.0);
  const double w_hi = std::exp(s) / (std::exp(s) + std::exp(0.0));
  const double w_lo = std::exp(0.0) / (std::exp(s) + std::exp(0.0));
  CHECK(std::abs(out.at(0, 0) - w_hi) <= 1e-12);
  CHECK(std::abs(out.at(0, 1) - w_lo) <= 1e-12);
  CHECK(std::abs(out.at(1, 0) - w_lo) <= 1e-12);
  CHECK(std::abs(out.at(1, 1) - w_hi) <= 1e-12);
}

TEST_CASE("attention rejects mismatched shapes") {
  CHECK_THROWS_AS(attention(Tensor::zeros({2, 3}), Tensor::zeros({2, 4}),
                            Tensor::zeros({2, 3})),
                  ShapeError);
}

TEST_CASE("multi-head attention on a length-1 sequence is w_o of w_v") {
  Rng rng(10);
  MultiHeadAttention mha = make_multi_head_attention(8, 2, rng);
  Tensor x = random_tensor({1, 8}, rng);
  Tensor direct = mha.w_o.forward(mha.w_v.forward(x));
  Tensor out = mha.forward(x);
  for (std::size_t j = 0; j < 8; ++j) CHECK(out.at(0, j) == direct.at(0, j));
}

TEST_CASE("one head reduces to plain attention with full-width projections") {
  Rng rng(11);
  MultiHeadAttention mha = make_multi_head_attention(6, 1, rng);
  Tensor x = random_tensor({4, 6}, rng);
  Tensor expected = mha.w_o.forward(attention(
      mha.w_q.forward(x), mha.w_k.forward(x), mha.w_v.forward(x)));
  Tensor out = mha.forward(x);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    CHECK(out.data()[i] == expected.data()[i]);
  }
}

TEST_CASE("per-head attention weight rows sum to 1") {
  Rng rng(12);
  MultiHeadAttention mha = make_multi_head_attention(8, 4, rng);
  Tensor x = random_tensor({5, 8}, rng);
  Tensor q = mha.w_q.forward(x);
  Tensor k = mha.w_k.forward(x);
  for (std::size_t h = 0; h < mha.heads; ++h) {
    Tensor qh = slice(q, 1, h * mha.d_k, mha.d_k);
    Tensor kh = slice(k, 1, h * mha.d_k, mha.d_k);
    Tensor weights = softmax_rows(
        scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(double(mha.d_k))));
    for (std::size_t i = 0; i < weights.rows(); ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < weights.cols(); ++j) total += weights.at(i, j);
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("multi-head attention is permutation-equivariant") {
  Rng rng(13);
  MultiHeadAttention mha = make_multi_head_attention(8, 2, rng);
  Tensor x = random_tensor({4, 8}, rng);
  Tensor out = mha.forward(x);

  // rotate rows by one
  Tensor rotated = concat(slice(x, 0, 1, 3), slice(x, 0, 0, 1), 0);
  Tensor out_rotated = mha.forward(rotated);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(out_rotated.at(i, j) ==
            doctest::Approx(out.at((i + 1) % 4, j)).epsilon(1e-12));
    }
  }
}

TEST_CASE("multi-head attention rejects bad configuration and input") {
  Rng rng(14);
  CHECK_THROWS_AS(make_multi_head_attention(8, 3, rng), ConfigError);
  CHECK_THROWS_AS(make_multi_head_attention(8, 0, rng), ConfigError);
  MultiHeadAttention mha = make_multi_head_attention(8, 2, rng);
  CHECK_THROWS_AS(mha.forward(Tensor::zeros({2, 6})), ShapeError);
}

TEST_CASE("multi-head attention gradients match finite differences") {
  Rng rng(15);
  MultiHeadAttention mha = make_multi_head_attention(6, 2, rng);
  Tensor x = random_tensor({3, 6}, rng);
  Tensor weights = random_tensor({3, 6}, rng);
  x.set_requires_grad(true);

  auto eval_loss = [&] { return sum(mul(mha.forward(x), weights)).value(); };

  sum(mul(mha.forward(x), weights)).backward();
  Tensor fd_x = finite_diff_grad(
      [&](const Tensor& t) { return sum(mul(mha.forward(t), weights)).value(); },
      x, 1e-5);
  CHECK(max_relative_error(x.grad(), fd_x.data()) <= 1e-4);

  for (Tensor param : {mha.w_q.weight, mha.w_k.weight, mha.w_v.weight,
                       mha.w_o.weight, mha.w_q.bias, mha.w_o.bias}) {
    Tensor fd = fd_for_param(param, eval_loss);
    CHECK(max_relative_error(param.grad(), fd.data()) <= 1e-4);
  }
}

TEST_CASE("feed-forward hand cases and gradient") {
  Rng rng(16);
  SUBCASE("zero parameters give zero output") {
    FeedForward ffn;
    ffn.w1 = {Tensor::zeros({5, 3}), Tensor::zeros({5})};
    ffn.w2 = {Tensor::zeros({3, 5}), Tensor::zeros({3})};
    Tensor out = ffn.forward(random_tensor({2, 3}, rng));
    for (double v : out.data()) CHECK(v == 0.0);
  }
  SUBCASE("identity weights pass nonnegative input through") {
    Tensor eye = Tensor::from_rows({{1, 0}, {0, 1}});
    FeedForward ffn;
    ffn.w1 = {eye, Tensor::zeros({2})};
    ffn.w2 = {eye, Tensor::zeros({2})};
    Tensor x = Tensor::from_rows({{0.5, 2.0}, {0.0, 1.25}});
    Tensor out = ffn.forward(x);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(out.data()[i] == x.data()[i]);
  }
  SUBCASE("gradient matches finite differences") {
    FeedForward ffn = make_feed_forward(4, 6, rng);
    Tensor x = random_tensor({3, 4}, rng);
    Tensor weights = random_tensor({3, 4}, rng);
    auto eval_loss = [&] { return sum(mul(ffn.forward(x), weights)).value(); };
    sum(mul(ffn.forward(x), weights)).backward();
    for (Tensor param : {ffn.w1.weight, ffn.w1.bias, ffn.w2.weight, ffn.w2.bias}) {
      Tensor fd = fd_for_param(param, eval_loss);
      CHECK(max_relative_error(param.grad(), fd.data()) <= 1e-4);
    }
  }
}

TEST_CASE("dropout is the identity in evaluation mode and at rate 0") {
  Rng rng(17);
  Tensor x = random_tensor({4, 5}, rng);
  Dropout d{0.5};
  Tensor eval_out = d.forward(x, Mode::kEvaluation, rng);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(eval_out.data()[i] == x.data()[i]);
  }
  Dropout zero{0.0};
  Tensor train_out = zero.forward(x, Mode::kTraining, rng);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(train_out.data()[i] == x.data()[i]);
  }
}

TEST_CASE("dropout keeps the mean of a ones vector near 1 at rate 0.5") {
  Rng rng(18);
  Dropout d{0.5};
  Tensor ones = Tensor::constant({100000}, 1.0);
  Tensor out = d.forward(ones, Mode::kTraining, rng);
  double acc = 0.0;
  for (double v : out.data()) {
    CHECK((v == 0.0 || v == 2.0));
    acc += v;
  }
  CHECK(std::abs(acc / 100000.0 - 1.0) <= 0.01);
}

TEST_CASE("dropout rejects rates outside [0,1)") {
  Rng rng(19);
  Tensor x = Tensor::zeros({2, 2});
  CHECK_THROWS_AS(Dropout{1.0}.forward(x, Mode::kTraining, rng), ConfigError);
  CHECK_THROWS_AS(Dropout{-0.1}.forward(x, Mode::kTraining, rng), ConfigError);
}

TEST_CASE("mlp stacks hidden layers and emits raw logits") {
  Rng rng(20);
  Mlp mlp = make_mlp(6, {8, 4}, 3, 0.0, rng);
  CHECK(mlp.layers.size() == 3);
  Tensor x = random_tensor({2, 6}, rng);
  Tensor out = mlp.forward(x, Mode::kEvaluation, rng);
  CHECK(out.shape() == Shape{2, 3});

  // the final layer is affine: negative logits must be reachable
  bool any_negative = false;
  for (int trial = 0; trial < 20 && !any_negative; ++trial) {
    Tensor probe = mlp.forward(random_tensor({1, 6}, rng), Mode::kEvaluation, rng);
    for (double v : probe.data()) any_negative = any_negative || v < 0.0;
  }
  CHECK(any_negative);
}
