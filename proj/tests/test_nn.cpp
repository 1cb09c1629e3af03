#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "seqplace/nn/checkpoint.hpp"
#include "seqplace/nn/grad_check.hpp"
#include "seqplace/nn/ops.hpp"

using namespace seqplace;
using nn::Tensor;
using nn::Var;

namespace {

template <typename T>
Tensor<T> rand_tensor(std::vector<std::size_t> shape, uint64_t seed, double lo = -1.0,
                      double hi = 1.0) {
  Tensor<T> t = Tensor<T>::zeros(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.v) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  REQUIRE(a.same_shape(b));
  T worst = T(0);
  for (std::size_t i = 0; i < a.v.size(); ++i) worst = std::max(worst, std::abs(a.v[i] - b.v[i]));
  return worst;
}

/** Circularly shifts the columns of a rank-2 or rank-3 tensor. */
template <typename T>
Tensor<T> shift_cols(const Tensor<T>& x, std::size_t s) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const std::size_t w = x.shape.back();
  const std::size_t rows = x.numel() / w;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < w; ++j) {
      out.v[r * w + j] = x.v[r * w + (j + s) % w];
    }
  }
  return out;
}

template <typename T>
nn::AttentionParams<T> rand_attn(nn::Tape<T>& tape, std::size_t d, uint64_t seed) {
  nn::AttentionParams<T> p;
  p.wq = tape.constant(rand_tensor<T>({d, d}, seed + 0, -0.4, 0.4));
  p.bq = tape.constant(rand_tensor<T>({d}, seed + 1));
  p.wk = tape.constant(rand_tensor<T>({d, d}, seed + 2, -0.4, 0.4));
  p.bk = tape.constant(rand_tensor<T>({d}, seed + 3));
  p.wv = tape.constant(rand_tensor<T>({d, d}, seed + 4, -0.4, 0.4));
  p.bv = tape.constant(rand_tensor<T>({d}, seed + 5));
  p.wo = tape.constant(rand_tensor<T>({d, d}, seed + 6, -0.4, 0.4));
  p.bo = tape.constant(rand_tensor<T>({d}, seed + 7));
  return p;
}

template <typename T>
nn::TransformerParams<T> rand_transformer(nn::Tape<T>& tape, std::size_t d, std::size_t f,
                                          uint64_t seed) {
  nn::TransformerParams<T> p;
  p.attn = rand_attn(tape, d, seed);
  p.ln1_gamma = tape.constant(rand_tensor<T>({d}, seed + 8, 0.5, 1.5));
  p.ln1_beta = tape.constant(rand_tensor<T>({d}, seed + 9));
  p.ffn_w1 = tape.constant(rand_tensor<T>({f * d, d}, seed + 10, -0.4, 0.4));
  p.ffn_b1 = tape.constant(rand_tensor<T>({f * d}, seed + 11));
  p.ffn_w2 = tape.constant(rand_tensor<T>({d, f * d}, seed + 12, -0.4, 0.4));
  p.ffn_b2 = tape.constant(rand_tensor<T>({d}, seed + 13));
  p.ln2_gamma = tape.constant(rand_tensor<T>({d}, seed + 14, 0.5, 1.5));
  p.ln2_beta = tape.constant(rand_tensor<T>({d}, seed + 15));
  return p;
}

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
  Tensor<float> t = Tensor<float>::zeros({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.rank() == 3);
  CHECK(t.shape_string() == "2x3x4");
  t.at(1, 2, 3) = 5.0f;
  CHECK(t.v[23] == 5.0f);
  CHECK_THROWS_AS(Tensor<float>({2, 2}, {1.0f, 2.0f, 3.0f}), ConfigError);
}

TEST_CASE("tape backward accumulates through shared nodes") {
  nn::Tape<float> tape;
  auto x = tape.leaf(Tensor<float>::scalar(3.0f), true);
  auto y = nn::mul(x, x);              // x^2
  auto z = nn::add(y, x);              // x^2 + x
  tape.backward(nn::sum_all(z));
  CHECK(x.grad().at(0) == doctest::Approx(7.0f));  // 2x + 1 at x=3

  nn::Tape<float> frozen(false);
  auto c = frozen.leaf(Tensor<float>::scalar(1.0f), true);
  CHECK_FALSE(frozen.needs_grad(c.id()));
  CHECK_THROWS_AS(frozen.backward(c), ConfigError);
}

TEST_CASE("backward requires a scalar root that tracks gradients") {
  nn::Tape<float> tape;
  auto x = tape.leaf(rand_tensor<float>({3}, 1), true);
  CHECK_THROWS_AS(tape.backward(x), ConfigError);
  auto c = tape.constant(Tensor<float>::scalar(1.0f));
  CHECK_THROWS_AS(tape.backward(c), ConfigError);
}

TEST_CASE("conv2d: 1x1 unit kernel is the identity") {
  nn::Tape<float> tape(false);
  auto x = tape.constant(rand_tensor<float>({1, 4, 6}, 2));
  auto k = tape.constant(Tensor<float>({1, 1, 1, 1}, {1.0f}));
  auto b = tape.constant(Tensor<float>::zeros({1}));
  auto y = nn::conv2d(x, k, b, 1);
  CHECK(max_abs_diff(y.value(), x.value()) == 0.0f);
}

TEST_CASE("conv2d: kernel height 5 with stride 2 maps h=32 to 14") {
  nn::Tape<float> tape(false);
  auto x = tape.constant(rand_tensor<float>({1, 32, 8}, 3));
  auto k = tape.constant(rand_tensor<float>({16, 1, 5, 1}, 4));
  auto b = tape.constant(Tensor<float>::zeros({16}));
  auto y = nn::conv2d(x, k, b, 2);
  CHECK(y.value().shape == std::vector<std::size_t>{16, 14, 8});
}

TEST_CASE("conv2d rejects wide kernels without circular padding") {
  nn::Tape<float> tape(false);
  auto x = tape.constant(rand_tensor<float>({1, 4, 8}, 5));
  auto k = tape.constant(rand_tensor<float>({2, 1, 1, 3}, 6));
  auto b = tape.constant(Tensor<float>::zeros({2}));
  CHECK_THROWS_WITH_AS(nn::conv2d(x, k, b, 1),
                       doctest::Contains("equivariance violation"), ConfigError);
  CHECK_NOTHROW(nn::conv2d(x, k, b, 1, nn::WidthPadding::Circular));
}

TEST_CASE("conv2d commutes with column shifts") {
  nn::Tape<float> tape(false);
  const auto xt = rand_tensor<float>({2, 8, 10}, 7);
  auto k = tape.constant(rand_tensor<float>({3, 2, 3, 1}, 8));
  auto b = tape.constant(rand_tensor<float>({3}, 9));
  auto base = nn::conv2d(tape.constant(xt), k, b, 2);
  auto shifted = nn::conv2d(tape.constant(shift_cols(xt, 4)), k, b, 2);
  CHECK(max_abs_diff(shifted.value(), shift_cols(base.value(), 4)) == 0.0f);

  auto kw = tape.constant(rand_tensor<float>({3, 2, 3, 3}, 10));
  auto base_w = nn::conv2d(tape.constant(xt), kw, b, 2, nn::WidthPadding::Circular);
  auto shifted_w =
      nn::conv2d(tape.constant(shift_cols(xt, 4)), kw, b, 2, nn::WidthPadding::Circular);
  CHECK(max_abs_diff(shifted_w.value(), shift_cols(base_w.value(), 4)) == 0.0f);
}

TEST_CASE("mhsa with n=1 and identity projections returns the value projection") {
  nn::Tape<float> tape(false);
  const std::size_t d = 4;
  nn::AttentionParams<float> p;
  Tensor<float> eye = Tensor<float>::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i) eye.at(i, i) = 1.0f;
  p.wq = p.wk = p.wv = p.wo = tape.constant(eye);
  p.bq = p.bk = p.bv = p.bo = tape.constant(Tensor<float>::zeros({d}));
  const auto xt = rand_tensor<float>({d, 1}, 11);
  auto y = nn::mhsa(tape.constant(xt), p, 2);
  CHECK(max_abs_diff(y.value(), xt) < 1e-6f);
}

TEST_CASE("attention weight rows sum to one") {
  nn::Tape<float> tape(false);
  auto x = tape.constant(rand_tensor<float>({6, 9}, 12));
  auto result = nn::mhsa_with_weights(x, rand_attn<float>(tape, 6, 20), 3);
  REQUIRE(result.weights.size() == 3);
  for (const auto& a : result.weights) {
    REQUIRE(a.value().shape == std::vector<std::size_t>{9, 9});
    for (std::size_t j = 0; j < 9; ++j) {
      float s = 0.0f;
      for (std::size_t i = 0; i < 9; ++i) s += a.value().at(j, i);
      CHECK(s == doctest::Approx(1.0f).epsilon(1e-6));
    }
  }
}

TEST_CASE("mhsa and transformer_block are column-shift equivariant") {
  nn::Tape<float> tape(false);
  const auto xt = rand_tensor<float>({6, 12}, 13);
  const auto attn = rand_attn<float>(tape, 6, 30);
  auto base = nn::mhsa(tape.constant(xt), attn, 2);
  auto shifted = nn::mhsa(tape.constant(shift_cols(xt, 5)), attn, 2);
  CHECK(max_abs_diff(shifted.value(), shift_cols(base.value(), 5)) < 1e-5f);

  const auto block = rand_transformer<float>(tape, 6, 2, 50);
  auto base_b = nn::transformer_block(tape.constant(xt), block, 2);
  auto shifted_b = nn::transformer_block(tape.constant(shift_cols(xt, 5)), block, 2);
  CHECK(base_b.value().shape == xt.shape);
  CHECK(max_abs_diff(shifted_b.value(), shift_cols(base_b.value(), 5)) < 1e-5f);
}

TEST_CASE("mhsa rejects a head count that does not divide the feature dim") {
  nn::Tape<float> tape(false);
  auto x = tape.constant(rand_tensor<float>({6, 4}, 14));
  CHECK_THROWS_AS(nn::mhsa(x, rand_attn<float>(tape, 6, 40), 4), ConfigError);
}

TEST_CASE("transformer with zero FFN and pass-through second norm") {
  // With ffn weights/biases at zero the FFN contributes nothing, so the block
  // reduces to the normalized attention residual, then the second layer norm.
  nn::Tape<float> tape(false);
  const std::size_t d = 4;
  auto block = rand_transformer<float>(tape, d, 2, 60);
  block.ffn_w1 = tape.constant(Tensor<float>::zeros({2 * d, d}));
  block.ffn_b1 = tape.constant(Tensor<float>::zeros({2 * d}));
  block.ffn_w2 = tape.constant(Tensor<float>::zeros({d, 2 * d}));
  block.ffn_b2 = tape.constant(Tensor<float>::zeros({d}));

  const auto xt = rand_tensor<float>({d, 7}, 15);
  auto x = tape.constant(xt);
  auto full = nn::transformer_block(x, block, 2);
  auto manual = nn::layer_norm_cols(
      nn::layer_norm_cols(nn::add(x, nn::mhsa(x, block.attn, 2)), block.ln1_gamma, block.ln1_beta),
      block.ln2_gamma, block.ln2_beta);
  CHECK(max_abs_diff(full.value(), manual.value()) == 0.0f);
}

TEST_CASE("gradients of elementwise and reduction ops match finite differences") {
  using D = double;
  const auto check = [](const std::function<Var<D>(nn::Tape<D>&, Var<D>)>& fn,
                        const Tensor<D>& input, double tol) {
    CHECK(nn::grad_check<D>(fn, input) < tol);
  };

  check([](nn::Tape<D>&, Var<D> x) { return nn::relu(x); },
        rand_tensor<D>({12}, 16, 0.2, 1.0), 1e-7);
  check([](nn::Tape<D>&, Var<D> x) { return nn::softplus(x); }, rand_tensor<D>({12}, 17), 1e-7);
  check([](nn::Tape<D>&, Var<D> x) { return nn::scale_const(nn::add_const(x, D(0.3)), D(1.7)); },
        rand_tensor<D>({8}, 18), 1e-7);
  check([](nn::Tape<D>& t, Var<D> x) { return nn::mul(x, t.constant(rand_tensor<D>({8}, 19))); },
        rand_tensor<D>({8}, 20), 1e-7);
  check([](nn::Tape<D>&, Var<D> x) { return nn::sum_all(x); }, rand_tensor<D>({3, 5}, 21), 1e-7);
  check([](nn::Tape<D>&, Var<D> x) { return nn::l2_normalize(x); },
        rand_tensor<D>({9}, 22, 0.2, 1.0), 1e-6);
  check([](nn::Tape<D>&, Var<D> x) { return nn::l2_normalize_rows(x); },
        rand_tensor<D>({4, 5}, 23, 0.2, 1.0), 1e-6);
  check([](nn::Tape<D>&, Var<D> x) { return nn::softmax_dim0(x); },
        rand_tensor<D>({5, 4}, 24), 1e-6);
  check([](nn::Tape<D>&, Var<D> x) { return nn::row_sums(x); }, rand_tensor<D>({4, 6}, 25), 1e-7);
  check([](nn::Tape<D>& t, Var<D> x) { return nn::rowscale(x, t.constant(rand_tensor<D>({4}, 26))); },
        rand_tensor<D>({4, 3}, 27), 1e-7);
  check([](nn::Tape<D>& t, Var<D> s) { return nn::rowscale(t.constant(rand_tensor<D>({4, 3}, 28)), s); },
        rand_tensor<D>({4}, 29), 1e-7);
  check([](nn::Tape<D>&, Var<D> x) { return nn::transpose(x); }, rand_tensor<D>({3, 4}, 30), 1e-7);
  check([](nn::Tape<D>&, Var<D> x) { return nn::reshape(x, {6, 2}); },
        rand_tensor<D>({3, 4}, 31), 1e-7);
  check([](nn::Tape<D>&, Var<D> x) { return nn::slice_rows(x, 1, 3); },
        rand_tensor<D>({5, 4}, 32), 1e-7);
  check(
      [](nn::Tape<D>&, Var<D> x) {
        return nn::vmax(std::vector<Var<D>>{nn::sum_all(x), nn::scale_const(nn::sum_all(x), D(0.5))});
      },
      rand_tensor<D>({4}, 33, 0.5, 1.0), 1e-6);
}

TEST_CASE("gradient of the affine map is exact to finite-difference precision") {
  using D = double;
  const auto w = rand_tensor<D>({4, 6}, 34, -0.5, 0.5);
  const auto b = rand_tensor<D>({4}, 35);
  const double err = nn::grad_check<D>(
      [&](nn::Tape<D>& t, Var<D> x) {
        return nn::add_rowwise(nn::matmul(t.constant(w), x), t.constant(b));
      },
      rand_tensor<D>({6, 3}, 36));
  CHECK(err < 1e-7);
}

TEST_CASE("gradient of softmax composed with a bilinear readout") {
  using D = double;
  const auto c = rand_tensor<D>({5, 3}, 37);
  const double err = nn::grad_check<D>(
      [&](nn::Tape<D>& t, Var<D> x) { return nn::mul(nn::softmax_dim0(x), t.constant(c)); },
      rand_tensor<D>({5, 3}, 38));
  CHECK(err < 1e-5);
}

TEST_CASE("gradient of the full transformer block") {
  using D = double;
  nn::Tape<D> probe(false);
  const double err = nn::grad_check<D>(
      [&](nn::Tape<D>& t, Var<D> x) {
        return nn::transformer_block(x, rand_transformer<D>(t, 4, 2, 70), 2);
      },
      rand_tensor<D>({4, 6}, 39));
  CHECK(err < 1e-4);
}

TEST_CASE("gradients flow through attention internals") {
  using D = double;
  const auto q = rand_tensor<D>({3, 5}, 40);
  const auto k = rand_tensor<D>({3, 5}, 41);
  const auto v = rand_tensor<D>({3, 5}, 42);
  CHECK(nn::grad_check<D>(
            [&](nn::Tape<D>& t, Var<D> x) {
              return nn::attn_apply(nn::scaled_softmax_qk(x, t.constant(k)), t.constant(v));
            },
            q) < 1e-6);
  CHECK(nn::grad_check<D>(
            [&](nn::Tape<D>& t, Var<D> x) {
              return nn::attn_apply(nn::scaled_softmax_qk(t.constant(q), x), t.constant(v));
            },
            k) < 1e-6);
  CHECK(nn::grad_check<D>(
            [&](nn::Tape<D>& t, Var<D> x) {
              return nn::attn_apply(nn::scaled_softmax_qk(t.constant(q), t.constant(k)), x);
            },
            v) < 1e-6);
}

TEST_CASE("gem_combine limits: p=1 is the mean, large p approaches the max") {
  nn::Tape<float> tape(false);
  const auto a = rand_tensor<float>({6}, 43, 0.1, 1.0);
  const auto b = rand_tensor<float>({6}, 44, 0.1, 1.0);
  auto mean = nn::gem_combine<float>({tape.constant(a), tape.constant(b)},
                                     tape.constant(Tensor<float>::scalar(1.0f)));
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(mean.value().at(i) == doctest::Approx(0.5f * (a.v[i] + b.v[i])).epsilon(1e-5));
  }
  auto big = nn::gem_combine<float>({tape.constant(a), tape.constant(b)},
                                    tape.constant(Tensor<float>::scalar(100.0f)));
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(big.value().at(i) == doctest::Approx(std::max(a.v[i], b.v[i])).epsilon(0.02));
  }
  CHECK_THROWS_AS(
      nn::gem_combine<float>({}, tape.constant(Tensor<float>::scalar(2.0f))), ConfigError);
}

TEST_CASE("checkpoint files round trip tensors bit-exactly") {
  nn::TensorMap saved;
  saved["alpha.w"] = rand_tensor<float>({3, 4}, 45);
  saved["beta"] = Tensor<float>::scalar(-2.5f);
  saved["gamma.long.name"] = rand_tensor<float>({2, 2, 2, 2}, 46);
  const std::string path = "ckpt_test.sqwt";
  nn::save_tensors(path, saved);
  const nn::TensorMap back = nn::load_tensors(path);
  REQUIRE(back.size() == saved.size());
  for (const auto& [name, t] : saved) {
    REQUIRE(back.count(name) == 1);
    CHECK(back.at(name).shape == t.shape);
    CHECK(max_abs_diff(back.at(name), t) == 0.0f);
  }
  std::remove(path.c_str());
  CHECK_THROWS_AS(nn::load_tensors("missing.sqwt"), DataError);
}
