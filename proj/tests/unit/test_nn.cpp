#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace roadfix;
using namespace roadfix::nn;
using namespace testing_support;

namespace {

// Checks input and parameter gradients of sum(w * layer(x)) against central
// differences. Forward passes for the differences never update state.
void check_layer(Layer<double>& layer, const Tensor<double>& x, Mode mode, std::uint64_t seed, double tol = 1e-6) {
  std::mt19937_64 rng(seed);
  std::unique_ptr<LayerCache> cache;
  const Tensor<double> y = layer.forward(x, mode, &cache);
  const Tensor<double> w = random_tensor(y.shape(), rng);
  auto objective = [&](const Tensor<double>& in) {
    const Tensor<double> out = layer.forward(in, mode == Mode::kTrain ? Mode::kFrozen : mode, nullptr);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += w[i] * out[i];
    return s;
  };
  std::vector<ParamRef<double>> params;
  layer.collect("l", params);
  zero_grads(params);
  const Tensor<double> gx = layer.backward(*cache, w, {true, true});
  EXPECT_LT(relative_error(gx, numeric_grad(objective, x)), tol) << "input gradient";
  for (auto& p : params) {
    if (!p.grad) continue;
    auto f = [&](const Tensor<double>& v) {
      const Tensor<double> saved = *p.value;
      *p.value = v;
      const double r = objective(x);
      *p.value = saved;
      return r;
    };
    EXPECT_LT(relative_error(*p.grad, numeric_grad(f, *p.value)), tol) << p.name;
  }
}

template <typename L>
void randomize(L& layer, std::uint64_t seed) {
  std::vector<ParamRef<double>> params;
  layer.collect("l", params);
  std::mt19937_64 rng(seed);
  for (auto& p : params)
    if (p.grad)
      for (auto& v : p.value->values()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
}

// Direct definition of a zero-padded strided dilated convolution.
Tensor<double> naive_conv(const Tensor<double>& x, Conv2d<double>& conv, int pad) {
  const int k = conv.kernel(), s = conv.stride(), d = conv.dilation();
  const int oh = (x.h() + 2 * pad - d * (k - 1) - 1) / s + 1, ow = (x.w() + 2 * pad - d * (k - 1) - 1) / s + 1;
  Tensor<double> y(x.n(), conv.out_channels(), oh, ow);
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < conv.out_channels(); ++o)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double acc = conv.bias()[o];
          for (int c = 0; c < x.c(); ++c)
            for (int a = 0; a < k; ++a)
              for (int b = 0; b < k; ++b) {
                const int yy = i * s - pad + a * d, xx = j * s - pad + b * d;
                if (yy < 0 || xx < 0 || yy >= x.h() || xx >= x.w()) continue;
                acc += conv.weight().at(o, c, a, b) * x.at(n, c, yy, xx);
              }
          y.at(n, o, i, j) = acc;
        }
  return y;
}

}  // namespace

TEST(Tensor, StorageIsAlignedAndShaped) {
  const auto u = Tensor<float>::uninitialized({2, 3, 5, 7});
  EXPECT_EQ(u.size(), 210u);
  EXPECT_EQ(u.shape(), (std::array<int, 4>{2, 3, 5, 7}));
  EXPECT_THROW(Tensor<float>::uninitialized({1, -1, 2, 2}), InvalidArgument);
  const Tensor<float> z(1, 1, 3, 3);
  for (float v : z.values()) EXPECT_EQ(v, 0.0f);
  for (int i = 0; i < 8; ++i) {
    const Tensor<float> t(1, 1, 1, 3 + i);
    EXPECT_EQ(reinterpret_cast<std::uintptr_t>(t.data()) % EIGEN_DEFAULT_ALIGN_BYTES, 0u);
  }
}

TEST(Layers, ConvGradients) {
  std::mt19937_64 rng(1);
  for (auto [k, s, d] : {std::tuple{3, 1, 1}, std::tuple{3, 2, 1}, std::tuple{3, 1, 2}, std::tuple{5, 2, 1}}) {
    Conv2d<double> conv(2, 3, k, s, d, s == 1 ? -1 : (k - 1) / 2);
    randomize(conv, 7);
    check_layer(conv, random_tensor({2, 2, 8, 8}, rng), Mode::kTrain, 11);
  }
  Conv2d<double> wide(2, 6, 3, 1, 1);  // GEMM path (more than 4 outputs)
  randomize(wide, 8);
  check_layer(wide, random_tensor({1, 2, 6, 6}, rng), Mode::kTrain, 12);
}

TEST(Layers, ConvMatchesDefinitionAcrossChunks) {
  std::mt19937_64 rng(2);
  // 8 in-channels, 3x3, 96x96 output exceeds one im2col chunk.
  for (int out : {3, 8}) {
    for (int dil : {1, 3}) {
      Conv2d<double> conv(8, out, 3, 1, dil);
      randomize(conv, 9 + out + dil);
      const Tensor<double> x = random_tensor({1, 8, 96, 96}, rng);
      const Tensor<double> y = conv.forward(x, Mode::kEval, nullptr), ref = naive_conv(x, conv, dil);
      ASSERT_EQ(y.shape(), ref.shape());
      EXPECT_LT(relative_error(y, ref), 1e-12);
    }
  }
  Conv2d<double> strided(4, 6, 3, 2, 1, 1);
  randomize(strided, 3);
  const Tensor<double> x = random_tensor({2, 4, 17, 13}, rng);
  EXPECT_LT(relative_error(strided.forward(x, Mode::kEval, nullptr), naive_conv(x, strided, 1)), 1e-12);
}

TEST(Layers, DilationWiderThanInput) {
  // Most taps fall outside an input smaller than the dilation.
  std::mt19937_64 rng(5);
  for (int out : {2, 6}) {
    Conv2d<double> conv(3, out, 3, 1, 9);
    randomize(conv, 4);
    const Tensor<double> x = random_tensor({2, 3, 8, 8}, rng);
    EXPECT_LT(relative_error(conv.forward(x, Mode::kEval, nullptr), naive_conv(x, conv, 9)), 1e-12);
    check_layer(conv, x, Mode::kTrain, 6);
  }
}

TEST(Layers, DeconvGradientsAndShape) {
  std::mt19937_64 rng(3);
  ConvTranspose2d<double> deconv(3, 2, 4, 2, 1);
  randomize(deconv, 4);
  const Tensor<double> x = random_tensor({2, 3, 4, 5}, rng);
  EXPECT_EQ(deconv.forward(x, Mode::kEval, nullptr).shape(), (std::array<int, 4>{2, 2, 8, 10}));
  check_layer(deconv, x, Mode::kTrain, 13);
}

TEST(Layers, DeconvIsAdjointOfConv) {
  // <deconv(x), y> = <x, conv(y)> with shared weights and zero biases.
  std::mt19937_64 rng(4);
  ConvTranspose2d<double> deconv(3, 2, 4, 2, 1);
  randomize(deconv, 5);
  deconv.bias().fill(0);
  Conv2d<double> conv(2, 3, 4, 2, 1, 1);
  for (int i = 0; i < 3; ++i)
    for (int o = 0; o < 2; ++o)
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) conv.weight().at(i, o, a, b) = deconv.weight().at(i, o, a, b);
  conv.bias().fill(0);
  const Tensor<double> x = random_tensor({1, 3, 5, 5}, rng), y = random_tensor({1, 2, 10, 10}, rng);
  const Tensor<double> dx = deconv.forward(x, Mode::kEval, nullptr), cy = conv.forward(y, Mode::kEval, nullptr);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += dx[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * cy[i];
  EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs)));
}

TEST(Layers, BatchNormGradientsAndModes) {
  std::mt19937_64 rng(5);
  BatchNorm2d<double> bn(3);
  randomize(bn, 6);
  const Tensor<double> x = random_tensor({2, 3, 4, 4}, rng, -2, 3);
  check_layer(bn, x, Mode::kTrain, 14);
  check_layer(bn, x, Mode::kEval, 15);

  BatchNorm2d<double> fresh(3);
  fresh.forward(x, Mode::kFrozen, nullptr);
  EXPECT_EQ(fresh.running_mean()[0], 0.0);
  EXPECT_EQ(fresh.running_var()[0], 1.0);
  fresh.forward(x, Mode::kTrain, nullptr);
  double mean0 = 0;
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 16; ++i) mean0 += x.plane(n, 0)[i];
  mean0 /= 32;
  EXPECT_NEAR(fresh.running_mean()[0], 0.1 * mean0, 1e-12);

  // Batch statistics: each channel comes out zero-mean, unit-variance.
  const Tensor<double> y = BatchNorm2d<double>(3).forward(x, Mode::kFrozen, nullptr);
  double s = 0, s2 = 0;
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 16; ++i) {
      s += y.plane(n, 1)[i];
      s2 += y.plane(n, 1)[i] * y.plane(n, 1)[i];
    }
  EXPECT_NEAR(s / 32, 0.0, 1e-12);
  EXPECT_NEAR(s2 / 32, 1.0, 1e-3);
}

TEST(Layers, PointwiseAndLinearGradients) {
  std::mt19937_64 rng(6);
  Tensor<double> x = random_tensor({2, 3, 3, 3}, rng);
  for (auto& v : x.values())
    if (std::abs(v) < 1e-3) v = 0.5;  // keep away from the ReLU kink
  ReLU<double> relu;
  check_layer(relu, x, Mode::kTrain, 16);
  Sigmoid<double> sig;
  check_layer(sig, x, Mode::kTrain, 17);
  Flatten<double> flat;
  check_layer(flat, x, Mode::kTrain, 18);
  Linear<double> lin(27, 4);
  randomize(lin, 7);
  check_layer(lin, x, Mode::kTrain, 19);
}

TEST(Sequential, BackwardChainsLayers) {
  std::mt19937_64 rng(7);
  Sequential<double> net;
  net.add("c1", Conv2d<double>(1, 4, 3, 2, 1, 1));
  net.add("bn", BatchNorm2d<double>(4));
  net.add("r", ReLU<double>());
  net.add("f", Flatten<double>());
  net.add("l", Linear<double>(4 * 4 * 4, 2));
  net.reset_parameters(42);
  const Tensor<double> x = random_tensor({3, 1, 8, 8}, rng);
  const Tensor<double> w = random_tensor({3, 2, 1, 1}, rng);
  Tape tape;
  net.forward(x, Mode::kTrain, &tape);
  std::vector<ParamRef<double>> params;
  net.collect("", params);
  zero_grads(params);
  const Tensor<double> gx = net.backward(tape, w, {true, true});
  auto f = [&](const Tensor<double>& in) {
    const Tensor<double> y = net.forward(in, Mode::kFrozen);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
    return s;
  };
  EXPECT_LT(relative_error(gx, numeric_grad(f, x)), 1e-5);
}

TEST(Sequential, ResetIsSeededAndCopiesAreDeep) {
  Sequential<float> a;
  a.add("c", Conv2d<float>(1, 2, 3));
  a.reset_parameters(1);
  Sequential<float> b = a;
  std::vector<ParamRef<float>> pa, pb;
  a.collect("", pa);
  b.collect("", pb);
  EXPECT_EQ(pa[0].value->values()[0], pb[0].value->values()[0]);
  EXPECT_NE(pa[0].value, pb[0].value);
  Sequential<float> c = a;
  c.reset_parameters(2);
  std::vector<ParamRef<float>> pc;
  c.collect("", pc);
  EXPECT_NE(pa[0].value->values()[0], pc[0].value->values()[0]);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor<double> w(1, 1, 1, 3), g(1, 1, 1, 3);
  w[0] = 1.0;
  w[1] = -2.0;
  w[2] = 0.5;
  g[0] = 0.3;
  g[1] = -4.0;
  g[2] = 0.0;
  std::vector<ParamRef<double>> params{{"w", &w, &g}};
  Adam<double> adam({0.01, 0.5, 0.9, 1e-8});
  adam.step(params);
  EXPECT_NEAR(w[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(w[1], -2.0 + 0.01, 1e-9);
  EXPECT_EQ(w[2], 0.5);
  EXPECT_EQ(adam.steps(), 1);
  auto state = adam.state(params);
  ASSERT_EQ(state.size(), 2u);
  EXPECT_EQ(state[0].name, "w.adam_m");
  EXPECT_NEAR((*state[0].value)[0], 0.5 * 0.3, 1e-12);
  EXPECT_NEAR((*state[1].value)[1], 0.1 * 16.0, 1e-12);
}

TEST(Adam, MinimisesQuadratic) {
  Tensor<double> w(1, 1, 1, 1, 5.0), g(1, 1, 1, 1);
  std::vector<ParamRef<double>> params{{"w", &w, &g}};
  Adam<double> adam({0.05, 0.5, 0.9, 1e-8});
  for (int i = 0; i < 2000; ++i) {
    g[0] = 2.0 * (w[0] - 1.0);
    adam.step(params);
  }
  EXPECT_NEAR(w[0], 1.0, 1e-2);
}
