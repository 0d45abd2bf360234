#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "eegldm/nd/adam.hpp"
#include "eegldm/nd/container.hpp"
#include "eegldm/nd/finite_diff.hpp"
#include "eegldm/nd/layers.hpp"
#include "eegldm/nd/ops.hpp"

using namespace eegldm::nd;

namespace {

// Direct loop convolution with the same-style padding rule, independent of im2col.
Tensor<double> reference_conv2d(const Tensor<double>& x, const Tensor<double>& w,
                                const Tensor<double>& b, std::size_t sh, std::size_t sw) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h + sh - 1) / sh, ow = (wd + sw - 1) / sw;
  const long ph = static_cast<long>(std::max<long>(0, long((oh - 1) * sh + kh) - long(h)) / 2);
  const long pw = static_cast<long>(std::max<long>(0, long((ow - 1) * sw + kw) - long(wd)) / 2);
  Tensor<double> out(Shape{n, o, oh, ow});
  for (std::size_t bi = 0; bi < n; ++bi)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          double acc = b[oc];
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t a = 0; a < kh; ++a)
              for (std::size_t d = 0; d < kw; ++d) {
                const long iy = long(y * sh + a) - ph;
                const long ix = long(xo * sw + d) - pw;
                if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(wd)) continue;
                acc += x.at({bi, ic, std::size_t(iy), std::size_t(ix)}) * w.at({oc, ic, a, d});
              }
          out.at({bi, oc, y, xo}) = acc;
        }
  return out;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("eegldm_ndcore_" + name);
}

}  // namespace

TEST(Tensor, RejectsMismatchedValueCount) {
  EXPECT_THROW(Tensor<float>(Shape{2, 3}, std::vector<float>(5)), ShapeError);
  EXPECT_THROW(Tensor<float>(Shape{2, 0}), ShapeError);
}

TEST(Ops, NonFiniteOutputIsAnError) {
  Var<double> x(Tensor<double>(Shape{2}, 1000.0));
  EXPECT_THROW(eegldm::nd::exp(x), NumericError);
}

TEST(LayerStack, IdentityReturnsInput) {
  Rng rng(1);
  LayerStack<double> stack({3, 4});
  stack.emplace<Identity<double>>();
  auto x = randn<double>({2, 3, 4}, rng);
  EXPECT_EQ(stack.evaluate(x), x);
}

TEST(LayerStack, ZeroLinearGivesZeros) {
  Rng rng(2);
  ParameterTree<double> tree;
  LayerStack<double> stack({5});
  stack.emplace<Linear<double>>(tree, "fc", 5, 7, rng, Init::kZero);
  auto y = stack.evaluate(randn<double>({3, 5}, rng));
  EXPECT_EQ(y.shape(), (Shape{3, 7}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerStack, RejectsWrongInputSignature) {
  LayerStack<double> stack({3, 4});
  stack.emplace<Identity<double>>();
  EXPECT_THROW(stack.evaluate(Tensor<double>(Shape{2, 4, 3})), ShapeError);
}

TEST(Conv, SameStylePaddingLengths) {
  // ceil(L / s) per stage for the (5, 2, 2, 2) stack.
  std::size_t len = 3500;
  std::vector<std::size_t> got;
  for (std::size_t s : {5, 2, 2, 2}) {
    len = same_out_extent(len, s);
    got.push_back(len);
  }
  EXPECT_EQ(got, (std::vector<std::size_t>{700, 350, 175, 88}));
}

TEST(Conv, StridedConv1dStackMatchesLoopOracle) {
  Rng rng(3);
  ParameterTree<double> tree;
  LayerStack<double> stack({2, 3500});
  std::vector<std::size_t> channels{2, 3, 3, 2, 2};
  std::vector<std::size_t> strides{5, 2, 2, 2};
  for (std::size_t i = 0; i < 4; ++i) {
    stack.emplace<Conv1d<double>>(tree, "c" + std::to_string(i), channels[i], channels[i + 1], 3,
                                  strides[i], rng);
  }
  auto x = randn<double>({1, 2, 3500}, rng);
  auto y = stack.evaluate(x);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 88}));

  Tensor<double> ref = x.reshaped({1, 2, 1, 3500});
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string name = "c" + std::to_string(i);
    auto w = tree.var(name + ".weight").value();
    w.reshape({w.dim(0), w.dim(1), 1, w.dim(2)});
    ref = reference_conv2d(ref, w, tree.var(name + ".bias").value(), 1, strides[i]);
  }
  ASSERT_EQ(ref.size(), y.size());
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-10);
}

TEST(Conv, Conv2dMatchesLoopOracleOddSizes) {
  Rng rng(4);
  for (std::size_t stride : {1, 2}) {
    auto x = randn<double>({2, 3, 7, 5}, rng);
    auto w = randn<double>({4, 3, 3, 3}, rng);
    auto b = randn<double>({4}, rng);
    auto y = conv2d(Var<double>(x), Var<double>(w), Var<double>(b), stride, stride).value();
    auto ref = reference_conv2d(x, w, b, stride, stride);
    ASSERT_EQ(y.shape(), ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
  }
}

TEST(Backprop, SumOfIdentityGivesOnes) {
  Var<double> x(Tensor<double>(Shape{2, 3}, 0.5), true);
  sum(x).backward();
  for (double g : x.grad().values()) EXPECT_EQ(g, 1.0);
}

TEST(Backprop, ScalarQuadratic) {
  Var<double> w(Tensor<double>::scalar(3.0), true);
  mul(w, w).backward();
  EXPECT_DOUBLE_EQ(w.grad()[0], 6.0);
}

TEST(Backprop, UpstreamShapeMismatchThrows) {
  Var<double> x(Tensor<double>(Shape{2, 3}, 1.0), true);
  auto y = silu(x);
  EXPECT_THROW(y.backward(Tensor<double>(Shape{3, 2})), ShapeError);
}

TEST(Backprop, StackGradientsCoverInputAndTrainableParams) {
  Rng rng(5);
  ParameterTree<double> tree;
  LayerStack<double> stack({4});
  stack.emplace<Linear<double>>(tree, "a", 4, 3, rng);
  stack.emplace<Silu<double>>();
  stack.emplace<Linear<double>>(tree, "b", 3, 2, rng);
  tree.set_trainable("b", false);
  auto g = stack.backpropagate(tree, randn<double>({2, 4}, rng), Tensor<double>(Shape{2, 2}, 1.0));
  EXPECT_EQ(g.input.shape(), (Shape{2, 4}));
  EXPECT_TRUE(g.params.count("a.weight"));
  EXPECT_FALSE(g.params.count("b.weight"));
  EXPECT_FALSE(tree.var("b.weight").has_grad());
}

// Gradient fidelity per layer kind against central differences, five seeds.
class LayerGradientFidelity : public ::testing::TestWithParam<int> {};

TEST_P(LayerGradientFidelity, EveryLayerKindMatchesFiniteDifferences) {
  const int seed = GetParam();
  Rng rng(seed);
  struct Case {
    std::string name;
    std::function<std::unique_ptr<LayerStack<double>>(ParameterTree<double>&)> build;
    Shape input;
  };
  std::vector<Case> cases{
      {"linear",
       [&](ParameterTree<double>& t) {
         auto s = std::make_unique<LayerStack<double>>(Shape{6});
         s->emplace<Linear<double>>(t, "l", 6, 4, rng);
         return s;
       },
       {3, 6}},
      {"conv1d_strided",
       [&](ParameterTree<double>& t) {
         auto s = std::make_unique<LayerStack<double>>(Shape{3, 23});
         s->emplace<Conv1d<double>>(t, "c", 3, 4, 3, 5, rng);
         s->emplace<Conv1d<double>>(t, "d", 4, 2, 3, 2, rng);
         return s;
       },
       {2, 3, 23}},
      {"conv2d",
       [&](ParameterTree<double>& t) {
         auto s = std::make_unique<LayerStack<double>>(Shape{3, 5, 7});
         s->emplace<Conv2d<double>>(t, "c", 3, 4, 3, 1, rng);
         s->emplace<Conv2d<double>>(t, "d", 4, 2, 3, 2, rng);
         return s;
       },
       {2, 3, 5, 7}},
      {"group_norm",
       [&](ParameterTree<double>& t) {
         auto s = std::make_unique<LayerStack<double>>(Shape{8, 3, 4});
         s->emplace<GroupNorm<double>>(t, "g", 8);
         return s;
       },
       {2, 8, 3, 4}},
      {"silu",
       [&](ParameterTree<double>& t) {
         auto s = std::make_unique<LayerStack<double>>(Shape{5});
         s->emplace<Linear<double>>(t, "l", 5, 5, rng);
         s->emplace<Silu<double>>();
         return s;
       },
       {4, 5}},
  };
  for (auto& c : cases) {
    ParameterTree<double> tree;
    auto stack = c.build(tree);
    // Non-trivial affine parameters for normalization.
    tree.for_each([&](Parameter<double>& p) {
      for (auto& v : p.var.mutable_value().values()) v += 0.3 * std::normal_distribution<>(0, 1)(rng);
    });
    Var<double> x(randn<double>(c.input, rng), true);
    auto weights = randn<double>(stack->forward(x).shape(), rng);
    auto loss = [&] { return sum(mul(stack->forward(x), Var<double>(weights))); };
    auto res = check_parameter_gradients(tree, loss, 1e-4, 1000, rng);
    EXPECT_LT(res.max_relative_error, 1e-3) << c.name << " worst " << res.worst_parameter;

    // Input gradient as well.
    tree.zero_grad();
    x.zero_grad();
    loss().backward();
    std::vector<double> analytic(x.grad().values().begin(), x.grad().values().end());
    std::vector<double> point(x.value().values().begin(), x.value().values().end());
    auto numeric = finite_difference_gradient(
        [&](std::span<const double> p) {
          Tensor<double> xi(c.input, std::vector<double>(p.begin(), p.end()));
          Var<double> v(xi);
          return sum(mul(stack->forward(v), Var<double>(weights))).value()[0];
        },
        point, 1e-4);
    EXPECT_LT(relative_error(analytic, numeric), 1e-3) << c.name << " input";
  }
}

TEST_P(LayerGradientFidelity, CompositeOpsMatchFiniteDifferences) {
  Rng rng(100 + GetParam());
  ParameterTree<double> tree;
  auto a = tree.add("a", randn<double>({2, 3, 3, 4}, rng));
  auto b = tree.add("b", randn<double>({2, 2, 3, 4}, rng));
  auto v = tree.add("v", randn<double>({2, 5}, rng));
  auto mix = tree.add("mix", randn<double>({3, 5, 5}, rng));
  auto lv_init = randn<double>({2, 5, 6}, rng, 0.5);
  // Keep finite differences away from the clamp kinks.
  for (auto& x : lv_init.values()) {
    if (std::abs(std::abs(x) - 0.4) < 0.01) x *= 1.1;
  }
  auto lv = tree.add("lv", lv_init);
  auto loss = [&] {
    auto cat = concat_channels(a, b);                          // [2,5,3,4]
    auto up = upsample_nearest2x(cat, 5, 7);                   // [2,5,5,7]
    auto biased = add_channel_bias(up, v);
    auto flat = reshape(biased, Shape{2, 5, 35});
    auto mixed = mix_channels(flat, mix, {2, 0});
    auto kl = gaussian_kl(reshape(mixed, Shape{2, 5, 35}), reshape(mixed, Shape{2, 5, 35}));
    auto tail = mean(mul(clamp(lv, -0.4, 0.4), eegldm::nd::exp(lv)));
    return add(scale(kl, 0.01), add(tail, mse(mixed, Var<double>(Tensor<double>(Shape{2, 5, 35}, 0.1)))));
  };
  auto res = check_parameter_gradients(tree, loss, 1e-4, 64, rng);
  EXPECT_LT(res.max_relative_error, 1e-3) << res.worst_parameter;
}

INSTANTIATE_TEST_SUITE_P(Seeds, LayerGradientFidelity, ::testing::Values(11, 12, 13, 14, 15));

TEST(Determinism, ForwardAndBackwardAreBitReproducible) {
  auto run = [] {
    Rng rng(77);
    ParameterTree<float> tree;
    LayerStack<float> stack({3, 6, 6});
    stack.emplace<Conv2d<float>>(tree, "c", 3, 8, 3, 2, rng);
    stack.emplace<GroupNorm<float>>(tree, "g", 8);
    stack.emplace<Silu<float>>();
    auto x = randn<float>({4, 3, 6, 6}, rng);
    auto g = stack.backpropagate(tree, x, Tensor<float>(Shape{4, 8, 3, 3}, 1.0f));
    return std::make_pair(stack.evaluate(x), g.params.at("c.weight"));
  };
  auto r1 = run();
  auto r2 = run();
  EXPECT_EQ(r1.first, r2.first);
  EXPECT_EQ(r1.second, r2.second);
}

TEST(Adam, FirstStepMovesBySignTimesLearningRate) {
  ParameterTree<double> tree;
  auto w = tree.add("w", Tensor<double>(Shape{3}, std::vector<double>{1.0, -2.0, 0.5}));
  w.node()->grad = Tensor<double>(Shape{3}, std::vector<double>{0.3, -4.0, 1e-3});
  AdamState<double> st;
  st.config.learning_rate = 0.01;
  adam_step(tree, st);
  EXPECT_NEAR(w.value()[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(w.value()[1], -2.0 + 0.01, 1e-9);
  EXPECT_NEAR(w.value()[2], 0.5 - 0.01, 1e-7);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, ZeroGradientLeavesParameterUnchanged) {
  ParameterTree<double> tree;
  auto w = tree.add("w", Tensor<double>(Shape{2}, 0.7));
  w.node()->grad = Tensor<double>(Shape{2});
  AdamState<double> st;
  adam_step(tree, st);
  EXPECT_EQ(w.value()[0], 0.7);
  EXPECT_EQ(w.value()[1], 0.7);
}

TEST(Adam, TwoStepsOnQuadraticMatchHandRecurrence) {
  ParameterTree<double> tree;
  auto w = tree.add("w", Tensor<double>::scalar(1.0));
  AdamState<double> st;
  st.config.learning_rate = 0.1;

  // Hand recurrence, beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
  double x = 1.0, m = 0, v = 0;
  std::vector<double> expected;
  for (int k = 1; k <= 2; ++k) {
    const double g = 2 * x;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, k));
    const double vh = v / (1 - std::pow(0.999, k));
    x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    expected.push_back(x);
  }
  double prev = 1.0;
  for (int k = 0; k < 2; ++k) {
    tree.zero_grad();
    mul(w, w).backward();
    adam_step(tree, st);
    EXPECT_NEAR(w.value()[0], expected[k], 1e-12);
    EXPECT_LT(w.value()[0], prev);
    EXPECT_GT(w.value()[0], 0.0);
    prev = w.value()[0];
  }
  EXPECT_NEAR(expected[0], 0.9, 1e-9);
}

TEST(Adam, MissingGradientOnTrainableParameterThrows) {
  ParameterTree<double> tree;
  tree.add("w", Tensor<double>(Shape{2}, 1.0));
  AdamState<double> st;
  EXPECT_THROW(adam_step(tree, st), MissingGradientError);
  EXPECT_EQ(st.step, 0u);
}

TEST(Adam, FrozenParametersStayBitIdentical) {
  Rng rng(9);
  ParameterTree<float> tree;
  LayerStack<float> stack({4});
  stack.emplace<Linear<float>>(tree, "frozen", 4, 4, rng);
  stack.emplace<Silu<float>>();
  stack.emplace<Linear<float>>(tree, "train", 4, 2, rng);
  tree.set_trainable("frozen", false);
  const auto before = tree.to_container("frozen").serialize();
  AdamState<float> st;
  st.config.learning_rate = 0.05;
  for (int i = 0; i < 25; ++i) {
    tree.zero_grad();
    sum(stack.forward(Var<float>(randn<float>({3, 4}, rng)))).backward();
    adam_step(tree, st);
  }
  EXPECT_EQ(tree.to_container("frozen").serialize(), before);
  EXPECT_EQ(st.step, 25u);
}

TEST(FiniteDifference, SquareAtTwo) {
  std::vector<double> p{2.0};
  auto g = finite_difference_gradient([](std::span<const double> x) { return x[0] * x[0]; }, p, 1e-4);
  EXPECT_NEAR(g[0], 4.0, 1e-6);
}

TEST(FiniteDifference, ConstantGivesZero) {
  std::vector<double> p{1.0, -3.0, 2.5};
  auto g = finite_difference_gradient([](std::span<const double>) { return 7.0; }, p, 1e-4);
  for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(FiniteDifference, BilinearPartials) {
  std::vector<double> p{2.0, 3.0};
  auto g = finite_difference_gradient([](std::span<const double> x) { return x[0] * x[1]; }, p, 1e-4);
  EXPECT_NEAR(g[0], 3.0, 1e-6);
  EXPECT_NEAR(g[1], 2.0, 1e-6);
}

TEST(FiniteDifference, NonFiniteValueThrows) {
  std::vector<double> p{0.0};
  EXPECT_THROW(finite_difference_gradient(
                   [](std::span<const double> x) { return x[0] > 0 ? NAN : 0.0; }, p, 1e-4),
               NumericError);
}

TEST(Container, RandomRoundTripIsBitExact) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    TensorContainer c;
    std::uniform_int_distribution<std::size_t> ext(1, 6);
    for (int e = 0; e < 3; ++e) {
      Shape s;
      for (std::size_t r = 0, rank = ext(rng) % 4 + 1; r < rank; ++r) s.push_back(ext(rng));
      c.put("f32_" + std::to_string(e), randn<float>(s, rng, 1e3));
      c.put("f64_" + std::to_string(e), randn<double>(s, rng, 1e-3));
    }
    c.meta()["trial"] = trial;
    const auto path = temp_file("roundtrip.eegt");
    c.write(path);
    auto back = TensorContainer::read(path);
    EXPECT_EQ(back.serialize(), c.serialize());
    for (const auto& name : c.names()) {
      if (name.rfind("f32", 0) == 0) {
        EXPECT_EQ(back.get<float>(name), c.get<float>(name));
      } else {
        EXPECT_EQ(back.get<double>(name), c.get<double>(name));
      }
    }
  }
}

TEST(Container, TruncatedPayloadIsCorruption) {
  TensorContainer c;
  c.put("x", Tensor<float>(Shape{4, 5}, 1.5f));
  auto bytes = c.serialize();
  bytes.pop_back();
  EXPECT_THROW(TensorContainer::deserialize(bytes), CorruptContainerError);
  EXPECT_THROW(TensorContainer::deserialize("garbage"), CorruptContainerError);
  EXPECT_THROW(TensorContainer::deserialize(c.serialize() + "x"), CorruptContainerError);
}

TEST(Container, PayloadSizeFollowsManifestShape) {
  TensorContainer c;
  c.put("eeg", Tensor<float>(Shape{124, 3500}));
  const auto bytes = c.serialize();
  std::uint64_t mlen = 0;
  std::memcpy(&mlen, bytes.data() + 8, 8);
  EXPECT_EQ(bytes.size() - 16 - mlen, 124u * 3500u * 4u);
}

TEST(ParameterTree, SaveLoadIsBitExactAndNamesUnique) {
  Rng rng(31);
  ParameterTree<float> tree;
  tree.add("enc.conv.weight", randn<float>({4, 2, 3, 3}, rng));
  tree.add("enc.conv.bias", randn<float>({4}, rng));
  EXPECT_THROW(tree.add("enc.conv.bias", Tensor<float>(Shape{4})), std::invalid_argument);
  const auto path = temp_file("tree.eegt");
  tree.save(path);

  ParameterTree<float> other;
  other.add("enc.conv.weight", Tensor<float>(Shape{4, 2, 3, 3}));
  other.add("enc.conv.bias", Tensor<float>(Shape{4}));
  other.assign(TensorContainer::read(path));
  EXPECT_EQ(other.digest(), tree.digest());
  EXPECT_EQ(other.var("enc.conv.weight").value(), tree.var("enc.conv.weight").value());
}
