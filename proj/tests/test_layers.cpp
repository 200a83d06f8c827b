#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <memory>

#include "bplab/layers.hpp"
#include "test_util.hpp"

namespace bplab {
namespace {

using test::dot;
using test::numeric_gradient;
using test::random_tensor;
using test::relative_error;

const Tensor kSignal = Tensor::from_vector({0, 0, 1, 1, 0, 0, 1, 1});
// Advanced by one sample: shift_circular(kSignal, {0, -1}).
const Tensor kSignalShifted = Tensor::from_vector({0, 1, 1, 0, 0, 1, 1, 0});

constexpr PaddingMode kAllPads[] = {PaddingMode::Circular, PaddingMode::Zero, PaddingMode::Reflect};

void expect_values(const Tensor& t, const std::vector<double>& want, double tol = 1e-12) {
  ASSERT_EQ(t.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(t[i], want[i], tol) << "at " << i;
}

// Brute-force cross-correlation straight from the index formula.
Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t s, PaddingMode pad) {
  const std::size_t N = x.extent(0), Ci = x.extent(1), H = x.extent(2), W = x.extent(3);
  const std::size_t Co = w.extent(0), k = w.extent(2);
  const auto a = static_cast<std::int64_t>((k - 1) / 2);
  const std::size_t Ho = (H + s - 1) / s, Wo = (W + s - 1) / s;
  Tensor y({N, Co, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t oh = 0; oh < Ho; ++oh)
        for (std::size_t ow = 0; ow < Wo; ++ow) {
          double acc = b[co];
          for (std::size_t ci = 0; ci < Ci; ++ci)
            for (std::size_t i = 0; i < k; ++i)
              for (std::size_t j = 0; j < k; ++j) {
                const auto r = resolve_index(std::int64_t(oh * s + i) - a, std::int64_t(H), pad);
                const auto c = resolve_index(std::int64_t(ow * s + j) - a, std::int64_t(W), pad);
                if (r < 0 || c < 0) continue;
                acc += w.at({co, ci, i, j}) * x.at({n, ci, std::size_t(r), std::size_t(c)});
              }
          y.at({n, co, oh, ow}) = acc;
        }
  return y;
}

void randomize_params(Layer& layer, std::uint64_t seed) {
  auto& params = layer.mutable_params();
  for (std::size_t p = 0; p < params.size(); ++p) params[p] = random_tensor(params[p].shape(), seed + p);
}

// Checks input and parameter gradients of sum(forward(x) * r) against central differences.
void check_gradients(Layer& layer, const Tensor& x, std::uint64_t seed) {
  SCOPED_TRACE(layer.kind());
  const ForwardResult fwd = layer.forward(x);
  const Tensor r = random_tensor(fwd.output.shape(), seed);
  const BackwardResult back = layer.backward(fwd.cache, r);
  ASSERT_EQ(back.input_grad.shape(), x.shape());

  const auto f_x = [&](const Tensor& probe) { return dot(layer.infer(probe), r); };
  EXPECT_LT(relative_error(back.input_grad, numeric_gradient(f_x, x)), 1e-4);
  // forward and infer must agree
  EXPECT_LE(max_abs_diff(layer.infer(x), fwd.output), 1e-12);

  ASSERT_EQ(back.param_grads.size(), layer.params().size());
  for (std::size_t p = 0; p < layer.params().size(); ++p) {
    const auto f_p = [&](const Tensor& probe) {
      std::unique_ptr<Layer> copy = layer.clone();
      copy->mutable_params()[p] = probe;
      return dot(copy->infer(x), r);
    };
    EXPECT_LT(relative_error(back.param_grads[p], numeric_gradient(f_p, layer.params()[p])), 1e-4) << "param " << p;
  }
}

// ----------------------------------------------------------------------------
// Worked 1-D example
// ----------------------------------------------------------------------------

TEST(WorkedExample, ShiftedSignal) {
  EXPECT_EQ(shift_circular(kSignal.reshaped({1, 8}), {0, -1}).values(), kSignalShifted.values());
}

TEST(WorkedExample, MaxDense) {
  expect_values(max_dense(kSignal, 2, PaddingMode::Circular), {0, 1, 1, 1, 0, 1, 1, 1}, 0.0);
}

TEST(WorkedExample, MaxPoolAliases) {
  expect_values(max_pool(kSignal, 2, 2, PaddingMode::Circular), {0, 1, 0, 1}, 0.0);
  expect_values(max_pool(kSignalShifted, 2, 2, PaddingMode::Circular), {1, 1, 1, 1}, 0.0);
}

TEST(WorkedExample, MaxBlurPoolIsStable) {
  const BlurKernel tri = make_kernel("Tri-3");
  expect_values(max_blur_pool(kSignal, 2, tri, 2, PaddingMode::Circular), {.5, 1, .5, 1});
  expect_values(max_blur_pool(kSignalShifted, 2, tri, 2, PaddingMode::Circular), {.75, .75, .75, .75});
}

TEST(WorkedExample, AvgPool) {
  expect_values(avg_pool(kSignal, 2, 2, PaddingMode::Circular), {0, 1, 0, 1});
}

// ----------------------------------------------------------------------------
// Kernel examples
// ----------------------------------------------------------------------------

TEST(MaxDense, IdentityAndConstant) {
  const Tensor x = random_tensor({2, 3, 5, 5}, 1);
  for (auto pad : kAllPads) EXPECT_EQ(max_dense(x, 1, pad), x);
  const Tensor c({1, 1, 4, 6}, std::vector<double>(24, -1.5));
  for (auto pad : {PaddingMode::Circular, PaddingMode::Reflect, PaddingMode::Zero})
    for (std::size_t k = 1; k <= 4; ++k) EXPECT_EQ(max_dense(c, k, pad), c);
}

TEST(Subsample, Examples) {
  expect_values(subsample(Tensor::from_vector({1, 2, 3, 4}), 2), {1, 3}, 0.0);
  const Tensor x = random_tensor({2, 6, 6}, 2);
  EXPECT_EQ(subsample(x, 1), x);
  EXPECT_EQ(subsample(shift_circular(x, {2, 2}), 2), shift_circular(subsample(x, 2), {1, 1}));
  EXPECT_EQ(subsample(Tensor::from_vector({1, 2, 3, 4, 5}), 2).values(), (std::vector<double>{1, 3, 5}));
}

TEST(MaxPool, DecomposesIntoSubsampledMax) {
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor({2, 2, 8, 8}, 10 + trial);
    for (auto pad : kAllPads)
      for (std::size_t k : {1u, 2u, 3u})
        for (std::size_t s : {1u, 2u}) EXPECT_EQ(max_pool(x, k, s, pad), subsample(max_dense(x, k, pad), s));
  }
  const Tensor x = random_tensor({1, 1, 4, 4}, 3);
  EXPECT_EQ(max_pool(x, 1, 1, PaddingMode::Circular), x);
}

TEST(BlurPool, DegenerateKernels) {
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor({1, 3, 8, 8}, 40 + trial);
    EXPECT_LE(max_abs_diff(blur_pool(x, make_kernel("Rect-2"), 2, PaddingMode::Circular),
                           avg_pool(x, 2, 2, PaddingMode::Circular)),
              1e-12);
    EXPECT_EQ(blur_pool(x, make_kernel("Delta-1"), 2, PaddingMode::Circular), subsample(x, 2));
    EXPECT_EQ(max_blur_pool(x, 2, make_kernel("Delta-1"), 2, PaddingMode::Circular),
              max_pool(x, 2, 2, PaddingMode::Circular));
  }
}

TEST(BlurPool, FusedMatchesTwoStep) {
  const Tensor x = random_tensor({8, 8}, 5);
  for (const auto& k : all_kernels())
    for (auto pad : kAllPads)
      for (std::size_t s : {1u, 2u, 4u})
        EXPECT_LE(max_abs_diff(blur_pool(x, k, s, pad), subsample(apply_blur(x, k, pad), s)), 1e-12)
            << k.name << " " << to_string(pad) << " s=" << s;
}

TEST(AvgPool, ConstantAndZeroPadding) {
  const Tensor c({1, 1, 6, 6}, std::vector<double>(36, 2.0));
  for (std::size_t k : {2u, 3u})
    for (auto pad : {PaddingMode::Circular, PaddingMode::Reflect})
      EXPECT_EQ(avg_pool(c, k, 2, pad), Tensor({1, 1, 3, 3}, std::vector<double>(9, 2.0)));
  EXPECT_EQ(avg_pool(c, 3, 1, PaddingMode::Circular), c);
  // Zero padding counts the padded taps as zeros.
  const Tensor y = avg_pool(Tensor::from_vector({4, 4, 4}), 3, 1, PaddingMode::Zero);
  expect_values(y, {8.0 / 3, 4, 8.0 / 3});
}

TEST(Conv2d, IdentityKernel) {
  const Tensor x = random_tensor({2, 3, 5, 4}, 6);
  Tensor w({3, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) w.at({c, c, 0, 0}) = 1.0;
  for (auto pad : kAllPads) EXPECT_EQ(conv2d(x, w, Tensor({3}), 1, pad), x);
}

TEST(Conv2d, MatchesBruteForce) {
  for (auto pad : kAllPads)
    for (std::size_t k : {1u, 2u, 3u, 4u})
      for (std::size_t s : {1u, 2u}) {
        const Tensor x = random_tensor({2, 3, 6, 6}, 50 + k * 10 + s);
        const Tensor w = random_tensor({4, 3, k, k}, 60 + k);
        const Tensor b = random_tensor({4}, 70);
        EXPECT_LE(max_abs_diff(conv2d(x, w, b, s, pad), conv_oracle(x, w, b, s, pad)), 1e-12)
            << to_string(pad) << " k=" << k << " s=" << s;
      }
}

TEST(Conv2d, ChannelMismatchThrows) {
  EXPECT_THROW(conv2d(Tensor({1, 2, 4, 4}), Tensor({1, 3, 3, 3}), Tensor({1}), 1, PaddingMode::Circular), ShapeError);
  Conv2dLayer layer(3, 2, 3, 1, PaddingMode::Circular);
  EXPECT_THROW(layer.output_shape({1, 2, 4, 4}), ShapeError);
}

TEST(ConvBlurPool, DeltaReducesToStridedConv) {
  const Tensor x = random_tensor({1, 2, 8, 8}, 7);
  const Tensor w = random_tensor({3, 2, 3, 3}, 8);
  const Tensor b = random_tensor({3}, 9);
  for (auto pad : kAllPads) {
    EXPECT_EQ(conv_blur_pool(x, w, b, make_kernel("Delta-1"), 2, pad), relu(conv2d(x, w, b, 2, pad)));
    EXPECT_LE(max_abs_diff(conv_blur_pool(x, w, b, make_kernel("Tri-3"), 2, pad),
                           blur_pool(relu(conv2d(x, w, b, 1, pad)), make_kernel("Tri-3"), 2, pad)),
              1e-12);
  }
}

TEST(BlurUpsample, Examples) {
  const Tensor one = Tensor::from_rows({{1}});
  EXPECT_EQ(blur_upsample(one, make_kernel("Rect-2"), 2, PaddingMode::Circular), Tensor::from_rows({{1, 1}, {1, 1}}));

  const Tensor c({1, 2, 3, 4}, std::vector<double>(24, 0.3));
  for (const auto& k : all_kernels()) {
    const Tensor same = blur_upsample(c, k, 1, PaddingMode::Circular);
    EXPECT_LE(max_abs_diff(same, c), 1e-15);
    if (k.size() < 2) continue;  // a single tap cannot fill the stuffed zeros
    const Tensor up = blur_upsample(c, k, 2, PaddingMode::Circular);
    ASSERT_EQ(up.shape(), (Shape{1, 2, 6, 8}));
    for (double v : up.values()) EXPECT_NEAR(v, 0.3, 1e-15);
  }

  const Tensor lin = blur_upsample(Tensor::from_vector({0, 1}), make_kernel("Tri-3"), 2, PaddingMode::Circular);
  expect_values(lin, {0, 0.5, 1, 0.5});
}

TEST(BlurUpsample, RectTwoIsNearestNeighbour) {
  const Tensor x = random_tensor({2, 3, 4}, 11);
  EXPECT_LE(max_abs_diff(blur_upsample(x, make_kernel("Rect-2"), 2, PaddingMode::Circular), upsample_nearest(x, 2)),
            1e-15);
}

TEST(BlurUpsample, TriThreeIsLinearInterpolation) {
  const Tensor x = random_tensor({1, 6}, 12);
  const Tensor y = blur_upsample(x, make_kernel("Tri-3"), 2, PaddingMode::Circular);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(y[2 * i], x[i], 1e-15);
    EXPECT_NEAR(y[2 * i + 1], 0.5 * (x[i] + x[(i + 1) % 6]), 1e-15);
  }
}

// ----------------------------------------------------------------------------
// Equivariance
// ----------------------------------------------------------------------------

TEST(Equivariance, StrideOneOpsCommuteWithShift) {
  const Tensor x = random_tensor({1, 2, 8, 8}, 13);
  const Tensor w = random_tensor({3, 2, 3, 3}, 14);
  const Tensor b = random_tensor({3}, 15);
  const auto pad = PaddingMode::Circular;
  for (std::int64_t dh = -4; dh <= 4; ++dh)
    for (std::int64_t dw = -4; dw <= 4; dw += 3) {
      const ShiftOffset o{dh, dw};
      EXPECT_EQ(conv2d(shift_circular(x, o), w, b, 1, pad), shift_circular(conv2d(x, w, b, 1, pad), o));
      EXPECT_EQ(relu(shift_circular(x, o)), shift_circular(relu(x), o));
      for (std::size_t k : {2u, 3u}) EXPECT_EQ(max_dense(shift_circular(x, o), k, pad), shift_circular(max_dense(x, k, pad), o));
    }
}

TEST(Equivariance, StrideTwoOpsArePeriodic) {
  const Tensor x = random_tensor({1, 2, 8, 8}, 16);
  const auto pad = PaddingMode::Circular;
  const BlurKernel bin5 = make_kernel("Bin-5");
  for (std::int64_t a = -2; a <= 2; ++a)
    for (std::int64_t b = -2; b <= 2; ++b) {
      const ShiftOffset fine{2 * a, 2 * b};
      const ShiftOffset coarse{a, b};
      EXPECT_EQ(max_pool(shift_circular(x, fine), 2, 2, pad), shift_circular(max_pool(x, 2, 2, pad), coarse));
      EXPECT_EQ(max_blur_pool(shift_circular(x, fine), 2, bin5, 2, pad),
                shift_circular(max_blur_pool(x, 2, bin5, 2, pad), coarse));
    }
}

// ----------------------------------------------------------------------------
// Layers: gradients, caches, shapes
// ----------------------------------------------------------------------------

TEST(LayerGradients, Conv) {
  for (auto pad : kAllPads)
    for (std::size_t k : {1u, 2u, 3u})
      for (std::size_t s : {1u, 2u}) {
        Conv2dLayer layer(2, 3, k, s, pad);
        randomize_params(layer, 100 + k);
        check_gradients(layer, random_tensor({2, 2, 6, 6}, 110 + s), 120);
      }
}

TEST(LayerGradients, Pointwise) {
  ReluLayer relu_layer;
  check_gradients(relu_layer, random_tensor({2, 2, 4, 4}, 130), 131);
  SigmoidLayer sigmoid_layer;
  check_gradients(sigmoid_layer, random_tensor({2, 2, 4, 4}, 132, -4, 4), 133);
}

TEST(LayerGradients, ReluBlocksNegativeInputs) {
  ReluLayer layer;
  const Tensor x({1, 1, 1, 3}, {-2.0, -0.5, 1.0});
  const auto fwd = layer.forward(x);
  const auto back = layer.backward(fwd.cache, Tensor({1, 1, 1, 3}, {5.0, 5.0, 5.0}));
  EXPECT_EQ(back.input_grad.values(), (std::vector<double>{0, 0, 5}));
}

TEST(LayerGradients, MaxOps) {
  for (auto pad : kAllPads) {
    const Tensor x = random_tensor({2, 2, 6, 6}, 140);
    MaxDenseLayer dense(3, pad);
    check_gradients(dense, x, 141);
    MaxPoolLayer pool(2, 2, pad);
    check_gradients(pool, x, 142);
    MaxPoolLayer pool3(3, 2, pad);
    check_gradients(pool3, x, 143);
  }
}

TEST(LayerGradients, SubsampleAndAverage) {
  for (auto pad : kAllPads) {
    const Tensor x = random_tensor({2, 2, 6, 6}, 150);
    SubsampleLayer sub(2, pad);
    check_gradients(sub, x, 151);
    AvgPoolLayer avg(2, 2, pad);
    check_gradients(avg, x, 152);
    AvgPoolLayer avg3(3, 2, pad);
    check_gradients(avg3, x, 153);
  }
}

TEST(LayerGradients, SubsampleBackwardZeroStuffs) {
  SubsampleLayer layer(2, PaddingMode::Circular);
  const Tensor x = random_tensor({1, 1, 4, 4}, 154);
  const auto fwd = layer.forward(x);
  const Tensor dy({1, 1, 2, 2}, {1, 2, 3, 4});
  const auto back = layer.backward(fwd.cache, dy);
  EXPECT_EQ(back.input_grad.values(), (std::vector<double>{1, 0, 2, 0, 0, 0, 0, 0, 3, 0, 4, 0, 0, 0, 0, 0}));
}

TEST(LayerGradients, BlurLayers) {
  for (auto pad : kAllPads) {
    for (const std::string name : {"Rect-2", "Tri-3", "Bin-4", "Bin-5"}) {
      const BlurKernel k = make_kernel(name);
      const Tensor x = random_tensor({2, 2, 8, 8}, 160);
      BlurPoolLayer blur(k, 2, pad);
      check_gradients(blur, x, 161);
      MaxBlurPoolLayer mbp(2, k, 2, pad);
      check_gradients(mbp, x, 162);
      MaxBlurPoolLayer swapped(2, k, 2, pad, true);
      check_gradients(swapped, x, 163);
      ConvBlurPoolLayer cbp(2, 3, 3, k, 2, pad);
      randomize_params(cbp, 164);
      check_gradients(cbp, x, 165);
      BlurUpsampleLayer up(k, 2, pad);
      check_gradients(up, random_tensor({2, 2, 4, 4}, 166), 167);
    }
  }
}

TEST(LayerGradients, HeadLayers) {
  FlattenLayer flatten;
  check_gradients(flatten, random_tensor({2, 2, 3, 3}, 170), 171);
  GlobalAvgPoolLayer gap;
  check_gradients(gap, random_tensor({2, 3, 4, 4}, 172), 173);
  LinearLayer linear(5, 3);
  randomize_params(linear, 174);
  check_gradients(linear, random_tensor({4, 5}, 175), 176);
}

TEST(LayerGradients, SoftmaxCrossEntropy) {
  const Tensor logits = random_tensor({3, 4}, 180, -3, 3);
  const std::vector<int> labels{0, 3, 1};
  const XentResult r = softmax_xent(logits, labels);
  const auto f = [&](const Tensor& z) { return softmax_xent(z, labels).loss; };
  EXPECT_LT(relative_error(r.logits_grad, numeric_gradient(f, logits)), 1e-4);
  for (std::size_t n = 0; n < 3; ++n) {
    double row = 0.0;
    for (std::size_t k = 0; k < 4; ++k) row += r.probabilities.at({n, k});
    EXPECT_NEAR(row, 1.0, 1e-15);
  }
  EXPECT_THROW(softmax_xent(logits, std::vector<int>{0, 4, 1}), ArgumentError);
  EXPECT_THROW(softmax_xent(logits, std::vector<int>{0, 1}), ShapeError);
}

TEST(LayerGradients, SoftmaxIsStableForLargeLogits) {
  const Tensor logits({1, 3}, {1000.0, 1000.0, -1000.0});
  const Tensor p = softmax(logits);
  EXPECT_NEAR(p[0], 0.5, 1e-15);
  EXPECT_NEAR(p[1], 0.5, 1e-15);
  EXPECT_TRUE(p.all_finite());
}

TEST(LayerCacheContract, RejectsForeignStaleAndMisshapedCaches) {
  Conv2dLayer a(1, 2, 3, 1, PaddingMode::Circular);
  Conv2dLayer b(1, 2, 3, 1, PaddingMode::Circular);
  randomize_params(a, 190);
  const Tensor x = random_tensor({1, 1, 4, 4}, 191);
  const auto fwd = a.forward(x);
  const Tensor dy({1, 2, 4, 4});
  EXPECT_NO_THROW(a.backward(fwd.cache, dy));
  EXPECT_THROW(b.backward(fwd.cache, dy), CacheError);
  EXPECT_THROW(a.backward(fwd.cache, Tensor({1, 2, 2, 2})), CacheError);
  a.mutable_params();
  EXPECT_THROW(a.backward(fwd.cache, dy), CacheError);

  ReluLayer r;
  const auto rf = r.forward(x);
  std::unique_ptr<Layer> copy = r.clone();
  EXPECT_NE(copy->id(), r.id());
  EXPECT_THROW(copy->backward(rf.cache, x), CacheError);
}

TEST(LayerShapes, CircularStrideMustDivide) {
  MaxPoolLayer pool(2, 2, PaddingMode::Circular);
  EXPECT_THROW(pool.output_shape({1, 1, 5, 4}), ShapeError);
  EXPECT_EQ(pool.output_shape({1, 1, 6, 4}), (Shape{1, 1, 3, 2}));
  MaxPoolLayer zero_pool(2, 2, PaddingMode::Zero);
  EXPECT_EQ(zero_pool.output_shape({1, 1, 5, 4}), (Shape{1, 1, 3, 2}));
  EXPECT_THROW(max_pool(Tensor({1, 1, 4, 4}), 0, 2, PaddingMode::Zero), ArgumentError);
  EXPECT_THROW(BlurUpsampleLayer(make_kernel("Tri-3"), 0, PaddingMode::Zero).output_shape({1, 1, 2, 2}), ArgumentError);
}

}  // namespace
}  // namespace bplab
