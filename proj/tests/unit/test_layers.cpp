#include <gtest/gtest.h>

#include <random>

#include "ddspseg/layers.hpp"
#include "fd.hpp"

using namespace ddspseg::nn;
using ddspseg::testing::check_module;
using ddspseg::testing::random_tensor;

namespace {

constexpr double kLayerTol = 1e-3;

/// Direct-loop dilated, strided cross-correlation with zero padding.
Tensor5<double> naive_conv(const Tensor5<double>& x, const std::vector<double>& w, const std::vector<double>& b,
                           int out_c, int k, int stride, int dil) {
  const Shape5& s = x.shape();
  const int pad = dil * (k - 1) / 2;
  auto ext = [&](int n) { return (n + 2 * pad - dil * (k - 1) - 1) / stride + 1; };
  Tensor5<double> y({s.n, out_c, ext(s.x), ext(s.y), ext(s.z)});
  const Shape5& o = y.shape();
  for (int n = 0; n < s.n; ++n)
    for (int oc = 0; oc < out_c; ++oc)
      for (int z = 0; z < o.z; ++z)
        for (int yy = 0; yy < o.y; ++yy)
          for (int xx = 0; xx < o.x; ++xx) {
            double acc = b[oc];
            for (int ic = 0; ic < s.c; ++ic)
              for (int kz = 0; kz < k; ++kz)
                for (int ky = 0; ky < k; ++ky)
                  for (int kx = 0; kx < k; ++kx) {
                    const int ix = xx * stride - pad + kx * dil;
                    const int iy = yy * stride - pad + ky * dil;
                    const int iz = z * stride - pad + kz * dil;
                    if (ix < 0 || iy < 0 || iz < 0 || ix >= s.x || iy >= s.y || iz >= s.z) continue;
                    acc += w[(((oc * s.c + ic) * k + kz) * k + ky) * k + kx] * x.at(n, ic, ix, iy, iz);
                  }
            y.at(n, oc, xx, yy, z) = acc;
          }
  return y;
}

/// Direct scatter form of the transposed convolution.
Tensor5<double> naive_deconv(const Tensor5<double>& x, const std::vector<double>& w, const std::vector<double>& b,
                             int out_c, int k, int stride, int pad) {
  const Shape5& s = x.shape();
  auto ext = [&](int n) { return (n - 1) * stride - 2 * pad + k; };
  Tensor5<double> y({s.n, out_c, ext(s.x), ext(s.y), ext(s.z)});
  const Shape5& o = y.shape();
  for (int n = 0; n < s.n; ++n)
    for (int oc = 0; oc < out_c; ++oc)
      for (int z = 0; z < o.z; ++z)
        for (int yy = 0; yy < o.y; ++yy)
          for (int xx = 0; xx < o.x; ++xx) y.at(n, oc, xx, yy, z) = b[oc];
  for (int n = 0; n < s.n; ++n)
    for (int ic = 0; ic < s.c; ++ic)
      for (int z = 0; z < s.z; ++z)
        for (int yy = 0; yy < s.y; ++yy)
          for (int xx = 0; xx < s.x; ++xx)
            for (int oc = 0; oc < out_c; ++oc)
              for (int kz = 0; kz < k; ++kz)
                for (int ky = 0; ky < k; ++ky)
                  for (int kx = 0; kx < k; ++kx) {
                    const int px = xx * stride - pad + kx, py = yy * stride - pad + ky, pz = z * stride - pad + kz;
                    if (px < 0 || py < 0 || pz < 0 || px >= o.x || py >= o.y || pz >= o.z) continue;
                    y.at(n, oc, px, py, pz) += w[(((ic * out_c + oc) * k + kz) * k + ky) * k + kx] * x.at(n, ic, xx, yy, z);
                  }
  return y;
}

void randomize(Parameter<double>& p, std::mt19937_64& rng) { ddspseg::testing::fill_uniform(p.value, rng); }

}  // namespace

TEST(Conv3d, PointwiseUnitKernelIsIdentity) {
  Conv3d<double> conv("c", 1, 1, 1);
  conv.weight().value = {1.0};
  std::mt19937_64 rng(1);
  auto x = random_tensor({2, 1, 3, 4, 5}, rng);
  auto y = conv.forward(x, Mode::eval);
  EXPECT_EQ(y.vec(), x.vec());
}

TEST(Conv3d, DilatedSamePaddingPreservesExtent) {
  Conv3d<float> conv("c", 1, 2, 3, 1, 2);
  Tensor5<float> x({1, 1, 8, 8, 8});
  EXPECT_EQ(conv.forward(x, Mode::eval).shape(), (Shape5{1, 2, 8, 8, 8}));
}

TEST(Conv3d, StrideTwoHalvesEvenExtents) {
  Conv3d<float> conv("c", 3, 4, 3, 2);
  EXPECT_EQ(conv.output_shape({2, 3, 8, 6, 4}), (Shape5{2, 4, 4, 3, 2}));
}

TEST(Conv3d, RejectsChannelMismatchAndEvenKernels) {
  Conv3d<float> conv("c", 2, 1, 3);
  Tensor5<float> x({1, 3, 4, 4, 4});
  EXPECT_THROW(conv.forward(x, Mode::eval), std::invalid_argument);
  EXPECT_THROW(Conv3d<float>("e", 1, 1, 2), std::invalid_argument);
}

TEST(Conv3d, MatchesDirectLoops) {
  std::mt19937_64 rng(7);
  for (auto [k, stride, dil] : std::vector<std::array<int, 3>>{{1, 1, 1}, {3, 1, 1}, {3, 2, 1}, {3, 1, 3}, {5, 2, 2}}) {
    Conv3d<double> conv("c", 2, 3, k, stride, dil);
    randomize(conv.weight(), rng);
    randomize(conv.bias(), rng);
    auto x = random_tensor({2, 2, 5, 6, 7}, rng);
    auto got = conv.forward(x, Mode::eval);
    auto want = naive_conv(x, conv.weight().value, conv.bias().value, 3, k, stride, dil);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], want[i], 1e-12) << "k" << k << " s" << stride;
  }
}

// Single precision takes the vectorized direct path; extents that are not
// multiples of the vector width exercise the tails.
TEST(Conv3d, FloatDirectPathMatchesDouble) {
  std::mt19937_64 rng(5);
  for (auto [k, dil] : std::vector<std::array<int, 2>>{{3, 1}, {3, 2}, {3, 4}}) {
    Conv3d<double> cd("c", 3, 5, k, 1, dil);
    Conv3d<float> cf("c", 3, 5, k, 1, dil);
    randomize(cd.weight(), rng);
    randomize(cd.bias(), rng);
    cf.weight().value.assign(cd.weight().value.begin(), cd.weight().value.end());
    cf.bias().value.assign(cd.bias().value.begin(), cd.bias().value.end());
    const auto xd = random_tensor({2, 3, 13, 9, 7}, rng);
    Tensor5<float> xf(xd.shape());
    for (std::size_t i = 0; i < xd.size(); ++i) xf[i] = static_cast<float>(xd[i]);

    const auto yd = cd.forward(xd, Mode::train);
    const auto yf = cf.forward(xf, Mode::train);
    const auto want = naive_conv(xd, cd.weight().value, cd.bias().value, 5, k, 1, dil);
    for (std::size_t i = 0; i < yd.size(); ++i) {
      ASSERT_NEAR(yd[i], want[i], 1e-12);
      ASSERT_NEAR(yf[i], want[i], 1e-4) << "dilation " << dil;
    }

    const auto gd = random_tensor(yd.shape(), rng);
    Tensor5<float> gf(gd.shape());
    for (std::size_t i = 0; i < gd.size(); ++i) gf[i] = static_cast<float>(gd[i]);
    cd.weight().zero_grad();
    cd.bias().zero_grad();
    cf.weight().zero_grad();
    cf.bias().zero_grad();
    const auto dxd = cd.backward(gd);
    const auto dxf = cf.backward(gf);
    for (std::size_t i = 0; i < dxd.size(); ++i) ASSERT_NEAR(dxf[i], dxd[i], 1e-4);
    for (std::size_t i = 0; i < cd.weight().grad.size(); ++i)
      ASSERT_NEAR(cf.weight().grad[i], cd.weight().grad[i], 1e-3 * (1.0 + std::abs(cd.weight().grad[i])));
    for (std::size_t i = 0; i < cd.bias().grad.size(); ++i)
      ASSERT_NEAR(cf.bias().grad[i], cd.bias().grad[i], 1e-3 * (1.0 + std::abs(cd.bias().grad[i])));
  }
}

TEST(Conv3d, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  for (auto [stride, dil] : std::vector<std::array<int, 2>>{{1, 1}, {1, 2}, {2, 1}}) {
    Conv3d<double> conv("c", 2, 3, 3, stride, dil);
    randomize(conv.weight(), rng);
    randomize(conv.bias(), rng);
    auto r = check_module(conv, random_tensor({1, 2, 4, 4, 4}, rng), Mode::train, rng, 200);
    EXPECT_LT(r.worst, kLayerTol) << "stride " << stride << " dilation " << dil;
  }
  Conv3d<double> pw("p", 3, 2, 1);
  randomize(pw.weight(), rng);
  EXPECT_LT(check_module(pw, random_tensor({2, 3, 3, 3, 3}, rng), Mode::train, rng).worst, kLayerTol);
}

TEST(ConvTranspose3d, DoublesExtentAndMatchesDirectScatter) {
  std::mt19937_64 rng(3);
  ConvTranspose3d<double> up("u", 3, 2);
  randomize(up.weight(), rng);
  randomize(up.bias(), rng);
  auto x = random_tensor({2, 3, 2, 3, 4}, rng);
  auto got = up.forward(x, Mode::eval);
  EXPECT_EQ(got.shape(), (Shape5{2, 2, 4, 6, 8}));
  auto want = naive_deconv(x, up.weight().value, up.bias().value, 2, 4, 2, 1);
  for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], want[i], 1e-12);
}

TEST(ConvTranspose3d, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  ConvTranspose3d<double> up("u", 2, 3);
  randomize(up.weight(), rng);
  randomize(up.bias(), rng);
  EXPECT_LT(check_module(up, random_tensor({1, 2, 3, 3, 3}, rng), Mode::train, rng, 200).worst, kLayerTol);
}

TEST(ConvTranspose3d, TrilinearInitInterpolatesConstantsInTheInterior) {
  for (auto [in, out] : std::vector<std::array<int, 2>>{{1, 1}, {4, 2}, {2, 4}}) {
    ConvTranspose3d<double> up("u", in, out);
    up.init_trilinear();
    Tensor5<double> x({1, in, 4, 4, 4}, 2.5);
    auto y = up.forward(x, Mode::eval);
    for (int c = 0; c < out; ++c)
      for (int z = 1; z < 7; ++z)
        for (int yy = 1; yy < 7; ++yy)
          for (int xx = 1; xx < 7; ++xx) ASSERT_NEAR(y.at(0, c, xx, yy, z), 2.5, 1e-12) << in << "->" << out;
  }
}

TEST(BatchNorm3d, TrainModeNormalizesEachChannel) {
  std::mt19937_64 rng(9);
  BatchNorm3d<double> bn("bn", 3);
  auto x = random_tensor({2, 3, 4, 4, 4}, rng, 2.0, 5.0);
  auto y = bn.forward(x, Mode::train);
  for (int c = 0; c < 3; ++c) {
    double s = 0, sq = 0;
    for (int b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < 64; ++i) {
        s += y.channel(b, c)[i];
        sq += y.channel(b, c)[i] * y.channel(b, c)[i];
      }
    EXPECT_NEAR(s / 128, 0.0, 1e-12);
    EXPECT_NEAR(sq / 128, 1.0, 1e-3);
  }
  // Running moments moved 10% of the way toward the batch moments.
  EXPECT_GT(bn.running_mean().value[0], 0.2);
  EXPECT_LT(bn.running_mean().value[0], 0.5);
}

TEST(BatchNorm3d, GradientsMatchFiniteDifferencesInBothModes) {
  std::mt19937_64 rng(13);
  for (Mode mode : {Mode::train, Mode::eval}) {
    BatchNorm3d<double> bn("bn", 2);
    randomize(bn.gamma(), rng);
    randomize(bn.beta(), rng);
    bn.running_mean().value = {0.3, -0.2};
    bn.running_var().value = {1.7, 0.4};
    EXPECT_LT(check_module(bn, random_tensor({2, 2, 3, 3, 3}, rng), mode, rng, 108).worst, kLayerTol);
  }
}

TEST(BatchNorm3d, EvalModeIsBatchSizeInvariantPerSample) {
  std::mt19937_64 rng(17);
  BatchNorm3d<float> bn("bn", 2);
  bn.running_mean().value = {0.5f, -1.0f};
  bn.running_var().value = {2.0f, 0.25f};
  Tensor5<float> pair({2, 2, 3, 3, 3});
  for (auto& v : pair.vec()) v = std::uniform_real_distribution<float>(-1, 1)(rng);
  Tensor5<float> first({1, 2, 3, 3, 3});
  std::copy(pair.sample(0), pair.sample(0) + first.size(), first.vec().begin());
  auto a = bn.forward(pair, Mode::eval);
  auto b = bn.forward(first, Mode::eval);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Activations, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(19);
  Relu<double> relu;
  Sigmoid<double> sig;
  EXPECT_LT(check_module(relu, random_tensor({1, 2, 3, 3, 3}, rng), Mode::train, rng).worst, kLayerTol);
  EXPECT_LT(check_module(sig, random_tensor({1, 2, 3, 3, 3}, rng, -4, 4), Mode::train, rng).worst, kLayerTol);
}

TEST(AvgPool3d, CeilModeAveragesValidVoxels) {
  AvgPool3d<double> pool(2);
  Tensor5<double> x({1, 1, 3, 1, 1});
  x.vec() = {1.0, 3.0, 10.0};
  auto y = pool.forward(x, Mode::eval);
  ASSERT_EQ(y.shape(), (Shape5{1, 1, 2, 1, 1}));
  EXPECT_DOUBLE_EQ(y[0], 2.0);
  EXPECT_DOUBLE_EQ(y[1], 10.0);
}

TEST(AvgPool3d, RateLargerThanGridCollapsesToOneCell) {
  AvgPool3d<double> pool(6);
  Tensor5<double> x({1, 1, 4, 4, 4}, 1.0);
  x[0] = 65.0;
  auto y = pool.forward(x, Mode::eval);
  ASSERT_EQ(y.shape(), (Shape5{1, 1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y[0], 2.0);
}

TEST(AvgPool3d, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(23);
  for (int rate : {1, 2, 3}) {
    AvgPool3d<double> pool(rate);
    EXPECT_LT(check_module(pool, random_tensor({2, 2, 5, 4, 3}, rng), Mode::train, rng).worst, kLayerTol);
  }
}

TEST(UpsampleNearest, CopiesSourceVoxelAndSumsGradients) {
  std::mt19937_64 rng(29);
  UpsampleNearest<double> up(2, {5, 4, 3});
  auto x = random_tensor({1, 2, 3, 2, 2}, rng);
  auto y = up.forward(x, Mode::eval);
  ASSERT_EQ(y.shape(), (Shape5{1, 2, 5, 4, 3}));
  EXPECT_EQ(y.at(0, 1, 4, 3, 2), x.at(0, 1, 2, 1, 1));
  EXPECT_LT(check_module(up, x, Mode::train, rng).worst, kLayerTol);
}

TEST(UpsampleNearest, RejectsTargetBeyondSource) {
  UpsampleNearest<float> up(2, {8, 8, 8});
  Tensor5<float> x({1, 1, 2, 2, 2});
  EXPECT_THROW(up.forward(x, Mode::eval), std::invalid_argument);
}

TEST(Composites, ConvBnReluAndUpConvGradients) {
  std::mt19937_64 rng(31);
  ConvBnRelu<double> cbr("cbr", 2, 3, 3, 2);
  randomize(cbr.conv().weight(), rng);
  EXPECT_LT(check_module(cbr, random_tensor({2, 2, 4, 4, 4}, rng), Mode::train, rng).worst, kLayerTol);
  UpConvBnRelu<double> ucbr("u", 3, 2);
  ucbr.deconv().init_trilinear();
  EXPECT_LT(check_module(ucbr, random_tensor({2, 3, 2, 2, 2}, rng), Mode::train, rng).worst, kLayerTol);
}

TEST(Channels, ConcatThenSplitRoundTrips) {
  std::mt19937_64 rng(37);
  auto a = random_tensor({2, 1, 2, 3, 2}, rng);
  auto b = random_tensor({2, 3, 2, 3, 2}, rng);
  auto cat = concat_channels<double>({&a, &b});
  EXPECT_EQ(cat.shape(), (Shape5{2, 4, 2, 3, 2}));
  EXPECT_EQ(cat.at(1, 2, 1, 2, 1), b.at(1, 1, 1, 2, 1));
  auto parts = split_channels(cat, {1, 3});
  EXPECT_EQ(parts[0].vec(), a.vec());
  EXPECT_EQ(parts[1].vec(), b.vec());
  EXPECT_THROW(split_channels(cat, {1, 2}), std::invalid_argument);
  auto c = random_tensor({1, 1, 2, 3, 2}, rng);
  EXPECT_THROW(concat_channels<double>({&a, &c}), std::invalid_argument);
}
