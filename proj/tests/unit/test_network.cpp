

#include <gtest/gtest.h>

#include <random>
#include <set>

#include "ddspseg/losses.hpp"
#include "ddspseg/network.hpp"
#include "fd.hpp"

using namespace ddspseg::nn;
using ddspseg::testing::check_module;
using ddspseg::testing::random_tensor;

namespace {

void randomize_all(ParamRefs<double>& refs, std::mt19937_64& rng, double scale = 0.5) {
  for (auto* p : refs.params) ddspseg::testing::fill_uniform(p->value, rng, -scale, scale);
}

}  // namespace

TEST(DdspConfig, ChannelFormula) {
  DdspConfig cfg;
  cfg.growth = 4;
  EXPECT_EQ(cfg.output_channels(8), 36);
  for (int growth : {1, 3, 8}) {
    for (int c_in : {1, 8, 32}) {
      cfg.growth = growth;
      EXPECT_EQ(cfg.output_channels(c_in), c_in + 7 * growth);
      DdspBlock<float> block("b", c_in, cfg);
      Tensor5<float> x({1, c_in, 4, 4, 4}, 0.5f);
      EXPECT_EQ(block.forward(x, Mode::eval).shape().c, c_in + 7 * growth);
    }
  }
}

TEST(DdspConfig, RejectsInvalidRates) {
  DdspConfig bad;
  bad.dilation_rates = {1, 1};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = {};
  bad.pooling_rates = {4, 2};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = {};
  bad.dilation_rates = {0, 2};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = {};
  bad.dilation_rates = {};
  bad.pooling_rates = {};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = {};
  bad.growth = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(DdspBlock, DilationOnlyAndPoolingOnlyConfigsBuild) {
  DdspConfig dil;
  dil.pooling_rates = {};
  DdspConfig pool;
  pool.dilation_rates = {};
  DdspBlock<float> a("a", 8, dil), b("b", 8, pool);
  Tensor5<float> x({2, 8, 8, 8, 8}, 1.0f);
  EXPECT_EQ(a.forward(x, Mode::train).shape(), (Shape5{2, 8 + 4 * 8, 8, 8, 8}));
  EXPECT_EQ(b.forward(x, Mode::train).shape(), (Shape5{2, 8 + 3 * 8, 8, 8, 8}));
}

TEST(DdspBlock, OutputStartsWithTheBlockInput) {
  std::mt19937_64 rng(2);
  DdspBlock<double> block("b", 3, DdspConfig{{1, 2}, {2}, 2});
  auto x = random_tensor({1, 3, 4, 4, 4}, rng);
  auto y = block.forward(x, Mode::train);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(DdspBlock, GradientsMatchFiniteDifferencesDenseAndParallel) {
  std::mt19937_64 rng(1);
  for (auto wiring : {BlockWiring::dense, BlockWiring::parallel}) {
    DdspBlock<double> block("b", 2, DdspConfig{{1, 2}, {2, 3}, 2}, wiring);
    ParamRefs<double> refs;
    block.collect(refs);
    randomize_all(refs, rng);
    auto r = check_module(block, random_tensor({2, 2, 4, 4, 4}, rng), Mode::train, rng, 48);
    EXPECT_LT(r.worst, 1e-3) << (wiring == BlockWiring::dense ? "dense" : "parallel");
  }
}

TEST(DdspBlock, DenseAndParallelWiringsDiffer) {
  DdspConfig cfg{{1, 2}, {}, 2};
  DdspBlock<double> dense("b", 2, cfg, BlockWiring::dense);
  DdspBlock<double> parallel("b", 2, cfg, BlockWiring::parallel);
  ParamRefs<double> rd, rp;
  dense.collect(rd);
  parallel.collect(rp);
  // The second dense branch sees 4 input channels, the parallel one only 2.
  EXPECT_EQ(rd.params[4]->shape[1], 4);
  EXPECT_EQ(rp.params[4]->shape[1], 2);
}

TEST(GlobalPyramidPool, RateOneIsThePlainProjection) {
  std::mt19937_64 rng(43);
  GlobalPyramidPool<double> gp("g", 3, 2, 1);
  Conv3d<double> proj("p", 3, 2, 1);
  ddspseg::testing::fill_uniform(gp.projection().weight().value, rng);
  proj.weight().value = gp.projection().weight().value;
  auto x = random_tensor({1, 3, 4, 4, 4}, rng);
  EXPECT_EQ(gp.forward(x, Mode::eval).vec(), proj.forward(x, Mode::eval).vec());
}

TEST(GlobalPyramidPool, ConstantInputGivesConstantOutput) {
  std::mt19937_64 rng(47);
  for (int rate : {2, 3, 6}) {
    GlobalPyramidPool<double> gp("g", 2, 3, rate);
    ddspseg::testing::fill_uniform(gp.projection().weight().value, rng);
    ddspseg::testing::fill_uniform(gp.projection().bias().value, rng);
    Tensor5<double> x({1, 2, 4, 4, 4}, 1.75);
    auto y = gp.forward(x, Mode::eval);
    ASSERT_EQ(y.shape(), (Shape5{1, 3, 4, 4, 4}));
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 1; i < 64; ++i) EXPECT_NEAR(y.channel(0, c)[i], y.channel(0, c)[0], 1e-14);
  }
}

TEST(GlobalPyramidPool, RateTwoPoolsToHalfGridAndUpsamplesBack) {
  GlobalPyramidPool<double> gp("g", 1, 1, 2);
  gp.projection().weight().value = {1.0};
  Tensor5<double> x({1, 1, 4, 4, 4});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  auto y = gp.forward(x, Mode::eval);
  ASSERT_EQ(y.shape(), x.shape());
  // Voxels in the same 2x2x2 cell share one value; different cells differ.
  EXPECT_EQ(y.at(0, 0, 0, 0, 0), y.at(0, 0, 1, 1, 1));
  EXPECT_NE(y.at(0, 0, 0, 0, 0), y.at(0, 0, 2, 0, 0));
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 0, 0), (0 + 1 + 4 + 5 + 16 + 17 + 20 + 21) / 8.0);
}

TEST(DilatedBranch, ImpulseResponseSpansTwoRatePlusOne) {
  for (int r : {1, 2, 3, 4}) {
    Conv3d<double> conv("c", 1, 1, 3, 1, r);
    std::fill(conv.weight().value.begin(), conv.weight().value.end(), 1.0);
    Tensor5<double> x({1, 1, 15, 15, 15});
    x.at(0, 0, 7, 7, 7) = 1.0;
    auto y = conv.forward(x, Mode::eval);
    int lo = 15, hi = -1;
    for (int i = 0; i < 15; ++i) {
      if (y.at(0, 0, i, 7, 7) != 0.0) {
        lo = std::min(lo, i);
        hi = std::max(hi, i);
      }
    }
    EXPECT_EQ(hi - lo + 1, 2 * r + 1) << "rate " << r;
  }
}

TEST(Network, SixteenCubedInputGivesThreeFullResolutionMaps) {
  Network<float> net(NetConfig{});
  Tensor5<float> x({1, 1, 16, 16, 16}, 0.3f);
  auto h = net.forward(x, Mode::train);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(h[k].shape(), (Shape5{1, 1, 16, 16, 16}));
    for (float v : h[k].vec()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}

TEST(Network, RejectsIndivisibleDimsAndWrongChannels) {
  Network<float> net(NetConfig{});
  EXPECT_THROW(net.forward(Tensor5<float>({1, 1, 16, 18, 16}), Mode::eval), std::invalid_argument);
  EXPECT_THROW(net.forward(Tensor5<float>({1, 2, 16, 16, 16}), Mode::eval), std::invalid_argument);
}

TEST(Network, ConfigValidation) {
  NetConfig c;
  c.fusion = {false, true, true};
  EXPECT_THROW(Network<float>{c}, std::invalid_argument);
  c = {};
  c.ddsp.dilation_rates = {3, 2};
  EXPECT_THROW(Network<float>{c}, std::invalid_argument);
  c.block = BlockKind::none;  // rates are irrelevant without a block
  EXPECT_NO_THROW(Network<float>{c});
}

TEST(Network, ResidualWithZeroedSkipsEqualsNoLongConnection) {
  NetConfig none;
  none.long_connection = LongConnection::none;
  NetConfig residual;
  residual.skip_scale = 0.0;
  Network<float> a(none), b(residual);
  a.initialize(5);
  b.initialize(5);
  std::mt19937_64 rng(53);
  Tensor5<float> x({2, 1, 16, 16, 16});
  for (auto& v : x.vec()) v = std::uniform_real_distribution<float>(0, 1)(rng);
  auto ha = a.forward(x, Mode::train);
  auto hb = b.forward(x, Mode::train);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(ha[k].vec(), hb[k].vec());

  residual.skip_scale = 1.0;
  Network<float> c(residual);
  c.initialize(5);
  EXPECT_NE(c.forward(x, Mode::train).main.vec(), ha.main.vec());
}

TEST(Network, ParameterNamesAreUniqueAndInitializationIsSeeded) {
  NetConfig cfg;
  cfg.long_connection = LongConnection::concat;
  Network<float> a(cfg), b(cfg);
  std::set<std::string> names;
  for (auto* p : a.parameters().params) EXPECT_TRUE(names.insert(p->name).second) << p->name;
  for (auto* p : a.parameters().buffers) EXPECT_TRUE(names.insert(p->name).second) << p->name;
  EXPECT_TRUE(names.count("link1.merge.conv.weight"));
  EXPECT_TRUE(names.count("block.pool6.proj.weight"));
  a.initialize(9);
  b.initialize(9);
  for (std::size_t i = 0; i < a.parameters().params.size(); ++i) {
    EXPECT_EQ(a.parameters().params[i]->value, b.parameters().params[i]->value);
  }
  b.initialize(10);
  EXPECT_NE(a.parameters().params[0]->value, b.parameters().params[0]->value);
}

TEST(Network, InitializationFollowsTheDeclaredScheme) {
  Network<double> net(NetConfig{});
  net.initialize(1);
  for (auto* p : net.parameters().params) {
    const auto& n = p->name;
    if (n.ends_with(".bias") || n.ends_with(".beta")) {
      for (double v : p->value) ASSERT_EQ(v, 0.0) << n;
    } else if (n.ends_with(".gamma")) {
      for (double v : p->value) ASSERT_EQ(v, 1.0) << n;
    } else if (n.ends_with(".conv.weight") && p->size() > 1000) {
      double s = 0, sq = 0;
      for (double v : p->value) {
        s += v;
        sq += v * v;
      }
      const double mean = s / p->size();
      EXPECT_NEAR(std::sqrt(sq / p->size() - mean * mean), 0.01, 0.002) << n;
    }
  }
}

TEST(Network, CompositeDiceGradientMatchesFiniteDifferences) {
  NetConfig cfg;
  cfg.widths = {2, 3, 4};
  cfg.ddsp.growth = 2;
  Network<double> net(cfg);
  std::mt19937_64 rng(59);
  randomize_all(net.parameters(), rng);
  auto x = random_tensor({2, 1, 8, 8, 8}, rng, 0.0, 1.0);
  std::vector<double> gt(x.size() / 2 * 1);
  for (std::size_t i = 0; i < gt.size(); ++i) gt[i] = (i % 7 == 0) ? 1.0 : 0.0;

  const auto w = cfg.supervision;
  auto total_loss = [&](const Heads<double>& h, Heads<double>* grads) {
    double total = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      if (grads) (*grads)[k] = Tensor5<double>(h[k].shape());
      for (int b = 0; b < 2; ++b) {
        const std::size_t n = h[k].shape().spatial();
        std::span<const double> p(h[k].sample(b), n);
        auto e = ddspseg::loss::dsc_loss(p, gt);
        total += w[k] * e.value / 2;
        if (grads) {
          for (std::size_t i = 0; i < n; ++i) (*grads)[k].sample(b)[i] = w[k] * e.grad[i] / 2;
        }
      }
    }
    return total;
  };

  net.zero_grad();
  Heads<double> d;
  total_loss(net.forward(x, Mode::train), &d);
  net.backward(d);

  auto f = [&] { return total_loss(net.forward(x, Mode::train), nullptr); };
  double worst = 0.0;
  std::size_t probed = 0;
  // Probe a slice of two parameter tensors in every named layer group.
  for (auto* p : net.parameters().params) {
    const auto analytic = p->grad;
    for (std::size_t i = 0; i < std::min<std::size_t>(p->size(), 2); ++i) {
      const double err = ddspseg::testing::fd_rel_err(f, p->value[i], analytic[i], 1e-5, 1e-3);
      worst = std::max(worst, err);
      ++probed;
      EXPECT_LT(err, 1e-3) << p->name << "[" << i << "] analytic " << analytic[i];
    }
  }
  EXPECT_GT(probed, 50u);
  RecordProperty("worst_rel_err", std::to_string(worst));
}

TEST(Network, EvalModeIsBatchSizeInvariant) {
  Network<float> net(NetConfig{});
  net.initialize(3);
  std::mt19937_64 rng(61);
  Tensor5<float> pair({2, 1, 8, 8, 8});
  for (auto& v : pair.vec()) v = std::uniform_real_distribution<float>(0, 1)(rng);
  Tensor5<float> single({1, 1, 8, 8, 8});
  std::copy(pair.sample(1), pair.sample(1) + single.size(), single.vec().begin());
  auto a = net.forward(pair, Mode::eval);
  auto b = net.forward(single, Mode::eval);
  for (std::size_t i = 0; i < single.size(); ++i) EXPECT_EQ(a.main.sample(1)[i], b.main[i]);
}

TEST(FuseOutputs, MaskSemantics) {
  std::mt19937_64 rng(67);
  Heads<float> h;
  for (std::size_t k = 0; k < 3; ++k) {
    h[k] = Tensor5<float>({1, 1, 4, 4, 4});
    for (auto& v : h[k].vec()) v = std::uniform_real_distribution<float>(0, 1)(rng);
  }
  EXPECT_EQ(fuse_outputs(h, {true, false, false}).vec(), h.main.vec());
  auto all = fuse_outputs(h, {true, true, true});
  for (std::size_t i = 0; i < all.size(); ++i) {
    ASSERT_GE(all[i], 0.0f);
    ASSERT_LE(all[i], 1.0f);
    ASSERT_NEAR(all[i], (h.main[i] + h.stage2[i] + h.stage3[i]) / 3.0f, 1e-6f);
  }
  Heads<float> same{h.main, h.main, h.main};
  EXPECT_EQ(fuse_outputs(same, {true, true, true}).vec(), h.main.vec());
  EXPECT_THROW(fuse_outputs(h, {false, false, false}), std::invalid_argument);
}
