#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "ddspseg/checkpoint.hpp"
#include "ddspseg/network.hpp"
#include "ddspseg/optim.hpp"

using namespace ddspseg;
using namespace ddspseg::train;
using nn::Parameter;

namespace {

Parameter<double> make_param(std::vector<double> v, std::vector<double> g) {
  Parameter<double> p("w", {static_cast<int>(v.size())});
  p.value = std::move(v);
  p.grad = std::move(g);
  return p;
}

nn::NetConfig small_net() {
  nn::NetConfig c;
  c.widths = {2, 3, 4};
  c.ddsp.growth = 2;
  return c;
}

}  // namespace

TEST(Sgd, FirstStepClosedForm) {
  SgdConfig c;
  c.lr = 0.1;
  c.momentum = 0.9;
  c.weight_decay = 0.01;
  OptimizerState st(c);
  auto p = make_param({1.0, -2.0}, {0.5, 0.25});
  std::vector<Parameter<double>*> ps{&p};
  st.step(ps);
  EXPECT_DOUBLE_EQ(p.value[0], 1.0 - 0.1 * (0.5 + 0.01 * 1.0));
  EXPECT_DOUBLE_EQ(p.value[1], -2.0 - 0.1 * (0.25 + 0.01 * -2.0));
}

TEST(Sgd, ZeroGradientDecaysVelocityOnly) {
  SgdConfig c;
  c.weight_decay = 0.0;
  c.momentum = 0.5;
  OptimizerState st(c);
  auto p = make_param({1.0}, {1.0});
  std::vector<Parameter<double>*> ps{&p};
  st.step(ps);
  const double v1 = st.velocities()[0][0];
  const double after1 = p.value[0];
  p.grad[0] = 0.0;
  st.step(ps);
  EXPECT_DOUBLE_EQ(st.velocities()[0][0], 0.5 * v1);
  EXPECT_DOUBLE_EQ(p.value[0], after1 + 0.5 * v1);

  // From rest, a zero gradient leaves everything unchanged.
  OptimizerState fresh(c);
  auto q = make_param({3.0}, {0.0});
  std::vector<Parameter<double>*> qs{&q};
  fresh.step(qs);
  EXPECT_EQ(q.value[0], 3.0);
}

TEST(Sgd, PlainGradientDescentWithoutMomentumOrDecay) {
  SgdConfig c;
  c.lr = 0.25;
  c.momentum = 0.0;
  c.weight_decay = 0.0;
  OptimizerState st(c);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  auto p = make_param({n(rng), n(rng), n(rng)}, {0, 0, 0});
  std::vector<Parameter<double>*> ps{&p};
  for (int it = 0; it < 20; ++it) {
    auto expect = p.value;
    for (std::size_t i = 0; i < 3; ++i) {
      p.grad[i] = n(rng);
      expect[i] = expect[i] - 0.25 * p.grad[i];
    }
    st.step(ps);
    for (std::size_t i = 0; i < 3; ++i) ASSERT_EQ(p.value[i], expect[i]);
  }
}

TEST(Sgd, LearningRateDecaysEveryPeriod) {
  SgdConfig c;
  c.lr = 1e-3;
  c.decay_period = 3;
  OptimizerState st(c);
  auto p = make_param({0.0}, {0.0});
  std::vector<Parameter<double>*> ps{&p};
  for (int i = 0; i < 2; ++i) st.step(ps);
  EXPECT_EQ(st.lr(), 1e-3);
  st.step(ps);
  EXPECT_DOUBLE_EQ(st.lr(), 0.2e-3);
  for (int i = 0; i < 3; ++i) st.step(ps);
  EXPECT_DOUBLE_EQ(st.lr(), 0.04e-3);
  EXPECT_EQ(st.iteration(), 6);
}

TEST(Sgd, NonFiniteGradientAbortsBeforeAnyUpdate) {
  OptimizerState st(SgdConfig{});
  auto a = make_param({1.0}, {0.5});
  auto b = make_param({2.0}, {std::numeric_limits<double>::quiet_NaN()});
  std::vector<Parameter<double>*> ps{&a, &b};
  EXPECT_THROW(st.step(ps), NonFiniteGradient);
  EXPECT_EQ(a.value[0], 1.0);
  EXPECT_EQ(st.iteration(), 0);
}

TEST(Sgd, ConfigValidation) {
  SgdConfig c;
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SgdConfig{};
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SgdConfig{};
  c.decay_factor = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Checkpoint, RoundTripRestoresEveryTensor) {
  nn::Network<float> a(small_net()), b(small_net());
  a.initialize(1);
  b.initialize(2);
  // Move the running moments off their defaults too.
  a.forward(nn::Tensor5<float>({1, 1, 8, 8, 8}, 0.3f), nn::Mode::train);
  const auto bytes = nn::encode_checkpoint(a.parameters());
  nn::decode_checkpoint(bytes, b.parameters());
  EXPECT_EQ(nn::encode_checkpoint(b.parameters()), bytes);
  const auto& pa = a.parameters(), &pb = b.parameters();
  for (std::size_t i = 0; i < pa.buffers.size(); ++i) EXPECT_EQ(pa.buffers[i]->value, pb.buffers[i]->value);
}

TEST(Checkpoint, RejectsMismatchAndCorruption) {
  nn::Network<float> a(small_net());
  auto other = small_net();
  other.widths = {2, 3, 5};
  nn::Network<float> b(other);
  const auto bytes = nn::encode_checkpoint(a.parameters());
  EXPECT_THROW(nn::decode_checkpoint(bytes, b.parameters()), std::runtime_error);

  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(nn::decode_checkpoint(trailing, a.parameters()), std::runtime_error);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 4);
  EXPECT_THROW(nn::decode_checkpoint(truncated, a.parameters()), std::runtime_error);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(nn::decode_checkpoint(magic, a.parameters()), std::runtime_error);
}

TEST(Checkpoint, HeaderNamesTensors) {
  nn::Network<float> a(small_net());
  const auto bytes = nn::encode_checkpoint(a.parameters());
  const std::string head(bytes.begin(), bytes.begin() + 64);
  EXPECT_EQ(head.rfind("VVFCKPT1\ntensors ", 0), 0u);
  EXPECT_NE(std::string(bytes.begin(), bytes.end()).find("enc1.conv.weight"), std::string::npos);
}
