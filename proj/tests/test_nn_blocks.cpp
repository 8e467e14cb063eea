#include "oracles.hpp"

#include "dunet/blocks.hpp"
#include "dunet/grad_check.hpp"

#include <doctest.h>

using namespace dunet;
using T = Tensor<double>;

namespace {

void fill(T t, double v) {
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = v;
}

void fill_random(ParameterRegistry<double>& reg, std::uint64_t seed) {
  std::uint64_t s = seed;
  for (const auto& p : reg.parameters()) {
    T r = random_tensor<double>(p.tensor.shape(), ++s, -0.5, 0.5);
    T dst = p.tensor;
    dst.values() = r.values();
  }
}

/// conv -> BN (eval mode, default running stats) -> ReLU with scalar loops.
std::vector<double> conv_bn_relu_eval(const T& x, const ConvLayer<double>& conv, const BatchNormLayer<double>& bn) {
  Index oh = 0, ow = 0;
  auto y = oracle::conv2d(oracle::to_vec(x), x.n(), x.c(), x.h(), x.w(), oracle::to_vec(conv.weight),
                          conv.weight.n(), conv.weight.h(), conv.weight.w(), oracle::to_vec(conv.bias), 1, conv.padding,
                          conv.dilation, oh, ow);
  const Index plane = oh * ow;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const Index c = (static_cast<Index>(i) / plane) % conv.weight.n();
    const double norm = (y[i] - bn.state.running_mean.data()[c]) / std::sqrt(bn.state.running_var.data()[c] + 1e-5);
    y[i] = std::max(0.0, norm * bn.gamma.data()[c] + bn.beta.data()[c]);
  }
  return y;
}

}  // namespace

TEST_CASE("parameter registry") {
  ParameterRegistry<double> reg(3);
  auto conv = make_conv(reg, "c", 3, 64, 3);
  CHECK(reg.parameter_count() == 1792);
  CHECK(conv.padding == 1);
  CHECK_THROWS_AS(make_conv(reg, "c", 3, 64, 3), std::invalid_argument);
  const double bound = std::sqrt(6.0 / 27.0);
  CHECK(conv.weight.values().cwiseAbs().maxCoeff() <= bound);
  CHECK(conv.bias.values().isZero());
  auto bn = make_batchnorm(reg, "bn", 4);
  CHECK(reg.buffers().size() == 2);
  CHECK(reg.state().size() == reg.parameters().size() + 2);
  CHECK(reg.state().back().name == "bn.running_var");
  for (const auto& p : reg.parameters()) CHECK(p.tensor.requires_grad());
  auto dilated = make_conv(reg, "d", 2, 2, 3, 6);
  CHECK(dilated.padding == 6);
}

TEST_CASE("conv_block shapes and zero weights") {
  ParameterRegistry<double> reg(1);
  auto block = make_conv_block(reg, "b", 3, 64, 8);
  T x = random_tensor<double>({1, 3, 32, 32}, 2);
  CHECK(conv_block(x, block, Mode::train).shape() == Shape{1, 64, 32, 32});

  for (const auto& p : reg.parameters()) {
    if (p.name.find(".se.") == std::string::npos) fill(p.tensor, 0.0);
  }
  fill(block.bn1.gamma, 1.0);
  fill(block.bn2.gamma, 1.0);
  T y = conv_block(x, block, Mode::train);
  CHECK(y.values().isZero());
  CHECK_THROWS_AS(conv_block(random_tensor<double>({1, 4, 8, 8}, 3), block, Mode::train), ShapeError);
}

TEST_CASE("conv_block equals the composition of its primitives") {
  ParameterRegistry<double> reg(5);
  auto block = make_conv_block(reg, "b", 3, 8, 4);
  fill_random(reg, 50);
  T x = random_tensor<double>({2, 3, 8, 8}, 6);
  T y = conv_block(x, block, Mode::eval);

  auto a = conv_bn_relu_eval(x, block.conv1, block.bn1);
  T t1({2, 8, 8, 8});
  for (Index i = 0; i < t1.size(); ++i) t1.data()[i] = a[static_cast<std::size_t>(i)];
  auto b = conv_bn_relu_eval(t1, block.conv2, block.bn2);
  // Squeeze-excite per (n, c) scalar.
  for (Index n = 0; n < 2; ++n) {
    std::vector<double> gap(8, 0.0);
    for (Index c = 0; c < 8; ++c) {
      for (Index p = 0; p < 64; ++p) gap[c] += b[static_cast<std::size_t>((n * 8 + c) * 64 + p)];
      gap[c] /= 64;
    }
    std::vector<double> hidden(2, 0.0);
    for (Index j = 0; j < 2; ++j) {
      double acc = block.se->reduce.bias.data()[j];
      for (Index c = 0; c < 8; ++c) acc += block.se->reduce.weight.at(j, c, 0, 0) * gap[c];
      hidden[j] = std::max(0.0, acc);
    }
    for (Index c = 0; c < 8; ++c) {
      double acc = block.se->expand.bias.data()[c];
      for (Index j = 0; j < 2; ++j) acc += block.se->expand.weight.at(c, j, 0, 0) * hidden[j];
      const double gate = 1.0 / (1.0 + std::exp(-acc));
      for (Index p = 0; p < 64; ++p) {
        CHECK(y.data()[(n * 8 + c) * 64 + p] ==
              doctest::Approx(b[static_cast<std::size_t>((n * 8 + c) * 64 + p)] * gate).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("squeeze_excite gates") {
  ParameterRegistry<double> reg(2);
  auto se = make_squeeze_excite(reg, "se", 8, 4);
  T x = random_tensor<double>({2, 8, 4, 4}, 3);

  fill(se.expand.weight, 0.0);
  fill(se.expand.bias, 50.0);
  T open = squeeze_excite(x, se);
  for (Index i = 0; i < x.size(); ++i) CHECK(std::abs(open.data()[i] - x.data()[i]) < 1e-6);

  fill(se.expand.bias, 0.0);
  T half = squeeze_excite(x, se);
  for (Index i = 0; i < x.size(); ++i) CHECK(half.data()[i] == doctest::Approx(x.data()[i] / 2));

  ParameterRegistry<double> reg2(9);
  auto se2 = make_squeeze_excite(reg2, "se", 8, 4);
  fill_random(reg2, 90);
  T y = squeeze_excite(x, se2);
  T gate = squeeze_excite_gate(x, se2);
  for (Index n = 0; n < 2; ++n)
    for (Index c = 0; c < 8; ++c) {
      const double g = gate.at(n, c, 0, 0);
      CHECK(g > 0.0);
      CHECK(g < 1.0);
      for (Index p = 0; p < 16; ++p) {
        const double in = x.data()[(n * 8 + c) * 16 + p];
        const double out = y.data()[(n * 8 + c) * 16 + p];
        CHECK(out == doctest::Approx(in * g));
        CHECK(std::abs(out) <= std::abs(in));
        CHECK((out >= 0) == (in >= 0));
      }
    }
  CHECK_THROWS_AS(make_squeeze_excite(reg, "bad", 6, 4), std::invalid_argument);
}

TEST_CASE("aspp preserves spatial dims") {
  for (Index s : {Index{8}, Index{9}, Index{17}, Index{1}}) {
    ParameterRegistry<double> reg(4);
    auto p = make_aspp(reg, "aspp", 3, 5);
    T x = random_tensor<double>({2, 3, s, s}, 5);
    T y = aspp(x, p, Mode::train);
    CHECK(y.shape() == Shape{2, 5, s, s});
    for (const auto& b : aspp_branches(x, p, Mode::eval)) CHECK(b.shape() == Shape{2, 5, s, s});
  }
}

TEST_CASE("aspp with averaging center taps maps constants to constants") {
  ParameterRegistry<double> reg(4);
  auto p = make_aspp(reg, "aspp", 3, 4);
  for (const auto& prm : reg.parameters()) fill(prm.tensor, 0.0);
  for (auto* bn : {&p.bn1x1, &p.atrous_bn[0], &p.atrous_bn[1], &p.atrous_bn[2], &p.project_bn}) fill(bn->gamma, 1.0);
  fill(p.pool_conv.weight, 1.0 / 3);
  fill(p.conv1x1.weight, 1.0 / 3);
  for (auto& conv : p.atrous) {
    for (Index o = 0; o < 4; ++o)
      for (Index c = 0; c < 3; ++c) conv.weight.at(o, c, 1, 1) = 1.0 / 3;
  }
  fill(p.project.weight, 1.0 / 20);
  T x = T::constant({1, 3, 9, 9}, 0.8);
  T y = aspp(x, p, Mode::eval);
  const double first = y.data()[0];
  CHECK(first > 0.0);
  for (Index i = 0; i < y.size(); ++i) CHECK(y.data()[i] == doctest::Approx(first).epsilon(1e-12));
}

TEST_CASE("aspp branches match the dilated convolution oracle") {
  ParameterRegistry<double> reg(8);
  auto p = make_aspp(reg, "aspp", 2, 3);
  fill_random(reg, 80);
  T x = random_tensor<double>({1, 2, 20, 20}, 9);
  auto branches = aspp_branches(x, p, Mode::eval);
  REQUIRE(branches.size() == 5);
  auto check = [&](const T& got, const ConvLayer<double>& conv, const BatchNormLayer<double>& bn) {
    auto ref = conv_bn_relu_eval(x, conv, bn);
    REQUIRE(ref.size() == static_cast<std::size_t>(got.size()));
    for (Index i = 0; i < got.size(); ++i) CHECK(got.data()[i] == doctest::Approx(ref[static_cast<std::size_t>(i)]).epsilon(1e-10));
  };
  check(branches[1], p.conv1x1, p.bn1x1);
  const std::array<Index, 3> rates{6, 12, 18};
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(p.atrous[i].dilation == rates[i]);
    check(branches[2 + i], p.atrous[i], p.atrous_bn[i]);
  }
  // Image pooling: gap -> 1x1 conv -> ReLU, constant over the plane.
  for (Index o = 0; o < 3; ++o) {
    double acc = p.pool_conv.bias.data()[o];
    for (Index c = 0; c < 2; ++c) {
      double mean = 0;
      for (Index i = 0; i < 400; ++i) mean += x.data()[c * 400 + i];
      acc += p.pool_conv.weight.at(o, c, 0, 0) * mean / 400;
    }
    for (Index i = 0; i < 400; ++i) CHECK(branches[0].data()[o * 400 + i] == doctest::Approx(std::max(0.0, acc)));
  }
}

TEST_CASE("encoder and decoder block shapes") {
  ParameterRegistry<double> reg(1);
  auto enc = make_conv_block(reg, "enc", 3, 32, 8);
  T x = random_tensor<double>({1, 3, 64, 64}, 2);
  auto e = encoder_block(x, enc, Mode::train);
  CHECK(e.skip.shape() == Shape{1, 32, 64, 64});
  CHECK(e.down.shape() == Shape{1, 32, 32, 32});
  T pooled = maxpool2x2(e.skip);
  for (Index i = 0; i < pooled.size(); ++i) CHECK(pooled.data()[i] == e.down.data()[i]);
  CHECK_THROWS_AS(encoder_block(random_tensor<double>({1, 3, 7, 8}, 1), enc, Mode::train), ShapeError);

  auto dec = make_conv_block(reg, "dec", 64 + 64, 32, 8);
  T low = random_tensor<double>({1, 64, 16, 16}, 3);
  T skip = random_tensor<double>({1, 64, 32, 32}, 4);
  CHECK(decoder_block(low, std::span<const T>(&skip, 1), dec, Mode::train).shape() == Shape{1, 32, 32, 32});
  CHECK_THROWS_AS(decoder_block(low, std::span<const T>(), dec, Mode::train), ShapeError);
  T bad = random_tensor<double>({1, 64, 30, 32}, 5);
  CHECK_THROWS_AS(decoder_block(low, std::span<const T>(&bad, 1), dec, Mode::train), ShapeError);

  auto dec2 = make_conv_block(reg, "dec2", 224, 16, 8);
  CHECK(dec2.in_channels() == 224);
  T x128 = random_tensor<double>({1, 128, 4, 4}, 6);
  const std::array<T, 2> two{random_tensor<double>({1, 64, 8, 8}, 7), random_tensor<double>({1, 32, 8, 8}, 8)};
  CHECK(decoder_block(x128, std::span<const T>(two), dec2, Mode::train).shape() == Shape{1, 16, 8, 8});
}

TEST_CASE("four encoder blocks then four decoder blocks restore the input size") {
  ParameterRegistry<float> reg(3);
  std::array<ConvBlockParams<float>, 4> enc, dec;
  const std::array<Index, 4> widths{4, 8, 8, 8};
  Index cin = 3;
  for (std::size_t i = 0; i < 4; ++i) {
    enc[i] = make_conv_block(reg, "e" + std::to_string(i), cin, widths[i], 4);
    cin = widths[i];
  }
  for (std::size_t i = 0; i < 4; ++i) {
    dec[i] = make_conv_block(reg, "d" + std::to_string(i), cin + widths[3 - i], widths[3 - i], 4);
    cin = widths[3 - i];
  }
  Tensor<float> x = random_tensor<float>({1, 3, 256, 256}, 1);
  std::array<Tensor<float>, 4> skips;
  Tensor<float> y = x;
  const std::array<Index, 4> expect{256, 128, 64, 32};
  for (std::size_t i = 0; i < 4; ++i) {
    auto e = encoder_block(y, enc[i], Mode::train);
    CHECK(e.skip.h() == expect[i]);
    skips[i] = e.skip;
    y = e.down;
  }
  CHECK(y.h() == 16);
  for (std::size_t i = 0; i < 4; ++i) y = decoder_block(y, std::span<const Tensor<float>>(&skips[3 - i], 1), dec[i], Mode::train);
  CHECK(y.h() == 256);
  CHECK(y.w() == 256);
}

TEST_CASE("blocks pass grad_check on 1xCx8x8 inputs") {
  ParameterRegistry<double> reg(12);
  auto block = make_conv_block(reg, "b", 2, 4, 2);
  auto asp = make_aspp(reg, "a", 4, 2);
  T x = random_tensor<double>({1, 2, 8, 8}, 13);
  T probe = random_probe<double>({1, 2, 8, 8}, 14);
  std::vector<T> wrt{x};
  for (const auto& p : reg.parameters()) wrt.push_back(p.tensor);
  auto r = grad_check("conv_block+aspp", wrt,
                      [&] { return project(aspp(conv_block(x, block, Mode::train), asp, Mode::train), probe); });
  CHECK(r.max_relative_error < 1e-4);
}
