#include "dunet/grad_check.hpp"
#include "dunet/losses.hpp"
#include "dunet/models.hpp"
#include "dunet/tensor_io.hpp"
#include "dunet/weights_io.hpp"

#include <doctest.h>

#include <filesystem>
#include <cstring>
#include <fstream>
#include <random>
#include <set>

using namespace dunet;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = DUNET_FIXTURE_DIR;

ModelConfig small_config(Index size = 32) {
  ModelConfig c;
  c.input_h = size;
  c.input_w = size;
  c.width_multiplier = 0.125;
  c.se_ratio = 4;
  return c;
}

fs::path temp_path(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "dunet_arch_tests";
  fs::create_directories(dir);
  return dir / name;
}

template <typename Scalar>
double max_abs_diff(const Tensor<Scalar>& a, const Tensor<double>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (Index i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - b.data()[i]));
  return m;
}

// Zero-initialised biases place ReLU inputs exactly on the kink wherever a
// receptive field is dead, which finite differences cannot resolve.
template <typename Scalar>
void randomize_affine(ParameterRegistry<Scalar>& reg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (const auto& p : reg.parameters()) {
    const bool gamma = p.name.ends_with(".gamma");
    if (!gamma && !p.name.ends_with(".bias") && !p.name.ends_with(".beta")) continue;
    Tensor<Scalar> t = p.tensor;
    for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>((gamma ? 1.0 : 0.0) + u(rng));
  }
}

Index conv_count(Index cin, Index cout, Index k) { return cin * cout * k * k + cout; }
Index bn_count(Index c) { return 2 * c; }
Index se_count(Index c, Index r) { return 2 * c * (c / r) + c / r + c; }
Index block_count(Index cin, Index cout, Index r) {
  return conv_count(cin, cout, 3) + bn_count(cout) + conv_count(cout, cout, 3) + bn_count(cout) +
         (r > 0 ? se_count(cout, r) : 0);
}
Index aspp_count(Index cin, Index out) {
  return conv_count(cin, out, 1) + conv_count(cin, out, 1) + bn_count(out) + 3 * (conv_count(cin, out, 3) + bn_count(out)) +
         conv_count(5 * out, out, 1) + bn_count(out);
}
Index vgg_count() {
  const Index layers[16][2] = {{3, 64},    {64, 64},   {64, 128},  {128, 128}, {128, 256}, {256, 256},
                               {256, 256}, {256, 256}, {256, 512}, {512, 512}, {512, 512}, {512, 512},
                               {512, 512}, {512, 512}, {512, 512}, {512, 512}};
  Index total = 0;
  for (const auto& l : layers) total += conv_count(l[0], l[1], 3);
  return total;
}

}  // namespace

TEST_CASE("VGG-19 encoder parameter count and shapes") {
  CHECK(vgg_count() == 20024384);
  ParameterRegistry<float> reg(1);
  auto enc = make_vgg19(reg, "vgg", {64, 128, 256, 512, 512});
  CHECK(reg.parameter_count() == 20024384);
  CHECK(reg.parameters().size() == 32);
  CHECK(reg.parameters()[4].name == "vgg.block2.conv1.weight");

  Tensor<float> x = random_tensor<float>({1, 3, 256, 256}, 2, 0.0, 1.0);
  auto f = vgg19_forward(x, enc);
  CHECK(f.bottleneck.shape() == Shape{1, 512, 16, 16});
  const std::array<Shape, 4> skips{Shape{1, 64, 256, 256}, Shape{1, 128, 128, 128}, Shape{1, 256, 64, 64},
                                   Shape{1, 512, 32, 32}};
  for (std::size_t i = 0; i < 4; ++i) CHECK(f.skips[i].shape() == skips[i]);
  CHECK_THROWS_AS(vgg19_forward(random_tensor<float>({1, 1, 32, 32}, 1), enc), ShapeError);
  CHECK_THROWS_AS(vgg19_forward(random_tensor<float>({1, 3, 40, 40}, 1), enc), ShapeError);
}

TEST_CASE("forward pass matches the PyTorch reference fixture") {
  DoubleUNet<double> model(small_config(), 0);
  load_weights(model.registry(), kFixtures / "doubleunet_small.duow");
  Tensor<double> x = load_tensor<double>(kFixtures / "input.duot");

  auto f = vgg19_forward(x, model.encoder1);
  for (int i = 0; i < 4; ++i) {
    CHECK(max_abs_diff(f.skips[static_cast<std::size_t>(i)],
                       load_tensor<double>(kFixtures / ("vgg_skip" + std::to_string(i + 1) + ".duot"))) < 1e-4);
  }
  CHECK(max_abs_diff(f.bottleneck, load_tensor<double>(kFixtures / "vgg_bottleneck.duot")) < 1e-4);

  auto out = model.forward(x, Mode::train);
  const double d1 = max_abs_diff(out.out1, load_tensor<double>(kFixtures / "out1.duot"));
  const double d2 = max_abs_diff(out.out2, load_tensor<double>(kFixtures / "out2.duot"));
  CHECK(d1 < 1e-4);
  CHECK(d2 < 1e-4);

  // Single precision against the same reference.
  DoubleUNet<float> fmodel(small_config(), 0);
  load_weights(fmodel.registry(), kFixtures / "doubleunet_small.duow");
  auto fout = fmodel.forward(x.cast<float>(), Mode::train);
  CHECK(max_abs_diff(fout.out2, load_tensor<double>(kFixtures / "out2.duot")) < 1e-4);
}

TEST_CASE("DoubleU-Net shape contract") {
  for (auto [h, w] : {std::pair<Index, Index>{256, 256}, {64, 128}, {128, 64}, {32, 96}}) {
    ModelConfig c = small_config();
    c.input_h = h;
    c.input_w = w;
    DoubleUNet<float> model(c, 3);
    NoGradGuard<float> g;
    auto out = model.forward(random_tensor<float>({1, 3, h, w}, 4, 0.0, 1.0), Mode::eval);
    CHECK(out.out1.shape() == Shape{1, 1, h, w});
    CHECK(out.out2.shape() == Shape{1, 1, h, w});
    CHECK(out.combined.shape() == Shape{1, 2, h, w});
    CHECK(out.gated.shape() == Shape{1, 3, h, w});
    for (const auto* t : {&out.out1, &out.out2}) {
      CHECK(t->values().minCoeff() > 0.0f);
      CHECK(t->values().maxCoeff() < 1.0f);
    }
    for (Index i = 0; i < h * w; ++i) {
      CHECK(out.combined.data()[i] == out.out1.data()[i]);
      CHECK(out.combined.data()[h * w + i] == out.out2.data()[i]);
    }
  }
  DoubleUNet<float> model(small_config(), 3);
  CHECK_THROWS_AS(model.forward(random_tensor<float>({1, 3, 40, 32}, 1), Mode::eval), ShapeError);
  CHECK_THROWS_AS(model.forward(random_tensor<float>({1, 4, 32, 32}, 1), Mode::eval), ShapeError);
}

TEST_CASE("gate identity") {
  DoubleUNet<double> model(small_config(), 5);
  model.head1.bias.data()[0] = 50.0;
  Tensor<double> x = random_tensor<double>({2, 3, 32, 32}, 6, 0.0, 1.0);
  auto out = model.forward(x, Mode::eval);
  for (Index i = 0; i < x.size(); ++i) CHECK(std::abs(out.gated.data()[i] - x.data()[i]) < 1e-6);

  auto n1 = model.network1(x, Mode::eval);
  Tensor<double> standalone = model.network2(x, n1.skips, Mode::eval);
  for (Index i = 0; i < standalone.size(); ++i) CHECK(std::abs(out.out2.data()[i] - standalone.data()[i]) < 1e-6);
}

TEST_CASE("loss on out2 reaches NETWORK 1 parameters") {
  ModelConfig c = small_config(16);
  DoubleUNet<double> model(c, 7);
  randomize_affine(model.registry(), 70);
  Tensor<double> x = random_tensor<double>({2, 3, 16, 16}, 8, 0.0, 1.0);
  Tensor<double> y = random_tensor<double>({2, 1, 16, 16}, 9);
  for (Index i = 0; i < y.size(); ++i) y.data()[i] = y.data()[i] > 0 ? 1.0 : 0.0;
  Tensor<double> p = model.head1.weight;
  auto loss_fn = [&] { return dice_loss(model.forward(x, Mode::eval).out2, y); };

  for (const auto& prm : model.registry().parameters()) prm.tensor.node()->grad.resize(0);
  backward(loss_fn());
  const double analytic = p.grad()[0];
  CHECK(analytic != 0.0);

  auto r = grad_check("head1 via out2", {p}, loss_fn);
  INFO("max relative error " << r.max_relative_error);
  CHECK(r.passed);
}

TEST_CASE("U-Net baseline") {
  ModelConfig c;
  c.input_h = c.input_w = 64;
  c.unet_widths = {16, 32, 64, 128};
  UNet<float> model(c, 1);
  NoGradGuard<float> g;
  Tensor<float> y = model.forward(random_tensor<float>({1, 3, 64, 64}, 2, 0.0, 1.0), Mode::eval);
  CHECK(y.shape() == Shape{1, 1, 64, 64});
  CHECK(model.forward_masks(random_tensor<float>({1, 3, 64, 64}, 2), Mode::eval).size() == 1);

  for (const auto& p : model.registry().parameters()) {
    if (p.name.find(".conv") != std::string::npos || p.name.find("head") != std::string::npos) {
      Tensor<float> t = p.tensor;
      t.values().setZero();
    }
  }
  Tensor<float> half = model.forward(random_tensor<float>({1, 3, 64, 64}, 3), Mode::train);
  for (Index i = 0; i < half.size(); ++i) CHECK(half.data()[i] == 0.5f);
}

TEST_CASE("U-Net passes grad_check end to end") {
  ModelConfig c;
  c.input_h = c.input_w = 16;
  c.unet_widths = {2, 2, 3, 3};
  UNet<double> model(c, 11);
  randomize_affine(model.registry(), 110);
  Tensor<double> x = random_tensor<double>({1, 3, 16, 16}, 12);
  Tensor<double> y = random_tensor<double>({1, 1, 16, 16}, 13);
  for (Index i = 0; i < y.size(); ++i) y.data()[i] = y.data()[i] > 0 ? 1.0 : 0.0;
  std::vector<Tensor<double>> wrt{x};
  for (const auto& p : model.registry().parameters()) wrt.push_back(p.tensor);
  auto r = grad_check("unet", wrt, [&] { return bce_loss(model.forward(x, Mode::train), y); });
  INFO("max relative error " << r.max_relative_error << " over " << r.coordinates);
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("parameter counts") {
  ParameterRegistry<float> one(0);
  make_conv(one, "c", 3, 64, 3);
  CHECK(one.parameter_count() == 1792);

  ModelConfig full;
  DoubleUNet<float> dunet(full, 0);
  const Index expected = vgg_count() + aspp_count(512, 64) + block_count(64 + 512, 256, 8) +
                         block_count(256 + 256, 128, 8) + block_count(128 + 128, 64, 8) + block_count(64 + 64, 32, 8) +
                         conv_count(32, 1, 1) + block_count(3, 32, 8) + block_count(32, 64, 8) +
                         block_count(64, 128, 8) + block_count(128, 256, 8) + aspp_count(256, 64) +
                         block_count(64 + 512 + 256, 256, 8) + block_count(256 + 256 + 128, 128, 8) +
                         block_count(128 + 128 + 64, 64, 8) + block_count(64 + 64 + 32, 32, 8) + conv_count(32, 1, 1);
  CHECK(dunet.parameter_count() == expected);
  MESSAGE("full-width DoubleU-Net parameters: " << expected);

  UNet<float> unet(full, 0);
  const Index unet_expected = block_count(3, 32, 0) + block_count(32, 64, 0) + block_count(64, 128, 0) +
                              block_count(128, 256, 0) + block_count(256, 512, 0) + block_count(512 + 256, 256, 0) +
                              block_count(256 + 128, 128, 0) + block_count(128 + 64, 64, 0) +
                              block_count(64 + 32, 32, 0) + conv_count(32, 1, 1);
  CHECK(unet.parameter_count() == unet_expected);
  CHECK(dunet.parameter_count() > unet.parameter_count());

  std::set<std::string> names;
  for (const auto& p : dunet.registry().state()) CHECK(names.insert(p.name).second);
  CHECK(names.count("net1.enc.vgg.block3.conv2.weight") == 1);
  CHECK(names.count("net2.dec.block4.se.expand.bias") == 1);
}

TEST_CASE("weights save and load") {
  DoubleUNet<float> a(small_config(), 21);
  DoubleUNet<float> b(small_config(), 22);
  // Give the buffers non-default values as well.
  {
    NoGradGuard<float> g;
    a.forward(random_tensor<float>({2, 3, 32, 32}, 1), Mode::train);
  }
  const fs::path path = temp_path("roundtrip.duow");
  save_weights(a.registry(), path);
  load_weights(b.registry(), path);
  const auto sa = a.registry().state();
  const auto sb = b.registry().state();
  REQUIRE(sa.size() == sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) {
    CHECK(sa[i].name == sb[i].name);
    CHECK(std::memcmp(sa[i].tensor.data(), sb[i].tensor.data(), sizeof(float) * static_cast<std::size_t>(sa[i].tensor.size())) == 0);
  }

  // Missing parameter.
  {
    std::vector<Parameter<float>> partial(sa.begin() + 1, sa.end());
    const fs::path p = temp_path("missing.duow");
    write_weights_file(p, std::span<const Parameter<float>>(partial));
    try {
      load_weights(b.registry(), p);
      FAIL("expected an error");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find(sa.front().name) != std::string::npos);
    }
  }
  // Transposed dense weight.
  {
    std::vector<Parameter<float>> bad = sa;
    for (auto& p : bad) {
      if (p.name == "net1.dec.block1.se.reduce.weight") {
        const Shape s = p.tensor.shape();
        p.tensor = Tensor<float>({s[1], s[0], 1, 1});
      }
    }
    const fs::path p = temp_path("transposed.duow");
    write_weights_file(p, std::span<const Parameter<float>>(bad));
    try {
      load_weights(b.registry(), p);
      FAIL("expected an error");
    } catch (const std::exception& e) {
      const std::string msg = e.what();
      CHECK(msg.find("net1.dec.block1.se.reduce.weight") != std::string::npos);
      CHECK(msg.find("expected [8,32,1,1]") != std::string::npos);
      CHECK(msg.find("found [32,8,1,1]") != std::string::npos);
    }
  }
  // Unknown name.
  {
    std::vector<Parameter<float>> extra = sa;
    extra.push_back({"net3.surprise", Tensor<float>({1, 1, 1, 1})});
    const fs::path p = temp_path("extra.duow");
    write_weights_file(p, std::span<const Parameter<float>>(extra));
    CHECK_THROWS_WITH_AS(load_weights(b.registry(), p), doctest::Contains("net3.surprise"), std::exception);
  }
  // Bad magic and version.
  {
    const fs::path p = temp_path("bad.duow");
    std::ofstream(p, std::ios::binary) << "NOPE\x01\x00";
    CHECK_THROWS_AS(load_weights(b.registry(), p), FormatError);
    std::ofstream(p, std::ios::binary) << std::string("DUOW\x09\x00\x00\x00\x00\x00", 10);
    CHECK_THROWS_AS(load_weights(b.registry(), p), FormatError);
  }
}

TEST_CASE("train and eval agree once running statistics match the batch") {
  DoubleUNet<double> model(small_config(), 31);
  Tensor<double> x = random_tensor<double>({2, 3, 32, 32}, 32, 0.0, 1.0);
  NoGradGuard<double> g;
  Tensor<double> train_out;
  for (int i = 0; i < 250; ++i) train_out = model.forward(x, Mode::train).out2;
  Tensor<double> eval_out = model.forward(x, Mode::eval).out2;
  CHECK(max_abs_diff(eval_out, train_out) < 1e-6);
}

TEST_CASE("model configuration validation") {
  ModelConfig c = small_config();
  c.se_ratio = 8;  // decoder width 4 is not divisible
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_config();
  c.input_h = 40;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_config();
  c.width_multiplier = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  ModelConfig full;
  CHECK_NOTHROW(full.validate());
  CHECK(full.scaled(64) == 64);
  CHECK(small_config().scaled(64) == 8);
  CHECK(small_config().scaled(4) == 1);
  CHECK(make_model<float>("unet", small_config(), 1)->kind() == "unet");
  CHECK(make_model<float>("doubleunet", small_config(), 1)->forward_masks(Tensor<float>({1, 3, 32, 32}), Mode::eval).size() == 2);
  CHECK_THROWS_AS(make_model<float>("segnet", small_config(), 1), std::invalid_argument);
}

TEST_CASE("same seed builds identical models") {
  DoubleUNet<float> a(small_config(), 99);
  DoubleUNet<float> b(small_config(), 99);
  const auto sa = a.registry().parameters();
  const auto sb = b.registry().parameters();
  for (std::size_t i = 0; i < sa.size(); ++i) CHECK((sa[i].tensor.values().array() == sb[i].tensor.values().array()).all());
  Tensor<float> x = random_tensor<float>({1, 3, 32, 32}, 1, 0.0, 1.0);
  NoGradGuard<float> g;
  Tensor<float> ya = a.forward(x, Mode::train).out2;
  Tensor<float> yb = b.forward(x, Mode::train).out2;
  CHECK(std::memcmp(ya.data(), yb.data(), sizeof(float) * static_cast<std::size_t>(ya.size())) == 0);
}
