#include "dunet/models.hpp"

#include <cmath>

namespace dunet {

Index ModelConfig::scaled(Index width) const {
  return std::max<Index>(1, static_cast<Index>(std::lround(static_cast<double>(width) * width_multiplier)));
}

void ModelConfig::validate() const {
  if (input_h <= 0 || input_w <= 0 || input_h % 16 != 0 || input_w % 16 != 0) {
    throw std::invalid_argument("input size " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                                " must be positive and divisible by 16");
  }
  if (!(width_multiplier > 0.0 && width_multiplier <= 1.0)) {
    throw std::invalid_argument("width_multiplier must lie in (0, 1]");
  }
  if (se_ratio < 1) throw std::invalid_argument("se_ratio must be >= 1");
  auto positive = [](Index w) {
    if (w <= 0) throw std::invalid_argument("layer widths must be positive");
  };
  for (Index w : vgg_widths) positive(w);
  for (Index w : unet_widths) positive(w);
  positive(aspp_out);
  auto gated = [&](Index w, const char* where) {
    positive(w);
    if (scaled(w) % se_ratio != 0) {
      throw std::invalid_argument(std::string(where) + " width " + std::to_string(scaled(w)) +
                                  " is not divisible by se_ratio " + std::to_string(se_ratio));
    }
  };
  for (Index w : decoder_widths) gated(w, "decoder");
  for (Index w : encoder2_widths) {
    if (encoder2_se) {
      gated(w, "encoder2");
    } else {
      positive(w);
    }
  }
}

template <typename Scalar>
VGG19Encoder<Scalar> make_vgg19(ParameterRegistry<Scalar>& reg, const std::string& prefix,
                                const std::array<Index, 5>& widths) {
  VGG19Encoder<Scalar> enc;
  Index cin = 3;
  for (std::size_t s = 0; s < 5; ++s) {
    for (int k = 0; k < kVggStageDepth[s]; ++k) {
      const std::string name = prefix + ".block" + std::to_string(s + 1) + ".conv" + std::to_string(k + 1);
      enc.stages[s].push_back(make_conv(reg, name, cin, widths[s], 3));
      cin = widths[s];
    }
  }
  return enc;
}

template <typename Scalar>
VGGFeatures<Scalar> vgg19_forward(const Tensor<Scalar>& x, const VGG19Encoder<Scalar>& enc) {
  if (x.c() != 3) throw ShapeError("vgg19: expected 3 input channels, got " + std::to_string(x.c()));
  if (x.h() % 16 != 0 || x.w() % 16 != 0) {
    throw ShapeError("vgg19: spatial dims must be divisible by 16, got " + to_string(x.shape()));
  }
  VGGFeatures<Scalar> f;
  Tensor<Scalar> y = x;
  for (std::size_t s = 0; s < 5; ++s) {
    for (const auto& conv : enc.stages[s]) y = relu(apply(conv, y));
    if (s < 4) {
      f.skips[s] = y;
      y = maxpool2x2(y);
    }
  }
  f.bottleneck = y;
  return f;
}

template <typename Scalar>
void SegmentationModel<Scalar>::check_input(const Tensor<Scalar>& x) const {
  if (x.c() != 3 || x.h() % 16 != 0 || x.w() % 16 != 0 || x.h() == 0 || x.w() == 0) {
    throw ShapeError(std::string(kind()) + ": input must have 3 channels and spatial dims divisible by 16, got " +
                     to_string(x.shape()));
  }
}

template <typename Scalar>
DoubleUNet<Scalar>::DoubleUNet(const ModelConfig& config, std::uint64_t seed) : SegmentationModel<Scalar>(config, seed) {
  config.validate();
  auto& reg = this->registry_;
  const auto& c = this->config_;
  std::array<Index, 5> vgg{};
  for (std::size_t i = 0; i < 5; ++i) vgg[i] = c.scaled(c.vgg_widths[i]);
  std::array<Index, 4> dec{}, enc2{};
  for (std::size_t i = 0; i < 4; ++i) {
    dec[i] = c.scaled(c.decoder_widths[i]);
    enc2[i] = c.scaled(c.encoder2_widths[i]);
  }
  const Index aspp_out = c.scaled(c.aspp_out);

  encoder1 = make_vgg19(reg, "net1.enc.vgg", vgg);
  aspp1 = make_aspp(reg, "net1.aspp", vgg[4], aspp_out);
  // decoder block i upsamples to the resolution of skip 3 - i.
  Index cin = aspp_out;
  for (std::size_t i = 0; i < 4; ++i) {
    const Index skip = vgg[3 - i];
    decoder1[i] = make_conv_block(reg, "net1.dec.block" + std::to_string(i + 1), cin + skip, dec[i], c.se_ratio);
    cin = dec[i];
  }
  head1 = make_conv(reg, "net1.head", dec[3], 1, 1);

  cin = 3;
  for (std::size_t i = 0; i < 4; ++i) {
    encoder2[i] = make_conv_block(reg, "net2.enc.block" + std::to_string(i + 1), cin, enc2[i],
                                  c.encoder2_se ? c.se_ratio : 0);
    cin = enc2[i];
  }
  aspp2 = make_aspp(reg, "net2.aspp", enc2[3], aspp_out);
  cin = aspp_out;
  for (std::size_t i = 0; i < 4; ++i) {
    const Index skips = vgg[3 - i] + enc2[3 - i];
    decoder2[i] = make_conv_block(reg, "net2.dec.block" + std::to_string(i + 1), cin + skips, dec[i], c.se_ratio);
    cin = dec[i];
  }
  head2 = make_conv(reg, "net2.head", dec[3], 1, 1);
}

template <typename Scalar>
typename DoubleUNet<Scalar>::Network1Result DoubleUNet<Scalar>::network1(const Tensor<Scalar>& x, Mode mode) {
  this->check_input(x);
  VGGFeatures<Scalar> f = vgg19_forward(x, encoder1);
  Tensor<Scalar> y = aspp(f.bottleneck, aspp1, mode);
  for (std::size_t i = 0; i < 4; ++i) {
    const Tensor<Scalar>& skip = f.skips[3 - i];
    y = decoder_block(y, std::span<const Tensor<Scalar>>(&skip, 1), decoder1[i], mode);
  }
  return {sigmoid(apply(head1, y)), f.skips};
}

template <typename Scalar>
Tensor<Scalar> DoubleUNet<Scalar>::network2(const Tensor<Scalar>& input, const std::array<Tensor<Scalar>, 4>& skips1,
                                            Mode mode) {
  this->check_input(input);
  std::array<Tensor<Scalar>, 4> skips2;
  Tensor<Scalar> y = input;
  for (std::size_t i = 0; i < 4; ++i) {
    auto e = encoder_block(y, encoder2[i], mode);
    skips2[i] = e.skip;
    y = e.down;
  }
  y = aspp(y, aspp2, mode);
  for (std::size_t i = 0; i < 4; ++i) {
    const std::array<Tensor<Scalar>, 2> skips{skips1[3 - i], skips2[3 - i]};
    y = decoder_block(y, std::span<const Tensor<Scalar>>(skips), decoder2[i], mode);
  }
  return sigmoid(apply(head2, y));
}

template <typename Scalar>
DoubleUNetOutputs<Scalar> DoubleUNet<Scalar>::forward(const Tensor<Scalar>& x, Mode mode) {
  DoubleUNetOutputs<Scalar> out;
  auto n1 = network1(x, mode);
  out.out1 = n1.mask;
  out.gated = mul(x, out.out1);
  out.out2 = network2(out.gated, n1.skips, mode);
  out.combined = concat_channels({out.out1, out.out2});
  return out;
}

template <typename Scalar>
std::vector<Tensor<Scalar>> DoubleUNet<Scalar>::forward_masks(const Tensor<Scalar>& x, Mode mode) {
  auto out = forward(x, mode);
  return {out.out1, out.out2};
}

template <typename Scalar>
UNet<Scalar>::UNet(const ModelConfig& config, std::uint64_t seed) : SegmentationModel<Scalar>(config, seed) {
  config.validate();
  auto& reg = this->registry_;
  const auto& c = this->config_;
  std::array<Index, 4> widths{};
  for (std::size_t i = 0; i < 4; ++i) widths[i] = c.scaled(c.unet_widths[i]);
  Index cin = 3;
  for (std::size_t i = 0; i < 4; ++i) {
    encoder[i] = make_conv_block(reg, "unet.enc.block" + std::to_string(i + 1), cin, widths[i], 0);
    cin = widths[i];
  }
  bottleneck = make_conv_block(reg, "unet.bottleneck", cin, 2 * widths[3], 0);
  cin = 2 * widths[3];
  for (std::size_t i = 0; i < 4; ++i) {
    const Index out = widths[3 - i];
    decoder[i] = make_conv_block(reg, "unet.dec.block" + std::to_string(i + 1), cin + widths[3 - i], out, 0);
    cin = out;
  }
  head = make_conv(reg, "unet.head", cin, 1, 1);
}

template <typename Scalar>
Tensor<Scalar> UNet<Scalar>::forward(const Tensor<Scalar>& x, Mode mode) {
  this->check_input(x);
  std::array<Tensor<Scalar>, 4> skips;
  Tensor<Scalar> y = x;
  for (std::size_t i = 0; i < 4; ++i) {
    auto e = encoder_block(y, encoder[i], mode);
    skips[i] = e.skip;
    y = e.down;
  }
  y = conv_block(y, bottleneck, mode);
  for (std::size_t i = 0; i < 4; ++i) {
    y = decoder_block(y, std::span<const Tensor<Scalar>>(&skips[3 - i], 1), decoder[i], mode);
  }
  return sigmoid(apply(head, y));
}

template <typename Scalar>
std::unique_ptr<SegmentationModel<Scalar>> make_model(std::string_view kind, const ModelConfig& config,
                                                      std::uint64_t seed) {
  if (kind == "doubleunet") return std::make_unique<DoubleUNet<Scalar>>(config, seed);
  if (kind == "unet") return std::make_unique<UNet<Scalar>>(config, seed);
  throw std::invalid_argument("unknown model '" + std::string(kind) + "' (expected doubleunet|unet)");
}

#define DUNET_INSTANTIATE_MODELS(S)                                                                     \
  template VGG19Encoder<S> make_vgg19(ParameterRegistry<S>&, const std::string&, const std::array<Index, 5>&); \
  template VGGFeatures<S> vgg19_forward(const Tensor<S>&, const VGG19Encoder<S>&);                     \
  template class SegmentationModel<S>;                                                                 \
  template class DoubleUNet<S>;                                                                        \
  template class UNet<S>;                                                                              \
  template std::unique_ptr<SegmentationModel<S>> make_model(std::string_view, const ModelConfig&, std::uint64_t);

DUNET_INSTANTIATE_MODELS(float)
DUNET_INSTANTIATE_MODELS(double)

}  // namespace dunet
