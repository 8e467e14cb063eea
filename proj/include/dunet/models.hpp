#pragma once

#include "dunet/blocks.hpp"

#include <array>
#include <memory>
#include <string_view>
#include <vector>

namespace dunet {

/// Architecture hyperparameters. Widths are nominal (full-size) values and are
/// multiplied by width_multiplier when a model is built.
struct ModelConfig {
  Index input_h = 288;
  Index input_w = 384;
  double width_multiplier = 1.0;
  std::array<Index, 5> vgg_widths{64, 128, 256, 512, 512};
  std::array<Index, 4> encoder2_widths{32, 64, 128, 256};
  std::array<Index, 4> decoder_widths{256, 128, 64, 32};
  Index aspp_out = 64;
  Index se_ratio = 8;
  /// Squeeze-and-excitation in the second encoder's blocks.
  bool encoder2_se = true;
  bool use_pretrained_encoder1 = false;
  /// U-Net baseline encoder widths; its decoder mirrors them.
  std::array<Index, 4> unet_widths{32, 64, 128, 256};

  Index scaled(Index width) const;
  /// Throws std::invalid_argument on indivisible input size, non-positive widths
  /// or a squeeze-excite ratio that does not divide a gated width.
  void validate() const;
};

inline constexpr std::array<int, 5> kVggStageDepth{2, 2, 4, 4, 4};

template <typename Scalar>
struct VGG19Encoder {
  /// 16 plain conv + ReLU layers; stages 1-4 are followed by 2x2 max-pooling.
  std::array<std::vector<ConvLayer<Scalar>>, 5> stages;
};

template <typename Scalar>
VGG19Encoder<Scalar> make_vgg19(ParameterRegistry<Scalar>& reg, const std::string& prefix,
                                const std::array<Index, 5>& widths);

template <typename Scalar>
struct VGGFeatures {
  Tensor<Scalar> bottleneck;            // stage-5 output at 1/16
  std::array<Tensor<Scalar>, 4> skips;  // pre-pool outputs of stages 1-4
};

template <typename Scalar>
VGGFeatures<Scalar> vgg19_forward(const Tensor<Scalar>& x, const VGG19Encoder<Scalar>& enc);

/// Common surface used by the trainer.
template <typename Scalar>
class SegmentationModel {
 public:
  virtual ~SegmentationModel() = default;
  /// Every supervised sigmoid mask; the last one is the model's prediction.
  virtual std::vector<Tensor<Scalar>> forward_masks(const Tensor<Scalar>& x, Mode mode) = 0;
  virtual std::string_view kind() const = 0;

  ParameterRegistry<Scalar>& registry() { return registry_; }
  const ParameterRegistry<Scalar>& registry() const { return registry_; }
  const ModelConfig& config() const { return config_; }
  Index parameter_count() const { return registry_.parameter_count(); }

 protected:
  SegmentationModel(const ModelConfig& config, std::uint64_t seed) : registry_(seed), config_(config) {}
  SegmentationModel(const SegmentationModel&) = delete;
  SegmentationModel& operator=(const SegmentationModel&) = delete;

  void check_input(const Tensor<Scalar>& x) const;

  ParameterRegistry<Scalar> registry_;
  ModelConfig config_;
};

template <typename Scalar>
struct DoubleUNetOutputs {
  Tensor<Scalar> out1;
  Tensor<Scalar> out2;
  Tensor<Scalar> combined;  // concat(out1, out2), 2 channels
  Tensor<Scalar> gated;     // x * out1, the second network's input
};

/// Two stacked encoder-decoders: a VGG-19 encoder with ASPP and decoder 1
/// produce out1, which gates the input of a second encoder/ASPP/decoder whose
/// blocks see skips from both encoders.
template <typename Scalar>
class DoubleUNet final : public SegmentationModel<Scalar> {
 public:
  DoubleUNet(const ModelConfig& config, std::uint64_t seed);

  DoubleUNetOutputs<Scalar> forward(const Tensor<Scalar>& x, Mode mode);
  std::vector<Tensor<Scalar>> forward_masks(const Tensor<Scalar>& x, Mode mode) override;
  std::string_view kind() const override { return "doubleunet"; }

  struct Network1Result {
    Tensor<Scalar> mask;
    std::array<Tensor<Scalar>, 4> skips;
  };
  Network1Result network1(const Tensor<Scalar>& x, Mode mode);
  Tensor<Scalar> network2(const Tensor<Scalar>& input, const std::array<Tensor<Scalar>, 4>& skips1, Mode mode);

  VGG19Encoder<Scalar> encoder1;
  ASPPParams<Scalar> aspp1;
  std::array<ConvBlockParams<Scalar>, 4> decoder1;
  ConvLayer<Scalar> head1;
  std::array<ConvBlockParams<Scalar>, 4> encoder2;
  ASPPParams<Scalar> aspp2;
  std::array<ConvBlockParams<Scalar>, 4> decoder2;
  ConvLayer<Scalar> head2;
};

/// Baseline: 4 encoder blocks, a bottleneck block at twice the last width,
/// 4 mirrored decoder blocks and a 1x1 sigmoid head. No squeeze-excite, no ASPP.
template <typename Scalar>
class UNet final : public SegmentationModel<Scalar> {
 public:
  UNet(const ModelConfig& config, std::uint64_t seed);

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode);
  std::vector<Tensor<Scalar>> forward_masks(const Tensor<Scalar>& x, Mode mode) override {
    return {forward(x, mode)};
  }
  std::string_view kind() const override { return "unet"; }

  std::array<ConvBlockParams<Scalar>, 4> encoder;
  ConvBlockParams<Scalar> bottleneck;
  std::array<ConvBlockParams<Scalar>, 4> decoder;
  ConvLayer<Scalar> head;
};

/// kind is "doubleunet" or "unet".
template <typename Scalar>
std::unique_ptr<SegmentationModel<Scalar>> make_model(std::string_view kind, const ModelConfig& config,
                                                      std::uint64_t seed);

}  // namespace dunet
