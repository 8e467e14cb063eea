#pragma once

#include "dunet/ops.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dunet {

/// Owns the name -> tensor table of a model. Parameters are trainable;
/// buffers (batch-norm running statistics) are saved but not optimized.
template <typename Scalar>
class ParameterRegistry {
 public:
  explicit ParameterRegistry(std::uint64_t seed = 0) : rng_(seed) {}

  /// He/Kaiming uniform: U(-b, b), b = sqrt(6 / fan_in).
  Tensor<Scalar> kaiming_uniform(const std::string& name, const Shape& shape, Index fan_in);
  Tensor<Scalar> constant(const std::string& name, const Shape& shape, Scalar value);
  void add_buffer(const std::string& name, Tensor<Scalar> tensor);

  const std::vector<Parameter<Scalar>>& parameters() const { return parameters_; }
  const std::vector<Parameter<Scalar>>& buffers() const { return buffers_; }

  /// Parameters followed by buffers, the order used by the weights file.
  std::vector<Parameter<Scalar>> state() const;

  Index parameter_count() const;

 private:
  void check_unique(const std::string& name) const;

  std::mt19937_64 rng_;
  std::vector<Parameter<Scalar>> parameters_;
  std::vector<Parameter<Scalar>> buffers_;
};

template <typename Scalar>
struct ConvLayer {
  Tensor<Scalar> weight;  // (Cout, Cin, k, k)
  Tensor<Scalar> bias;    // (1, Cout, 1, 1)
  Index dilation = 1;
  Index padding = 0;

  Index out_channels() const { return weight.n(); }
  Index in_channels() const { return weight.c(); }
};

template <typename Scalar>
ConvLayer<Scalar> make_conv(ParameterRegistry<Scalar>& reg, const std::string& prefix, Index cin, Index cout,
                            Index kernel, Index dilation = 1);

template <typename Scalar>
Tensor<Scalar> apply(const ConvLayer<Scalar>& conv, const Tensor<Scalar>& x) {
  return conv2d(x, conv.weight, conv.bias, 1, conv.padding, conv.dilation);
}

template <typename Scalar>
struct BatchNormLayer {
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
  BatchNormState<Scalar> state;
};

template <typename Scalar>
BatchNormLayer<Scalar> make_batchnorm(ParameterRegistry<Scalar>& reg, const std::string& prefix, Index channels);

template <typename Scalar>
Tensor<Scalar> apply(BatchNormLayer<Scalar>& bn, const Tensor<Scalar>& x, Mode mode) {
  return batchnorm2d(x, bn.gamma, bn.beta, bn.state, mode);
}

template <typename Scalar>
struct DenseLayer {
  Tensor<Scalar> weight;  // (Cout, Cin, 1, 1)
  Tensor<Scalar> bias;    // (1, Cout, 1, 1)
};

template <typename Scalar>
struct SEParams {
  DenseLayer<Scalar> reduce;
  DenseLayer<Scalar> expand;
  Index ratio = 8;
};

template <typename Scalar>
SEParams<Scalar> make_squeeze_excite(ParameterRegistry<Scalar>& reg, const std::string& prefix, Index channels,
                                     Index ratio);

/// Channel gate in (0, 1): sigmoid(expand(relu(reduce(gap(x))))).
template <typename Scalar>
Tensor<Scalar> squeeze_excite_gate(const Tensor<Scalar>& x, const SEParams<Scalar>& p);

template <typename Scalar>
Tensor<Scalar> squeeze_excite(const Tensor<Scalar>& x, const SEParams<Scalar>& p);

template <typename Scalar>
struct ConvBlockParams {
  ConvLayer<Scalar> conv1;
  BatchNormLayer<Scalar> bn1;
  ConvLayer<Scalar> conv2;
  BatchNormLayer<Scalar> bn2;
  std::optional<SEParams<Scalar>> se;

  Index in_channels() const { return conv1.in_channels(); }
  Index out_channels() const { return conv2.out_channels(); }
};

/// se_ratio = 0 builds the block without squeeze-and-excitation.
template <typename Scalar>
ConvBlockParams<Scalar> make_conv_block(ParameterRegistry<Scalar>& reg, const std::string& prefix, Index cin,
                                        Index cout, Index se_ratio);

/// (3x3 conv -> BN -> ReLU) x 2, then squeeze-and-excitation when configured.
template <typename Scalar>
Tensor<Scalar> conv_block(const Tensor<Scalar>& x, ConvBlockParams<Scalar>& p, Mode mode);

inline constexpr std::array<Index, 3> kAsppRates{6, 12, 18};

template <typename Scalar>
struct ASPPParams {
  ConvLayer<Scalar> pool_conv;  // image-pooling branch, 1x1
  ConvLayer<Scalar> conv1x1;
  BatchNormLayer<Scalar> bn1x1;
  std::array<ConvLayer<Scalar>, 3> atrous;  // 3x3, dilations kAsppRates
  std::array<BatchNormLayer<Scalar>, 3> atrous_bn;
  ConvLayer<Scalar> project;  // 1x1 over the 5 concatenated branches
  BatchNormLayer<Scalar> project_bn;

  Index out_channels() const { return project.out_channels(); }
};

template <typename Scalar>
ASPPParams<Scalar> make_aspp(ParameterRegistry<Scalar>& reg, const std::string& prefix, Index cin, Index cout,
                             std::array<Index, 3> rates = kAsppRates);

/// Branch outputs in concatenation order: image pooling, 1x1, then the atrous rates.
template <typename Scalar>
std::vector<Tensor<Scalar>> aspp_branches(const Tensor<Scalar>& x, ASPPParams<Scalar>& p, Mode mode);

template <typename Scalar>
Tensor<Scalar> aspp(const Tensor<Scalar>& x, ASPPParams<Scalar>& p, Mode mode);

template <typename Scalar>
struct EncoderOutput {
  Tensor<Scalar> skip;
  Tensor<Scalar> down;
};

template <typename Scalar>
EncoderOutput<Scalar> encoder_block(const Tensor<Scalar>& x, ConvBlockParams<Scalar>& p, Mode mode);

/// Upsample x by 2, concatenate [up, skips...] along channels, then conv_block.
template <typename Scalar>
Tensor<Scalar> decoder_block(const Tensor<Scalar>& x, std::span<const Tensor<Scalar>> skips,
                             ConvBlockParams<Scalar>& p, Mode mode);

}  // namespace dunet
