#pragma once

#include "dunet/tensor.hpp"

#include <span>
#include <string_view>

namespace dunet {

enum class Mode { train, eval };
enum class Activation { relu, sigmoid };

Activation parse_activation(std::string_view name);

/// Zero-padded 2-D convolution. weight is (Cout, Cin, kh, kw); bias is (1, Cout, 1, 1) or empty.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                      Index stride = 1, Index padding = 0, Index dilation = 1);

/// 2x2 window, stride 2. Ties route the gradient to the first element in row-major order.
template <typename Scalar>
Tensor<Scalar> maxpool2x2(const Tensor<Scalar>& input);

/// Bilinear resampling with half-pixel centers (align_corners = false).
template <typename Scalar>
Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& input, Index out_h, Index out_w);

template <typename Scalar>
Tensor<Scalar> upsample_bilinear2x(const Tensor<Scalar>& input) {
  return resize_bilinear(input, 2 * input.h(), 2 * input.w());
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& input);

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& input);

template <typename Scalar>
Tensor<Scalar> activation(Activation kind, const Tensor<Scalar>& input) {
  return kind == Activation::relu ? relu(input) : sigmoid(input);
}

template <typename Scalar>
struct BatchNormState {
  Tensor<Scalar> running_mean;  // (1, C, 1, 1)
  Tensor<Scalar> running_var;   // (1, C, 1, 1), biased batch variance

  BatchNormState() = default;
  explicit BatchNormState(Index channels)
      : running_mean(Tensor<Scalar>::zeros({1, channels, 1, 1})),
        running_var(Tensor<Scalar>::constant({1, channels, 1, 1}, Scalar(1))) {}
};

struct BatchNormOptions {
  double eps = 1e-5;
  /// running = momentum * running + (1 - momentum) * batch
  double momentum = 0.9;
};

/// Per-channel normalization over (N, H, W). Train mode uses and updates batch statistics.
template <typename Scalar>
Tensor<Scalar> batchnorm2d(const Tensor<Scalar>& input, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                           BatchNormState<Scalar>& state, Mode mode, BatchNormOptions options = {});

/// (N, C, H, W) -> (N, C, 1, 1) spatial mean.
template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& input);

/// Affine map of (N, Cin, 1, 1) with weight (Cout, Cin, 1, 1) and bias (1, Cout, 1, 1).
template <typename Scalar>
Tensor<Scalar> dense(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias);

/// Elementwise product. `b` may have one channel against `a` with many (broadcast over C).
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// Elementwise sum with the same broadcast rule as mul().
template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// x(n, c, :, :) * scale(n, c); scale is (N, C, 1, 1).
template <typename Scalar>
Tensor<Scalar> scale_channels(const Tensor<Scalar>& x, const Tensor<Scalar>& scale);

template <typename Scalar>
Tensor<Scalar> concat_channels(std::span<const Tensor<Scalar>> parts);

template <typename Scalar>
Tensor<Scalar> concat_channels(std::initializer_list<Tensor<Scalar>> parts) {
  std::vector<Tensor<Scalar>> v(parts);
  return concat_channels(std::span<const Tensor<Scalar>>(v));
}

/// Sum of all elements as a (1, 1, 1, 1) tensor.
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& input);

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& input);

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& input, Scalar factor);

}  // namespace dunet
