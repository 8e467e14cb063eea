#include "dunet/blocks.hpp"

#include <cmath>

namespace dunet {

template <typename Scalar>
void ParameterRegistry<Scalar>::check_unique(const std::string& name) const {
  for (const auto* list : {&parameters_, &buffers_}) {
    for (const auto& p : *list) {
      if (p.name == name) throw std::invalid_argument("duplicate parameter name '" + name + "'");
    }
  }
}

template <typename Scalar>
Tensor<Scalar> ParameterRegistry<Scalar>::kaiming_uniform(const std::string& name, const Shape& shape,
                                                          Index fan_in) {
  check_unique(name);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<Scalar> t(shape, true);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(dist(rng_));
  parameters_.push_back({name, t});
  return t;
}

template <typename Scalar>
Tensor<Scalar> ParameterRegistry<Scalar>::constant(const std::string& name, const Shape& shape, Scalar value) {
  check_unique(name);
  Tensor<Scalar> t = Tensor<Scalar>::constant(shape, value);
  t.set_requires_grad(true);
  parameters_.push_back({name, t});
  return t;
}

template <typename Scalar>
void ParameterRegistry<Scalar>::add_buffer(const std::string& name, Tensor<Scalar> tensor) {
  check_unique(name);
  buffers_.push_back({name, std::move(tensor)});
}

template <typename Scalar>
std::vector<Parameter<Scalar>> ParameterRegistry<Scalar>::state() const {
  std::vector<Parameter<Scalar>> all = parameters_;
  all.insert(all.end(), buffers_.begin(), buffers_.end());
  return all;
}

template <typename Scalar>
Index ParameterRegistry<Scalar>::parameter_count() const {
  Index total = 0;
  for (const auto& p : parameters_) total += p.tensor.size();
  return total;
}

template <typename Scalar>
ConvLayer<Scalar> make_conv(ParameterRegistry<Scalar>& reg, const std::string& prefix, Index cin, Index cout,
                            Index kernel, Index dilation) {
  ConvLayer<Scalar> c;
  c.weight = reg.kaiming_uniform(prefix + ".weight", {cout, cin, kernel, kernel}, cin * kernel * kernel);
  c.bias = reg.constant(prefix + ".bias", {1, cout, 1, 1}, Scalar(0));
  c.dilation = dilation;
  c.padding = dilation * (kernel - 1) / 2;
  return c;
}

template <typename Scalar>
BatchNormLayer<Scalar> make_batchnorm(ParameterRegistry<Scalar>& reg, const std::string& prefix, Index channels) {
  BatchNormLayer<Scalar> bn;
  bn.gamma = reg.constant(prefix + ".gamma", {1, channels, 1, 1}, Scalar(1));
  bn.beta = reg.constant(prefix + ".beta", {1, channels, 1, 1}, Scalar(0));
  bn.state = BatchNormState<Scalar>(channels);
  reg.add_buffer(prefix + ".running_mean", bn.state.running_mean);
  reg.add_buffer(prefix + ".running_var", bn.state.running_var);
  return bn;
}

template <typename Scalar>
SEParams<Scalar> make_squeeze_excite(ParameterRegistry<Scalar>& reg, const std::string& prefix, Index channels,
                                     Index ratio) {
  if (ratio < 1 || channels % ratio != 0) {
    throw std::invalid_argument("squeeze-excite: " + std::to_string(channels) +
                                " channels not divisible by ratio " + std::to_string(ratio));
  }
  const Index hidden = channels / ratio;
  SEParams<Scalar> p;
  p.ratio = ratio;
  p.reduce.weight = reg.kaiming_uniform(prefix + ".reduce.weight", {hidden, channels, 1, 1}, channels);
  p.reduce.bias = reg.constant(prefix + ".reduce.bias", {1, hidden, 1, 1}, Scalar(0));
  p.expand.weight = reg.kaiming_uniform(prefix + ".expand.weight", {channels, hidden, 1, 1}, hidden);
  p.expand.bias = reg.constant(prefix + ".expand.bias", {1, channels, 1, 1}, Scalar(0));
  return p;
}

template <typename Scalar>
Tensor<Scalar> squeeze_excite_gate(const Tensor<Scalar>& x, const SEParams<Scalar>& p) {
  if (x.c() % p.ratio != 0 || p.reduce.weight.c() != x.c()) {
    throw ShapeError("squeeze-excite: input " + to_string(x.shape()) + " does not match block with ratio " +
                     std::to_string(p.ratio));
  }
  Tensor<Scalar> s = global_avg_pool(x);
  s = relu(dense(s, p.reduce.weight, p.reduce.bias));
  return sigmoid(dense(s, p.expand.weight, p.expand.bias));
}

template <typename Scalar>
Tensor<Scalar> squeeze_excite(const Tensor<Scalar>& x, const SEParams<Scalar>& p) {
  return scale_channels(x, squeeze_excite_gate(x, p));
}

template <typename Scalar>
ConvBlockParams<Scalar> make_conv_block(ParameterRegistry<Scalar>& reg, const std::string& prefix, Index cin,
                                        Index cout, Index se_ratio) {
  ConvBlockParams<Scalar> p;
  p.conv1 = make_conv(reg, prefix + ".conv1", cin, cout, 3);
  p.bn1 = make_batchnorm(reg, prefix + ".bn1", cout);
  p.conv2 = make_conv(reg, prefix + ".conv2", cout, cout, 3);
  p.bn2 = make_batchnorm(reg, prefix + ".bn2", cout);
  if (se_ratio > 0) p.se = make_squeeze_excite(reg, prefix + ".se", cout, se_ratio);
  return p;
}

template <typename Scalar>
Tensor<Scalar> conv_block(const Tensor<Scalar>& x, ConvBlockParams<Scalar>& p, Mode mode) {
  if (x.c() != p.in_channels()) {
    throw ShapeError("conv_block: input has " + std::to_string(x.c()) + " channels, block expects " +
                     std::to_string(p.in_channels()));
  }
  Tensor<Scalar> y = relu(apply(p.bn1, apply(p.conv1, x), mode));
  y = relu(apply(p.bn2, apply(p.conv2, y), mode));
  if (p.se) y = squeeze_excite(y, *p.se);
  return y;
}

template <typename Scalar>
ASPPParams<Scalar> make_aspp(ParameterRegistry<Scalar>& reg, const std::string& prefix, Index cin, Index cout,
                             std::array<Index, 3> rates) {
  ASPPParams<Scalar> p;
  p.pool_conv = make_conv(reg, prefix + ".pool.conv", cin, cout, 1);
  p.conv1x1 = make_conv(reg, prefix + ".b1x1.conv", cin, cout, 1);
  p.bn1x1 = make_batchnorm(reg, prefix + ".b1x1.bn", cout);
  for (std::size_t i = 0; i < rates.size(); ++i) {
    const std::string name = prefix + ".rate" + std::to_string(rates[i]);
    p.atrous[i] = make_conv(reg, name + ".conv", cin, cout, 3, rates[i]);
    p.atrous_bn[i] = make_batchnorm(reg, name + ".bn", cout);
  }
  p.project = make_conv(reg, prefix + ".project.conv", 5 * cout, cout, 1);
  p.project_bn = make_batchnorm(reg, prefix + ".project.bn", cout);
  return p;
}

template <typename Scalar>
std::vector<Tensor<Scalar>> aspp_branches(const Tensor<Scalar>& x, ASPPParams<Scalar>& p, Mode mode) {
  std::vector<Tensor<Scalar>> branches;
  branches.reserve(5);
  // Pooled branch: conv + ReLU, no batch norm.
  Tensor<Scalar> pooled = relu(apply(p.pool_conv, global_avg_pool(x)));
  branches.push_back(resize_bilinear(pooled, x.h(), x.w()));
  branches.push_back(relu(apply(p.bn1x1, apply(p.conv1x1, x), mode)));
  for (std::size_t i = 0; i < p.atrous.size(); ++i) {
    branches.push_back(relu(apply(p.atrous_bn[i], apply(p.atrous[i], x), mode)));
  }
  return branches;
}

template <typename Scalar>
Tensor<Scalar> aspp(const Tensor<Scalar>& x, ASPPParams<Scalar>& p, Mode mode) {
  auto branches = aspp_branches(x, p, mode);
  Tensor<Scalar> merged = concat_channels(std::span<const Tensor<Scalar>>(branches));
  return relu(apply(p.project_bn, apply(p.project, merged), mode));
}

template <typename Scalar>
EncoderOutput<Scalar> encoder_block(const Tensor<Scalar>& x, ConvBlockParams<Scalar>& p, Mode mode) {
  if (x.h() % 2 != 0 || x.w() % 2 != 0) {
    throw ShapeError("encoder_block: spatial dims must be even, got " + to_string(x.shape()));
  }
  EncoderOutput<Scalar> out;
  out.skip = conv_block(x, p, mode);
  out.down = maxpool2x2(out.skip);
  return out;
}

template <typename Scalar>
Tensor<Scalar> decoder_block(const Tensor<Scalar>& x, std::span<const Tensor<Scalar>> skips,
                             ConvBlockParams<Scalar>& p, Mode mode) {
  if (skips.empty()) throw ShapeError("decoder_block: at least one skip connection is required");
  for (const auto& s : skips) {
    if (s.h() != 2 * x.h() || s.w() != 2 * x.w() || s.n() != x.n()) {
      throw ShapeError("decoder_block: skip " + to_string(s.shape()) + " does not match 2x upsampled " +
                       to_string(x.shape()));
    }
  }
  std::vector<Tensor<Scalar>> parts;
  parts.reserve(skips.size() + 1);
  parts.push_back(upsample_bilinear2x(x));
  parts.insert(parts.end(), skips.begin(), skips.end());
  return conv_block(concat_channels(std::span<const Tensor<Scalar>>(parts)), p, mode);
}

#define DUNET_INSTANTIATE_BLOCKS(S)                                                                            \
  template class ParameterRegistry<S>;                                                                         \
  template ConvLayer<S> make_conv(ParameterRegistry<S>&, const std::string&, Index, Index, Index, Index);      \
  template BatchNormLayer<S> make_batchnorm(ParameterRegistry<S>&, const std::string&, Index);                 \
  template SEParams<S> make_squeeze_excite(ParameterRegistry<S>&, const std::string&, Index, Index);            \
  template Tensor<S> squeeze_excite_gate(const Tensor<S>&, const SEParams<S>&);                                \
  template Tensor<S> squeeze_excite(const Tensor<S>&, const SEParams<S>&);                                     \
  template ConvBlockParams<S> make_conv_block(ParameterRegistry<S>&, const std::string&, Index, Index, Index); \
  template Tensor<S> conv_block(const Tensor<S>&, ConvBlockParams<S>&, Mode);                                  \
  template ASPPParams<S> make_aspp(ParameterRegistry<S>&, const std::string&, Index, Index,                    \
                                   std::array<Index, 3>);                                                      \
  template std::vector<Tensor<S>> aspp_branches(const Tensor<S>&, ASPPParams<S>&, Mode);                       \
  template Tensor<S> aspp(const Tensor<S>&, ASPPParams<S>&, Mode);                                             \
  template EncoderOutput<S> encoder_block(const Tensor<S>&, ConvBlockParams<S>&, Mode);                        \
  template Tensor<S> decoder_block(const Tensor<S>&, std::span<const Tensor<S>>, ConvBlockParams<S>&, Mode);

DUNET_INSTANTIATE_BLOCKS(float)
DUNET_INSTANTIATE_BLOCKS(double)

}  // namespace dunet
