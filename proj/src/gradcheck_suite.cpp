#include "dunet/gradcheck_suite.hpp"

#include "dunet/blocks.hpp"
#include "dunet/losses.hpp"

#include <cstdio>
#include <ostream>

namespace dunet {

namespace {

using T = Tensor<double>;

std::vector<T> with_params(std::vector<T> inputs, const ParameterRegistry<double>& reg) {
  for (const auto& p : reg.parameters()) inputs.push_back(p.tensor);
  return inputs;
}

/// Values in +-[0.1, 1], away from the ReLU kink.
T away_from_zero(const Shape& shape, std::uint64_t seed) {
  T t = random_tensor<double>(shape, seed, 0.1, 1.0);
  T sign = random_tensor<double>(shape, seed ^ 0x5bd1e995ULL);
  for (Index i = 0; i < t.size(); ++i) {
    if (sign.data()[i] < 0) t.data()[i] = -t.data()[i];
  }
  return t;
}

T binary_target(const Shape& shape, std::uint64_t seed) {
  T t = random_tensor<double>(shape, seed);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = t.data()[i] > 0 ? 1.0 : 0.0;
  return t;
}

template <typename Fn>
GradCheckCase unary(std::string name, Shape in_shape, Fn fn) {
  return {name, [name, in_shape, fn](std::uint64_t seed, const GradCheckOptions& o) {
            T x = random_tensor<double>(in_shape, seed);
            T probe = random_probe<double>(fn(x).shape(), seed + 1000);
            return grad_check(name, {x}, [&] { return project(fn(x), probe); }, o);
          }};
}

}  // namespace

std::vector<GradCheckCase> gradcheck_cases() {
  std::vector<GradCheckCase> cases;

  auto conv_case = [&cases](std::string name, Shape in, Index cout, Index k, Index stride, Index pad, Index dil) {
    cases.push_back({name, [=](std::uint64_t seed, const GradCheckOptions& o) {
                       T x = random_tensor<double>(in, seed);
                       T w = random_tensor<double>({cout, in[1], k, k}, seed + 1);
                       T b = random_tensor<double>({1, cout, 1, 1}, seed + 2);
                       auto f = [&] { return conv2d(x, w, b, stride, pad, dil); };
                       T probe = random_probe<double>(f().shape(), seed + 3);
                       return grad_check(name, {x, w, b}, [&] { return project(f(), probe); }, o);
                     }});
  };
  conv_case("conv2d_3x3", {2, 3, 5, 6}, 4, 3, 1, 1, 1);
  conv_case("conv2d_1x1", {2, 3, 4, 5}, 2, 1, 1, 0, 1);
  conv_case("conv2d_dilated", {1, 2, 7, 7}, 3, 3, 1, 2, 2);
  conv_case("conv2d_strided", {1, 2, 7, 6}, 3, 3, 2, 1, 1);

  cases.push_back(unary("maxpool2x2", {2, 2, 4, 6}, [](const T& x) { return maxpool2x2(x); }));
  cases.push_back(unary("upsample_bilinear2x", {1, 2, 3, 4}, [](const T& x) { return upsample_bilinear2x(x); }));
  cases.push_back(unary("resize_bilinear", {1, 2, 4, 3}, [](const T& x) { return resize_bilinear(x, 7, 5); }));
  cases.push_back({"relu", [](std::uint64_t seed, const GradCheckOptions& o) {
                     T x = away_from_zero({2, 3, 3, 3}, seed);
                     T probe = random_probe<double>(x.shape(), seed + 1);
                     return grad_check("relu", {x}, [&] { return project(relu(x), probe); }, o);
                   }});
  cases.push_back(unary("sigmoid", {2, 3, 3, 3}, [](const T& x) { return sigmoid(scale(x, 4.0)); }));
  cases.push_back(unary("global_avg_pool", {2, 3, 3, 4}, [](const T& x) { return global_avg_pool(x); }));
  cases.push_back(unary("sum", {2, 2, 3, 3}, [](const T& x) { return sum(x); }));
  cases.push_back(unary("mean", {2, 2, 3, 3}, [](const T& x) { return mean(x); }));
  cases.push_back(unary("scale", {1, 2, 3, 3}, [](const T& x) { return scale(x, -1.7); }));

  for (Mode mode : {Mode::train, Mode::eval}) {
    const std::string name = mode == Mode::train ? "batchnorm2d_train" : "batchnorm2d_eval";
    cases.push_back({name, [name, mode](std::uint64_t seed, const GradCheckOptions& o) {
                       T x = random_tensor<double>({3, 2, 3, 3}, seed);
                       T gamma = random_tensor<double>({1, 2, 1, 1}, seed + 1, 0.5, 1.5);
                       T beta = random_tensor<double>({1, 2, 1, 1}, seed + 2);
                       BatchNormState<double> st(2);
                       st.running_mean = random_tensor<double>({1, 2, 1, 1}, seed + 3);
                       st.running_var = random_tensor<double>({1, 2, 1, 1}, seed + 4, 0.5, 2.0);
                       auto f = [&] {
                         // Running statistics must not drift between evaluations.
                         BatchNormState<double> local;
                         local.running_mean = st.running_mean.clone();
                         local.running_var = st.running_var.clone();
                         return batchnorm2d(x, gamma, beta, local, mode);
                       };
                       T probe = random_probe<double>(x.shape(), seed + 5);
                       return grad_check(name, {x, gamma, beta}, [&] { return project(f(), probe); }, o);
                     }});
  }

  cases.push_back({"dense", [](std::uint64_t seed, const GradCheckOptions& o) {
                     T x = random_tensor<double>({3, 4, 1, 1}, seed);
                     T w = random_tensor<double>({2, 4, 1, 1}, seed + 1);
                     T b = random_tensor<double>({1, 2, 1, 1}, seed + 2);
                     T probe = random_probe<double>({3, 2, 1, 1}, seed + 3);
                     return grad_check("dense", {x, w, b}, [&] { return project(dense(x, w, b), probe); }, o);
                   }});
  auto binary_case = [&cases](std::string name, Shape a_shape, Shape b_shape, bool is_mul) {
    cases.push_back({name, [=](std::uint64_t seed, const GradCheckOptions& o) {
                       T a = random_tensor<double>(a_shape, seed);
                       T b = random_tensor<double>(b_shape, seed + 1);
                       auto f = [&] { return is_mul ? mul(a, b) : add(a, b); };
                       T probe = random_probe<double>(a_shape, seed + 2);
                       return grad_check(name, {a, b}, [&] { return project(f(), probe); }, o);
                     }});
  };
  binary_case("mul", {2, 3, 3, 2}, {2, 3, 3, 2}, true);
  binary_case("mul_broadcast", {2, 3, 3, 2}, {2, 1, 3, 2}, true);
  binary_case("add", {2, 3, 3, 2}, {2, 3, 3, 2}, false);
  binary_case("add_broadcast", {2, 3, 3, 2}, {2, 1, 3, 2}, false);
  cases.push_back({"scale_channels", [](std::uint64_t seed, const GradCheckOptions& o) {
                     T x = random_tensor<double>({2, 3, 3, 3}, seed);
                     T s = random_tensor<double>({2, 3, 1, 1}, seed + 1);
                     T probe = random_probe<double>(x.shape(), seed + 2);
                     return grad_check("scale_channels", {x, s}, [&] { return project(scale_channels(x, s), probe); },
                                       o);
                   }});
  cases.push_back({"concat_channels", [](std::uint64_t seed, const GradCheckOptions& o) {
                     T a = random_tensor<double>({2, 1, 3, 3}, seed);
                     T b = random_tensor<double>({2, 3, 3, 3}, seed + 1);
                     T probe = random_probe<double>({2, 4, 3, 3}, seed + 2);
                     return grad_check("concat_channels", {a, b},
                                       [&] { return project(concat_channels({a, b}), probe); }, o);
                   }});
  cases.push_back({"bce_loss", [](std::uint64_t seed, const GradCheckOptions& o) {
                     T p = random_tensor<double>({2, 1, 3, 3}, seed, 0.05, 0.95);
                     T y = binary_target({2, 1, 3, 3}, seed + 1);
                     return grad_check("bce_loss", {p}, [&] { return bce_loss(p, y); }, o);
                   }});
  cases.push_back({"dice_loss", [](std::uint64_t seed, const GradCheckOptions& o) {
                     T p = random_tensor<double>({2, 1, 3, 3}, seed, 0.05, 0.95);
                     T y = binary_target({2, 1, 3, 3}, seed + 1);
                     return grad_check("dice_loss", {p}, [&] { return dice_loss(p, y); }, o);
                   }});

  cases.push_back({"squeeze_excite", [](std::uint64_t seed, const GradCheckOptions& o) {
                     ParameterRegistry<double> reg(seed);
                     auto se = make_squeeze_excite(reg, "se", 4, 2);
                     T x = random_tensor<double>({2, 4, 3, 3}, seed + 1);
                     T probe = random_probe<double>(x.shape(), seed + 2);
                     return grad_check("squeeze_excite", with_params({x}, reg),
                                       [&] { return project(squeeze_excite(x, se), probe); }, o);
                   }});
  for (Index se_ratio : {Index{0}, Index{2}}) {
    const std::string name = se_ratio == 0 ? "conv_block" : "conv_block_se";
    cases.push_back({name, [name, se_ratio](std::uint64_t seed, const GradCheckOptions& o) {
                       ParameterRegistry<double> reg(seed);
                       auto block = make_conv_block(reg, "b", 2, 4, se_ratio);
                       T x = random_tensor<double>({2, 2, 4, 4}, seed + 1);
                       T probe = random_probe<double>({2, 4, 4, 4}, seed + 2);
                       return grad_check(name, with_params({x}, reg),
                                         [&] { return project(conv_block(x, block, Mode::train), probe); }, o);
                     }});
  }
  cases.push_back({"aspp", [](std::uint64_t seed, const GradCheckOptions& o) {
                     ParameterRegistry<double> reg(seed);
                     auto p = make_aspp(reg, "aspp", 2, 2, {1, 2, 3});
                     T x = random_tensor<double>({2, 2, 4, 4}, seed + 1);
                     T probe = random_probe<double>({2, 2, 4, 4}, seed + 2);
                     return grad_check("aspp", with_params({x}, reg),
                                       [&] { return project(aspp(x, p, Mode::train), probe); }, o);
                   }});
  cases.push_back({"encoder_block", [](std::uint64_t seed, const GradCheckOptions& o) {
                     ParameterRegistry<double> reg(seed);
                     auto block = make_conv_block(reg, "enc", 2, 4, 2);
                     T x = random_tensor<double>({2, 2, 4, 4}, seed + 1);
                     T probe_skip = random_probe<double>({2, 4, 4, 4}, seed + 2);
                     T probe_down = random_probe<double>({2, 4, 2, 2}, seed + 3);
                     return grad_check("encoder_block", with_params({x}, reg), [&] {
                       auto e = encoder_block(x, block, Mode::train);
                       return add(project(e.skip, probe_skip), project(e.down, probe_down));
                     }, o);
                   }});
  cases.push_back({"decoder_block", [](std::uint64_t seed, const GradCheckOptions& o) {
                     ParameterRegistry<double> reg(seed);
                     auto block = make_conv_block(reg, "dec", 2 + 1 + 2, 4, 2);
                     T x = random_tensor<double>({2, 2, 2, 2}, seed + 1);
                     T s1 = random_tensor<double>({2, 1, 4, 4}, seed + 2);
                     T s2 = random_tensor<double>({2, 2, 4, 4}, seed + 3);
                     T probe = random_probe<double>({2, 4, 4, 4}, seed + 4);
                     return grad_check("decoder_block", with_params({x, s1, s2}, reg), [&] {
                       const std::array<T, 2> skips{s1, s2};
                       return project(decoder_block(x, std::span<const T>(skips), block, Mode::train), probe);
                     }, o);
                   }});
  cases.push_back({"mask_gate", [](std::uint64_t seed, const GradCheckOptions& o) {
                     ParameterRegistry<double> reg(seed);
                     auto head = make_conv(reg, "head", 3, 1, 1);
                     T x = random_tensor<double>({2, 3, 4, 4}, seed + 1);
                     T probe = random_probe<double>(x.shape(), seed + 2);
                     return grad_check("mask_gate", with_params({x}, reg),
                                       [&] { return project(mul(x, sigmoid(apply(head, x))), probe); }, o);
                   }});
  return cases;
}

std::vector<GradCheckReport> run_gradcheck_suite(int seeds, const GradCheckOptions& options) {
  std::vector<GradCheckReport> out;
  for (const auto& c : gradcheck_cases()) {
    GradCheckReport worst{c.name, 0.0, 0, true};
    for (int s = 1; s <= seeds; ++s) {
      GradCheckReport r = c.run(static_cast<std::uint64_t>(s) * 7919u, options);
      worst.max_relative_error = std::max(worst.max_relative_error, r.max_relative_error);
      worst.coordinates += r.coordinates;
      worst.passed = worst.passed && r.passed;
    }
    out.push_back(worst);
  }
  return out;
}

void write_gradcheck_table(std::ostream& os, std::span<const GradCheckReport> reports) {
  char line[160];
  std::snprintf(line, sizeof line, "%-22s %14s %8s  %s\n", "op", "max_rel_err", "coords", "result");
  os << line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-22s %14.3e %8lld  %s\n", r.name.c_str(), r.max_relative_error,
                  static_cast<long long>(r.coordinates), r.passed ? "PASS" : "FAIL");
    os << line;
  }
}

}  // namespace dunet
