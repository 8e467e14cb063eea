#pragma once

#include "dunet/tensor.hpp"

#include <cmath>
#include <string_view>
#include <vector>

namespace dunet {

enum class OptimizerKind { adam, nadam };

OptimizerKind parse_optimizer(std::string_view name);
std::string_view to_string(OptimizerKind kind);

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam update at step t (1-based). Works on scalars and Eigen arrays alike.
template <typename T>
void adam_update(const T& grad, T& m, T& v, T& theta, long t, const AdamOptions& o) {
  using std::sqrt;
  m = o.beta1 * m + (1 - o.beta1) * grad;
  v = o.beta2 * v + (1 - o.beta2) * grad * grad;
  const double m_corr = 1 - std::pow(o.beta1, static_cast<double>(t));
  const double v_corr = 1 - std::pow(o.beta2, static_cast<double>(t));
  theta = theta - o.lr * (m / m_corr) / (sqrt(v / v_corr) + o.eps);
}

/// One Nadam update at step t: the Adam step with the Nesterov look-ahead
/// numerator beta1 * m / (1 - beta1^(t+1)) + (1 - beta1) * g / (1 - beta1^t).
template <typename T>
void nadam_update(const T& grad, T& m, T& v, T& theta, long t, const AdamOptions& o) {
  using std::sqrt;
  m = o.beta1 * m + (1 - o.beta1) * grad;
  v = o.beta2 * v + (1 - o.beta2) * grad * grad;
  const double b1t = std::pow(o.beta1, static_cast<double>(t));
  const double v_corr = 1 - std::pow(o.beta2, static_cast<double>(t));
  theta = theta - o.lr * (o.beta1 * m / (1 - b1t * o.beta1) + (1 - o.beta1) * grad / (1 - b1t)) /
                      (sqrt(v / v_corr) + o.eps);
}

/// Per-parameter first/second moments and the shared step counter.
template <typename Scalar>
struct OptimizerState {
  std::vector<Vector<Scalar>> m;
  std::vector<Vector<Scalar>> v;
  long step = 0;
};

/// Owns mutation of a parameter list between backward passes.
template <typename Scalar>
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, AdamOptions options, std::vector<Parameter<Scalar>> params);

  /// Applies one update from the accumulated gradients. Throws if no parameter has a gradient.
  void step();
  void zero_grad();

  double lr() const { return options_.lr; }
  void set_lr(double lr) { options_.lr = lr; }
  OptimizerKind kind() const { return kind_; }
  const AdamOptions& options() const { return options_; }
  const std::vector<Parameter<Scalar>>& parameters() const { return params_; }
  OptimizerState<Scalar>& state() { return state_; }
  const OptimizerState<Scalar>& state() const { return state_; }

 private:
  OptimizerKind kind_;
  AdamOptions options_;
  std::vector<Parameter<Scalar>> params_;
  OptimizerState<Scalar> state_;
};

}  // namespace dunet
