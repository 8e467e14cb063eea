#pragma once

#include "dunet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace dunet {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Lower bound on the relative-error denominator, so gradients that are
  /// analytically zero are compared against finite-difference round-off
  /// on an absolute scale.
  double denominator_floor = 1e-3;
  /// A coordinate that fails at `step` is retried at step / 10, step / 100, ...
  /// this many times; the smallest error counts. A ReLU or max-pool kink lying
  /// within one step of the evaluation point spoils only the larger steps.
  int refinements = 2;
};

struct GradCheckReport {
  std::string name;
  double max_relative_error = 0.0;
  Index coordinates = 0;
  bool passed = false;
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares reverse-mode gradients of a scalar loss against central differences
/// (f(x + h) - f(x - h)) / 2h for every coordinate of every tensor in `wrt`.
///
/// `loss_fn` must rebuild the loss from the current values of `wrt` each time
/// it is called. The tensors in `wrt` are perturbed in place and restored.
template <typename LossFn>
GradCheckReport grad_check(std::string name, std::vector<Tensor<double>> wrt, LossFn&& loss_fn,
                           GradCheckOptions options = {}) {
  auto& tape = Tape<double>::active();
  tape.clear();
  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tensor<double> loss = loss_fn();
    backward(loss);
  }
  std::vector<Vector<double>> analytic;
  analytic.reserve(wrt.size());
  for (auto& t : wrt) analytic.push_back(t.grad());

  GradCheckReport report;
  report.name = std::move(name);
  NoGradGuard<double> no_grad;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    double* x = wrt[k].data();
    for (Index i = 0; i < wrt[k].size(); ++i) {
      const double saved = x[i];
      double step = options.step;
      double best = std::numeric_limits<double>::infinity();
      for (int attempt = 0; attempt <= options.refinements && best >= options.tolerance; ++attempt, step /= 10) {
        x[i] = saved + step;
        const double up = loss_fn().item();
        x[i] = saved - step;
        const double down = loss_fn().item();
        x[i] = saved;
        const double numeric = (up - down) / (2.0 * step);
        best = std::min(best, relative_error(analytic[k][i], numeric, options.denominator_floor));
      }
      report.max_relative_error = std::max(report.max_relative_error, best);
      ++report.coordinates;
    }
  }
  report.passed = report.max_relative_error < options.tolerance;
  return report;
}

/// Fixed random projection turning a tensor-valued op into a scalar loss.
template <typename Scalar>
Tensor<Scalar> random_probe(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(dist(rng));
  return t;
}

template <typename Scalar>
Tensor<Scalar> random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(dist(rng));
  return t;
}

template <typename Scalar>
Tensor<Scalar> project(const Tensor<Scalar>& out, const Tensor<Scalar>& probe) {
  return sum(mul(out, probe));
}

}  // namespace dunet
