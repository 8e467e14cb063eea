#include "dunet/optim.hpp"

#include <stdexcept>
#include <string>

namespace dunet {

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "nadam") return OptimizerKind::nadam;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "' (expected adam|nadam)");
}

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "nadam"; }

template <typename Scalar>
Optimizer<Scalar>::Optimizer(OptimizerKind kind, AdamOptions options, std::vector<Parameter<Scalar>> params)
    : kind_(kind), options_(options), params_(std::move(params)) {
  for (const auto& p : params_) {
    state_.m.push_back(Vector<Scalar>::Zero(p.tensor.size()));
    state_.v.push_back(Vector<Scalar>::Zero(p.tensor.size()));
  }
}

template <typename Scalar>
void Optimizer<Scalar>::step() {
  bool any = false;
  for (const auto& p : params_) any = any || p.tensor.has_grad();
  if (!any) throw std::logic_error("optimizer step without gradients (call backward first)");
  ++state_.step;
  using Array = Eigen::Array<double, Eigen::Dynamic, 1>;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<Scalar> t = params_[i].tensor;
    if (!t.has_grad()) continue;
    // Moments and the update are evaluated in double, then stored at Scalar precision.
    Array g = t.grad().template cast<double>().array();
    Array m = state_.m[i].template cast<double>().array();
    Array v = state_.v[i].template cast<double>().array();
    Array theta = t.values().template cast<double>().array();
    if (kind_ == OptimizerKind::adam) {
      adam_update(g, m, v, theta, state_.step, options_);
    } else {
      nadam_update(g, m, v, theta, state_.step, options_);
    }
    state_.m[i] = m.matrix().template cast<Scalar>();
    state_.v[i] = v.matrix().template cast<Scalar>();
    t.values() = theta.matrix().template cast<Scalar>();
  }
}

template <typename Scalar>
void Optimizer<Scalar>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace dunet
