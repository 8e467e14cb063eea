#include "dunet/losses.hpp"

#include <algorithm>
#include <cmath>

namespace dunet {

LossKind parse_loss(std::string_view name) {
  if (name == "bce") return LossKind::bce;
  if (name == "dice") return LossKind::dice;
  throw std::invalid_argument("unknown loss '" + std::string(name) + "' (expected bce|dice)");
}

std::string_view to_string(LossKind kind) { return kind == LossKind::bce ? "bce" : "dice"; }

namespace {

template <typename Scalar>
void check_pair(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, const char* what) {
  if (pred.shape() != target.shape()) {
    throw ShapeError(std::string(what) + ": prediction " + to_string(pred.shape()) + " vs target " +
                     to_string(target.shape()));
  }
  if (pred.empty()) throw ShapeError(std::string(what) + ": empty input");
  for (Index i = 0; i < target.size(); ++i) {
    const Scalar y = target.data()[i];
    if (y != Scalar(0) && y != Scalar(1)) {
      throw std::invalid_argument(std::string(what) + ": target values must be 0 or 1");
    }
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> bce_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
  check_pair(pred, target, "bce_loss");
  const double lo = kBceClamp, hi = 1.0 - kBceClamp;
  const Index count = pred.size();
  double total = 0.0;
  for (Index i = 0; i < count; ++i) {
    const double p = std::clamp(static_cast<double>(pred.data()[i]), lo, hi);
    const double y = static_cast<double>(target.data()[i]);
    total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  Tensor<Scalar> out({1, 1, 1, 1});
  out.data()[0] = static_cast<Scalar>(total / static_cast<double>(count));
  auto& tape = Tape<Scalar>::active();
  if (tape.wants_grad({&pred})) {
    auto pn = pred.node();
    auto yn = target.node();
    tape.record("bce_loss", {pred, target}, out, [pn, yn, count, lo, hi](const Vector<Scalar>& dy) {
      accumulate_if(pn, [&](Vector<Scalar>& g) {
        const double scale = static_cast<double>(dy[0]) / static_cast<double>(count);
        for (Index i = 0; i < count; ++i) {
          const double p = std::clamp(static_cast<double>(pn->value[i]), lo, hi);
          const double y = static_cast<double>(yn->value[i]);
          g[i] += static_cast<Scalar>(scale * (-y / p + (1.0 - y) / (1.0 - p)));
        }
      });
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> dice_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, double smooth) {
  check_pair(pred, target, "dice_loss");
  const Index count = pred.size();
  double inter = 0.0, sum_p = 0.0, sum_y = 0.0;
  for (Index i = 0; i < count; ++i) {
    const double p = pred.data()[i], y = target.data()[i];
    inter += p * y;
    sum_p += p;
    sum_y += y;
  }
  const double denom = sum_p + sum_y + smooth;
  const double numer = 2.0 * inter + smooth;
  Tensor<Scalar> out({1, 1, 1, 1});
  out.data()[0] = static_cast<Scalar>(1.0 - numer / denom);
  auto& tape = Tape<Scalar>::active();
  if (tape.wants_grad({&pred})) {
    auto pn = pred.node();
    auto yn = target.node();
    tape.record("dice_loss", {pred, target}, out, [pn, yn, count, numer, denom](const Vector<Scalar>& dy) {
      accumulate_if(pn, [&](Vector<Scalar>& g) {
        const double base = numer / (denom * denom);
        const double up = static_cast<double>(dy[0]);
        for (Index i = 0; i < count; ++i) {
          const double y = static_cast<double>(yn->value[i]);
          g[i] += static_cast<Scalar>(up * (base - 2.0 * y / denom));
        }
      });
    });
  }
  return out;
}

template Tensor<float> bce_loss(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> bce_loss(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> dice_loss(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> dice_loss(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace dunet
