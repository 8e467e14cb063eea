#include "dunet/metrics.hpp"

#include <charconv>
#include <ostream>
#include <stdexcept>
#include <tuple>

namespace dunet {

namespace {

double ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

template <typename Scalar>
bool is_binary(Scalar v) {
  return v == Scalar(0) || v == Scalar(1);
}

std::string format_real(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> binarize(const Tensor<Scalar>& pred, double threshold) {
  Tensor<Scalar> out(pred.shape());
  for (Index i = 0; i < pred.size(); ++i) {
    out.data()[i] = static_cast<double>(pred.data()[i]) > threshold ? Scalar(1) : Scalar(0);
  }
  return out;
}

template <typename Scalar>
std::vector<ConfusionCounts> confusion_counts_per_image(const Tensor<Scalar>& pred_bin, const Tensor<Scalar>& target) {
  if (pred_bin.shape() != target.shape()) {
    throw ShapeError("confusion_counts: " + to_string(pred_bin.shape()) + " vs " + to_string(target.shape()));
  }
  const Index per_image = pred_bin.n() == 0 ? 0 : pred_bin.size() / pred_bin.n();
  std::vector<ConfusionCounts> out(static_cast<std::size_t>(pred_bin.n()));
  for (Index i = 0; i < pred_bin.size(); ++i) {
    const Scalar p = pred_bin.data()[i], y = target.data()[i];
    if (!is_binary(p) || !is_binary(y)) throw std::invalid_argument("confusion_counts: inputs must be binary");
    ConfusionCounts& c = out[static_cast<std::size_t>(i / per_image)];
    if (p == Scalar(1)) {
      (y == Scalar(1) ? c.tp : c.fp) += 1;
    } else {
      (y == Scalar(1) ? c.fn : c.tn) += 1;
    }
  }
  return out;
}

template <typename Scalar>
ConfusionCounts confusion_counts(const Tensor<Scalar>& pred_bin, const Tensor<Scalar>& target) {
  ConfusionCounts total;
  for (const auto& c : confusion_counts_per_image(pred_bin, target)) total += c;
  return total;
}

double dsc(const ConfusionCounts& c) { return ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn); }
double iou_foreground(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fp + c.fn); }
double iou_background(const ConfusionCounts& c) { return ratio(c.tn, c.tn + c.fp + c.fn); }
double miou(const ConfusionCounts& c) { return 0.5 * (iou_foreground(c) + iou_background(c)); }
std::pair<double, double> precision_recall(const ConfusionCounts& c) {
  return {ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn)};
}

ImageMetrics image_metrics(std::string id, const ConfusionCounts& c) {
  ImageMetrics m;
  m.id = std::move(id);
  m.dsc = dsc(c);
  m.miou = miou(c);
  std::tie(m.precision, m.recall) = precision_recall(c);
  m.iou_fg = iou_foreground(c);
  return m;
}

MetricsReport MetricsReport::from(std::vector<ImageMetrics> images, double threshold) {
  MetricsReport r;
  r.threshold = threshold;
  r.images = std::move(images);
  r.mean.id = "mean";
  if (!r.images.empty()) {
    for (const auto& m : r.images) {
      r.mean.dsc += m.dsc;
      r.mean.miou += m.miou;
      r.mean.precision += m.precision;
      r.mean.recall += m.recall;
      r.mean.iou_fg += m.iou_fg;
    }
    const auto n = static_cast<double>(r.images.size());
    r.mean.dsc /= n;
    r.mean.miou /= n;
    r.mean.precision /= n;
    r.mean.recall /= n;
    r.mean.iou_fg /= n;
  }
  return r;
}

void MetricsReport::write_csv(std::ostream& os) const {
  os << "id,dsc,miou,precision,recall,iou_fg\n";
  auto row = [&](const ImageMetrics& m) {
    os << m.id << ',' << format_real(m.dsc) << ',' << format_real(m.miou) << ',' << format_real(m.precision) << ','
       << format_real(m.recall) << ',' << format_real(m.iou_fg) << '\n';
  };
  for (const auto& m : images) row(m);
  row(mean);
}

template Tensor<float> binarize(const Tensor<float>&, double);
template Tensor<double> binarize(const Tensor<double>&, double);
template ConfusionCounts confusion_counts(const Tensor<float>&, const Tensor<float>&);
template ConfusionCounts confusion_counts(const Tensor<double>&, const Tensor<double>&);
template std::vector<ConfusionCounts> confusion_counts_per_image(const Tensor<float>&, const Tensor<float>&);
template std::vector<ConfusionCounts> confusion_counts_per_image(const Tensor<double>&, const Tensor<double>&);

}  // namespace dunet
