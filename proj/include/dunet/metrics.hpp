#pragma once

#include "dunet/tensor.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace dunet {

inline constexpr double kDefaultThreshold = 0.5;

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

/// 1 where pred > threshold, else 0.
template <typename Scalar>
Tensor<Scalar> binarize(const Tensor<Scalar>& pred, double threshold = kDefaultThreshold);

/// Pixel tally of two binary tensors of equal shape.
template <typename Scalar>
ConfusionCounts confusion_counts(const Tensor<Scalar>& pred_bin, const Tensor<Scalar>& target);

/// Per-image tallies, one per batch entry.
template <typename Scalar>
std::vector<ConfusionCounts> confusion_counts_per_image(const Tensor<Scalar>& pred_bin, const Tensor<Scalar>& target);

// Every ratio below is defined as 1 when its denominator is 0.
double dsc(const ConfusionCounts& c);
double iou_foreground(const ConfusionCounts& c);
double iou_background(const ConfusionCounts& c);
/// Two-class mean of foreground and background IoU.
double miou(const ConfusionCounts& c);
std::pair<double, double> precision_recall(const ConfusionCounts& c);

struct ImageMetrics {
  std::string id;
  double dsc = 0;
  double miou = 0;
  double precision = 0;
  double recall = 0;
  double iou_fg = 0;
};

ImageMetrics image_metrics(std::string id, const ConfusionCounts& c);

struct MetricsReport {
  std::vector<ImageMetrics> images;
  ImageMetrics mean;
  double threshold = kDefaultThreshold;

  static MetricsReport from(std::vector<ImageMetrics> images, double threshold);

  /// Header "id,dsc,miou,precision,recall,iou_fg", one row per image, then a "mean" row.
  void write_csv(std::ostream& os) const;
};

}  // namespace dunet
