#pragma once

#include "unfoldseg/tensor.hpp"

namespace unfoldseg {

struct MetricReport {
    double mae = 0.0;
    double f_beta = 0.0;
    double iou = 0.0;
    double dice = 0.0;
    double threshold_used = 0.0;
};

/// Mean absolute error between two single-channel maps of equal shape.
double mae(const Tensor& pred, const Tensor& gt);

/// Adaptive F-measure with beta^2 = 0.3: the prediction is binarized at
/// t = min(2*mean(pred), 1) with a strict > comparison. Returns 1 when
/// both gt and the binarized prediction are empty, 0 when precision/recall
/// are undefined or either side is empty while the other is not.
double f_beta_adaptive(const Tensor& pred, const Tensor& gt);

/// Intersection over union of binary masks (inputs are binarized at 0.5).
/// Empty vs empty counts as 1.
double iou(const Tensor& pred, const Tensor& gt);

/// Dice overlap of binary masks; same conventions as iou.
double dice(const Tensor& pred, const Tensor& gt);

MetricReport evaluate(const Tensor& pred, const Tensor& gt);

}  // namespace unfoldseg
