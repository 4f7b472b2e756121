#include "unfoldseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace unfoldseg {

namespace {

void check_pair(const Tensor& pred, const Tensor& gt, const char* who) {
    if (!pred.same_shape(gt))
        throw std::invalid_argument(std::string(who) + ": shape mismatch " + pred.shape_str() +
                                    " vs " + gt.shape_str());
    if (pred.channels() != 1)
        throw std::invalid_argument(std::string(who) + ": masks must be single-channel");
}

struct Counts {
    double tp = 0, fp = 0, fn = 0;
};

Counts count_binary(const Tensor& pred, const Tensor& gt, double pred_thresh) {
    Counts n;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] > pred_thresh;
        const bool g = gt[i] > 0.5;
        if (p && g) n.tp += 1;
        else if (p) n.fp += 1;
        else if (g) n.fn += 1;
    }
    return n;
}

}  // namespace

double mae(const Tensor& pred, const Tensor& gt) {
    check_pair(pred, gt, "mae");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::fabs(pred[i] - gt[i]);
    return s / static_cast<double>(pred.size());
}

double f_beta_adaptive(const Tensor& pred, const Tensor& gt) {
    check_pair(pred, gt, "f_beta_adaptive");
    const double t = std::min(2.0 * ops::mean(pred), 1.0);
    const Counts n = count_binary(pred, gt, t);
    const double pred_area = n.tp + n.fp;
    const double gt_area = n.tp + n.fn;
    if (pred_area == 0.0 && gt_area == 0.0) return 1.0;
    if (pred_area == 0.0 || gt_area == 0.0) return 0.0;
    const double precision = n.tp / pred_area;
    const double recall = n.tp / gt_area;
    constexpr double beta2 = 0.3;
    const double denom = beta2 * precision + recall;
    if (denom == 0.0) return 0.0;
    return (1.0 + beta2) * precision * recall / denom;
}

double iou(const Tensor& pred, const Tensor& gt) {
    check_pair(pred, gt, "iou");
    const Counts n = count_binary(pred, gt, 0.5);
    const double uni = n.tp + n.fp + n.fn;
    if (uni == 0.0) return 1.0;
    return n.tp / uni;
}

double dice(const Tensor& pred, const Tensor& gt) {
    check_pair(pred, gt, "dice");
    const Counts n = count_binary(pred, gt, 0.5);
    const double total = 2.0 * n.tp + n.fp + n.fn;
    if (total == 0.0) return 1.0;
    return 2.0 * n.tp / total;
}

MetricReport evaluate(const Tensor& pred, const Tensor& gt) {
    MetricReport r;
    r.mae = mae(pred, gt);
    r.f_beta = f_beta_adaptive(pred, gt);
    r.iou = iou(pred, gt);
    r.dice = dice(pred, gt);
    r.threshold_used = std::min(2.0 * ops::mean(pred), 1.0);
    return r;
}

}  // namespace unfoldseg
