#pragma once

#include <string>
#include <vector>

#include "unfoldseg/solver.hpp"
#include "unfoldseg/unfolded.hpp"

namespace unfoldseg {

/// CSV for a solve run, one row per stage:
///   stage,data_energy,sparsity_energy,surrogate_before,surrogate_after,mae,iou
/// mae/iou are against gt when provided and "nan" otherwise. LF newlines,
/// locale-independent formatting.
std::string render_solve_trace(const SolveResult& result, const Tensor* gt,
                               double threshold);

/// CSV for a training run, one row per step:
///   step,loss,bce,iou_loss,dice,mse
std::string render_train_trace(const std::vector<TrainCurvePoint>& curve);

void emit_trace(const std::string& path, const std::string& csv);

}  // namespace unfoldseg
