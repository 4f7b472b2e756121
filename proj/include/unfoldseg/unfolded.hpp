#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "unfoldseg/model.hpp"
#include "unfoldseg/solver.hpp"
#include "unfoldseg/tape.hpp"

namespace unfoldseg {

/// Internal width of the refinement stacks (equals the feature channel
/// count so identity taps are well-defined).
inline constexpr int kRefinerWidth = 6;

/// Learnable tensors of one stage. Scalars are stored as 1x1x1 tensors so
/// the optimizer and checkpoint code treat every parameter uniformly; the
/// four iteration weights are kept pre-softplus so their effective values
/// stay positive for any raw value.
struct StageParams {
    Tensor alpha_raw, mu_raw, lambda_raw, lipschitz_raw;
    Tensor slope;  // scale of the smoothed-sign gradient, unconstrained

    // mask refinement: small-field 3x3 stack, separable 11-tap large field,
    // 3x3 fusion, and two sibling 3x3 heads onto mask/edge residuals
    Tensor sf_a, sf_b;
    Tensor lf_h, lf_v;
    Tensor fuse;
    Tensor head_m, head_e;

    // background refinement: three conv levels with skip links plus two
    // heads producing the background residual and the reconstruction
    // residual
    Tensor enc1, enc2, mid, dec2, dec1;
    Tensor head_b, head_c;
};

struct ParamSet {
    int stages = 0;
    int image_channels = 1;
    std::vector<StageParams> stage;

    /// Frozen-default parameterization: iteration weights at the config
    /// values, identity center taps inside the stacks, zero heads. With
    /// this set the unfolded forward reproduces the model-based solver
    /// stage for stage.
    static ParamSet passthrough(int stages, int image_channels, const SolverConfig& cfg);

    /// Config-default iteration weights with seeded random kernels.
    static ParamSet random_init(int stages, int image_channels, const SolverConfig& cfg,
                                std::uint64_t seed);

    std::size_t parameter_count() const;
    void visit(const std::function<void(const std::string&, Tensor&)>& f);
    void visit(const std::function<void(const std::string&, const Tensor&)>& f) const;
};

/// log(exp(v) - 1), the raw value whose softplus equals v. v must be > 0.
double inverse_softplus(double v);

/// Tape handles of one stage's parameters.
struct StageParamVars {
    Var alpha_raw, mu_raw, lambda_raw, lipschitz_raw, slope;
    Var sf_a, sf_b, lf_h, lf_v, fuse, head_m, head_e;
    Var enc1, enc2, mid, dec2, dec1, head_b, head_c;
};

/// Registers every tensor of the set on the tape (deterministic order,
/// names "s<k>.<field>").
std::vector<StageParamVars> register_params(GradTape& tape, const ParamSet& params);

struct SofsVars {
    Var m_hat, m, e;
    Var m_raw, e_raw;  // pre-clamp head outputs, for diagnostics
};

/// Mask-separation stage: the learnable closed-form update followed by the
/// dual-field refinement of the mask and the auxiliary edge map.
SofsVars sofs_stage(GradTape& tape, Var c, Var b_prev, Var m_prev, Var m_prev2, Var features,
                    const StageParamVars& p, const SolverConfig& cfg);

struct RobeVars {
    Var b_hat, b, c_hat;
    Var b_raw;
};

/// Background-extraction stage: the learnable fusion of previous background
/// and reversed foreground, refined together with a full-image
/// reconstruction whose residual exposes conflicting foreground/background
/// judgments.
RobeVars robe_stage(GradTape& tape, Var c, Var b_prev, Var m_k, const StageParamVars& p,
                    const SolverConfig& cfg);

struct StageVars {
    SofsVars sofs;
    RobeVars robe;
};

struct LossVars {
    Var total;
    Var bce, iou, dice, mse;  // stage-weighted component sums
};

/// Ground-truth bundle for supervised forwards. gt_e and omega may be null
/// and are then derived from gt_s.
struct LossTargets {
    const Tensor* gt_s = nullptr;
    const Tensor* gt_e = nullptr;
    const Tensor* omega = nullptr;
};

struct UnfoldedForward {
    std::vector<StageVars> stages;
    bool has_loss = false;
    LossVars loss;
};

/// Chains cfg.stages SOFS/ROBE pairs on the tape. features must come from
/// feature_bank(c). When targets are supplied the stage-weighted training
/// loss is assembled as well. init_mask (optional) seeds M_0 and M_{-1}.
UnfoldedForward unfolded_forward(GradTape& tape, const Tensor& c, const Tensor& features,
                                 const std::vector<StageParamVars>& params,
                                 const SolverConfig& cfg,
                                 const LossTargets* targets = nullptr,
                                 const Tensor* init_mask = nullptr);

struct LossBreakdown {
    double loss = 0.0, bce = 0.0, iou_loss = 0.0, dice_loss = 0.0, mse = 0.0;
};

struct UnfoldedResult {
    std::vector<StageState> stages;
    bool has_loss = false;
    LossBreakdown loss;
    std::vector<Tensor> m_raw;  // pre-clamp refined masks per stage
    const Tensor& final_mask() const { return stages.back().m; }
};

UnfoldedResult run_unfolded(const Tensor& c, const ParamSet& params, const SolverConfig& cfg,
                            const Tensor* gt_s = nullptr, const Tensor* init_mask = nullptr);

/// Deep-supervision weight of stage k (1-based) out of `stages`: 2^(k-K).
double stage_weight(int k, int stages);

/// Stage-weighted accumulation used for every loss component:
/// sum_k stage_weight(k, K) * per_stage[k-1].
Var weighted_stage_sum(GradTape& tape, const std::vector<Var>& per_stage, int stages);

/// Pixel weight map 1 + 5*|meanpool_15x15(gt) - gt| (reflect padding).
Tensor bce_weight_map(const Tensor& gt);

/// 3x3 morphological gradient (dilation minus erosion) of a binary mask,
/// binarized again; the derived edge ground truth.
Tensor derive_edge_gt(const Tensor& gt_s);

/// Reference scalar path for the weighted mask losses: predictions are
/// clamped to [1e-6, 1-1e-6], weights come from bce_weight_map, and the
/// weighted IoU loss uses smoothing s = 1. Returns (bce_w, iou_w).
std::pair<double, double> weighted_loss_terms(const Tensor& m, const Tensor& gt);

/// Dice loss 1 - (2*sum(p*g) + 1) / (sum(p) + sum(g) + 1).
double dice_loss(const Tensor& pred, const Tensor& gt);

// ---- training ----

struct TrainSample {
    Tensor image;
    Tensor gt;
};

struct TrainConfig {
    int steps = 2000;
    double lr = 1e-4;
    int batch_size = 4;
    std::uint64_t seed = 7;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
};

struct TrainCurvePoint {
    int step = 0;
    LossBreakdown loss;
};

struct TrainResult {
    ParamSet params;
    std::vector<TrainCurvePoint> curve;    // per-step batch losses, steps 1..N
    LossBreakdown initial_eval, final_eval;  // whole-dataset evals before/after
};

/// Mean loss of the parameter set over a dataset (no gradients).
LossBreakdown evaluate_loss(const std::vector<TrainSample>& dataset, const ParamSet& params,
                            const SolverConfig& cfg);

/// Adam training loop (bias-corrected moments). Deterministic for a fixed
/// seed; batches are drawn by seeded shuffling with wrap-around.
TrainResult train(const std::vector<TrainSample>& dataset, const TrainConfig& tcfg,
                  const SolverConfig& cfg, const ParamSet& init);

// ---- checkpoints ----

/// Versioned plain-text dump: a manifest line per tensor (name + shape)
/// followed by its values, closed by an FNV-1a checksum over the payload.
void save_checkpoint(const std::string& path, const ParamSet& params);
ParamSet load_checkpoint(const std::string& path);

}  // namespace unfoldseg
