#pragma once

#include <utility>

#include "unfoldseg/tensor.hpp"

namespace unfoldseg {

enum class MaskProx { kClamp, kClampTv };
enum class BackgroundProx { kClamp, kGaussian };

/// Scalar hyperparameters of the segmentation energy and the iteration
/// schedule shared by the model-based solver and the unfolded network.
struct SolverConfig {
    double alpha = 0.1;      // residual sparsity weight, >= 0
    double mu = 1.0;         // mask proximal weight, > 0
    double lambda = 1.0;     // background proximal weight, >= 0
    double lipschitz = 1.0;  // curvature constant of the l1 surrogate, > 0
    double eps_l1 = 1e-3;    // smoothing of the l1 gradient, >= 0
    int stages = 4;

    // When true the mask-update denominator uses Qa = C^2 + L*w^2 + mu,
    // i.e. without the alpha factor on the gate term. That variant is not
    // the stationary form of the surrogate energy unless alpha == 1; the
    // default keeps the factor.
    bool qa_no_alpha = false;

    MaskProx mask_prox = MaskProx::kClamp;
    BackgroundProx background_prox = BackgroundProx::kClamp;
    double tv_weight = 0.1;   // single-sweep TV step size in clamp+tv mode
    double threshold = 0.5;   // binarization threshold for mask output

    void validate() const;  // throws std::invalid_argument on bad values
};

/// Constants of the linearized sparsity term for one stage. targets/gate
/// are built from the previous mask M_{k-1}; r_prev and q_d involve the
/// mask before that, M_{k-2}.
struct ResidualContext {
    Tensor m_prev;   // M_{k-1}
    Tensor targets;  // snapped targets of M_{k-1}
    Tensor gate;     // 0/1 certainty gate of M_{k-1}
    Tensor r_prev;   // gate(M_{k-2}) * (M_{k-1} - targets(M_{k-2}))
    Tensor q_d;      // gate(M_{k-2}) * targets(M_{k-2})
};

ResidualContext make_residual_context(const Tensor& m_prev, const Tensor& m_prev2);

/// Piecewise refinement of a mask into snapped targets plus a binary
/// certainty gate. Per pixel:
///   targets = 0.1 for m in [0.1, 0.4), 0.9 for m in (0.6, 0.9], m otherwise
///   gate    = 0 for m in [0.4, 0.6], 1 otherwise
/// Throws std::invalid_argument when any value lies outside [0, 1].
std::pair<Tensor, Tensor> uncertainty_removal(const Tensor& m);

/// Smoothed l1 gradient r / sqrt(r^2 + eps^2); exact sign (with sign(0)=0)
/// when eps is zero.
Tensor l1_grad(const Tensor& r, double eps_l1);

/// 1/2 * sum over pixels and channels of (C - C*M - B)^2. The mask is
/// single-channel and broadcast across the image channels.
double data_energy(const Tensor& c, const Tensor& m, const Tensor& b);

/// alpha * sum |gate * (M - targets)|, the exact l1 penalty, reported in
/// traces; the solver optimizes its linearized surrogate instead.
double sparsity_energy(const Tensor& m, const ResidualContext& ctx, double alpha);

/// The full stage-k quadratic in the mask update: data term, mu-proximal
/// term, and the linearized sparsity term. The mask closed form is the
/// exact minimizer of this function.
double surrogate_mask_energy(const Tensor& m_hat, const Tensor& c, const Tensor& b_prev,
                             const ResidualContext& ctx, const SolverConfig& cfg);

/// Analytic gradient of surrogate_mask_energy with respect to the mask.
Tensor surrogate_mask_gradient(const Tensor& m_hat, const Tensor& c, const Tensor& b_prev,
                               const ResidualContext& ctx, const SolverConfig& cfg);

}  // namespace unfoldseg
