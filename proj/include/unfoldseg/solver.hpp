#pragma once

#include <stdexcept>
#include <vector>

#include "unfoldseg/model.hpp"

namespace unfoldseg {

/// Raised when a closed-form denominator loses positivity; cannot happen
/// for valid configs with mu > 0.
struct degeneracy_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Per-stage record threaded through the iteration. m_hat/b_hat hold the
/// raw closed-form outputs (possibly outside [0, 1]); m and b are the
/// clamped post-prox values. c_hat and e are filled by the unfolded model
/// only and stay empty in solver mode.
struct StageState {
    int k = 0;
    Tensor m_hat, m;
    Tensor b_hat, b;
    Tensor c_hat, e;
};

struct StageTrace {
    double data_energy = 0.0;
    double sparsity_energy = 0.0;
    double surrogate_before = 0.0;
    double surrogate_after = 0.0;
};

struct SolveResult {
    std::vector<StageState> stages;
    std::vector<StageTrace> trace;
    const Tensor& final_mask() const { return stages.back().m; }
};

/// Exact per-pixel minimizer of the stage quadratic:
///   m = (Qb*M_prev + sum_c C^2 - sum_c C*B_prev + Qc) / Qa
/// with Qa/Qb/Qc assembled from the residual context and config weights.
/// Throws degeneracy_error when Qa <= 0 at any pixel.
Tensor mask_closed_form(const Tensor& c, const Tensor& b_prev, const ResidualContext& ctx,
                        const SolverConfig& cfg);

/// Exact minimizer of the background quadratic:
///   b = (lambda*B_prev + C - C*M) / (1 + lambda), per pixel per channel.
Tensor background_closed_form(const Tensor& c, const Tensor& b_prev, const Tensor& m,
                              double lambda);

/// Explicit mask prior: clamp to [0, 1], optionally followed by one
/// anisotropic TV descent sweep (clamp+tv mode).
Tensor prox_mask_explicit(const Tensor& m_hat, const SolverConfig& cfg);

/// Explicit background prior: clamp to [0, 1], optionally followed by a
/// 3x3 binomial blur (gaussian mode).
Tensor prox_background_explicit(const Tensor& b_hat, const SolverConfig& cfg);

/// Runs the alternating closed-form/prox iteration for cfg.stages stages
/// from zero initialization (or from init_mask when provided, which seeds
/// both M_0 and M_{-1}). Pure function of its inputs.
SolveResult solve(const Tensor& c, const SolverConfig& cfg);
SolveResult solve(const Tensor& c, const SolverConfig& cfg, const Tensor& init_mask);

}  // namespace unfoldseg
