#include "unfoldseg/solver.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace unfoldseg {

Tensor mask_closed_form(const Tensor& c, const Tensor& b_prev, const ResidualContext& ctx,
                        const SolverConfig& cfg) {
    if (c.height() != ctx.m_prev.height() || c.width() != ctx.m_prev.width())
        throw std::invalid_argument("mask_closed_form: image/mask shape mismatch");
    if (!c.same_shape(b_prev))
        throw std::invalid_argument("mask_closed_form: image/background shape mismatch");
    const Tensor grad_prev = l1_grad(ctx.r_prev, cfg.eps_l1);
    const double a = cfg.alpha, lip = cfg.lipschitz, mu = cfg.mu;
    const double gate_coef = cfg.qa_no_alpha ? lip : a * lip;
    Tensor out(c.height(), c.width(), 1);
    for (int y = 0; y < c.height(); ++y)
        for (int x = 0; x < c.width(); ++x) {
            double c2 = 0.0, cb = 0.0;
            for (int ch = 0; ch < c.channels(); ++ch) {
                const double cv = c.at(y, x, ch);
                c2 += cv * cv;
                cb += cv * b_prev.at(y, x, ch);
            }
            const double w = ctx.gate.at(y, x, 0);
            const double qa = c2 + gate_coef * w * w + mu;
            if (!(qa > 0.0))
                throw degeneracy_error("mask_closed_form: non-positive denominator " +
                                       std::to_string(qa) + " at pixel (" + std::to_string(y) +
                                       ", " + std::to_string(x) + ")");
            // Qb*M_prev + Qc, with the previous-stage gate folded in through
            // the identity gate2*M_prev = r_prev + q_d; the q_d terms cancel.
            const double qb_qc = mu * ctx.m_prev.at(y, x, 0) +
                                 a * lip * w * ctx.r_prev.at(y, x, 0) +
                                 a * lip * w * w * ctx.targets.at(y, x, 0) -
                                 a * w * grad_prev.at(y, x, 0);
            out.at(y, x, 0) = (qb_qc + c2 - cb) / qa;
        }
    return out;
}

Tensor background_closed_form(const Tensor& c, const Tensor& b_prev, const Tensor& m,
                              double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("background_closed_form: lambda must be >= 0");
    if (!c.same_shape(b_prev) || c.height() != m.height() || c.width() != m.width() ||
        m.channels() != 1)
        throw std::invalid_argument("background_closed_form: shape mismatch");
    Tensor out(c.height(), c.width(), c.channels());
    const double inv = 1.0 / (1.0 + lambda);
    for (int y = 0; y < c.height(); ++y)
        for (int x = 0; x < c.width(); ++x) {
            const double mv = m.at(y, x, 0);
            for (int ch = 0; ch < c.channels(); ++ch)
                out.at(y, x, ch) =
                    inv * (lambda * b_prev.at(y, x, ch) + c.at(y, x, ch) * (1.0 - mv));
        }
    return out;
}

namespace {

// One explicit subgradient descent sweep on the anisotropic TV energy.
Tensor tv_sweep(const Tensor& m, double tau) {
    Tensor out = m;
    const int h = m.height(), w = m.width();
    auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double g = 0.0;
            const double v = m.at(y, x, 0);
            if (y > 0) g += sgn(v - m.at(y - 1, x, 0));
            if (y + 1 < h) g += sgn(v - m.at(y + 1, x, 0));
            if (x > 0) g += sgn(v - m.at(y, x - 1, 0));
            if (x + 1 < w) g += sgn(v - m.at(y, x + 1, 0));
            out.at(y, x, 0) = v - tau * g;
        }
    return out;
}

Tensor binomial_blur3(const Tensor& t) {
    static const std::vector<double> taps = {1, 2, 1, 2, 4, 2, 1, 2, 1};
    Tensor kernel(3, 3, t.channels() * t.channels());
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int ch = 0; ch < t.channels(); ++ch)
                kernel.at(i, j, ch * t.channels() + ch) = taps[i * 3 + j] / 16.0;
    return ops::conv2d(t, kernel, t.channels());
}

}  // namespace

Tensor prox_mask_explicit(const Tensor& m_hat, const SolverConfig& cfg) {
    Tensor m = ops::clamp01(m_hat);
    if (cfg.mask_prox == MaskProx::kClampTv) m = ops::clamp01(tv_sweep(m, cfg.tv_weight));
    return m;
}

Tensor prox_background_explicit(const Tensor& b_hat, const SolverConfig& cfg) {
    Tensor b = ops::clamp01(b_hat);
    if (cfg.background_prox == BackgroundProx::kGaussian) b = binomial_blur3(b);
    return b;
}

SolveResult solve(const Tensor& c, const SolverConfig& cfg) {
    return solve(c, cfg, Tensor(c.height(), c.width(), 1, 0.0));
}

SolveResult solve(const Tensor& c, const SolverConfig& cfg, const Tensor& init_mask) {
    cfg.validate();
    for (std::size_t i = 0; i < c.size(); ++i)
        if (!(c[i] >= 0.0 && c[i] <= 1.0))
            throw std::invalid_argument("solve: image values must lie in [0, 1]");
    if (init_mask.height() != c.height() || init_mask.width() != c.width() ||
        init_mask.channels() != 1)
        throw std::invalid_argument("solve: init mask shape mismatch");
    SolveResult result;
    Tensor m_prev = init_mask;
    Tensor m_prev2 = init_mask;  // M_{-1} reuses M_0
    Tensor b_prev(c.height(), c.width(), c.channels(), 0.0);
    for (int k = 1; k <= cfg.stages; ++k) {
        const ResidualContext ctx = make_residual_context(m_prev, m_prev2);
        StageTrace trace;
        trace.surrogate_before = surrogate_mask_energy(m_prev, c, b_prev, ctx, cfg);
        StageState stage;
        stage.k = k;
        stage.m_hat = mask_closed_form(c, b_prev, ctx, cfg);
        trace.surrogate_after = surrogate_mask_energy(stage.m_hat, c, b_prev, ctx, cfg);
        stage.m = prox_mask_explicit(stage.m_hat, cfg);
        stage.b_hat = background_closed_form(c, b_prev, stage.m, cfg.lambda);
        stage.b = prox_background_explicit(stage.b_hat, cfg);
        trace.data_energy = data_energy(c, stage.m, stage.b);
        trace.sparsity_energy = sparsity_energy(stage.m, ctx, cfg.alpha);
        m_prev2 = m_prev;
        m_prev = stage.m;
        b_prev = stage.b;
        result.stages.push_back(std::move(stage));
        result.trace.push_back(trace);
    }
    return result;
}

}  // namespace unfoldseg
