#include "unfoldseg/model.hpp"

#include <cmath>
#include <stdexcept>

namespace unfoldseg {

void SolverConfig::validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha))
        throw std::invalid_argument("SolverConfig: alpha must be finite and >= 0");
    if (!(mu > 0.0) || !std::isfinite(mu))
        throw std::invalid_argument("SolverConfig: mu must be finite and > 0");
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw std::invalid_argument("SolverConfig: lambda must be finite and >= 0");
    if (!(lipschitz > 0.0) || !std::isfinite(lipschitz))
        throw std::invalid_argument("SolverConfig: lipschitz must be finite and > 0");
    if (!(eps_l1 >= 0.0) || !std::isfinite(eps_l1))
        throw std::invalid_argument("SolverConfig: eps_l1 must be finite and >= 0");
    if (stages < 1) throw std::invalid_argument("SolverConfig: stages must be >= 1");
    if (!(threshold >= 0.0 && threshold <= 1.0))
        throw std::invalid_argument("SolverConfig: threshold must lie in [0, 1]");
}

std::pair<Tensor, Tensor> uncertainty_removal(const Tensor& m) {
    for (std::size_t i = 0; i < m.size(); ++i)
        if (!(m[i] >= 0.0 && m[i] <= 1.0))
            throw std::invalid_argument("uncertainty_removal: mask value outside [0, 1]");
    return {ops::mask_targets(m), ops::mask_gate(m)};
}

ResidualContext make_residual_context(const Tensor& m_prev, const Tensor& m_prev2) {
    auto [targets, gate] = uncertainty_removal(m_prev);
    auto [targets2, gate2] = uncertainty_removal(m_prev2);
    ResidualContext ctx;
    ctx.m_prev = m_prev;
    ctx.targets = std::move(targets);
    ctx.gate = std::move(gate);
    ctx.q_d = ops::mul(gate2, targets2);
    ctx.r_prev = ops::sub(ops::mul(gate2, m_prev), ctx.q_d);
    return ctx;
}

Tensor l1_grad(const Tensor& r, double eps_l1) {
    if (eps_l1 < 0.0) throw std::invalid_argument("l1_grad: eps_l1 must be >= 0");
    Tensor out(r.height(), r.width(), r.channels());
    if (eps_l1 == 0.0) {
        for (std::size_t i = 0; i < r.size(); ++i)
            out[i] = r[i] > 0.0 ? 1.0 : (r[i] < 0.0 ? -1.0 : 0.0);
    } else {
        for (std::size_t i = 0; i < r.size(); ++i)
            out[i] = r[i] / std::sqrt(r[i] * r[i] + eps_l1 * eps_l1);
    }
    return out;
}

namespace {

void check_image_mask(const Tensor& c, const Tensor& m, const Tensor& b, const char* who) {
    if (m.channels() != 1)
        throw std::invalid_argument(std::string(who) + ": mask must be single-channel");
    if (c.height() != m.height() || c.width() != m.width() || !c.same_shape(b))
        throw std::invalid_argument(std::string(who) + ": shape mismatch (" + c.shape_str() +
                                    ", " + m.shape_str() + ", " + b.shape_str() + ")");
}

}  // namespace

double data_energy(const Tensor& c, const Tensor& m, const Tensor& b) {
    check_image_mask(c, m, b, "data_energy");
    double e = 0.0;
    for (int y = 0; y < c.height(); ++y)
        for (int x = 0; x < c.width(); ++x) {
            const double mv = m.at(y, x, 0);
            for (int ch = 0; ch < c.channels(); ++ch) {
                const double r = c.at(y, x, ch) * (1.0 - mv) - b.at(y, x, ch);
                e += r * r;
            }
        }
    return 0.5 * e;
}

double sparsity_energy(const Tensor& m, const ResidualContext& ctx, double alpha) {
    if (!m.same_shape(ctx.targets) || !m.same_shape(ctx.gate))
        throw std::invalid_argument("sparsity_energy: shape mismatch");
    double e = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i)
        e += std::fabs(ctx.gate[i] * (m[i] - ctx.targets[i]));
    return alpha * e;
}

double surrogate_mask_energy(const Tensor& m_hat, const Tensor& c, const Tensor& b_prev,
                             const ResidualContext& ctx, const SolverConfig& cfg) {
    check_image_mask(c, m_hat, b_prev, "surrogate_mask_energy");
    const Tensor grad_prev = l1_grad(ctx.r_prev, cfg.eps_l1);
    const double lip = cfg.lipschitz;
    double e = 0.0;
    for (int y = 0; y < c.height(); ++y)
        for (int x = 0; x < c.width(); ++x) {
            const double mv = m_hat.at(y, x, 0);
            for (int ch = 0; ch < c.channels(); ++ch) {
                const double r = c.at(y, x, ch) * (1.0 - mv) - b_prev.at(y, x, ch);
                e += 0.5 * r * r;
            }
            const double dm = mv - ctx.m_prev.at(y, x, 0);
            e += 0.5 * cfg.mu * dm * dm;
            const double res = ctx.gate.at(y, x, 0) * (mv - ctx.targets.at(y, x, 0));
            const double t = res - ctx.r_prev.at(y, x, 0) + grad_prev.at(y, x, 0) / lip;
            e += 0.5 * cfg.alpha * lip * t * t;
        }
    return e;
}

Tensor surrogate_mask_gradient(const Tensor& m_hat, const Tensor& c, const Tensor& b_prev,
                               const ResidualContext& ctx, const SolverConfig& cfg) {
    check_image_mask(c, m_hat, b_prev, "surrogate_mask_gradient");
    const Tensor grad_prev = l1_grad(ctx.r_prev, cfg.eps_l1);
    const double lip = cfg.lipschitz;
    Tensor out(m_hat.height(), m_hat.width(), 1);
    for (int y = 0; y < c.height(); ++y)
        for (int x = 0; x < c.width(); ++x) {
            const double mv = m_hat.at(y, x, 0);
            double g = 0.0;
            for (int ch = 0; ch < c.channels(); ++ch) {
                const double cv = c.at(y, x, ch);
                g += (cv * mv + b_prev.at(y, x, ch) - cv) * cv;
            }
            g += cfg.mu * (mv - ctx.m_prev.at(y, x, 0));
            const double w = ctx.gate.at(y, x, 0);
            const double res = w * (mv - ctx.targets.at(y, x, 0));
            g += cfg.alpha * lip * w *
                 (res - ctx.r_prev.at(y, x, 0) + grad_prev.at(y, x, 0) / lip);
            out.at(y, x, 0) = g;
        }
    return out;
}

}  // namespace unfoldseg
