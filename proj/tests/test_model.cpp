#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "unfoldseg/model.hpp"

using namespace unfoldseg;
using testutil::random_tensor;

namespace {

Tensor scalar_mask(double v) { return Tensor(1, 1, 1, v); }

// Scalar-loop reference for the stage quadratic, written independently of
// the library path (no shared helpers).
double surrogate_oracle(const Tensor& m, const Tensor& c, const Tensor& b,
                        const ResidualContext& ctx, const SolverConfig& cfg) {
    double e = 0.0;
    for (int y = 0; y < c.height(); ++y)
        for (int x = 0; x < c.width(); ++x) {
            const double mv = m.at(y, x, 0);
            for (int ch = 0; ch < c.channels(); ++ch) {
                const double r = c.at(y, x, ch) - c.at(y, x, ch) * mv - b.at(y, x, ch);
                e += 0.5 * r * r;
            }
            const double dm = mv - ctx.m_prev.at(y, x, 0);
            e += 0.5 * cfg.mu * dm * dm;
            const double rp = ctx.r_prev.at(y, x, 0);
            const double gs = cfg.eps_l1 > 0.0
                                  ? rp / std::sqrt(rp * rp + cfg.eps_l1 * cfg.eps_l1)
                                  : (rp > 0 ? 1.0 : (rp < 0 ? -1.0 : 0.0));
            const double res = ctx.gate.at(y, x, 0) * (mv - ctx.targets.at(y, x, 0));
            const double t = res - rp + gs / cfg.lipschitz;
            e += 0.5 * cfg.alpha * cfg.lipschitz * t * t;
        }
    return e;
}

}  // namespace

TEST_CASE("uncertainty_removal case split") {
    auto check = [](double m, double want_t, double want_w) {
        const auto [t, w] = uncertainty_removal(scalar_mask(m));
        CHECK(t[0] == doctest::Approx(want_t));
        CHECK(w[0] == doctest::Approx(want_w));
    };
    check(0.2, 0.1, 1.0);
    check(0.5, 0.5, 0.0);
    check(0.95, 0.95, 1.0);
    check(0.4, 0.4, 0.0);   // 0.4 sits in the gate band but below the snap range
    check(0.1, 0.1, 1.0);
    check(0.9, 0.9, 1.0);
    check(0.6, 0.6, 0.0);
    check(0.61, 0.9, 1.0);
    check(0.05, 0.05, 1.0);
}

TEST_CASE("uncertainty_removal rejects out-of-range masks") {
    CHECK_THROWS_AS(uncertainty_removal(scalar_mask(1.2)), std::invalid_argument);
    CHECK_THROWS_AS(uncertainty_removal(scalar_mask(-0.1)), std::invalid_argument);
}

TEST_CASE("uncertainty_removal is idempotent on its targets") {
    SplitMix64 rng(2);
    const Tensor m = random_tensor(rng, 8, 8, 1);
    const auto [t1, w1] = uncertainty_removal(m);
    const auto [t2, w2] = uncertainty_removal(t1);
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (w1[i] == 1.0) CHECK(t2[i] == t1[i]);
    }
}

TEST_CASE("l1_grad examples and properties") {
    CHECK(l1_grad(scalar_mask(0.0), 0.0)[0] == 0.0);
    CHECK(l1_grad(scalar_mask(1.0), 0.0)[0] == 1.0);
    CHECK(l1_grad(scalar_mask(-1.0), 0.0)[0] == -1.0);
    CHECK(l1_grad(scalar_mask(0.3), 0.1)[0] == doctest::Approx(0.9486832980505138));

    SplitMix64 rng(4);
    const Tensor r = random_tensor(rng, 6, 6, 1, -2.0, 2.0);
    const Tensor g = l1_grad(r, 1e-3);
    const Tensor gn = l1_grad(ops::scale(r, -1.0), 1e-3);
    for (std::size_t i = 0; i < r.size(); ++i) {
        CHECK(g[i] == doctest::Approx(-gn[i]));  // odd
        CHECK(std::fabs(g[i]) <= 1.0);           // bounded
    }
}

TEST_CASE("data_energy examples") {
    SUBCASE("vanishes when the background completes the image") {
        SplitMix64 rng(6);
        const Tensor c = random_tensor(rng, 4, 4, 3);
        const Tensor m = random_tensor(rng, 4, 4, 1);
        Tensor b(4, 4, 3);
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x)
                for (int ch = 0; ch < 3; ++ch)
                    b.at(y, x, ch) = c.at(y, x, ch) * (1.0 - m.at(y, x, 0));
        CHECK(data_energy(c, m, b) == doctest::Approx(0.0));
    }
    SUBCASE("single pixel hand case") {
        CHECK(data_energy(Tensor(1, 1, 1, 1.0), Tensor(1, 1, 1, 0.0), Tensor(1, 1, 1, 0.0)) ==
              doctest::Approx(0.5));
    }
    SUBCASE("matches a direct summation") {
        SplitMix64 rng(8);
        const Tensor c = random_tensor(rng, 5, 3, 3);
        const Tensor m = random_tensor(rng, 5, 3, 1);
        const Tensor b = random_tensor(rng, 5, 3, 3);
        double want = 0.0;
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 3; ++x)
                for (int ch = 0; ch < 3; ++ch) {
                    const double r =
                        c.at(y, x, ch) - c.at(y, x, ch) * m.at(y, x, 0) - b.at(y, x, ch);
                    want += 0.5 * r * r;
                }
        CHECK(data_energy(c, m, b) == doctest::Approx(want));
    }
    SUBCASE("shape mismatch rejected") {
        CHECK_THROWS_AS(data_energy(Tensor(2, 2, 1), Tensor(3, 2, 1), Tensor(2, 2, 1)),
                        std::invalid_argument);
    }
}

TEST_CASE("sparsity_energy examples") {
    SplitMix64 rng(10);
    const Tensor m = random_tensor(rng, 2, 2, 1);
    SUBCASE("zero residual") {
        ResidualContext ctx = make_residual_context(m, m);
        CHECK(sparsity_energy(ctx.targets, ctx, 0.5) == doctest::Approx(0.0));
    }
    SUBCASE("gated out") {
        const Tensor half(2, 2, 1, 0.5);  // gate == 0 everywhere
        ResidualContext ctx = make_residual_context(half, half);
        CHECK(sparsity_energy(random_tensor(rng, 2, 2, 1), ctx, 1.0) == doctest::Approx(0.0));
    }
    SUBCASE("hand case: residual 0.2 on 4 pixels, alpha 0.5") {
        ResidualContext ctx;
        ctx.m_prev = Tensor(2, 2, 1, 0.0);
        ctx.targets = Tensor(2, 2, 1, 0.0);
        ctx.gate = Tensor(2, 2, 1, 1.0);
        ctx.r_prev = Tensor(2, 2, 1, 0.0);
        ctx.q_d = Tensor(2, 2, 1, 0.0);
        CHECK(sparsity_energy(Tensor(2, 2, 1, 0.2), ctx, 0.5) == doctest::Approx(0.4));
    }
}

TEST_CASE("surrogate_mask_energy matches the scalar reference") {
    SplitMix64 rng(12);
    SolverConfig cfg;
    cfg.alpha = 0.3;
    cfg.mu = 0.7;
    cfg.lipschitz = 1.3;
    const Tensor c = random_tensor(rng, 4, 4, 1);
    const Tensor b = random_tensor(rng, 4, 4, 1);
    const Tensor m_prev = random_tensor(rng, 4, 4, 1);
    const Tensor m_prev2 = random_tensor(rng, 4, 4, 1);
    const ResidualContext ctx = make_residual_context(m_prev, m_prev2);
    const Tensor m = random_tensor(rng, 4, 4, 1, -0.5, 1.5);
    CHECK(surrogate_mask_energy(m, c, b, ctx, cfg) ==
          doctest::Approx(surrogate_oracle(m, c, b, ctx, cfg)).epsilon(1e-12));
}

TEST_CASE("surrogate reduces to the data term when alpha and mu vanish") {
    SplitMix64 rng(14);
    SolverConfig cfg;
    cfg.alpha = 0.0;
    cfg.mu = 1e-300;  // validate() requires mu > 0; this is numerically zero
    const Tensor c = random_tensor(rng, 3, 3, 1);
    const Tensor b = random_tensor(rng, 3, 3, 1);
    const Tensor m_prev = random_tensor(rng, 3, 3, 1);
    const ResidualContext ctx = make_residual_context(m_prev, m_prev);
    const Tensor m = random_tensor(rng, 3, 3, 1);
    CHECK(surrogate_mask_energy(m, c, b, ctx, cfg) ==
          doctest::Approx(data_energy(c, m, b)).epsilon(1e-12));
}

TEST_CASE("surrogate gradient matches finite differences of the energy") {
    SplitMix64 rng(16);
    SolverConfig cfg;
    const Tensor c = random_tensor(rng, 3, 3, 1);
    const Tensor b = random_tensor(rng, 3, 3, 1);
    const ResidualContext ctx =
        make_residual_context(random_tensor(rng, 3, 3, 1), random_tensor(rng, 3, 3, 1));
    Tensor m = random_tensor(rng, 3, 3, 1);
    const Tensor g = surrogate_mask_gradient(m, c, b, ctx, cfg);
    const double h = 1e-6;
    for (std::size_t i = 0; i < m.size(); ++i) {
        Tensor hi = m, lo = m;
        hi[i] += h;
        lo[i] -= h;
        const double fd = (surrogate_mask_energy(hi, c, b, ctx, cfg) -
                           surrogate_mask_energy(lo, c, b, ctx, cfg)) /
                          (2.0 * h);
        CHECK(testutil::rel_err(g[i], fd, 1e-4) < 1e-5);
    }
}

TEST_CASE("SolverConfig validation") {
    SolverConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.mu = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.mu = 1.0;
    cfg.stages = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.stages = 4;
    cfg.alpha = -0.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
